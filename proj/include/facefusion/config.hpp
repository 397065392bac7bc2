#pragma once

#include <filesystem>

#include "facefusion/trainer.hpp"
#include "json.hpp"

namespace facefusion {

// Flat key set, one key per TrainConfig field. grl_active_after may be null
// (never reverse).
nlohmann::ordered_json to_json(const TrainConfig& cfg);

// Unknown keys, type mismatches and range violations are collected and reported
// together in one ErrorKind::Config error. Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});
TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults = {});

}  // namespace facefusion
