#include "facefusion/config.hpp"

#include <fstream>
#include <set>

#include "facefusion/error.hpp"

namespace facefusion {

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = to_string(c.method);
  j["total_steps"] = c.total_steps;
  j["batch_size"] = c.batch_size;
  j["base_lr"] = c.sgd.base_lr;
  j["lr_milestones"] = c.sgd.lr_milestones;
  j["momentum"] = c.sgd.momentum;
  j["weight_decay"] = c.sgd.weight_decay;
  j["margin"] = c.loss.margin;
  j["scale"] = c.loss.scale;
  j["lambda_da"] = c.loss.lambda_da;
  if (c.loss.grl_active_after == kNeverStep)
    j["grl_active_after"] = nullptr;
  else
    j["grl_active_after"] = c.loss.grl_active_after;
  j["t1"] = c.fusion.t1;
  j["t2"] = c.fusion.t2;
  j["include_intra_dataset"] = c.fusion.include_intra_dataset;
  j["rescan_every"] = c.fusion.rescan_every;
  j["hidden_dims"] = c.hidden_dims;
  j["embedding_dim"] = c.embedding_dim;
  j["seed"] = c.seed;
  j["data_path"] = c.data_path;
  j["log_every"] = c.log_every;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults) {
  if (!j.is_object()) fail(ErrorKind::Config, "training config must be a JSON object");
  TrainConfig c = defaults;
  std::vector<std::string> errs;
  std::set<std::string> seen;

  auto field = [&](const char* key, auto& dst) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception& e) {
      errs.push_back(std::string(key) + ": " + e.what());
    }
  };

  seen.insert("method");
  if (j.contains("method")) {
    try {
      c.method = parse_method(j.at("method").get<std::string>());
    } catch (const std::exception& e) {
      errs.push_back(std::string("method: ") + e.what());
    }
  }
  field("total_steps", c.total_steps);
  field("batch_size", c.batch_size);
  field("base_lr", c.sgd.base_lr);
  field("lr_milestones", c.sgd.lr_milestones);
  field("momentum", c.sgd.momentum);
  field("weight_decay", c.sgd.weight_decay);
  field("margin", c.loss.margin);
  field("scale", c.loss.scale);
  field("lambda_da", c.loss.lambda_da);
  seen.insert("grl_active_after");
  if (j.contains("grl_active_after")) {
    if (j["grl_active_after"].is_null())
      c.loss.grl_active_after = kNeverStep;
    else
      field("grl_active_after", c.loss.grl_active_after);
  }
  field("t1", c.fusion.t1);
  field("t2", c.fusion.t2);
  field("include_intra_dataset", c.fusion.include_intra_dataset);
  field("rescan_every", c.fusion.rescan_every);
  field("hidden_dims", c.hidden_dims);
  field("embedding_dim", c.embedding_dim);
  field("seed", c.seed);
  field("data_path", c.data_path);
  field("log_every", c.log_every);
  field("eval_every", c.eval_every);
  field("checkpoint_every", c.checkpoint_every);

  for (const auto& [key, value] : j.items())
    if (!seen.count(key)) errs.push_back(key + ": unknown key");
  // Fields that failed to parse kept their defaults, so range checks still apply.
  for (auto& e : validation_errors(c)) errs.push_back(std::move(e));
  if (!errs.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& e : errs) msg += "\n  " + e;
    fail(ErrorKind::Config, msg);
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j, defaults);
}

}  // namespace facefusion
