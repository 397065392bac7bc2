#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facefusion/eval.hpp"
#include "facefusion/trainer.hpp"
#include "json.hpp"

namespace facefusion {

// Everything needed to regenerate a shard set besides (k, r, duplication, seed).
struct DataConfig {
  int n_identities = 1000;
  double unseen_fraction = 0.2;  // share of the bank that no shard contains
  int dim = 64;
  int images_per_identity = 16;
  double noise_sigma = 0.1;
  double domain_shift = 0.5;

  bool operator==(const DataConfig&) const = default;
};

int bank_size(const DataConfig& d);
SplitSpec split_spec(const DataConfig& d, int k, double r, bool duplicate_images, std::uint64_t seed);
ShardSet generate(const DataConfig& d, const SplitSpec& spec);

struct EvalConfig {
  int n_pairs = 60000;
  int per_identity = 12;
  std::uint64_t seed = 12345;

  bool operator==(const EvalConfig&) const = default;
};

// The three compared methods are one trainer under different constraints:
// naive disables fusion (t1 > 1) and the mask, dail keeps the mask for the
// whole run, facefusion switches at t2.
TrainConfig configure(Method method, const TrainConfig& base);

struct ExperimentPlan {
  std::vector<Method> methods{Method::Naive, Method::Dail, Method::FaceFusion};
  std::vector<double> r_values{0.0, 0.2, 0.4, 0.6};
  int k = 8;
  std::vector<bool> duplicate_images{false};
  std::vector<std::uint64_t> seeds{0};
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  std::string output_dir = "results";
};

nlohmann::ordered_json to_json(const ExperimentPlan& plan);
ExperimentPlan plan_from_json(const nlohmann::json& j);
ExperimentPlan load_plan(const std::filesystem::path& path);

struct CellKey {
  Method method = Method::FaceFusion;
  double r = 0.0;
  bool duplicate_images = false;
  std::uint64_t seed = 0;
};

struct CellResult {
  CellKey key;
  int k = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  MergeQuality merge;
  int total_classes = 0;
  int active_classes = 0;      // after training
  int merged_classes = 0;      // proxies removed by fusion
  int conflicts = 0;           // ground-truth conflict pairs
  std::vector<int> pool_sizes;  // final-phase softmax pool seen by a sample of each shard
  double final_cls_loss = 0.0;
  double seconds = 0.0;         // wall time; not serialized
};

std::string cell_name(const CellKey& key);
nlohmann::ordered_json to_json(const CellResult& r);

struct CellHooks {
  std::function<void(const FusionEvent&, const TrainState&, const TrainingData&)> on_fusion;
  std::function<void(const RunResult&, const TrainingData&, const ShardSet&)> on_finish;
};

// Generates the cell's data, trains, evaluates. Failures are captured in
// CellResult::error rather than thrown.
CellResult run_cell(const ExperimentPlan& plan, const CellKey& key,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                    const CellHooks& hooks = {});

EvalReport evaluate(const NetParams& net, const ShardSet& set, const EvalConfig& eval);

std::vector<CellKey> cells(const ExperimentPlan& plan);

// Runs every cell; writes results.jsonl and summary.txt into the plan's output
// directory when `write` is set.
std::vector<CellResult> sweep(const ExperimentPlan& plan, bool write = true,
                              const std::function<void(const CellResult&)>& progress = {});

std::string summary_table(const std::vector<CellResult>& results);

}  // namespace facefusion
