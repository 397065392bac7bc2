#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "facefusion/embedding_net.hpp"
#include "facefusion/fusion.hpp"
#include "facefusion/loss_heads.hpp"
#include "facefusion/optimizer.hpp"
#include "facefusion/synthetic_data.hpp"

namespace facefusion {

// How the softmax pool is formed over a run.
//   naive:      all classes from step 0, never fused
//   dail:       dataset-aware for the whole run
//   facefusion: dataset-aware until floor(t2 * total_steps), then fuse and go agnostic
enum class Method { Naive, Dail, FaceFusion };
enum class Phase { Aware, Agnostic };

std::string_view to_string(Method m);
std::string_view to_string(Phase p);
Method parse_method(std::string_view s);

struct TrainConfig {
  std::int64_t total_steps = 2000;
  int batch_size = 256;
  SgdConfig sgd{0.1, {333, 583, 833}, 0.9, 5e-4};
  LossConfig loss;
  FusionConfig fusion;
  Method method = Method::FaceFusion;
  std::vector<int> hidden_dims{128};
  int embedding_dim = 128;
  std::uint64_t seed = 0;
  std::string data_path;             // shard file
  std::int64_t log_every = 100;
  std::int64_t eval_every = 0;       // 0: evaluate at the end only
  std::int64_t checkpoint_every = 0; // 0: final checkpoint only

  bool operator==(const TrainConfig&) const = default;
};

// Milestones at 1/6, 7/24 and 5/12 of total_steps.
std::vector<std::int64_t> default_milestones(std::int64_t total_steps);

// Every violated key, one message each; empty when valid.
std::vector<std::string> validation_errors(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

std::int64_t fusion_step(const TrainConfig& cfg);

// Shard set flattened into one sample matrix and one concatenated class space.
struct TrainingData {
  Matrix features;                        // all samples, shard by shard
  std::vector<ClassId> labels;            // global class id per sample
  std::vector<DatasetId> datasets;        // dataset id per sample
  std::vector<IdentityId> gt_identity;    // per sample
  std::vector<DatasetId> class_dataset;   // per global class
  std::vector<IdentityId> class_identity; // per global class
  std::vector<ConflictPair> conflicts;    // from the generator's shards
  std::vector<std::pair<ClassId, ClassId>> conflict_classes;  // same, as global ids
  int num_datasets = 0;

  int num_samples() const { return static_cast<int>(labels.size()); }
  int num_classes() const { return static_cast<int>(class_dataset.size()); }
  int input_dim() const { return static_cast<int>(features.cols()); }
};

TrainingData flatten(const ShardSet& set);

struct TrainState {
  std::int64_t step = 0;
  Phase phase = Phase::Aware;
  bool fused = false;
  NetParams net;
  ProxyMatrix proxies;
  DomainHeadParams head;
  NetGrads net_momentum;
  Matrix proxy_momentum;
  DomainHeadParams head_momentum;
  MergeMap merge_map;
  std::mt19937_64 rng;

  bool operator==(const TrainState&) const = default;
};

TrainState initial_state(const TrainConfig& cfg, const TrainingData& data);

struct Batch {
  std::vector<std::int64_t> indices;  // rows of TrainingData::features
  Matrix features;
  std::vector<ClassId> labels;        // remapped through the merge map
  std::vector<DatasetId> datasets;
};

// Uniform sampling with replacement over all samples of all shards.
Batch make_batch(const TrainingData& data, int batch_size, std::mt19937_64& rng, const MergeMap& map);

struct Objective {
  double cls_loss = 0.0;
  double dom_loss = 0.0;
  NetGrads net;
  Matrix proxies;
  DomainHeadParams head;
};

// Classification loss (dataset mask when `dataset_aware`) plus lambda-weighted
// domain loss. The head always gets the gradient of lambda * domain loss. With
// `reverse_gradient` the embedding also gets the head's input gradient, reversed;
// without it the embedding sees no domain gradient.
Objective compute_objective(const NetParams& net, const ProxyMatrix& proxies, const DomainHeadParams& head,
                            const Matrix& features, std::span<const ClassId> labels,
                            std::span<const DatasetId> datasets, bool dataset_aware, const LossConfig& cfg,
                            bool reverse_gradient);

struct MetricsRecord {
  std::int64_t step = 0;
  Phase phase = Phase::Aware;
  double cls_loss = 0.0;
  double dom_loss = 0.0;
  double lr = 0.0;
  int active_classes = 0;
  double wall_seconds = 0.0;  // not part of the deterministic log
};

std::string to_json_line(const MetricsRecord& m);

bool dataset_aware(const TrainConfig& cfg, const TrainState& state);

// One SGD step on net, active proxies and domain head. Throws
// ErrorKind::NonFinite with a dump of the batch when the loss is not finite.
MetricsRecord train_step(TrainState& state, const TrainingData& data, const TrainConfig& cfg);

struct FusionEvent {
  std::int64_t step = 0;
  SimilarityReport report;
  MergeMap map;            // this event's merges only
  int active_before = 0;
  int active_after = 0;
};

// Pauses training semantics: report, merge, reset momentum of touched proxies,
// switch to the agnostic phase.
FusionEvent fuse(TrainState& state, const TrainConfig& cfg);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // metrics, reports, checkpoints
  std::int64_t stop_after = -1;  // return once state.step reaches this (pause)
  std::function<void(const FusionEvent&, const TrainState&)> on_fusion;
  std::function<void(const TrainState&)> on_eval;  // eval cadence hook
};

struct RunResult {
  TrainState state;
  std::vector<MetricsRecord> metrics;
  std::vector<FusionEvent> fusions;
};

RunResult run(const TrainConfig& cfg, const TrainingData& data, TrainState state, const RunOptions& opts = {});
RunResult run(const TrainConfig& cfg, const TrainingData& data, const RunOptions& opts = {});

// Checkpoint: versioned, checksummed binary of the full TrainState.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
void write_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::filesystem::path& path);
TrainState read_checkpoint(const std::filesystem::path& path, std::string* config_json = nullptr);

}  // namespace facefusion
