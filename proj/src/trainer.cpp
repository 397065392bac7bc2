#include "facefusion/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "facefusion/error.hpp"
#include "json.hpp"

namespace facefusion {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Naive: return "naive";
    case Method::Dail: return "dail";
    case Method::FaceFusion: return "facefusion";
  }
  return "?";
}

std::string_view to_string(Phase p) { return p == Phase::Aware ? "aware" : "agnostic"; }

Method parse_method(std::string_view s) {
  if (s == "naive") return Method::Naive;
  if (s == "dail") return Method::Dail;
  if (s == "facefusion") return Method::FaceFusion;
  fail(ErrorKind::Config, "unknown method '" + std::string(s) + "' (expected naive, dail or facefusion)");
}

std::vector<std::int64_t> default_milestones(std::int64_t total_steps) {
  // 1/6, 7/24 and 5/12 of the run.
  return {total_steps * 80 / 480, total_steps * 140 / 480, total_steps * 200 / 480};
}

std::vector<std::string> validation_errors(const TrainConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.total_steps < 1) errs.push_back("total_steps: must be >= 1");
  if (cfg.batch_size < 2) errs.push_back("batch_size: must be >= 2");
  if (!(cfg.sgd.base_lr > 0.0)) errs.push_back("base_lr: must be > 0");
  for (std::size_t i = 0; i < cfg.sgd.lr_milestones.size(); ++i) {
    const auto m = cfg.sgd.lr_milestones[i];
    if (m < 0 || m >= cfg.total_steps) {
      errs.push_back("lr_milestones: " + std::to_string(m) + " is outside [0, total_steps)");
    }
    if (i > 0 && m <= cfg.sgd.lr_milestones[i - 1]) errs.push_back("lr_milestones: must be strictly increasing");
  }
  if (!(cfg.sgd.momentum >= 0.0 && cfg.sgd.momentum < 1.0)) errs.push_back("momentum: must lie in [0, 1)");
  if (!(cfg.sgd.weight_decay >= 0.0)) errs.push_back("weight_decay: must be >= 0");
  if (!(cfg.loss.margin >= 0.0 && cfg.loss.margin < 1.5707963267948966)) errs.push_back("margin: must lie in [0, pi/2)");
  if (!(cfg.loss.scale > 0.0)) errs.push_back("scale: must be > 0");
  if (!(cfg.loss.lambda_da >= 0.0)) errs.push_back("lambda_da: must be >= 0");
  if (cfg.loss.grl_active_after < 0) errs.push_back("grl_active_after: must be >= 0");
  if (!(cfg.fusion.t1 > 0.0)) errs.push_back("t1: must be > 0");
  if (!(cfg.fusion.t2 >= 0.0 && cfg.fusion.t2 < 1.0)) errs.push_back("t2: must lie in [0, 1)");
  if (cfg.fusion.rescan_every < 0) errs.push_back("rescan_every: must be >= 0");
  for (int h : cfg.hidden_dims)
    if (h < 1) errs.push_back("hidden_dims: every entry must be >= 1");
  if (cfg.embedding_dim < 1) errs.push_back("embedding_dim: must be >= 1");
  if (cfg.log_every < 1) errs.push_back("log_every: must be >= 1");
  if (cfg.eval_every < 0) errs.push_back("eval_every: must be >= 0");
  if (cfg.checkpoint_every < 0) errs.push_back("checkpoint_every: must be >= 0");
  return errs;
}

void validate(const TrainConfig& cfg) {
  const auto errs = validation_errors(cfg);
  if (errs.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& e : errs) msg += "\n  " + e;
  fail(ErrorKind::Config, msg);
}

std::int64_t fusion_step(const TrainConfig& cfg) {
  return static_cast<std::int64_t>(std::floor(cfg.fusion.t2 * static_cast<double>(cfg.total_steps)));
}

TrainingData flatten(const ShardSet& set) {
  require(!set.shards.empty(), "flatten: shard set is empty");
  TrainingData d;
  d.num_datasets = static_cast<int>(set.shards.size());
  const auto offsets = class_offsets(set.shards);
  std::size_t n = 0;
  for (const auto& s : set.shards) n += s.samples.size();
  require(n > 0, "flatten: shards contain no samples");
  d.features.resize(static_cast<Eigen::Index>(n), set.bank.dim);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < set.shards.size(); ++k) {
    const auto& shard = set.shards[k];
    require(shard.dataset_id == static_cast<DatasetId>(k), "flatten: dataset ids must be 0..k-1 in order");
    for (const auto& c : shard.classes) {
      d.class_dataset.push_back(static_cast<DatasetId>(k));
      d.class_identity.push_back(c.gt_identity);
    }
    for (const auto& s : shard.samples) {
      d.features.row(row++) = s.feature.transpose();
      d.labels.push_back(offsets[k] + s.local_class);
      d.datasets.push_back(static_cast<DatasetId>(k));
      d.gt_identity.push_back(s.gt_identity);
    }
  }
  d.conflicts = conflict_pairs(set.shards);
  for (const auto& c : d.conflicts)
    d.conflict_classes.emplace_back(offsets[c.a.dataset] + c.a.local_class, offsets[c.b.dataset] + c.b.local_class);
  return d;
}

TrainState initial_state(const TrainConfig& cfg, const TrainingData& data) {
  validate(cfg);
  TrainState s;
  s.net = init_params(data.input_dim(), cfg.hidden_dims, cfg.embedding_dim, cfg.seed * 4 + 1);
  s.proxies = init_proxies(data.class_dataset, cfg.embedding_dim, cfg.seed * 4 + 2);
  s.head = init_domain_head(cfg.embedding_dim, data.num_datasets, cfg.seed * 4 + 3);
  s.net_momentum = zeros_like(s.net);
  s.proxy_momentum = Matrix::Zero(s.proxies.proxies.rows(), s.proxies.proxies.cols());
  s.head_momentum = {Matrix::Zero(s.head.weight.rows(), s.head.weight.cols()), Vector::Zero(s.head.bias.size())};
  s.merge_map = MergeMap::identity(data.num_classes());
  s.phase = cfg.method == Method::Naive ? Phase::Agnostic : Phase::Aware;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0xba7c4u};
  s.rng.seed(seq);
  return s;
}

Batch make_batch(const TrainingData& data, int batch_size, std::mt19937_64& rng, const MergeMap& map) {
  require(data.num_samples() > 0, "make_batch: no samples");
  require(batch_size >= 1, "make_batch: batch_size must be >= 1");
  require(map.num_classes() == data.num_classes(), "make_batch: merge map does not cover the label space");
  Batch b;
  b.features.resize(batch_size, data.input_dim());
  std::uniform_int_distribution<std::int64_t> pick(0, data.num_samples() - 1);
  for (int i = 0; i < batch_size; ++i) {
    const std::int64_t idx = pick(rng);
    b.indices.push_back(idx);
    b.features.row(i) = data.features.row(idx);
    b.labels.push_back(map.remap[data.labels[idx]]);
    b.datasets.push_back(data.datasets[idx]);
  }
  return b;
}

Objective compute_objective(const NetParams& net, const ProxyMatrix& proxies, const DomainHeadParams& head,
                            const Matrix& features, std::span<const ClassId> labels,
                            std::span<const DatasetId> datasets, bool dataset_aware, const LossConfig& cfg,
                            bool reverse_gradient) {
  const ForwardCache cache = forward(net, features);
  const Matrix& e = cache.embeddings;
  const AngularLogits logits = angular_logits(e, proxies, labels, cfg);
  CrossEntropy ce;
  if (dataset_aware) {
    const Mask mask = dataset_mask(labels, proxies.dataset_of);
    ce = masked_cross_entropy(logits.logits, labels, &mask, proxies.active);
  } else {
    ce = masked_cross_entropy(logits.logits, labels, nullptr, proxies.active);
  }
  AngularGrads ag = angular_backward(ce.grad, logits, e, proxies, cfg);
  const DomainLoss dom = domain_adaptation_loss(e, datasets, head, cfg.lambda_da);

  Objective obj;
  obj.cls_loss = ce.loss;
  obj.dom_loss = dom.loss;
  obj.net = backward(net, cache, reverse_gradient ? Matrix(ag.embeddings + dom.grad_embeddings) : ag.embeddings).params;
  obj.proxies = std::move(ag.proxies);
  obj.head.weight = cfg.lambda_da * dom.grad_head.weight;
  obj.head.bias = cfg.lambda_da * dom.grad_head.bias;
  return obj;
}

std::string to_json_line(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["phase"] = to_string(m.phase);
  j["cls_loss"] = m.cls_loss;
  j["dom_loss"] = m.dom_loss;
  j["lr"] = m.lr;
  j["active_classes"] = m.active_classes;
  return j.dump();
}

bool dataset_aware(const TrainConfig&, const TrainState& state) { return state.phase == Phase::Aware; }

namespace {

std::string describe_batch(const Batch& b, std::int64_t step, const Objective& obj) {
  std::ostringstream out;
  out << "step " << step << ": cls_loss=" << obj.cls_loss << " dom_loss=" << obj.dom_loss << "\nbatch (index label dataset):";
  for (std::size_t i = 0; i < b.indices.size(); ++i)
    out << "\n  " << b.indices[i] << ' ' << b.labels[i] << ' ' << b.datasets[i];
  return out.str();
}

}  // namespace

MetricsRecord train_step(TrainState& state, const TrainingData& data, const TrainConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  const bool aware = dataset_aware(cfg, state);
  const Batch batch = make_batch(data, cfg.batch_size, state.rng, state.merge_map);
  const bool reverse = state.step >= cfg.loss.grl_active_after;
  const Objective obj = compute_objective(state.net, state.proxies, state.head, batch.features, batch.labels,
                                          batch.datasets, aware, cfg.loss, reverse);
  if (!std::isfinite(obj.cls_loss) || !std::isfinite(obj.dom_loss))
    fail(ErrorKind::NonFinite, "non-finite loss at " + describe_batch(batch, state.step, obj));

  const double lr = learning_rate(cfg.sgd, state.step);
  const double mu = cfg.sgd.momentum;
  const double wd = cfg.sgd.weight_decay;
  for (std::size_t l = 0; l < state.net.layers.size(); ++l) {
    sgd_update(state.net.layers[l].weight, obj.net.layers[l].weight, state.net_momentum.layers[l].weight, lr, mu, wd);
    sgd_update(state.net.layers[l].bias, obj.net.layers[l].bias, state.net_momentum.layers[l].bias, lr, mu, wd);
  }
  sgd_update(state.head.weight, obj.head.weight, state.head_momentum.weight, lr, mu, wd);
  sgd_update(state.head.bias, obj.head.bias, state.head_momentum.bias, lr, mu, wd);
  for (int c = 0; c < state.proxies.num_classes(); ++c) {
    if (!state.proxies.active[c]) continue;
    sgd_update(state.proxies.proxies.row(c), obj.proxies.row(c), state.proxy_momentum.row(c), lr, mu, wd);
  }
  renormalize(state.proxies);

  MetricsRecord rec;
  rec.step = state.step;
  rec.phase = state.phase;
  rec.cls_loss = obj.cls_loss;
  rec.dom_loss = obj.dom_loss;
  rec.lr = lr;
  rec.active_classes = count_active(state.proxies);
  ++state.step;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

FusionEvent fuse(TrainState& state, const TrainConfig& cfg) {
  FusionEvent ev;
  ev.step = state.step;
  ev.active_before = count_active(state.proxies);
  bool multi = false;
  for (std::size_t c = 1; c < state.proxies.dataset_of.size(); ++c)
    multi |= state.proxies.dataset_of[c] != state.proxies.dataset_of[0];
  if (multi || cfg.fusion.include_intra_dataset) ev.report = top1_report(state.proxies, !multi, state.step);

  ev.map = build_merge_map(state.proxies, cfg.fusion);
  apply_merge(state.proxies, ev.map);
  // Merged proxies start over with empty momentum; removed ones keep none.
  for (const auto& members : ev.map.components()) {
    if (members.size() < 2) continue;
    for (ClassId c : members) state.proxy_momentum.row(c).setZero();
  }
  state.merge_map = compose(state.merge_map, ev.map);
  state.fused = true;
  state.phase = Phase::Agnostic;
  ev.active_after = count_active(state.proxies);
  return ev;
}

namespace {

void write_fusion_files(const FusionEvent& ev, const TrainState& state, const std::filesystem::path& dir) {
  if (ev.report.top1.empty()) return;
  const std::string stem = "similarity_step_" + std::to_string(ev.step);
  write_histogram(ev.report, dir / (stem + "_hist.txt"));
  // Values refer to the proxies as they were before merging; dataset ids never change.
  write_top1_values(ev.report, state.proxies, dir / (stem + "_top1.txt"));
}

}  // namespace

RunResult run(const TrainConfig& cfg, const TrainingData& data, TrainState state, const RunOptions& opts) {
  validate(cfg);
  require(state.proxies.num_classes() == data.num_classes(), "run: state does not match the training data");
  RunResult result;
  std::ofstream metrics_out, timing_out;
  if (opts.output_dir) {
    std::filesystem::create_directories(*opts.output_dir);
    const auto mode = state.step == 0 ? std::ios::trunc : std::ios::app;
    metrics_out.open(*opts.output_dir / "metrics.jsonl", std::ios::out | mode);
    timing_out.open(*opts.output_dir / "timing.jsonl", std::ios::out | mode);
    if (!metrics_out || !timing_out) fail(ErrorKind::Io, "cannot open metrics log in " + opts.output_dir->string());
  }

  const std::int64_t switch_step = fusion_step(cfg);
  while (state.step < cfg.total_steps) {
    if (opts.stop_after >= 0 && state.step >= opts.stop_after) break;

    if (cfg.method == Method::FaceFusion) {
      const bool first = !state.fused && state.step >= switch_step;
      const bool rescan = state.fused && cfg.fusion.rescan_every > 0 && state.step > switch_step &&
                          (state.step - switch_step) % cfg.fusion.rescan_every == 0;
      if (first || rescan) {
        FusionEvent ev = fuse(state, cfg);
        if (opts.output_dir) write_fusion_files(ev, state, *opts.output_dir);
        if (opts.on_fusion) opts.on_fusion(ev, state);
        result.fusions.push_back(std::move(ev));
      }
    }

    MetricsRecord rec = train_step(state, data, cfg);
    if (rec.step % cfg.log_every == 0 || state.step == cfg.total_steps) {
      if (metrics_out.is_open()) {
        metrics_out << to_json_line(rec) << '\n';
        timing_out << "{\"step\":" << rec.step << ",\"wall_seconds\":" << rec.wall_seconds << "}\n";
      }
      result.metrics.push_back(rec);
    }
    if (opts.output_dir && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      write_checkpoint(state, cfg, *opts.output_dir / ("ckpt_" + std::to_string(state.step) + ".bin"));
    if (opts.on_eval && cfg.eval_every > 0 && state.step % cfg.eval_every == 0) opts.on_eval(state);
  }
  if (metrics_out.is_open()) {
    metrics_out.flush();
    if (!metrics_out) fail(ErrorKind::Io, "metrics log write failed");
  }
  if (opts.output_dir && state.step == cfg.total_steps)
    write_checkpoint(state, cfg, *opts.output_dir / "final.ckpt");
  result.state = std::move(state);
  return result;
}

RunResult run(const TrainConfig& cfg, const TrainingData& data, const RunOptions& opts) {
  return run(cfg, data, initial_state(cfg, data), opts);
}

}  // namespace facefusion
