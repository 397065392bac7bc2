#include "facefusion/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "facefusion/config.hpp"
#include "facefusion/error.hpp"

namespace facefusion {

int bank_size(const DataConfig& d) {
  return static_cast<int>(std::lround(d.n_identities / (1.0 - d.unseen_fraction)));
}

SplitSpec split_spec(const DataConfig& d, int k, double r, bool duplicate_images, std::uint64_t seed) {
  SplitSpec s;
  s.k = k;
  s.r = r;
  s.duplicate_images = duplicate_images;
  s.n_identities = d.n_identities;
  s.images_per_identity = d.images_per_identity;
  s.noise_sigma = d.noise_sigma;
  s.domain_shift = d.domain_shift;
  s.seed = seed;
  return s;
}

ShardSet generate(const DataConfig& d, const SplitSpec& spec) {
  require(d.unseen_fraction >= 0.0 && d.unseen_fraction < 1.0, "unseen_fraction must lie in [0, 1)");
  return make_shard_set(spec, bank_size(d), d.dim);
}

TrainConfig configure(Method method, const TrainConfig& base) {
  TrainConfig c = base;
  c.method = method;
  if (method == Method::Naive) c.fusion.t1 = 1.01;
  return c;
}

namespace {

nlohmann::ordered_json data_json(const DataConfig& d) {
  nlohmann::ordered_json j;
  j["n_identities"] = d.n_identities;
  j["unseen_fraction"] = d.unseen_fraction;
  j["dim"] = d.dim;
  j["images_per_identity"] = d.images_per_identity;
  j["noise_sigma"] = d.noise_sigma;
  j["domain_shift"] = d.domain_shift;
  return j;
}

nlohmann::ordered_json eval_json(const EvalConfig& e) {
  nlohmann::ordered_json j;
  j["n_pairs"] = e.n_pairs;
  j["per_identity"] = e.per_identity;
  j["seed"] = e.seed;
  return j;
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& dst, std::vector<std::string>& errs,
              const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(dst);
  } catch (const nlohmann::json::exception& e) {
    errs.push_back(prefix + key + ": " + e.what());
  }
}

}  // namespace

nlohmann::ordered_json to_json(const ExperimentPlan& p) {
  nlohmann::ordered_json j;
  j["methods"] = nlohmann::json::array();
  for (Method m : p.methods) j["methods"].push_back(to_string(m));
  j["r_values"] = p.r_values;
  j["k"] = p.k;
  j["duplicate_images"] = p.duplicate_images;
  j["seeds"] = p.seeds;
  j["data"] = data_json(p.data);
  j["train"] = to_json(p.train);
  j["eval"] = eval_json(p.eval);
  j["output_dir"] = p.output_dir;
  return j;
}

ExperimentPlan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::Config, "plan must be a JSON object");
  ExperimentPlan p;
  std::vector<std::string> errs;
  static const std::vector<std::string> known{"methods", "r_values", "k", "duplicate_images", "seeds",
                                              "data", "train", "eval", "output_dir"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) errs.push_back(key + ": unknown key");

  if (j.contains("methods")) {
    p.methods.clear();
    try {
      for (const auto& m : j.at("methods")) p.methods.push_back(parse_method(m.get<std::string>()));
    } catch (const std::exception& e) {
      errs.push_back(std::string("methods: ") + e.what());
    }
  }
  read_key(j, "r_values", p.r_values, errs, "");
  read_key(j, "k", p.k, errs, "");
  if (j.contains("duplicate_images")) {
    p.duplicate_images.clear();
    try {
      for (const auto& d : j.at("duplicate_images")) p.duplicate_images.push_back(d.get<bool>());
    } catch (const std::exception& e) {
      errs.push_back(std::string("duplicate_images: ") + e.what());
    }
  }
  read_key(j, "seeds", p.seeds, errs, "");
  read_key(j, "output_dir", p.output_dir, errs, "");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    static const std::vector<std::string> dk{"n_identities", "unseen_fraction", "dim", "images_per_identity",
                                             "noise_sigma", "domain_shift"};
    for (const auto& [key, value] : d.items())
      if (std::find(dk.begin(), dk.end(), key) == dk.end()) errs.push_back("data." + key + ": unknown key");
    read_key(d, "n_identities", p.data.n_identities, errs, "data.");
    read_key(d, "unseen_fraction", p.data.unseen_fraction, errs, "data.");
    read_key(d, "dim", p.data.dim, errs, "data.");
    read_key(d, "images_per_identity", p.data.images_per_identity, errs, "data.");
    read_key(d, "noise_sigma", p.data.noise_sigma, errs, "data.");
    read_key(d, "domain_shift", p.data.domain_shift, errs, "data.");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    for (const auto& [key, value] : e.items())
      if (key != "n_pairs" && key != "per_identity" && key != "seed") errs.push_back("eval." + key + ": unknown key");
    read_key(e, "n_pairs", p.eval.n_pairs, errs, "eval.");
    read_key(e, "per_identity", p.eval.per_identity, errs, "eval.");
    read_key(e, "seed", p.eval.seed, errs, "eval.");
  }
  if (j.contains("train")) {
    try {
      p.train = train_config_from_json(j.at("train"));
    } catch (const Error& e) {
      errs.push_back(std::string("train: ") + e.what());
    }
  }
  if (p.methods.empty()) errs.push_back("methods: must list at least one method");
  if (p.r_values.empty()) errs.push_back("r_values: must list at least one value");
  if (p.seeds.empty()) errs.push_back("seeds: must list at least one seed");
  if (p.duplicate_images.empty()) errs.push_back("duplicate_images: must list at least one value");
  if (p.k < 1) errs.push_back("k: must be >= 1");
  if (!(p.data.unseen_fraction >= 0.0 && p.data.unseen_fraction < 1.0))
    errs.push_back("data.unseen_fraction: must lie in [0, 1)");
  if (p.eval.n_pairs < 20 || p.eval.n_pairs % 2) errs.push_back("eval.n_pairs: must be an even number >= 20");
  if (p.eval.per_identity < 2) errs.push_back("eval.per_identity: must be >= 2");
  if (!errs.empty()) {
    std::string msg = "invalid experiment plan:";
    for (const auto& e : errs) msg += "\n  " + e;
    fail(ErrorKind::Config, msg);
  }
  return p;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open plan '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return plan_from_json(j);
}

std::string cell_name(const CellKey& key) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s_r%.3f_%s_seed%llu", std::string(to_string(key.method)).c_str(), key.r,
                key.duplicate_images ? "dup" : "distinct", static_cast<unsigned long long>(key.seed));
  return buf;
}

nlohmann::ordered_json to_json(const CellResult& r) {
  nlohmann::ordered_json j;
  j["method"] = to_string(r.key.method);
  j["r"] = r.key.r;
  j["k"] = r.k;
  j["duplicate_images"] = r.key.duplicate_images;
  j["seed"] = r.key.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["accuracy"] = r.accuracy;
  j["accuracy_kind"] = "synthetic pair verification";
  j["merge_precision"] = r.merge.precision;
  j["merge_recall"] = r.merge.recall;
  j["merged_classes"] = r.merged_classes;
  j["conflicts"] = r.conflicts;
  j["total_classes"] = r.total_classes;
  j["active_classes"] = r.active_classes;
  j["pool_sizes"] = r.pool_sizes;
  j["final_cls_loss"] = r.final_cls_loss;
  return j;
}

EvalReport evaluate(const NetParams& net, const ShardSet& set, const EvalConfig& eval) {
  const auto pool = heldout_pool(set, eval.per_identity, eval.seed);
  const PairSet pairs = build_pairs(pool, eval.n_pairs, eval.seed + 1);
  const VerificationResult v = verification_accuracy(net, pairs);
  EvalReport rep;
  rep.accuracy = v.accuracy;
  rep.folds = v.folds;
  return rep;
}

CellResult run_cell(const ExperimentPlan& plan, const CellKey& key,
                    const std::optional<std::filesystem::path>& out_dir, const CellHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  CellResult res;
  res.key = key;
  res.k = plan.k;
  try {
    const ShardSet set = generate(plan.data, split_spec(plan.data, plan.k, key.r, key.duplicate_images, key.seed));
    const TrainingData data = flatten(set);
    TrainConfig cfg = configure(key.method, plan.train);
    cfg.seed = key.seed;
    res.total_classes = data.num_classes();
    res.conflicts = static_cast<int>(data.conflicts.size());

    RunOptions opts;
    opts.output_dir = out_dir;
    if (hooks.on_fusion)
      opts.on_fusion = [&](const FusionEvent& ev, const TrainState& st) { hooks.on_fusion(ev, st, data); };
    RunResult run_result = run(cfg, data, opts);
    const TrainState& st = run_result.state;

    EvalReport rep = evaluate(st.net, set, plan.eval);
    rep.merge = merge_quality(st.merge_map, data.conflict_classes);
    rep.active_classes = count_active(st.proxies);
    if (out_dir) {
      std::ofstream out(*out_dir / "eval.jsonl");
      out << to_json_line(rep) << '\n';
    }

    res.accuracy = rep.accuracy;
    res.merge = rep.merge;
    res.active_classes = rep.active_classes;
    res.merged_classes = st.merge_map.num_merged();
    const bool aware = st.phase == Phase::Aware;
    const auto offsets = class_offsets(set.shards);
    for (std::size_t s = 0; s < set.shards.size(); ++s) {
      const ClassId any = st.merge_map.remap[offsets[s]];
      res.pool_sizes.push_back(softmax_pool_size(st.proxies, any, aware));
    }
    if (!run_result.metrics.empty()) res.final_cls_loss = run_result.metrics.back().cls_loss;
    if (hooks.on_finish) hooks.on_finish(run_result, data, set);
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return res;
}

std::vector<CellKey> cells(const ExperimentPlan& plan) {
  std::vector<CellKey> out;
  for (bool dup : plan.duplicate_images)
    for (std::uint64_t seed : plan.seeds)
      for (double r : plan.r_values)
        for (Method m : plan.methods) out.push_back({m, r, dup, seed});
  return out;
}

std::vector<CellResult> sweep(const ExperimentPlan& plan, bool write,
                              const std::function<void(const CellResult&)>& progress) {
  const std::filesystem::path root(plan.output_dir);
  if (write) std::filesystem::create_directories(root / "cells");
  std::vector<CellResult> results;
  for (const CellKey& key : cells(plan)) {
    std::optional<std::filesystem::path> dir;
    if (write) {
      dir = root / "cells" / cell_name(key);
      std::filesystem::create_directories(*dir);
    }
    results.push_back(run_cell(plan, key, dir));
    if (write) {
      std::ofstream row(*dir / "result.json");
      row << to_json(results.back()).dump() << '\n';
    }
    if (progress) progress(results.back());
  }
  if (write) {
    std::ofstream table(root / "results.jsonl");
    nlohmann::ordered_json head;
    head["format"] = "facefusion-results";
    head["version"] = 1;
    head["plan"] = to_json(plan);
    table << head.dump() << '\n';
    for (const auto& r : results) table << to_json(r).dump() << '\n';
    std::ofstream summary(root / "summary.txt");
    summary << summary_table(results);
    if (!table || !summary) fail(ErrorKind::Io, "writing sweep results to '" + root.string() + "' failed");
  }
  return results;
}

std::string summary_table(const std::vector<CellResult>& results) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %6s %5s %6s %10s %9s %8s %8s %8s %8s\n", "method", "r", "dup", "seed",
                "accuracy", "precision", "recall", "active", "merged", "status");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-11s %6.3f %5s %6llu %10.4f %9.4f %8.4f %8d %8d %8s\n",
                  std::string(to_string(r.key.method)).c_str(), r.key.r, r.key.duplicate_images ? "yes" : "no",
                  static_cast<unsigned long long>(r.key.seed), r.accuracy, r.merge.precision, r.merge.recall,
                  r.active_classes, r.merged_classes, r.ok ? "ok" : "FAILED");
    out << line;
  }
  out << "accuracy: synthetic pair verification, 10-fold best threshold\n";
  return out.str();
}

}  // namespace facefusion
