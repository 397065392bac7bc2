// Command-line front end: gen-data, train, sweep, analyze, eval.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "facefusion/config.hpp"
#include "facefusion/error.hpp"
#include "facefusion/eval.hpp"
#include "facefusion/experiment.hpp"
#include "facefusion/trainer.hpp"

namespace fs = std::filesystem;
using namespace facefusion;

namespace {

constexpr const char* kOutputRootEnv = "FACEFUSION_OUTPUT_ROOT";

// Relative output locations are placed under $FACEFUSION_OUTPUT_ROOT when set.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / path;
  return path;
}

void write_manifest(const ShardSet& set, const fs::path& path) {
  const auto conflicts = conflict_pairs(set.shards);
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  out << "# facefusion-conflicts 1\n";
  out << "# k " << set.spec.k << " r " << set.spec.r << " n_identities " << set.spec.n_identities << " seed "
      << set.spec.seed << "\n";
  out << "duplicate_images " << (set.spec.duplicate_images ? "true" : "false") << "\n";
  out << "conflicts " << conflicts.size() << "\n";
  out << "# dataset_a class_a dataset_b class_b gt_identity\n";
  for (const auto& c : conflicts)
    out << c.a.dataset << ' ' << c.a.local_class << ' ' << c.b.dataset << ' ' << c.b.local_class << ' '
        << c.gt_identity << '\n';
  if (!out) fail(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

struct GenArgs {
  DataConfig data;
  int k = 8;
  double r = 0.0;
  bool duplicate = false;
  std::uint64_t seed = 0;
  std::string out = "shards.ffs";
};

int cmd_gen_data(const GenArgs& a) {
  const SplitSpec spec = split_spec(a.data, a.k, a.r, a.duplicate, a.seed);
  const ShardSet set = generate(a.data, spec);
  const fs::path out = output_path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_shards(set, out);
  fs::path manifest = out;
  manifest += ".conflicts.txt";
  write_manifest(set, manifest);
  std::cout << "wrote " << set.shards.size() << " shards (" << total_classes(set.shards) << " classes) to " << out
            << "\n";
  std::cout << "duplicate_images " << (a.duplicate ? "true" : "false") << "\n";
  std::cout << "conflicts " << conflict_pairs(set.shards).size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string method;
  std::string data;
  std::string out = "run";
  std::string resume;
  std::int64_t stop_after = -1;
  bool config_wins = false;
  EvalConfig eval;
  // Flag overrides; applied only when given.
  std::optional<std::int64_t> total_steps;
  std::optional<int> batch_size;
  std::optional<double> base_lr, t1, t2, lambda_da;
  std::optional<std::uint64_t> seed;
};

void apply_flags(const TrainArgs& a, TrainConfig& c) {
  if (!a.method.empty()) c.method = parse_method(a.method);
  if (!a.data.empty()) c.data_path = a.data;
  if (a.total_steps) {
    c.total_steps = *a.total_steps;
    c.sgd.lr_milestones = default_milestones(c.total_steps);
  }
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.base_lr) c.sgd.base_lr = *a.base_lr;
  if (a.t1) c.fusion.t1 = *a.t1;
  if (a.t2) c.fusion.t2 = *a.t2;
  if (a.lambda_da) c.loss.lambda_da = *a.lambda_da;
  if (a.seed) c.seed = *a.seed;
}

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (a.config.empty()) {
    apply_flags(a, cfg);
  } else if (a.config_wins) {
    apply_flags(a, cfg);
    cfg = load_train_config(a.config, cfg);
  } else {
    cfg = load_train_config(a.config, cfg);
    apply_flags(a, cfg);
  }
  cfg = configure(cfg.method, cfg);
  validate(cfg);
  if (cfg.data_path.empty()) fail(ErrorKind::Config, "data_path: no shard file given (--data or config key)");
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = resolve_config(a);
  const ShardSet set = read_shards(cfg.data_path);
  const TrainingData data = flatten(set);
  const fs::path out = output_path(a.out);
  fs::create_directories(out);
  {
    std::ofstream echo(out / "config.json");
    echo << to_json(cfg).dump(2) << '\n';
  }

  TrainState state = a.resume.empty() ? initial_state(cfg, data) : read_checkpoint(a.resume);
  RunOptions opts;
  opts.output_dir = out;
  opts.stop_after = a.stop_after;
  opts.on_fusion = [](const FusionEvent& ev, const TrainState&) {
    std::cout << "fusion at step " << ev.step << ": " << ev.active_before << " -> " << ev.active_after
              << " active classes\n";
  };
  opts.on_eval = [&](const TrainState& st) {
    const EvalReport rep = evaluate(st.net, set, a.eval);
    std::cout << "step " << st.step << " accuracy " << rep.accuracy << "\n";
  };
  RunResult result = run(cfg, data, std::move(state), opts);
  if (result.state.step < cfg.total_steps) {
    write_checkpoint(result.state, cfg, out / ("paused_" + std::to_string(result.state.step) + ".ckpt"));
    std::cout << "paused at step " << result.state.step << "\n";
    return 0;
  }

  EvalReport rep = evaluate(result.state.net, set, a.eval);
  rep.merge = merge_quality(result.state.merge_map, data.conflict_classes);
  rep.active_classes = count_active(result.state.proxies);
  std::ofstream(out / "eval.jsonl") << to_json_line(rep) << '\n';
  std::cout << "method " << to_string(cfg.method) << "\n"
            << "accuracy " << rep.accuracy << " (synthetic pair verification)\n"
            << "active_classes " << rep.active_classes << "\n"
            << "merge_precision " << rep.merge.precision << (rep.merge.precision_vacuous ? " (vacuous)" : "") << "\n"
            << "merge_recall " << rep.merge.recall << (rep.merge.recall_vacuous ? " (vacuous)" : "") << "\n";
  return 0;
}

struct SweepArgs {
  std::string plan;
  std::string out;
  std::string only;
};

int cmd_sweep(const SweepArgs& a) {
  ExperimentPlan plan = load_plan(a.plan);
  if (!a.out.empty()) plan.output_dir = a.out;
  plan.output_dir = output_path(plan.output_dir).string();
  if (!a.only.empty()) {
    // Re-run one cell in place; its result.json is rewritten.
    for (const CellKey& key : cells(plan)) {
      if (cell_name(key) != a.only) continue;
      const fs::path dir = fs::path(plan.output_dir) / "cells" / a.only;
      fs::create_directories(dir);
      const CellResult r = run_cell(plan, key, dir);
      std::ofstream(dir / "result.json") << to_json(r).dump() << '\n';
      std::cout << summary_table({r});
      return r.ok ? 0 : 1;
    }
    fail(ErrorKind::Config, "no cell named '" + a.only + "' in the plan");
  }
  const auto results = sweep(plan, true, [](const CellResult& r) {
    std::cerr << cell_name(r.key) << ": " << (r.ok ? "ok" : "FAILED " + r.error) << " (" << r.seconds << " s)\n";
  });
  std::cout << summary_table(results);
  for (const auto& r : results)
    if (!r.ok) return 1;
  return 0;
}

struct AnalyzeArgs {
  std::string checkpoint;
  std::string data;
  double t1 = 0.7;
  std::string out = "analysis";
};

int cmd_analyze(const AnalyzeArgs& a) {
  std::string config_json;
  const TrainState st = read_checkpoint(a.checkpoint, &config_json);
  const fs::path out = output_path(a.out);
  fs::create_directories(out);

  const SimilarityReport report = top1_report(st.proxies, false, st.step);
  write_histogram(report, out / "top1_hist.txt");
  write_top1_values(report, st.proxies, out / "top1_values.txt");

  FusionConfig fc;
  fc.t1 = a.t1;
  ProxyMatrix preview = st.proxies;
  const MergeMap map = build_merge_map(preview, fc);

  nlohmann::ordered_json j;
  j["format"] = "facefusion-merge-preview";
  j["version"] = 1;
  j["checkpoint_step"] = st.step;
  j["checkpoint_config"] = nlohmann::json::parse(config_json);
  j["t1"] = a.t1;
  j["active_classes"] = count_active(st.proxies);
  j["merged_classes"] = map.num_merged();
  j["components"] = count_active(st.proxies) - map.num_merged();
  if (!a.data.empty()) {
    const TrainingData data = flatten(read_shards(a.data));
    if (data.num_classes() != st.proxies.num_classes())
      fail(ErrorKind::Contract, "shard file does not match the checkpoint's class space");
    const MergeQuality q = merge_quality(compose(st.merge_map, map), data.conflict_classes);
    std::set<IdentityId> ids(data.class_identity.begin(), data.class_identity.end());
    j["ground_truth_identities"] = ids.size();
    j["merge_precision"] = q.precision;
    j["merge_recall"] = q.recall;
  }
  std::ofstream(out / "merge_preview.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  EvalConfig eval;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const TrainState st = read_checkpoint(a.checkpoint);
  const ShardSet set = read_shards(a.data);
  const TrainingData data = flatten(set);
  EvalReport rep = evaluate(st.net, set, a.eval);
  rep.merge = merge_quality(st.merge_map, data.conflict_classes);
  rep.active_classes = count_active(st.proxies);
  if (!a.out.empty()) {
    const fs::path out = output_path(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << to_json_line(rep) << '\n';
  }
  std::printf("%-10s %-10s %-10s %-8s\n", "accuracy", "precision", "recall", "active");
  std::printf("%-10.4f %-10.4f %-10.4f %-8d\n", rep.accuracy, rep.merge.precision, rep.merge.recall,
              rep.active_classes);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-dataset embedding training with dataset-aware softmax and proxy fusion"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate overlapping synthetic shards and a conflict manifest");
  g->add_option("--n", gen.data.n_identities, "Identities split across shards")->capture_default_str();
  g->add_option("--k", gen.k, "Number of shards")->capture_default_str();
  g->add_option("--r", gen.r, "Identity overlap ratio in [0, 1)")->capture_default_str();
  g->add_flag("--duplicate-images", gen.duplicate, "Overlapping identities reuse the same images");
  g->add_option("--dim", gen.data.dim, "Feature dimension")->capture_default_str();
  g->add_option("--images-per-identity", gen.data.images_per_identity)->capture_default_str();
  g->add_option("--noise-sigma", gen.data.noise_sigma)->capture_default_str();
  g->add_option("--domain-shift", gen.data.domain_shift)->capture_default_str();
  g->add_option("--unseen-fraction", gen.data.unseen_fraction, "Bank share held out of every shard")
      ->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "Shard file")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one method on a shard file");
  t->add_option("--config", tr.config, "JSON training config");
  t->add_option("--method", tr.method, "naive | dail | facefusion");
  t->add_option("--data", tr.data, "Shard file");
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  t->add_option("--resume", tr.resume, "Checkpoint to resume from");
  t->add_option("--stop-after", tr.stop_after, "Pause after this many steps and write a checkpoint");
  t->add_flag("--config-wins", tr.config_wins, "Config file values override flags");
  t->add_option("--total-steps", tr.total_steps);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--base-lr", tr.base_lr);
  t->add_option("--t1", tr.t1);
  t->add_option("--t2", tr.t2);
  t->add_option("--lambda-da", tr.lambda_da);
  t->add_option("--seed", tr.seed);
  t->add_option("--eval-pairs", tr.eval.n_pairs)->capture_default_str();
  t->add_option("--eval-seed", tr.eval.seed)->capture_default_str();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Run every (method, r) cell of an experiment plan");
  s->add_option("--plan", sw.plan, "JSON experiment plan")->required();
  s->add_option("--out", sw.out, "Output directory (overrides the plan)");
  s->add_option("--only", sw.only, "Re-run a single cell by name");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Top-1 similarity histogram and merge preview of a checkpoint");
  a->add_option("--checkpoint", an.checkpoint)->required();
  a->add_option("--data", an.data, "Shard file, for ground-truth comparison");
  a->add_option("--t1", an.t1)->capture_default_str();
  a->add_option("--out", an.out)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Verification accuracy and merge quality of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--pairs", ev.eval.n_pairs)->capture_default_str();
  e->add_option("--seed", ev.eval.seed)->capture_default_str();
  e->add_option("--out", ev.out, "Write the report as a JSON line");

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (s->parsed()) return cmd_sweep(sw);
    if (a->parsed()) return cmd_analyze(an);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const Error& err) {
    std::cerr << "facefusion: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "facefusion: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
