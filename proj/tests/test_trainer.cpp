#include <initializer_list>

#include "criteria.hpp"
#include "doctest.h"

using namespace facefusion;

TEST_CASE("toy objective gradients match central differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = testing::toy_gradient_check(seed);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("dataset-aware gradients never reach other datasets' proxies") {
  const auto r = testing::proxy_isolation(100, 5);
  CHECK(r.batches == 100);
  CHECK(r.cross_entries > 0);
  CHECK(r.nonzero_entries == 0);
  CHECK(r.own_nonzero_rows > 0);
}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "facefusion/config.hpp"
#include "facefusion/error.hpp"
#include "facefusion/trainer.hpp"

namespace fs = std::filesystem;

namespace {

ShardSet small_set(double r, std::uint64_t seed = 3) {
  SplitSpec spec;
  spec.n_identities = 40;
  spec.k = 4;
  spec.r = r;
  spec.images_per_identity = 4;
  spec.seed = seed;
  return make_shard_set(spec, 50, 12);
}

TrainConfig small_config(Method m) {
  TrainConfig c;
  c.method = m;
  c.total_steps = 60;
  c.batch_size = 16;
  c.sgd.base_lr = 0.05;
  c.sgd.lr_milestones = default_milestones(c.total_steps);
  c.hidden_dims = {16};
  c.embedding_dim = 8;
  c.log_every = 1;
  c.seed = 11;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "facefusion_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("learning rate schedule") {
  SgdConfig s{0.005, {80, 140, 200}, 0.9, 5e-4};
  CHECK(learning_rate(s, 0) == 0.005);
  CHECK(learning_rate(s, 79) == 0.005);
  CHECK(learning_rate(s, 80) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(learning_rate(s, 79) / learning_rate(s, 80) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(learning_rate(s, 140) == doctest::Approx(0.00005).epsilon(1e-15));
  CHECK(learning_rate(s, 479) == doctest::Approx(0.000005).epsilon(1e-15));
  CHECK(default_milestones(480000) == std::vector<std::int64_t>{80000, 140000, 200000});
  CHECK(default_milestones(480) == std::vector<std::int64_t>{80, 140, 200});
}

TEST_CASE("sgd update matches the heavy-ball recurrence") {
  Vector p(2), g(2), buf = Vector::Zero(2);
  p << 1.0, -2.0;
  g << 0.5, 0.25;
  sgd_update(p, g, buf, 0.1, 0.9, 0.01);
  // d = g + wd p = (0.51, 0.23); buf = d; p -= 0.1 buf
  CHECK(buf[0] == doctest::Approx(0.51));
  CHECK(p[0] == doctest::Approx(1.0 - 0.051));
  CHECK(p[1] == doctest::Approx(-2.0 - 0.023));
  sgd_update(p, g, buf, 0.1, 0.9, 0.0);
  CHECK(buf[0] == doctest::Approx(0.9 * 0.51 + 0.5));
}

TEST_CASE("fusion step is floor(t2 * total)") {
  TrainConfig c;
  c.total_steps = 1000;
  c.fusion.t2 = 0.21;
  CHECK(fusion_step(c) == 210);
  c.total_steps = 999;
  CHECK(fusion_step(c) == 209);
  c.fusion.t2 = 0.0;
  CHECK(fusion_step(c) == 0);
}

TEST_CASE("class-count accounting per method") {
  for (double r : {0.0, 0.25, 0.5}) {
    const ShardSet set = small_set(r);
    const TrainingData data = flatten(set);
    const int overlap = static_cast<int>(std::lround(40 * r));
    CHECK(data.num_classes() == 40 + overlap);
    CHECK(static_cast<int>(data.conflict_classes.size()) == overlap);

    const TrainState naive = initial_state(small_config(Method::Naive), data);
    CHECK(naive.phase == Phase::Agnostic);
    CHECK(count_active(naive.proxies) == 40 + overlap);
    CHECK(softmax_pool_size(naive.proxies, 0, false) == 40 + overlap);

    const TrainState dail = initial_state(small_config(Method::Dail), data);
    const auto offsets = class_offsets(set.shards);
    for (std::size_t i = 0; i < set.shards.size(); ++i)
      CHECK(softmax_pool_size(dail.proxies, offsets[i], true) == set.shards[i].num_classes());
  }
}

TEST_CASE("flatten keeps provenance") {
  const ShardSet set = small_set(0.25);
  const TrainingData d = flatten(set);
  const auto offsets = class_offsets(set.shards);
  int row = 0;
  for (const auto& s : set.shards) {
    for (const auto& r : s.samples) {
      CHECK(d.labels[row] == offsets[s.dataset_id] + r.local_class);
      CHECK(d.datasets[row] == s.dataset_id);
      CHECK(d.gt_identity[row] == r.gt_identity);
      CHECK(d.features.row(row) == r.feature.transpose());
      ++row;
    }
  }
  for (auto [a, b] : d.conflict_classes) {
    CHECK(d.class_identity[a] == d.class_identity[b]);
    CHECK(d.class_dataset[a] != d.class_dataset[b]);
  }
}

TEST_CASE("batches draw with replacement and remap labels") {
  const TrainingData d = flatten(small_set(0.25));
  std::mt19937_64 rng(1);
  MergeMap m = MergeMap::identity(d.num_classes());
  auto [a, b] = d.conflict_classes.front();
  m.remap[b] = a;
  const Batch batch = make_batch(d, 500, rng, m);
  CHECK(batch.labels.size() == 500);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(batch.labels[i] == m.remap[d.labels[batch.indices[i]]]);
    CHECK(batch.labels[i] != b);
  }
}

TEST_CASE("reversal switch gates the domain term") {
  const TrainingData d = flatten(small_set(0.25));
  TrainConfig with = small_config(Method::Dail);
  with.loss.grl_active_after = kNeverStep;
  TrainConfig without = with;
  without.loss.lambda_da = 0.0;
  TrainState a = initial_state(with, d), b = initial_state(without, d);
  for (int i = 0; i < 3; ++i) {
    const auto ra = train_step(a, d, with);
    train_step(b, d, without);
    CHECK(ra.dom_loss > 0.0);
  }
  // Before activation the head trains but the embedding sees nothing of it.
  CHECK(a.net == b.net);
  CHECK(a.proxies == b.proxies);
  CHECK_FALSE(a.head == b.head);

  TrainConfig on = with;
  on.loss.grl_active_after = 0;
  TrainState off_state = initial_state(with, d), on_state = initial_state(on, d);
  train_step(off_state, d, with);
  train_step(on_state, d, on);
  CHECK_FALSE(on_state.net == off_state.net);
  CHECK(on_state.head == off_state.head);
  CHECK(on_state.proxies == off_state.proxies);
}

TEST_CASE("non-finite loss stops training with the batch in the message") {
  const TrainingData d = flatten(small_set(0.0));
  const TrainConfig c = small_config(Method::Dail);
  TrainState s = initial_state(c, d);
  s.head.bias[0] = std::numeric_limits<double>::infinity();
  try {
    train_step(s, d, c);
    FAIL("expected a non-finite error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("fusion switches phase once, merged proxies stay frozen") {
  const ShardSet set = small_set(0.25);
  const TrainingData d = flatten(set);
  TrainConfig c = small_config(Method::FaceFusion);
  c.fusion.t2 = 0.5;
  c.fusion.t1 = 0.3;  // low enough to merge something on a short run
  int events = 0;
  std::vector<std::uint8_t> active_after;
  Matrix proxies_after;
  RunOptions opts;
  opts.on_fusion = [&](const FusionEvent& ev, const TrainState& st) {
    ++events;
    CHECK(ev.step == fusion_step(c));
    CHECK(st.phase == Phase::Agnostic);
    CHECK(ev.active_after == count_active(st.proxies));
    active_after = st.proxies.active;
    proxies_after = st.proxies.proxies;
    for (const auto& comp : ev.map.components())
      if (comp.size() > 1)
        for (ClassId m : comp) CHECK(st.proxy_momentum.row(m).cwiseAbs().maxCoeff() == 0.0);
  };
  const RunResult r = run(c, d, opts);
  CHECK(events == 1);
  CHECK(r.state.fused);
  REQUIRE(r.fusions.size() == 1);
  CHECK(r.fusions[0].active_after < r.fusions[0].active_before);
  for (std::size_t k = 0; k < active_after.size(); ++k) {
    CHECK(r.state.proxies.active[k] == active_after[k]);
    if (!active_after[k]) CHECK(r.state.proxies.proxies.row(k) == proxies_after.row(k));
  }
  for (const auto& m : r.metrics) CHECK(m.phase == (m.step < fusion_step(c) ? Phase::Aware : Phase::Agnostic));
}

TEST_CASE("naive and dail never fuse") {
  const TrainingData d = flatten(small_set(0.25));
  for (Method m : {Method::Naive, Method::Dail}) {
    const RunResult r = run(small_config(m), d);
    CHECK(r.fusions.empty());
    CHECK(r.state.merge_map.is_identity());
    CHECK(count_active(r.state.proxies) == d.num_classes());
  }
}

TEST_CASE("replay and resume are bitwise identical") {
  const TrainingData d = flatten(small_set(0.25));
  TrainConfig c = small_config(Method::FaceFusion);
  c.loss.grl_active_after = 20;
  c.checkpoint_every = 25;
  const fs::path a = fresh_dir("replay_a"), b = fresh_dir("replay_b"), p = fresh_dir("resume");

  RunOptions oa, ob;
  oa.output_dir = a;
  ob.output_dir = b;
  const RunResult ra = run(c, d, oa);
  const RunResult rb = run(c, d, ob);
  CHECK(ra.state == rb.state);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "final.ckpt") == slurp(b / "final.ckpt"));

  for (std::int64_t pause : {1, 13, 37}) {
    CAPTURE(pause);
    fs::remove_all(p);
    RunOptions first;
    first.output_dir = p;
    first.stop_after = pause;
    const RunResult head = run(c, d, first);
    CHECK(head.state.step == pause);
    write_checkpoint(head.state, c, p / "paused.ckpt");
    std::string cfg_json;
    TrainState resumed = read_checkpoint(p / "paused.ckpt", &cfg_json);
    CHECK(resumed == head.state);
    const TrainConfig back = train_config_from_json(nlohmann::json::parse(cfg_json));
    CHECK(back == c);
    RunOptions second;
    second.output_dir = p;
    const RunResult tail = run(back, d, std::move(resumed), second);
    CHECK(tail.state == ra.state);
    CHECK(slurp(p / "final.ckpt") == slurp(a / "final.ckpt"));
    CHECK(slurp(p / "metrics.jsonl") == slurp(a / "metrics.jsonl"));
  }
}

TEST_CASE("checkpoint errors") {
  const TrainingData d = flatten(small_set(0.0));
  const TrainConfig c = small_config(Method::Dail);
  const fs::path dir = fresh_dir("ckpt_errors");
  write_checkpoint(initial_state(c, d), c, dir / "x.ckpt");
  fs::copy_file(dir / "x.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", fs::file_size(dir / "x.ckpt") - 3);
  try {
    read_checkpoint(dir / "cut.ckpt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK((e.kind() == ErrorKind::Checksum || e.kind() == ErrorKind::Format));
  }
  try {
    read_checkpoint(dir / "missing.ckpt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("config json") {
  TrainConfig c = small_config(Method::FaceFusion);
  c.loss.grl_active_after = kNeverStep;
  c.data_path = "shards.bin";
  const auto j = to_json(c);
  CHECK(j["grl_active_after"].is_null());
  CHECK(train_config_from_json(j) == c);
  c.loss.grl_active_after = 80;
  CHECK(train_config_from_json(to_json(c)) == c);

  SUBCASE("missing keys keep defaults") {
    const TrainConfig t = train_config_from_json(nlohmann::json::parse(R"({"t1": 0.6})"));
    TrainConfig expect;
    expect.fusion.t1 = 0.6;
    CHECK(t == expect);
  }
  SUBCASE("every problem is reported at once") {
    const auto bad = nlohmann::json::parse(R"({"t1": "high", "t2": 1.5, "bogus": 1, "method": "x"})");
    try {
      train_config_from_json(bad);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
      const std::string msg = e.what();
      for (const char* key : {"t1", "t2", "bogus", "method"}) CHECK(msg.find(key) != std::string::npos);
    }
  }
  SUBCASE("validation") {
    TrainConfig v;
    v.sgd.lr_milestones = {5, 3};
    v.batch_size = 0;
    const auto errs = validation_errors(v);
    CHECK(errs.size() == 2);
  }
}
