#include "facefusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "facefusion/error.hpp"

namespace facefusion {

void validate(const FusionConfig& cfg) {
  if (!(cfg.t1 > 0.0)) fail(ErrorKind::Config, "t1 must be > 0");
  if (!(cfg.t2 >= 0.0 && cfg.t2 < 1.0)) fail(ErrorKind::Config, "t2 must lie in [0, 1)");
  if (cfg.rescan_every < 0) fail(ErrorKind::Config, "rescan_every must be >= 0");
}

DisjointSet::DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

std::size_t DisjointSet::find(std::size_t x) {
  std::size_t root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const std::size_t next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

bool DisjointSet::unite(std::size_t x, std::size_t y) {
  x = find(x);
  y = find(y);
  if (x == y) return false;
  if (y < x) std::swap(x, y);
  parent_[y] = x;
  return true;
}

MergeMap MergeMap::identity(int num_classes) {
  MergeMap m;
  m.remap.resize(num_classes);
  std::iota(m.remap.begin(), m.remap.end(), 0);
  return m;
}

int MergeMap::num_components() const {
  int n = 0;
  for (std::size_t c = 0; c < remap.size(); ++c) n += remap[c] == static_cast<ClassId>(c);
  return n;
}

std::vector<std::vector<ClassId>> MergeMap::components() const {
  std::map<ClassId, std::vector<ClassId>> groups;
  for (std::size_t c = 0; c < remap.size(); ++c) groups[remap[c]].push_back(static_cast<ClassId>(c));
  std::vector<std::vector<ClassId>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

bool MergeMap::is_identity() const {
  for (std::size_t c = 0; c < remap.size(); ++c)
    if (remap[c] != static_cast<ClassId>(c)) return false;
  return true;
}

MergeMap compose(const MergeMap& earlier, const MergeMap& later) {
  require(earlier.remap.size() == later.remap.size(), "compose: maps cover different class counts");
  MergeMap out;
  out.remap.resize(earlier.remap.size());
  for (std::size_t c = 0; c < earlier.remap.size(); ++c) out.remap[c] = later.remap[earlier.remap[c]];
  return out;
}

double proxy_similarity(const RowVector& a, const RowVector& b) {
  require(a.size() == b.size(), "proxy_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "proxy_similarity: zero vector");
  return a.dot(b) / (na * nb);
}

namespace {

// Pairwise similarities between the listed rows, computed on normalized copies.
Matrix similarity_matrix(const ProxyMatrix& p, const std::vector<ClassId>& rows) {
  Matrix unit(static_cast<Eigen::Index>(rows.size()), p.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double n = p.proxies.row(rows[i]).norm();
    require(n > 0.0, "similarity scan: zero proxy " + std::to_string(rows[i]));
    unit.row(static_cast<Eigen::Index>(i)) = p.proxies.row(rows[i]) / n;
  }
  Matrix sim;
  sim.noalias() = unit * unit.transpose();
  return sim;
}

std::vector<ClassId> active_rows(const ProxyMatrix& p) {
  std::vector<ClassId> rows;
  for (int c = 0; c < p.num_classes(); ++c)
    if (p.active[c]) rows.push_back(c);
  return rows;
}

}  // namespace

double SimilarityReport::mean() const {
  if (top1.empty()) return 0.0;
  return std::accumulate(top1.begin(), top1.end(), 0.0) / static_cast<double>(top1.size());
}

double SimilarityReport::variance() const {
  if (top1.size() < 2) return 0.0;
  const double mu = mean();
  double acc = 0.0;
  for (double v : top1) acc += (v - mu) * (v - mu);
  return acc / static_cast<double>(top1.size());
}

SimilarityReport top1_report(const ProxyMatrix& proxies, bool include_intra_dataset, std::int64_t step) {
  const auto rows = active_rows(proxies);
  const bool multi = [&] {
    for (ClassId c : rows)
      if (proxies.dataset_of[c] != proxies.dataset_of[rows.front()]) return true;
    return false;
  }();
  if (rows.size() < 2 || (!multi && !include_intra_dataset))
    fail(ErrorKind::Contract, "top1_report: no comparable proxy pairs (need >= 2 datasets or intra-dataset scan)");

  const Matrix sim = similarity_matrix(proxies, rows);
  SimilarityReport report;
  report.step = step;
  report.histogram.assign(static_cast<std::size_t>(std::lround(2.0 / kHistogramBinWidth)), 0);
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!include_intra_dataset && proxies.dataset_of[rows[i]] == proxies.dataset_of[rows[j]]) continue;
      best = std::max(best, sim(i, j));
    }
    if (best == -std::numeric_limits<double>::infinity()) continue;
    best = std::clamp(best, -1.0, 1.0);
    report.classes.push_back(rows[i]);
    report.top1.push_back(best);
    auto bin = static_cast<std::size_t>(std::floor((best + 1.0) / kHistogramBinWidth));
    report.histogram[std::min(bin, report.histogram.size() - 1)] += 1;
  }
  if (report.top1.empty()) fail(ErrorKind::Contract, "top1_report: empty report");
  return report;
}

MergeMap build_merge_map(const ProxyMatrix& proxies, const FusionConfig& cfg) {
  validate(cfg);
  const int C = proxies.num_classes();
  MergeMap map = MergeMap::identity(C);
  if (cfg.t1 > 1.0) return map;  // similarities never exceed 1

  const auto rows = active_rows(proxies);
  const Matrix sim = similarity_matrix(proxies, rows);
  DisjointSet sets(static_cast<std::size_t>(C));
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (!cfg.include_intra_dataset && proxies.dataset_of[rows[i]] == proxies.dataset_of[rows[j]]) continue;
      if (sim(i, j) > cfg.t1) sets.unite(static_cast<std::size_t>(rows[i]), static_cast<std::size_t>(rows[j]));
    }
  }
  for (int c = 0; c < C; ++c) map.remap[c] = static_cast<ClassId>(sets.find(static_cast<std::size_t>(c)));
  return map;
}

std::vector<ClassId> apply_merge(ProxyMatrix& proxies, const MergeMap& map) {
  require(map.num_classes() == proxies.num_classes(), "apply_merge: map built for a different proxy matrix");
  for (const auto& members : map.components()) {
    if (members.size() < 2) continue;
    const ClassId canonical = members.front();
    RowVector mean = RowVector::Zero(proxies.dim());
    for (ClassId c : members) {
      require(proxies.active[c] != 0, "apply_merge: component contains inactive class " + std::to_string(c));
      mean += proxies.proxies.row(c);
    }
    const double n = mean.norm();
    if (!(n > 0.0)) fail(ErrorKind::NonFinite, "apply_merge: member proxies cancel out");
    proxies.proxies.row(canonical) = mean / n;
    for (ClassId c : members)
      if (c != canonical) proxies.active[c] = 0;
  }
  return map.remap;
}

int count_active(const ProxyMatrix& proxies) {
  return static_cast<int>(std::count_if(proxies.active.begin(), proxies.active.end(), [](auto a) { return a != 0; }));
}

int softmax_pool_size(const ProxyMatrix& proxies, ClassId label, bool dataset_aware) {
  require(label >= 0 && label < proxies.num_classes(), "softmax_pool_size: label out of range");
  int n = 0;
  for (int c = 0; c < proxies.num_classes(); ++c)
    if (proxies.active[c] && (!dataset_aware || proxies.dataset_of[c] == proxies.dataset_of[label])) ++n;
  return n;
}

void write_histogram(const SimilarityReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  out << "# top-1 similarity histogram, step " << report.step << "\n";
  char line[96];
  for (std::size_t b = 0; b < report.histogram.size(); ++b) {
    std::snprintf(line, sizeof line, "%.2f %.2f %lld\n", report.bin_low(b), report.bin_low(b + 1),
                  static_cast<long long>(report.histogram[b]));
    out << line;
  }
  if (!out) fail(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

void write_top1_values(const SimilarityReport& report, const ProxyMatrix& proxies,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  out << "# class dataset top1, step " << report.step << "\n";
  char line[96];
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    std::snprintf(line, sizeof line, "%d %d %.17g\n", report.classes[i], proxies.dataset_of[report.classes[i]],
                  report.top1[i]);
    out << line;
  }
  if (!out) fail(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

}  // namespace facefusion
