#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "facefusion/loss_heads.hpp"
#include "facefusion/types.hpp"

namespace facefusion {

struct FusionConfig {
  double t1 = 0.7;   // merge when similarity is strictly above this
  double t2 = 0.21;  // fraction of total steps trained dataset-aware before fusing
  bool include_intra_dataset = true;
  std::int64_t rescan_every = 0;  // 0: fuse once at the switch step only

  bool operator==(const FusionConfig&) const = default;
};

void validate(const FusionConfig& cfg);

// Union-find with path compression. The root of every set is its smallest
// element, so canonical ids do not depend on union order.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n);

  std::size_t find(std::size_t x);
  // Returns true when x and y were in different sets.
  bool unite(std::size_t x, std::size_t y);
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::size_t> parent_;
};

// Partition of the original class ids. remap[c] is the canonical (lowest) id
// of c's component.
struct MergeMap {
  std::vector<ClassId> remap;

  static MergeMap identity(int num_classes);
  int num_classes() const { return static_cast<int>(remap.size()); }
  int num_components() const;
  // Classes that are not canonical, i.e. the number of proxies a merge removes.
  int num_merged() const { return num_classes() - num_components(); }
  std::vector<std::vector<ClassId>> components() const;
  bool is_identity() const;
  bool operator==(const MergeMap&) const = default;
};

// Applies `later` on top of `earlier`: c -> later[earlier[c]].
MergeMap compose(const MergeMap& earlier, const MergeMap& later);

double proxy_similarity(const RowVector& a, const RowVector& b);

inline constexpr double kHistogramBinWidth = 0.02;

struct SimilarityReport {
  std::int64_t step = 0;
  std::vector<ClassId> classes;  // active proxies, ascending
  std::vector<double> top1;      // parallel to classes
  std::vector<std::int64_t> histogram;  // bins of kHistogramBinWidth over [-1, 1]

  double bin_low(std::size_t b) const { return -1.0 + kHistogramBinWidth * static_cast<double>(b); }
  double mean() const;
  double variance() const;
};

// Top-1 similarity of every active proxy against active proxies of other
// datasets (and of its own dataset too when include_intra_dataset is set).
SimilarityReport top1_report(const ProxyMatrix& proxies, bool include_intra_dataset = false,
                             std::int64_t step = 0);

// Scans active pairs with similarity > t1 and closes them transitively.
MergeMap build_merge_map(const ProxyMatrix& proxies, const FusionConfig& cfg);

// Replaces each merged component by the renormalized mean of its members,
// stored at the canonical id; other members are deactivated. Returns the
// label remap table (identical to map.remap).
std::vector<ClassId> apply_merge(ProxyMatrix& proxies, const MergeMap& map);

int count_active(const ProxyMatrix& proxies);

// Size of the softmax pool a sample of class `label` sees: same-dataset active
// classes when dataset-aware, all active classes otherwise.
int softmax_pool_size(const ProxyMatrix& proxies, ClassId label, bool dataset_aware);

// Plot-ready text files: "bin_low bin_high count" lines and "class dataset value" lines.
void write_histogram(const SimilarityReport& report, const std::filesystem::path& path);
void write_top1_values(const SimilarityReport& report, const ProxyMatrix& proxies,
                       const std::filesystem::path& path);

}  // namespace facefusion
