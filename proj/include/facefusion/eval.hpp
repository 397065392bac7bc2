#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "facefusion/embedding_net.hpp"
#include "facefusion/fusion.hpp"
#include "facefusion/synthetic_data.hpp"

namespace facefusion {

inline constexpr int kNumFolds = 10;

struct VerificationPair {
  Vector a;
  Vector b;
  bool same = false;
  int fold = 0;
  std::int64_t uid_a = 0;
  std::int64_t uid_b = 0;
};

struct PairSet {
  std::vector<VerificationPair> pairs;

  int positives() const;
  int negatives() const { return static_cast<int>(pairs.size()) - positives(); }
};

// n_pairs/2 same-identity and n_pairs/2 different-identity pairs, assigned
// round-robin to 10 folds so every fold is balanced within one pair.
PairSet build_pairs(std::span<const HeldoutSample> heldout, int n_pairs, std::uint64_t seed);

// Held-out pool for a shard set: fresh draws of training identities plus the
// bank's identities that no shard contains (unseen), `per_identity` each.
std::vector<HeldoutSample> heldout_pool(const ShardSet& set, int per_identity, std::uint64_t seed);

struct FoldResult {
  double threshold = 0.0;
  double accuracy = 0.0;
};

struct VerificationResult {
  double accuracy = 0.0;  // mean over folds
  std::vector<FoldResult> folds;
};

// Best-threshold protocol: for each fold, pick the threshold that maximizes
// accuracy on the other nine folds (candidates are midpoints of the sorted
// scores plus both extremes), then score the held-out fold. A pair is
// predicted "same" when its score is strictly above the threshold.
VerificationResult verification_accuracy(std::span<const double> scores, std::span<const std::uint8_t> same,
                                         std::span<const int> folds);

// Cosine similarity of embedded pair members.
std::vector<double> pair_scores(const NetParams& model, const PairSet& pairs);
VerificationResult verification_accuracy(const NetParams& model, const PairSet& pairs);

struct MergeQuality {
  double precision = 1.0;
  double recall = 1.0;
  std::int64_t merged_pairs = 0;
  std::int64_t true_pairs = 0;
  std::int64_t conflict_pairs = 0;
  bool precision_vacuous = false;  // no merged pairs
  bool recall_vacuous = false;     // no ground-truth conflicts
};

// Pairs are counted within components of the map (transitive closure), as
// unordered class pairs.
MergeQuality merge_quality(const MergeMap& map, std::span<const std::pair<ClassId, ClassId>> conflicts);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<FoldResult> folds;
  MergeQuality merge;
  int active_classes = 0;
};

std::string to_json_line(const EvalReport& r);

}  // namespace facefusion
