#include "facefusion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "facefusion/error.hpp"
#include "json.hpp"

namespace facefusion {

int PairSet::positives() const {
  return static_cast<int>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.same; }));
}

PairSet build_pairs(std::span<const HeldoutSample> heldout, int n_pairs, std::uint64_t seed) {
  require(n_pairs >= 2 && n_pairs % 2 == 0, "build_pairs: n_pairs must be a positive even number");
  std::map<IdentityId, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < heldout.size(); ++i) by_id[heldout[i].gt_identity].push_back(i);
  require(by_id.size() >= 2, "build_pairs: need at least 2 identities in the held-out set");
  std::vector<IdentityId> multi;
  for (const auto& [id, rows] : by_id)
    if (rows.size() >= 2) multi.push_back(id);
  require(!multi.empty(), "build_pairs: no identity has 2 held-out samples for positive pairs");

  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto make = [&](std::size_t a, std::size_t b, bool same) {
    return VerificationPair{heldout[a].feature, heldout[b].feature, same, 0, heldout[a].image_uid,
                            heldout[b].image_uid};
  };

  const int half = n_pairs / 2;
  std::vector<VerificationPair> pos, neg;
  for (int i = 0; i < half; ++i) {
    const auto& rows = by_id[multi[pick(multi.size())]];
    const std::size_t a = pick(rows.size());
    std::size_t b = pick(rows.size() - 1);
    if (b >= a) ++b;
    pos.push_back(make(rows[a], rows[b], true));
  }
  for (int i = 0; i < half; ++i) {
    std::size_t a, b;
    do {
      a = pick(heldout.size());
      b = pick(heldout.size());
    } while (heldout[a].gt_identity == heldout[b].gt_identity);
    neg.push_back(make(a, b, false));
  }

  // Alternate positive/negative.
  PairSet out;
  out.pairs.reserve(n_pairs);
  for (int i = 0; i < half; ++i) {
    out.pairs.push_back(std::move(pos[i]));
    out.pairs.push_back(std::move(neg[i]));
  }
  // Pair i goes to fold (i + i/10) mod 10: each block of ten pairs covers every
  // fold once, and the shift swaps positive/negative slots between blocks.
  for (std::size_t i = 0; i < out.pairs.size(); ++i)
    out.pairs[i].fold = static_cast<int>((i + i / kNumFolds) % kNumFolds);
  return out;
}

std::vector<HeldoutSample> heldout_pool(const ShardSet& set, int per_identity, std::uint64_t seed) {
  std::vector<IdentityId> ids(set.bank.size());
  std::iota(ids.begin(), ids.end(), 0);
  return sample_heldout(set, ids, per_identity, seed);
}

namespace {

// Best threshold on (scores, same) by a single sweep over sorted scores.
double best_threshold(std::vector<std::pair<double, bool>> scored) {
  std::sort(scored.begin(), scored.end());
  const std::size_t n = scored.size();
  if (n == 0) return 0.0;
  // Threshold below everything: all predicted same.
  std::int64_t correct = std::count_if(scored.begin(), scored.end(), [](const auto& p) { return p.second; });
  std::int64_t best = correct;
  double best_t = scored.front().first - 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Moving the threshold past scored[i] flips it to "different".
    correct += scored[i].second ? -1 : 1;
    if (i + 1 < n && scored[i + 1].first == scored[i].first) continue;
    const double t = i + 1 < n ? 0.5 * (scored[i].first + scored[i + 1].first) : scored[i].first + 1.0;
    if (correct > best) {
      best = correct;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

VerificationResult verification_accuracy(std::span<const double> scores, std::span<const std::uint8_t> same,
                                         std::span<const int> folds) {
  require(scores.size() == same.size() && scores.size() == folds.size(), "verification_accuracy: length mismatch");
  VerificationResult out;
  int used = 0;
  for (int f = 0; f < kNumFolds; ++f) {
    std::vector<std::pair<double, bool>> train;
    std::int64_t test_n = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (folds[i] != f) train.emplace_back(scores[i], same[i] != 0);
      else ++test_n;
    if (test_n == 0) continue;
    const double t = best_threshold(std::move(train));
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (folds[i] == f) correct += ((scores[i] > t) == (same[i] != 0));
    out.folds.push_back({t, static_cast<double>(correct) / static_cast<double>(test_n)});
    out.accuracy += out.folds.back().accuracy;
    ++used;
  }
  require(used > 0, "verification_accuracy: no pairs");
  out.accuracy /= used;
  return out;
}

std::vector<double> pair_scores(const NetParams& model, const PairSet& pairs) {
  const auto n = static_cast<Eigen::Index>(pairs.pairs.size());
  if (n == 0) return {};
  const Eigen::Index dim = pairs.pairs.front().a.size();
  Matrix a(n, dim), b(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i) = pairs.pairs[i].a.transpose();
    b.row(i) = pairs.pairs[i].b.transpose();
  }
  const Matrix ea = forward(model, a).embeddings;
  const Matrix eb = forward(model, b).embeddings;
  std::vector<double> s(n);
  for (Eigen::Index i = 0; i < n; ++i) s[i] = ea.row(i).dot(eb.row(i));
  return s;
}

VerificationResult verification_accuracy(const NetParams& model, const PairSet& pairs) {
  const auto scores = pair_scores(model, pairs);
  std::vector<std::uint8_t> same;
  std::vector<int> folds;
  for (const auto& p : pairs.pairs) {
    same.push_back(p.same ? 1 : 0);
    folds.push_back(p.fold);
  }
  return verification_accuracy(scores, same, folds);
}

MergeQuality merge_quality(const MergeMap& map, std::span<const std::pair<ClassId, ClassId>> conflicts) {
  std::set<std::pair<ClassId, ClassId>> truth;
  for (auto [a, b] : conflicts) {
    require(a >= 0 && b >= 0 && a < map.num_classes() && b < map.num_classes(), "merge_quality: class out of range");
    truth.emplace(std::min(a, b), std::max(a, b));
  }
  MergeQuality q;
  q.conflict_pairs = static_cast<std::int64_t>(truth.size());
  for (const auto& members : map.components()) {
    const auto m = static_cast<std::int64_t>(members.size());
    q.merged_pairs += m * (m - 1) / 2;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) q.true_pairs += truth.count({members[i], members[j]});
  }
  q.precision_vacuous = q.merged_pairs == 0;
  q.recall_vacuous = q.conflict_pairs == 0;
  q.precision = q.precision_vacuous ? 1.0 : static_cast<double>(q.true_pairs) / static_cast<double>(q.merged_pairs);
  q.recall = q.recall_vacuous ? 1.0 : static_cast<double>(q.true_pairs) / static_cast<double>(q.conflict_pairs);
  return q;
}

std::string to_json_line(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["thresholds"] = nlohmann::json::array();
  j["fold_accuracies"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    j["thresholds"].push_back(f.threshold);
    j["fold_accuracies"].push_back(f.accuracy);
  }
  j["merge_precision"] = r.merge.precision;
  j["merge_recall"] = r.merge.recall;
  j["merge_precision_vacuous"] = r.merge.precision_vacuous;
  j["merge_recall_vacuous"] = r.merge.recall_vacuous;
  j["merged_pairs"] = r.merge.merged_pairs;
  j["conflict_pairs"] = r.merge.conflict_pairs;
  j["active_classes"] = r.active_classes;
  return j.dump();
}

}  // namespace facefusion
