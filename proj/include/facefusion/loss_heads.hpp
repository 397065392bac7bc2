#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facefusion/types.hpp"

namespace facefusion {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Classification head: one proxy row per class of the concatenated label space.
// Classes merged away by fusion stay in the matrix but are inactive.
struct ProxyMatrix {
  Matrix proxies;                     // C x d
  std::vector<DatasetId> dataset_of;  // source dataset per original class
  std::vector<std::uint8_t> active;   // 0 once merged into another class

  int num_classes() const { return static_cast<int>(proxies.rows()); }
  int dim() const { return static_cast<int>(proxies.cols()); }
  bool operator==(const ProxyMatrix&) const = default;
};

ProxyMatrix init_proxies(std::span<const DatasetId> dataset_of, int dim, std::uint64_t seed);

// Unit-normalizes every active row.
void renormalize(ProxyMatrix& proxies);

inline constexpr std::int64_t kNeverStep = std::numeric_limits<std::int64_t>::max();

struct LossConfig {
  double margin = 0.5;   // additive angular margin m (radians)
  double scale = 64.0;   // logit scale s
  double lambda_da = 0.1;
  std::int64_t grl_active_after = 0;  // kNeverStep disables reversal entirely

  bool operator==(const LossConfig&) const = default;
};

void validate(const LossConfig& cfg);

inline constexpr double kCosineClamp = 1e-7;

struct AngularLogits {
  Matrix logits;                      // B x C; excluded columns hold -inf
  Matrix cosines;                     // clamped cosines, B x C
  Mask clamped;                       // true where the clamp was active (zero derivative)
  Vector target_slope;                // d logit_target / d cos_target, divided by s
  std::vector<ClassId> labels;
  std::vector<std::uint8_t> excluded; // per column: inactive class
};

// ArcFace logits: s*cos(theta_j) off-target and s*cos(theta_y + m) on target, with
// the fallback cos(theta) - m*sin(m) once theta > pi - m.
AngularLogits angular_logits(const Matrix& embeddings, const ProxyMatrix& proxies,
                             std::span<const ClassId> labels, const LossConfig& cfg);

// Target-column logit for a single (clamped) cosine; exposed for tests and analysis.
double arcface_target_logit(double cosine, double margin, double scale);

// mask(i, j) = dataset_of[j] == dataset_of[labels[i]].
Mask dataset_mask(std::span<const ClassId> labels, std::span<const DatasetId> dataset_of);

struct CrossEntropy {
  double loss = 0.0;  // mean over rows
  Matrix grad;        // d loss / d logits; zero outside the softmax pool
};

// Softmax cross-entropy over columns that are active and (if `mask` is given)
// unmasked for the row. A null mask means every active column.
CrossEntropy masked_cross_entropy(const Matrix& logits, std::span<const ClassId> labels, const Mask* mask,
                                  std::span<const std::uint8_t> active);

struct AngularGrads {
  Matrix embeddings;  // B x d
  Matrix proxies;     // C x d
};

// Chain rule from logit gradients back to embeddings and proxies.
AngularGrads angular_backward(const Matrix& grad_logits, const AngularLogits& cache, const Matrix& embeddings,
                              const ProxyMatrix& proxies, const LossConfig& cfg);

// Linear dataset classifier on top of the unit embedding.
struct DomainHeadParams {
  Matrix weight;  // d x n_datasets
  Vector bias;    // n_datasets

  int num_datasets() const { return static_cast<int>(bias.size()); }
  bool operator==(const DomainHeadParams&) const = default;
};

DomainHeadParams init_domain_head(int dim, int n_datasets, std::uint64_t seed);

struct DomainLoss {
  double loss = 0.0;
  Matrix grad_embeddings;       // already reversed and scaled by -lambda
  DomainHeadParams grad_head;   // plain descent gradient of the domain loss
  std::optional<std::string> diagnostic;
};

DomainLoss domain_adaptation_loss(const Matrix& embeddings, std::span<const DatasetId> dataset_labels,
                                  const DomainHeadParams& head, double lambda);

}  // namespace facefusion
