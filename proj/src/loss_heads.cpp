#include "facefusion/loss_heads.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "facefusion/error.hpp"

namespace facefusion {

ProxyMatrix init_proxies(std::span<const DatasetId> dataset_of, int dim, std::uint64_t seed) {
  require(dim > 0, "init_proxies: dim must be positive");
  ProxyMatrix p;
  p.dataset_of.assign(dataset_of.begin(), dataset_of.end());
  p.active.assign(dataset_of.size(), 1);
  p.proxies.resize(static_cast<Eigen::Index>(dataset_of.size()), dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < p.proxies.size(); ++i) p.proxies.data()[i] = normal(rng);
  renormalize(p);
  return p;
}

void renormalize(ProxyMatrix& p) {
  for (Eigen::Index c = 0; c < p.proxies.rows(); ++c) {
    if (!p.active[c]) continue;
    const double n = p.proxies.row(c).norm();
    if (!(n > 0.0)) fail(ErrorKind::NonFinite, "proxy " + std::to_string(c) + " has zero or non-finite norm");
    p.proxies.row(c) /= n;
  }
}

void validate(const LossConfig& cfg) {
  if (!(cfg.margin >= 0.0 && cfg.margin < std::numbers::pi / 2))
    fail(ErrorKind::Config, "margin must lie in [0, pi/2)");
  if (!(cfg.scale > 0.0)) fail(ErrorKind::Config, "scale must be > 0");
  if (!(cfg.lambda_da >= 0.0)) fail(ErrorKind::Config, "lambda_da must be >= 0");
  if (cfg.grl_active_after < 0) fail(ErrorKind::Config, "grl_active_after must be >= 0");
}

namespace {

struct TargetTerm {
  double value;  // phi(cos), unscaled
  double slope;  // d phi / d cos
};

TargetTerm target_term(double c, double m) {
  const double theta = std::acos(c);
  if (theta > std::numbers::pi - m) return {c - m * std::sin(m), 1.0};
  // d/dc cos(acos(c) + m) = sin(acos(c) + m) / sqrt(1 - c^2)
  return {std::cos(theta + m), std::sin(theta + m) / std::sqrt(1.0 - c * c)};
}

double clamp_cosine(double c) { return std::clamp(c, -1.0 + kCosineClamp, 1.0 - kCosineClamp); }

}  // namespace

double arcface_target_logit(double cosine, double margin, double scale) {
  return scale * target_term(clamp_cosine(cosine), margin).value;
}

AngularLogits angular_logits(const Matrix& embeddings, const ProxyMatrix& proxies,
                             std::span<const ClassId> labels, const LossConfig& cfg) {
  const auto B = embeddings.rows();
  const auto C = proxies.proxies.rows();
  require(embeddings.cols() == proxies.proxies.cols(), "angular_logits: embedding and proxy widths differ");
  require(static_cast<Eigen::Index>(labels.size()) == B, "angular_logits: one label per embedding row");
  for (ClassId y : labels) {
    require(y >= 0 && y < C, "angular_logits: label out of range");
    require(proxies.active[y] != 0, "angular_logits: label " + std::to_string(y) + " refers to an inactive class");
  }

  AngularLogits out;
  out.labels.assign(labels.begin(), labels.end());
  out.excluded.resize(C);
  for (Eigen::Index j = 0; j < C; ++j) out.excluded[j] = proxies.active[j] ? 0 : 1;

  Matrix raw;
  raw.noalias() = embeddings * proxies.proxies.transpose();
  out.clamped = (raw.array() < -1.0 + kCosineClamp) || (raw.array() > 1.0 - kCosineClamp);
  out.cosines = raw.cwiseMax(-1.0 + kCosineClamp).cwiseMin(1.0 - kCosineClamp);
  out.logits = cfg.scale * out.cosines;
  out.target_slope.resize(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const ClassId y = labels[i];
    const TargetTerm t = target_term(out.cosines(i, y), cfg.margin);
    out.logits(i, y) = cfg.scale * t.value;
    out.target_slope[i] = t.slope;
  }
  constexpr double kExcluded = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < C; ++j)
    if (out.excluded[j]) out.logits.col(j).setConstant(kExcluded);
  return out;
}

Mask dataset_mask(std::span<const ClassId> labels, std::span<const DatasetId> dataset_of) {
  const auto B = static_cast<Eigen::Index>(labels.size());
  const auto C = static_cast<Eigen::Index>(dataset_of.size());
  Mask mask(B, C);
  for (Eigen::Index i = 0; i < B; ++i) {
    require(labels[i] >= 0 && labels[i] < C, "dataset_mask: label out of range");
    const DatasetId k = dataset_of[labels[i]];
    for (Eigen::Index j = 0; j < C; ++j) mask(i, j) = dataset_of[j] == k;
  }
  return mask;
}

CrossEntropy masked_cross_entropy(const Matrix& logits, std::span<const ClassId> labels, const Mask* mask,
                                  std::span<const std::uint8_t> active) {
  const auto B = logits.rows();
  const auto C = logits.cols();
  require(static_cast<Eigen::Index>(labels.size()) == B, "masked_cross_entropy: one label per row");
  require(static_cast<Eigen::Index>(active.size()) == C, "masked_cross_entropy: active mask width");
  if (mask) require(mask->rows() == B && mask->cols() == C, "masked_cross_entropy: mask shape");

  CrossEntropy out{0.0, Matrix::Zero(B, C)};
  if (B == 0) return out;

  Eigen::Array<bool, 1, Eigen::Dynamic> active_row(C);
  for (Eigen::Index j = 0; j < C; ++j) active_row[j] = active[j] != 0;
  Mask pool = active_row.replicate(B, 1);
  if (mask) pool = pool && *mask;
  for (Eigen::Index i = 0; i < B; ++i) {
    const ClassId y = labels[i];
    require(y >= 0 && y < C && pool(i, y), "masked_cross_entropy: target column outside the softmax pool");
  }

  // Columns outside the pool become -inf and drop out of the log-sum-exp.
  constexpr double kOut = -std::numeric_limits<double>::infinity();
  out.grad = pool.select(logits, kOut);
  const Vector mx = out.grad.rowwise().maxCoeff();
  out.grad.colwise() -= mx;
  // Vectorized exp maps -inf to a denormal rather than 0; re-zero the excluded columns.
  out.grad = pool.select(out.grad.array().exp().matrix(), 0.0);
  const Vector sum = out.grad.rowwise().sum();
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const ClassId y = labels[i];
    total += mx[i] + std::log(sum[i]) - logits(i, y);
    out.grad.row(i) *= inv_b / sum[i];
    out.grad(i, y) -= inv_b;
  }
  out.loss = total * inv_b;
  return out;
}

AngularGrads angular_backward(const Matrix& grad_logits, const AngularLogits& cache, const Matrix& embeddings,
                              const ProxyMatrix& proxies, const LossConfig& cfg) {
  require(grad_logits.rows() == cache.cosines.rows() && grad_logits.cols() == cache.cosines.cols(),
          "angular_backward: gradient shape mismatch");
  Matrix dcos = cfg.scale * grad_logits;
  for (Eigen::Index i = 0; i < dcos.rows(); ++i) dcos(i, cache.labels[i]) *= cache.target_slope[i];
  dcos = cache.clamped.select(0.0, dcos);
  for (Eigen::Index j = 0; j < dcos.cols(); ++j)
    if (cache.excluded[j]) dcos.col(j).setZero();

  AngularGrads g;
  g.embeddings.noalias() = dcos * proxies.proxies;
  g.proxies.noalias() = dcos.transpose() * embeddings;
  return g;
}

DomainHeadParams init_domain_head(int dim, int n_datasets, std::uint64_t seed) {
  require(dim > 0 && n_datasets > 0, "init_domain_head: dimensions must be positive");
  DomainHeadParams h{Matrix(dim, n_datasets), Vector::Zero(n_datasets)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = normal(rng);
  return h;
}

DomainLoss domain_adaptation_loss(const Matrix& embeddings, std::span<const DatasetId> dataset_labels,
                                  const DomainHeadParams& head, double lambda) {
  require(lambda >= 0.0, "domain_adaptation_loss: lambda must be >= 0");
  const auto B = embeddings.rows();
  const auto K = head.bias.size();
  require(embeddings.cols() == head.weight.rows(), "domain_adaptation_loss: head input width mismatch");
  require(static_cast<Eigen::Index>(dataset_labels.size()) == B, "domain_adaptation_loss: one label per row");

  DomainLoss out;
  if (K == 1) out.diagnostic = "single dataset: domain loss is identically zero";
  Matrix z = embeddings * head.weight;
  z.rowwise() += head.bias.transpose();
  Matrix g = Matrix::Zero(B, K);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const DatasetId d = dataset_labels[i];
    require(d >= 0 && d < K, "domain_adaptation_loss: dataset label out of range");
    const double mx = z.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < K; ++j) sum += (g(i, j) = std::exp(z(i, j) - mx));
    total += mx + std::log(sum) - z(i, d);
    g.row(i) /= sum * static_cast<double>(B);
    g(i, d) -= 1.0 / static_cast<double>(B);
  }
  out.loss = B > 0 ? total / static_cast<double>(B) : 0.0;
  out.grad_head.weight = embeddings.transpose() * g;
  out.grad_head.bias = g.colwise().sum().transpose();
  // Gradient reversal: identity forward, -lambda on the way back.
  out.grad_embeddings = (-lambda) * (g * head.weight.transpose());
  return out;
}

}  // namespace facefusion
