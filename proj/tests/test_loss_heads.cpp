#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "facefusion/error.hpp"
#include "facefusion/fusion.hpp"
#include "facefusion/loss_heads.hpp"
#include "facefusion/trainer.hpp"
#include "gradient_oracle.hpp"

using namespace facefusion;
using facefusion::testing::FdCheck;
using facefusion::testing::fd_compare;

namespace {

Matrix random_unit_rows(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  m.rowwise().normalize();
  return m;
}

ProxyMatrix proxies_for(std::vector<DatasetId> ds, int d, std::uint64_t seed) { return init_proxies(ds, d, seed); }

}  // namespace

TEST_CASE("angular logits: margin off and scale 1 give plain cosines") {
  std::mt19937_64 rng(1);
  const Matrix e = random_unit_rows(5, 8, rng);
  const ProxyMatrix p = proxies_for({0, 0, 1, 1, 1, 0}, 8, 2);
  const std::vector<ClassId> y{0, 2, 5, 1, 4};
  LossConfig cfg;
  cfg.margin = 0.0;
  cfg.scale = 1.0;
  const auto out = angular_logits(e, p, y, cfg);
  const Matrix cos = e * p.proxies.transpose();
  CHECK((out.logits - cos).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("angular logits: target logit at theta = pi/3, m = 0.5, s = 64") {
  // mpmath at 50 digits: 64*cos(pi/3 + 1/2) = 1.5101814586182065...
  const double expected = 1.5101814586182065;
  CHECK(arcface_target_logit(std::cos(std::numbers::pi / 3), 0.5, 64.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("angular logits: embedding equal to its proxy gives s*cos(m)") {
  const ProxyMatrix p = proxies_for({0, 0, 0}, 8, 3);
  const Matrix e = p.proxies.row(1);
  const std::vector<ClassId> y{1};
  LossConfig cfg;
  const auto out = angular_logits(e, p, y, cfg);
  // The clamp moves cos from 1 to 1 - 1e-7, which shifts the logit by ~O(sqrt(1e-7)).
  CHECK(out.logits(0, 1) == doctest::Approx(64.0 * std::cos(0.5)).epsilon(1e-3));
}

TEST_CASE("angular logits: fallback branch keeps the target logit decreasing in theta") {
  const double m = 0.5;
  double prev = arcface_target_logit(1.0, m, 1.0);
  for (int i = 1; i <= 2000; ++i) {
    const double theta = std::numbers::pi * i / 2000.0;
    const double cur = arcface_target_logit(std::cos(theta), m, 1.0);
    CHECK(cur < prev + 1e-12);
    prev = cur;
  }
  // Past pi - m the fallback is cos(theta) - m*sin(m).
  const double c = std::cos(std::numbers::pi - 0.2);
  CHECK(arcface_target_logit(c, m, 1.0) == doctest::Approx(c - m * std::sin(m)));
}

TEST_CASE("angular logits: label on an inactive class is a contract error") {
  ProxyMatrix p = proxies_for({0, 0, 1}, 4, 4);
  p.active[2] = 0;
  const Matrix e = p.proxies.row(0);
  const std::vector<ClassId> y{2};
  CHECK_THROWS_AS(angular_logits(e, p, y, LossConfig{}), Error);
}

TEST_CASE("margin monotonicity: larger m lowers the target logit only") {
  std::mt19937_64 rng(5);
  const Matrix e = random_unit_rows(6, 8, rng);
  const ProxyMatrix p = proxies_for({0, 1, 0, 1, 0, 1, 0}, 8, 6);
  const std::vector<ClassId> y{0, 1, 2, 3, 4, 5};
  LossConfig lo, hi;
  lo.margin = 0.2;
  hi.margin = 0.3;
  const auto a = angular_logits(e, p, y, lo);
  const auto b = angular_logits(e, p, y, hi);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 7; ++j) {
      if (j == y[i])
        CHECK(b.logits(i, j) < a.logits(i, j));
      else
        CHECK(b.logits(i, j) == a.logits(i, j));
    }
  }
}

TEST_CASE("dataset mask") {
  const std::vector<DatasetId> one{0, 0, 0, 0};
  const std::vector<ClassId> y{0, 3, 2};
  CHECK(dataset_mask(y, one).all());

  const std::vector<DatasetId> two{0, 0, 1, 1, 1};
  const std::vector<ClassId> y0{1};
  const Mask m = dataset_mask(y0, two);
  CHECK(m(0, 0));
  CHECK(m(0, 1));
  CHECK_FALSE(m(0, 2));
  CHECK_FALSE(m(0, 3));
  CHECK_FALSE(m(0, 4));
}

TEST_CASE("masked cross entropy: degenerate and uniform cases") {
  SUBCASE("one active class") {
    Matrix logits(2, 1);
    logits << 3.0, -7.0;
    const std::vector<ClassId> y{0, 0};
    const std::vector<std::uint8_t> active{1};
    const auto ce = masked_cross_entropy(logits, y, nullptr, active);
    CHECK(ce.loss == 0.0);
    CHECK(ce.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("row whose pool is only the target") {
    Matrix logits(1, 3);
    logits << 1.0, 2.0, 3.0;
    Mask m(1, 3);
    m << false, true, false;
    const std::vector<ClassId> y{1};
    const std::vector<std::uint8_t> active{1, 1, 1};
    const auto ce = masked_cross_entropy(logits, y, &m, active);
    CHECK(ce.loss == 0.0);
    CHECK(ce.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("uniform logits over n pooled columns give ln(n)") {
    Matrix logits = Matrix::Constant(3, 6, 0.37);
    Mask m(3, 6);
    m << true, true, true, true, false, false,  //
        true, true, false, false, false, false,  //
        true, true, true, true, true, true;
    const std::vector<ClassId> y{0, 1, 5};
    std::vector<std::uint8_t> active(6, 1);
    active[5] = 1;
    const auto ce = masked_cross_entropy(logits, y, &m, active);
    CHECK(ce.loss == doctest::Approx((std::log(4.0) + std::log(2.0) + std::log(6.0)) / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("masked cross entropy: gradient matches finite differences and respects the mask") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  Matrix logits(4, 3);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
  Mask m(4, 3);
  m << true, true, false,  //
      true, true, true,    //
      false, true, true,   //
      true, false, true;
  const std::vector<ClassId> y{0, 2, 1, 2};
  const std::vector<std::uint8_t> active{1, 1, 1};
  const auto ce = masked_cross_entropy(logits, y, &m, active);

  FdCheck fd;
  fd_compare(logits.data(), ce.grad.data(), logits.size(),
             [&] { return masked_cross_entropy(logits, y, &m, active).loss; }, fd);
  CHECK(fd.max_rel_error < 1e-6);
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 3; ++j) {
      row += ce.grad(i, j);
      if (!m(i, j)) CHECK(ce.grad(i, j) == 0.0);
    }
    CHECK(std::abs(row) < 1e-15);
  }
}

TEST_CASE("masked cross entropy: stable for s = 64 over 10^4 classes") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-64.0, 64.0);
  Matrix logits(4, 10000);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = u(rng);
  const std::vector<ClassId> y{0, 9999, 17, 5000};
  const std::vector<std::uint8_t> active(10000, 1);
  const auto ce = masked_cross_entropy(logits, y, nullptr, active);
  CHECK(std::isfinite(ce.loss));
  CHECK(ce.grad.allFinite());
}

TEST_CASE("domain adaptation loss") {
  std::mt19937_64 rng(9);
  const Matrix e = random_unit_rows(6, 8, rng);
  const DomainHeadParams head = init_domain_head(8, 3, 10);
  const std::vector<DatasetId> d{0, 1, 2, 0, 1, 2};

  SUBCASE("lambda = 0 zeroes the embedding gradient only") {
    const auto zero = domain_adaptation_loss(e, d, head, 0.0);
    const auto one = domain_adaptation_loss(e, d, head, 1.0);
    CHECK(zero.grad_embeddings.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zero.grad_head == one.grad_head);
  }
  SUBCASE("reversal: lambda = 1 gives exactly minus the classifier input gradient") {
    const auto out = domain_adaptation_loss(e, d, head, 1.0);
    Matrix x = e;
    FdCheck fd;
    const Matrix reversed_back = -out.grad_embeddings;
    fd_compare(x.data(), reversed_back.data(), x.size(),
               [&] { return domain_adaptation_loss(x, d, head, 1.0).loss; }, fd);
    CHECK(fd.max_rel_error < 1e-6);
  }
  SUBCASE("head gradient is the plain descent gradient") {
    auto out = domain_adaptation_loss(e, d, head, 0.1);
    DomainHeadParams h = head;
    FdCheck fd;
    fd_compare(h.weight.data(), out.grad_head.weight.data(), h.weight.size(),
               [&] { return domain_adaptation_loss(e, d, h, 0.1).loss; }, fd);
    fd_compare(h.bias.data(), out.grad_head.bias.data(), h.bias.size(),
               [&] { return domain_adaptation_loss(e, d, h, 0.1).loss; }, fd);
    CHECK(fd.max_rel_error < 1e-6);
  }
  SUBCASE("single dataset: zero loss with a diagnostic") {
    const DomainHeadParams h1 = init_domain_head(8, 1, 11);
    const std::vector<DatasetId> z(6, 0);
    const auto out = domain_adaptation_loss(e, z, h1, 0.1);
    CHECK(out.loss == 0.0);
    CHECK(out.diagnostic.has_value());
    CHECK(out.grad_embeddings.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("domain head learns two separated domains under head-only descent") {
  // Two domains on opposite sides of the first axis.
  Matrix e = Matrix::Zero(8, 4);
  std::vector<DatasetId> d;
  for (int i = 0; i < 8; ++i) {
    e(i, 0) = i < 4 ? 1.0 : -1.0;
    d.push_back(i < 4 ? 0 : 1);
  }
  DomainHeadParams h{Matrix::Zero(4, 2), Vector::Zero(2)};
  double prev = domain_adaptation_loss(e, d, h, 0.1).loss;
  CHECK(prev == doctest::Approx(std::log(2.0)));
  for (int step = 0; step < 20; ++step) {
    const auto out = domain_adaptation_loss(e, d, h, 0.1);
    h.weight -= 0.5 * out.grad_head.weight;
    h.bias -= 0.5 * out.grad_head.bias;
    const double cur = domain_adaptation_loss(e, d, h, 0.1).loss;
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("proxy isolation: dataset-aware gradients never touch other datasets' proxies") {
  std::mt19937_64 rng(12);
  const std::vector<DatasetId> ds{0, 0, 0, 1, 1, 2, 2, 2, 2};
  const ProxyMatrix p = proxies_for(ds, 8, 13);
  std::uniform_int_distribution<int> pick(0, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix e = random_unit_rows(1, 8, rng);
    const std::vector<ClassId> y{pick(rng)};
    const LossConfig cfg;
    const auto logits = angular_logits(e, p, y, cfg);
    const Mask mask = dataset_mask(y, p.dataset_of);
    const auto ce = masked_cross_entropy(logits.logits, y, &mask, p.active);
    const auto g = angular_backward(ce.grad, logits, e, p, cfg);
    for (int c = 0; c < 9; ++c)
      if (ds[c] != ds[y[0]]) CHECK(g.proxies.row(c).cwiseAbs().maxCoeff() == 0.0);
  }
}
