#include <random>

#include "doctest.h"
#include "facefusion/embedding_net.hpp"
#include "facefusion/error.hpp"
#include "gradient_oracle.hpp"

using namespace facefusion;
using facefusion::testing::FdCheck;
using facefusion::testing::fd_compare;

namespace {

Matrix gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("forward produces unit rows") {
  const NetParams p = init_params(16, {32, 24}, 8, 1);
  const ForwardCache c = forward(p, gaussian(10, 16, 2));
  CHECK(c.embeddings.rows() == 10);
  CHECK(c.embeddings.cols() == 8);
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(c.embeddings.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward is deterministic and seed dependent") {
  const Matrix x = gaussian(4, 6, 3);
  CHECK(forward(init_params(6, {5}, 3, 7), x).embeddings == forward(init_params(6, {5}, 3, 7), x).embeddings);
  CHECK(init_params(6, {5}, 3, 7) != init_params(6, {5}, 3, 8));
}

TEST_CASE("forward rejects degenerate embeddings and bad shapes") {
  NetParams p = init_params(4, {}, 3, 1);
  p.layers[0].weight.setZero();
  CHECK_THROWS_AS(forward(p, gaussian(2, 4, 1)), Error);
  try {
    forward(p, gaussian(2, 4, 1));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateEmbedding);
  }
  CHECK_THROWS_AS(forward(init_params(4, {}, 3, 1), gaussian(2, 5, 1)), Error);
}

TEST_CASE("backward matches finite differences for an 8-8-4 net") {
  NetParams p = init_params(8, {8}, 4, 11);
  // Nonzero biases so the bias path is exercised.
  p.layers[0].bias = gaussian(8, 1, 12).col(0) * 0.1;
  p.layers[1].bias = gaussian(4, 1, 13).col(0) * 0.1;
  Matrix x = gaussian(5, 8, 14);
  const Matrix upstream = gaussian(5, 4, 15);
  auto loss = [&] { return forward(p, x).embeddings.cwiseProduct(upstream).sum(); };

  const ForwardCache c = forward(p, x);
  const BackwardResult g = backward(p, c, upstream);
  FdCheck fd;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    fd_compare(p.layers[l].weight.data(), g.params.layers[l].weight.data(), p.layers[l].weight.size(), loss, fd);
    fd_compare(p.layers[l].bias.data(), g.params.layers[l].bias.data(), p.layers[l].bias.size(), loss, fd);
  }
  fd_compare(x.data(), g.inputs.data(), x.size(), loss, fd);
  CHECK(fd.checked == 8 * 8 + 8 + 8 * 4 + 4 + 5 * 8);
  CHECK(fd.max_rel_error < 1e-5);
}

TEST_CASE("gradient along the embedding is annihilated by the normalization") {
  const NetParams p = init_params(6, {7}, 5, 21);
  const Matrix x = gaussian(3, 6, 22);
  const ForwardCache c = forward(p, x);
  const BackwardResult g = backward(p, c, c.embeddings);
  for (const auto& l : g.params.layers) CHECK(l.weight.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("all_finite") {
  NetParams p = init_params(3, {3}, 2, 1);
  CHECK(all_finite(p));
  p.layers[1].bias[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(all_finite(p));
}
