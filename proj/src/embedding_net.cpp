#include "facefusion/embedding_net.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "facefusion/error.hpp"

namespace facefusion {

NetGrads zeros_like(const NetParams& params) {
  NetGrads g;
  for (const auto& l : params.layers)
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return g;
}

NetParams init_params(int input_dim, const std::vector<int>& hidden_dims, int output_dim,
                      std::uint64_t seed) {
  require(input_dim > 0 && output_dim > 0, "init_params: dimensions must be positive");
  std::vector<int> dims{input_dim};
  for (int h : hidden_dims) {
    require(h > 0, "init_params: hidden dimensions must be positive");
    dims.push_back(h);
  }
  dims.push_back(output_dim);

  std::mt19937_64 rng(seed);
  NetParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    // He-style scaling; the leaky slope is small enough to ignore here.
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    DenseLayer layer{Matrix(fan_in, fan_out), Vector::Zero(fan_out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = normal(rng);
    // Rectified inputs share a positive mean; zero-sum columns keep it from
    // showing up as a common output offset at initialization.
    if (l > 0) layer.weight.rowwise() -= layer.weight.colwise().mean();
    if (l + 2 == dims.size()) layer.weight *= kOutputInitGain;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

ForwardCache forward(const NetParams& params, const Matrix& batch) {
  require(!params.layers.empty(), "forward: network has no layers");
  require(batch.cols() == params.input_dim(), "forward: batch width does not match input dimension");
  ForwardCache cache;
  const std::size_t depth = params.layers.size();
  cache.inputs.reserve(depth);
  cache.preacts.reserve(depth);

  Matrix a = batch;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = params.layers[l];
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias.transpose();
    cache.inputs.push_back(std::move(a));
    if (l + 1 < depth) a = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    cache.preacts.push_back(std::move(z));
  }

  const Matrix& y = cache.preacts.back();
  cache.norms = y.rowwise().norm();
  for (Eigen::Index i = 0; i < cache.norms.size(); ++i) {
    if (!(cache.norms[i] >= kDegenerateNorm)) {
      std::ostringstream msg;
      msg << "row " << i << " has pre-normalization norm " << cache.norms[i];
      fail(ErrorKind::DegenerateEmbedding, msg.str());
    }
  }
  cache.embeddings = cache.norms.cwiseInverse().asDiagonal() * y;
  return cache;
}

BackwardResult backward(const NetParams& params, const ForwardCache& cache, const Matrix& grad_embeddings) {
  const std::size_t depth = params.layers.size();
  require(cache.preacts.size() == depth && cache.inputs.size() == depth,
          "backward: cache does not match network depth");
  require(grad_embeddings.rows() == cache.embeddings.rows() &&
              grad_embeddings.cols() == cache.embeddings.cols(),
          "backward: gradient shape does not match embeddings");

  // d(y/|y|) = (I - e e^T) / |y|
  const Matrix& e = cache.embeddings;
  const Vector radial = (e.cwiseProduct(grad_embeddings)).rowwise().sum();
  Matrix g = cache.norms.cwiseInverse().asDiagonal() * (grad_embeddings - radial.asDiagonal() * e);

  BackwardResult out{zeros_like(params), Matrix()};
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = params.layers[l];
    if (l + 1 < depth) {
      const Matrix& z = cache.preacts[l];
      g = g.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }));
    }
    out.params.layers[l].weight.noalias() = cache.inputs[l].transpose() * g;
    out.params.layers[l].bias = g.colwise().sum().transpose();
    Matrix prev = g * layer.weight.transpose();
    g = std::move(prev);
  }
  out.inputs = std::move(g);
  return out;
}

bool all_finite(const NetParams& params) {
  for (const auto& l : params.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace facefusion
