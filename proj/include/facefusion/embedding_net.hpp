#pragma once

#include <cstdint>
#include <vector>

#include "facefusion/types.hpp"

namespace facefusion {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kDegenerateNorm = 1e-12;
// The embedding is scale-invariant in the output layer, so a larger initial
// output norm slows the backbone relative to the unit-norm proxies (the
// effective step shrinks with the squared norm). Without it the backbone can
// drift into a shared offset before the proxies have settled.
inline constexpr double kOutputInitGain = 4.0;

// One affine layer, applied to row-major batches as  out = in * weight + bias.
struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Vector bias;    // fan_out

  bool operator==(const DenseLayer&) const = default;
};

// MLP backbone. Hidden layers use a leaky rectifier; the last layer is linear
// and its output is projected onto the unit sphere.
struct NetParams {
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.cols()); }
  bool operator==(const NetParams&) const = default;
};

// Same shapes as NetParams; used for gradients and momentum buffers.
using NetGrads = NetParams;

NetGrads zeros_like(const NetParams& params);

struct ForwardCache {
  std::vector<Matrix> inputs;   // input to layer l (inputs[0] is the batch)
  std::vector<Matrix> preacts;  // affine output of layer l
  Vector norms;                 // row norms of the last preactivation
  Matrix embeddings;            // unit rows
};

NetParams init_params(int input_dim, const std::vector<int>& hidden_dims, int output_dim,
                      std::uint64_t seed);

// Throws ErrorKind::DegenerateEmbedding when a pre-normalization row has norm < 1e-12.
ForwardCache forward(const NetParams& params, const Matrix& batch);

struct BackwardResult {
  NetGrads params;
  Matrix inputs;
};

BackwardResult backward(const NetParams& params, const ForwardCache& cache, const Matrix& grad_embeddings);

bool all_finite(const NetParams& params);

}  // namespace facefusion
