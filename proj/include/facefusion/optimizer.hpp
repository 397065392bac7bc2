#pragma once

#include <cstdint>
#include <vector>

#include "facefusion/types.hpp"

namespace facefusion {

struct SgdConfig {
  double base_lr = 0.005;
  std::vector<std::int64_t> lr_milestones;  // each divides the rate by 10
  double momentum = 0.9;
  double weight_decay = 5e-4;

  bool operator==(const SgdConfig&) const = default;
};

double learning_rate(const SgdConfig& cfg, std::int64_t step);

// Heavy-ball SGD with coupled L2 decay:
//   d = g + wd * p;  buf = momentum * buf + d;  p -= lr * buf
template <typename Param, typename Grad, typename Buffer>
void sgd_update(Param&& param, const Grad& grad, Buffer&& buffer, double lr, double momentum,
                double weight_decay) {
  buffer = momentum * buffer + grad + weight_decay * param;
  param -= lr * buffer;
}

}  // namespace facefusion
