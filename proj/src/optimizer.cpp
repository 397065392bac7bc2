#include "facefusion/optimizer.hpp"

#include <cmath>

namespace facefusion {

double learning_rate(const SgdConfig& cfg, std::int64_t step) {
  double lr = cfg.base_lr;
  for (std::int64_t m : cfg.lr_milestones)
    if (step >= m) lr /= 10.0;
  return lr;
}

}  // namespace facefusion
