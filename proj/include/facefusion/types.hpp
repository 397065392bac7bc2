#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace facefusion {

// Row-major so that one row is one sample / one proxy.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using ClassId = std::int32_t;
using DatasetId = std::int32_t;
using IdentityId = std::int32_t;

}  // namespace facefusion
