#pragma once

#include <Eigen/Dense>

namespace knowmri {

// Activations are stored token-major: one row per sequence position.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using Vec = Eigen::VectorXd;

}  // namespace knowmri
