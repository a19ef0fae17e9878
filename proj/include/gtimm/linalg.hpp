#pragma once

#include <Eigen/Dense>

namespace gtimm {

// Least-squares solution of A x ~ b. Rank-deficient designs fall back to the
// ridge-damped normal equations (A'A + 1e-8 I) x = A'b.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

inline constexpr double kRidgeDamping = 1e-8;

}  // namespace gtimm
