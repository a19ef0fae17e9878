#pragma once

#include "gtimm/dataset.hpp"
#include "gtimm/family.hpp"
#include "gtimm/tree.hpp"

#include <Eigen/Dense>

#include <span>

namespace gtimm {

// Tree-informed mixed model: region m of the tree carries its own fixed
// effect beta_star.col(m); a single random effect vector b is shared by all
// regions.  eta_i = x_i' beta^(region(i)) + z_i' b,  mu_i = h(eta_i).
//
// Random-effect covariance is sigma_b2 * I_q, residual covariance
// sigma_eps2 * I_N.
struct GtimmModel {
    Eigen::MatrixXd beta_star;  // p x M
    Eigen::VectorXd b_hat;      // q
    double sigma_b2 = 1.0;
    double sigma_eps2 = 1.0;
    RegressionTree tree;
    LinkFamily family = LinkFamily::gaussian();

    std::size_t regions() const { return static_cast<std::size_t>(beta_star.cols()); }
};

// Throws std::invalid_argument when dimensions disagree with the tree or the
// entries are not finite.
void check_model(const GtimmModel& m);

double linear_predictor(const GtimmModel& m, const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t region,
                        const Eigen::Ref<const Eigen::VectorXd>& z);

// x_i' beta^(region(i)) for every row: ((X beta*) . R') 1_M.
Eigen::VectorXd fixed_part(const Eigen::MatrixXd& beta_star, const Eigen::MatrixXd& X, const RegionAssignment& r);

// Per-observation quantities at the current b_hat.
struct QuasiState {
    Eigen::VectorXd mu;
    Eigen::VectorXd residual;  // y - mu
    Eigen::VectorXd weight;    // diagonal of W: 1 / (phi alpha v(mu) g'(mu)^2)
    double quasi_loglik = 0.0;
};

QuasiState quasi_state(const GtimmModel& m, const Dataset& d, const RegionAssignment& r);

// Laplace-approximated log quasi-likelihood with the log-determinant term
// dropped:
//   (1/phi) sum_i (1/alpha_i) int_{y_i}^{mu_i} (y_i - u)/v(u) du  -  b' b / (2 sigma_b2)
double quasi_loglik(const GtimmModel& m, const Dataset& d, const RegionAssignment& r);

// d ql / d beta^(region) restricted to `batch` (rows outside the region are
// skipped). Empty effective batch gives the zero vector.
Eigen::VectorXd ql_gradient_beta(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                                 std::size_t region, std::span<const std::size_t> batch);

// Gradient over every row of the region.
Eigen::VectorXd ql_gradient_beta(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                                 std::size_t region);

// Residuals the random effect is fitted to: y - X beta* for the identity
// link, working residuals (y - mu0) g'(mu0) with mu0 = h(X beta*) otherwise.
Eigen::VectorXd fixed_effect_residuals(const Eigen::MatrixXd& beta_star, const Dataset& d, const RegionAssignment& r,
                                       const LinkFamily& family);

// Best linear unbiased predictor of b given the fixed part,
//   b = Sigma_b Z' (Sigma_eps + Z Sigma_b Z')^{-1} (y - fixed),
// solved in its q x q form (Z'Z / s_eps + I / s_b) b = Z' (y - fixed) / s_eps.
Eigen::VectorXd blup(const Eigen::MatrixXd& beta_star, const Dataset& d, const RegionAssignment& r, double sigma_b2,
                     double sigma_eps2, const LinkFamily& family = LinkFamily::gaussian());

// Same estimator on a precomputed residual vector.
Eigen::VectorXd blup_from_residuals(const Eigen::MatrixXd& Z, const Eigen::VectorXd& residual, double sigma_b2,
                                    double sigma_eps2);

struct VarianceComponents {
    double sigma_b2 = 1.0;
    double sigma_eps2 = 1.0;
};

inline constexpr double kMinSigmaEps2 = 1e-8;

// Method-of-moments update:
//   sigma_eps2 = ||y - mu||^2 / (N - pM)                    (floored at 1e-8)
//   sigma_b2   = mean_g  b_g^2 / k_g,   k_g = n_g s_b / (s_eps + n_g s_b)
// where k_g is the BLUP shrinkage factor at the previous iterate (s_b, s_eps)
// and n_g = (Z'Z)_gg. Groups with n_g = 0 are skipped.
VarianceComponents update_variance_components(const Dataset& d, const RegionAssignment& r,
                                              const Eigen::MatrixXd& beta_star, const Eigen::VectorXd& b_hat,
                                              const VarianceComponents& previous,
                                              const LinkFamily& family = LinkFamily::gaussian());

}  // namespace gtimm
