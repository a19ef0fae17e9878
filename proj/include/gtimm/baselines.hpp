#pragma once

#include "gtimm/dataset.hpp"
#include "gtimm/mixed_model.hpp"
#include "gtimm/tree.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace gtimm {

// Global linear mixed model y = X beta + Z b + eps.
struct LmmModel {
    Eigen::VectorXd beta;
    Eigen::VectorXd b_tilde;
    double sigma_b2 = 1.0;
    double sigma_eps2 = 1.0;
};

struct LmmOptions {
    std::size_t max_iterations = 1000;
    double tol = 1e-12;
};

// Alternates the exact mixed-model-equation solve for (beta, b) at fixed
// variance components with the method-of-moments variance update until both
// settle. Starts from ordinary least squares with b = 0, sigma_b2 = 1.
LmmModel fit_lmm(const Dataset& d, const LmmOptions& options = {});

struct ForestOptions {
    std::size_t n_trees = 200;
    std::size_t max_leaves = 32;
    std::size_t min_leaf = 5;
    bool bootstrap = true;
    // ceil(sqrt(#predictors)) candidate features per split when set,
    // every predictor otherwise.
    bool feature_subsampling = true;
};

struct ForestModel {
    std::vector<RegressionTree> trees;
    std::size_t features_per_split = 0;
    bool bootstrap = true;
};

// Bagged CART trees; tree t draws from its own RNG stream seeded by
// (seed, t), so the fit does not depend on the worker count.
ForestModel fit_forest(const Dataset& d, const ForestOptions& options, std::uint64_t seed);

Eigen::VectorXd predict_baseline(const LmmModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z);
Eigen::VectorXd predict_baseline(const RegressionTree& t, const Eigen::MatrixXd& X);
Eigen::VectorXd predict_baseline(const ForestModel& f, const Eigen::MatrixXd& X);

}  // namespace gtimm
