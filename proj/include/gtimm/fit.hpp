#pragma once

#include "gtimm/dataset.hpp"
#include "gtimm/errors.hpp"
#include "gtimm/family.hpp"
#include "gtimm/mixed_model.hpp"
#include "gtimm/tree.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gtimm {

struct FitConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 500;
    double rel_tol = 1e-6;
    std::size_t patience = 3;
    std::size_t blup_refresh_every = 1;
    // nullopt selects the leaf count by cross-validation over cv_candidates.
    std::optional<std::size_t> max_leaves = 4;
    std::size_t cv_folds = 5;
    std::vector<std::size_t> cv_candidates = {1, 2, 3, 4, 5, 6, 7, 8};
    CvOptions cv;
    std::size_t min_leaf = 10;
    double min_region_fraction = 0.05;
    std::uint64_t seed = 1;
    LinkFamily family = LinkFamily::gaussian();
};

// Throws std::invalid_argument on out-of-range settings.
void validate(const FitConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;
    double quasi_loglik = 0.0;
    double sigma_b2 = 0.0;
    double sigma_eps2 = 0.0;
};

struct FitResult {
    GtimmModel model;
    RegionAssignment regions;  // training rows
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;  // index into log of the returned iterate
    std::size_t selected_leaves = 0;  // before merging tiny regions
    std::optional<CvResult> cv;
    Warnings warnings;
};

// Stops once the relative change of the logged quasi-likelihood stays below
// rel_tol for `patience` epochs. Returns the iterate with the highest
// scored_quasi_loglik at the final variance components, carrying those
// components.
FitResult fit_gtimm(const Dataset& d, const FitConfig& cfg);

// Quasi-likelihood of (beta_star, b_hat) at the given variance components.
// For the Gaussian family the dispersion is taken as sigma_eps2, which makes
// the mixed-model-equation solution its maximizer at fixed variances.
// -inf when sigma_b2 = 0 and b_hat is non-zero.
double scored_quasi_loglik(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                           const VarianceComponents& at);

// ---------------------------------------------------------------------------
// Building blocks of fit_gtimm
// ---------------------------------------------------------------------------

// Collapses leaves holding fewer than max(ceil(min_region_fraction * N), 5p)
// rows into their siblings, smallest first; throws IllPosedRegionError when a
// remaining region has fewer than p rows.
RegressionTree merge_small_regions(RegressionTree tree, const Dataset& d, double min_region_fraction,
                                   Warnings* warnings = nullptr);

// Per-region least squares of y (or g(y), slightly shrunk into the valid
// mean range, for non-identity links), b = 0, sigma_b2 = 1, sigma_eps2 =
// sample variance of the least-squares residuals.
GtimmModel initialize_model(const Dataset& d, const RegressionTree& tree, const RegionAssignment& r,
                            const LinkFamily& family);

// Fixed linear map applied to each region's gradient step: with region
// predictors centered and scaled, x~ = L x, the step on beta~ pulls back to
//   beta += (learning_rate / |batch|) L'L grad.
// Returns L'L (p x p).
Eigen::MatrixXd region_preconditioner(const Dataset& d, const RegionAssignment& r, std::size_t region);

struct SgdState {
    GtimmModel model;
    std::size_t epoch = 0;  // epochs completed
};

// One pass of shuffled mini-batches. Every region touched by a batch takes a
// preconditioned ascent step on its mean batch gradient; b_hat is held fixed.
// Deterministic in (cfg.seed, state.epoch). A non-finite step retries the
// epoch once at half the learning rate, then throws NumericalError.
SgdState sgd_epoch(const SgdState& state, const Dataset& d, const RegionAssignment& r, const FitConfig& cfg);

// Mean response h(x' beta^(region) + z' b) for each row. An all-zero Z row
// (group not seen in training) contributes no random effect; one warning is
// recorded for such rows when include_random is set.
Eigen::VectorXd predict(const GtimmModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, bool include_random,
                        Warnings* warnings = nullptr);

}  // namespace gtimm
