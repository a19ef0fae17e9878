#pragma once

#include "gtimm/baselines.hpp"
#include "gtimm/dataset.hpp"
#include "gtimm/errors.hpp"
#include "gtimm/fit.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gtimm {

// Mean squared difference; throws std::invalid_argument on empty or
// mismatched input.
double mspe(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

struct MspeEntry {
    std::string model;
    double mspe = 0.0;
};

struct MspeReport {
    std::vector<MspeEntry> entries;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    Warnings warnings;

    // Throws std::out_of_range for an unknown model name.
    double at(const std::string& model) const;
};

struct BenchmarkOptions {
    std::size_t tree_max_leaves = 32;
    std::size_t tree_min_leaf = 10;
    ForestOptions forest;
    LmmOptions lmm;
};

// Group-stratified split, then GTIMM, LMM, a single CART tree and a random
// forest fit on the training rows and scored on the test rows. Random effects
// enter the GTIMM and LMM test predictions.
MspeReport benchmark(const Dataset& d, const FitConfig& cfg, double train_fraction, std::uint64_t seed,
                     const BenchmarkOptions& options = {});

void write_report_csv(const MspeReport& report, std::ostream& out);

// ---------------------------------------------------------------------------
// MSPE gap between GTIMM and the LMM as N grows
// ---------------------------------------------------------------------------

struct GapOptions {
    // Shared by every region of the generator, so both models are correctly
    // specified.
    Eigen::Vector3d common_coefficients{1.0, 2.0, -1.0};
    double sigma_b2 = 2.0;
    double sigma_eps2 = 1.0;
    // Each cell simulates 2N rows and trains on half of them.
    double train_fraction = 0.5;
    // GTIMM settings; the leaf count is overridden by the experiment's M.
    FitConfig fit = full_batch_config();

    // Full-batch preconditioned ascent run to tight convergence, so the gap
    // reflects the estimators rather than optimizer noise.
    static FitConfig full_batch_config();
};

struct GapPoint {
    std::size_t n = 0;
    std::size_t m = 0;
    double gap_mean = 0.0;
    double gap_std = 0.0;
    std::size_t failures = 0;
};

struct GapCurve {
    std::vector<GapPoint> points;
    Warnings warnings;
};

// For each N in the grid runs `replications` independent cells (seeded by
// (seed, N, replication)) and records |MSPE_GTIMM - MSPE_LMM| on held-out
// rows. Failed fits are excluded with a warning; more than 20% failures at
// one N throws NumericalError.
GapCurve gap_experiment(const std::vector<std::size_t>& n_grid, std::size_t m, std::size_t replications,
                        std::uint64_t seed, const GapOptions& options = {});

// Least-squares slope of log(gap_mean) against log(N); NaN when fewer than
// two points have a positive gap.
double log_log_slope(const GapCurve& curve);

void write_gap_csv(const GapCurve& curve, std::ostream& out);

// ---------------------------------------------------------------------------
// Region x group contingency table
// ---------------------------------------------------------------------------

struct Crosstab {
    std::vector<std::vector<std::size_t>> counts;  // [region][group]
    std::vector<std::string> group_labels;
};

// Regions and groups are 0-based indices; the table has max+1 rows/columns
// (at least `regions` / `groups` when given).
Crosstab crosstab_regions(const std::vector<int>& region, const std::vector<int>& groups, std::size_t regions = 0,
                          std::size_t group_count = 0);

// Long format node,group,count with 1-based node numbers.
void write_crosstab_csv(const Crosstab& table, std::ostream& out);

}  // namespace gtimm
