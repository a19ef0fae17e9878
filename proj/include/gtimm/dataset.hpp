#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gtimm {

// Clustered regression data.
//
//   y : response, length N
//   X : fixed-effect design N x p; column 0 is the constant intercept column
//   Z : random-effect design N x q; one-hot group membership for grouped data
//
// Group indices are 0-based in memory; `group_levels[g]` is the original
// label of group g as it appeared in the input.
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
    std::vector<int> group;

    std::string y_name = "y";
    std::vector<std::string> x_names;  // x_names[0] names the intercept
    std::string group_name;
    std::vector<std::string> group_levels;
    std::vector<std::string> z_names;  // only for explicit (non-group) Z

    std::size_t n() const { return static_cast<std::size_t>(y.size()); }
    std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
    std::size_t q() const { return static_cast<std::size_t>(Z.cols()); }
    bool has_groups() const { return !group.empty(); }
};

inline constexpr const char* kInterceptName = "(intercept)";

// Throws DataError when the dataset violates its invariants.
void validate(const Dataset& d, bool require_intercept = true);

Eigen::MatrixXd one_hot(const std::vector<int>& group, std::size_t levels);

// Builds a grouped dataset from raw predictors (without intercept column).
Dataset make_dataset(const Eigen::VectorXd& y, const Eigen::MatrixXd& predictors,
                     const std::vector<int>& group, std::size_t levels);

// Row subset, preserving names and group levels.
Dataset subset_rows(const Dataset& d, const std::vector<std::size_t>& rows);

// Group index per row: the stored labels, or the argmax of a one-hot Z.
// Empty when Z is not one-hot.
std::vector<int> group_indices(const Dataset& d);

struct CsvSchema {
    std::string y_col;
    std::vector<std::string> x_cols;
    std::optional<std::string> group_col;
    std::vector<std::string> z_cols;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset read_csv(std::istream& in, const CsvSchema& schema);

// Re-encodes a new table with the group levels of an existing dataset;
// rows from unseen groups get an all-zero Z row. Used at prediction time.
Dataset read_csv_like(std::istream& in, const CsvSchema& schema, const Dataset& reference,
                      bool require_y);

void write_csv(const Dataset& d, const std::filesystem::path& path);
void write_csv(const Dataset& d, std::ostream& out);

// Schema under which write_csv output re-parses to the same dataset.
CsvSchema schema_of(const Dataset& d);

struct ColumnScale {
    double mean = 0.0;
    double sd = 1.0;
};

struct StandardizationParams {
    std::vector<ColumnScale> x;  // one per non-intercept column of X
    ColumnScale y;
};

// Centers and scales y and every non-intercept X column to mean 0, sd 1
// (sd with N-1 denominator). Z is untouched.
std::pair<Dataset, StandardizationParams> standardize(const Dataset& d);
Dataset apply_standardization(const Dataset& d, const StandardizationParams& params);
Dataset destandardize(const Dataset& d, const StandardizationParams& params);

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

// Four-cluster design: cluster m has predictors drawn around centers[m] and
// linear mean coefficients.col(m) = (intercept, slope_x1, slope_x2).
struct SimDesign {
    Eigen::Matrix<double, 3, Eigen::Dynamic> coefficients;
    std::vector<std::array<double, 2>> centers;
    double cluster_sd = 1.0;
    int groups = 10;
};

// Region-dependent coefficients with clusters in quadrants I..IV.
SimDesign default_design();

// Same clusters, every region shares `common` coefficients.
SimDesign common_coefficient_design(const Eigen::Vector3d& common);

struct SimTruth {
    Eigen::MatrixXd beta_star;       // 3 x M
    Eigen::VectorXd b;               // per group
    std::vector<int> region;         // 0-based generating cluster per row
    double sigma_b2 = 0.0;
    double sigma_eps2 = 0.0;
};

std::pair<Dataset, SimTruth> simulate(const SimDesign& design, std::size_t n_total,
                                      std::uint64_t seed, double sigma_b2, double sigma_eps2);

std::pair<Dataset, SimTruth> simulate_gtimm(std::size_t n_total, std::uint64_t seed,
                                            double sigma_b2, double sigma_eps2);

// Mean response of region `region` (0-based) of the default design.
double regional_mean(double x1, double x2, std::size_t region);

// Writes y,x1,x2,group,region_true (regions 1-based).
void write_simulation_csv(const Dataset& d, const SimTruth& truth, std::ostream& out);
void write_truth_csv(const SimTruth& truth, std::ostream& out);

}  // namespace gtimm
