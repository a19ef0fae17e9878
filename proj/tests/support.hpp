#pragma once

#include "gtimm/dataset.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

// Linear model with a one-hot group effect: y = X beta + b[g] + noise.
inline gtimm::Dataset random_grouped(std::mt19937_64& rng, int n, int predictors, int groups, double sigma_b,
                                     double sigma_eps, Eigen::VectorXd* beta_out = nullptr) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd beta(predictors + 1);
    for (int j = 0; j <= predictors; ++j) beta(j) = nd(rng);
    Eigen::VectorXd b(groups);
    for (int g = 0; g < groups; ++g) b(g) = sigma_b * nd(rng);
    Eigen::MatrixXd P(n, predictors);
    Eigen::VectorXd y(n);
    std::vector<int> group(n);
    for (int i = 0; i < n; ++i) {
        group[i] = i % groups;
        double eta = beta(0);
        for (int j = 0; j < predictors; ++j) {
            P(i, j) = nd(rng);
            eta += beta(j + 1) * P(i, j);
        }
        y(i) = eta + b(group[i]) + sigma_eps * nd(rng);
    }
    if (beta_out) *beta_out = beta;
    return gtimm::make_dataset(y, P, group, static_cast<std::size_t>(groups));
}

// Rows whose label disagrees with the truth after the best one-to-one
// relabeling of the first `k` labels (all k! permutations are tried).
inline std::size_t misassigned(const std::vector<int>& truth, const std::vector<int>& found, int k) {
    std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (found[i] >= 0 && found[i] < k && truth[i] >= 0 && truth[i] < k) ++counts[truth[i]][found[i]];
    std::vector<int> perm(k);
    for (int i = 0; i < k; ++i) perm[i] = i;
    std::size_t best = 0;
    do {
        std::size_t agree = 0;
        for (int t = 0; t < k; ++t) agree += counts[t][perm[t]];
        best = std::max(best, agree);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return truth.size() - best;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("gtimm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace testing
