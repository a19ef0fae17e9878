#include "gtimm/baselines.hpp"

#include "gtimm/errors.hpp"
#include "gtimm/linalg.hpp"
#include "gtimm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace gtimm {

namespace {

// Henderson's mixed model equations at fixed variance components.
void solve_mixed_model_equations(const Dataset& d, double sigma_b2, double sigma_eps2, Eigen::VectorXd& beta,
                                 Eigen::VectorXd& b) {
    const auto p = d.X.cols(), q = d.Z.cols();
    if (sigma_b2 <= 0.0) {
        beta = least_squares(d.X, d.y);
        b = Eigen::VectorXd::Zero(q);
        return;
    }
    Eigen::MatrixXd C(p + q, p + q);
    C.topLeftCorner(p, p) = d.X.transpose() * d.X;
    C.topRightCorner(p, q) = d.X.transpose() * d.Z;
    C.bottomLeftCorner(q, p) = C.topRightCorner(p, q).transpose();
    C.bottomRightCorner(q, q) = d.Z.transpose() * d.Z;
    C.bottomRightCorner(q, q).diagonal().array() += sigma_eps2 / sigma_b2;
    Eigen::VectorXd rhs(p + q);
    rhs.head(p) = d.X.transpose() * d.y;
    rhs.tail(q) = d.Z.transpose() * d.y;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(C);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
        C.topLeftCorner(p, p).diagonal().array() += kRidgeDamping;
        ldlt.compute(C);
        if (ldlt.info() != Eigen::Success) throw NumericalError("mixed model equations are singular");
    }
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) throw NumericalError("mixed model equations produced a non-finite solution");
    beta = sol.head(p);
    b = sol.tail(q);
}

}  // namespace

LmmModel fit_lmm(const Dataset& d, const LmmOptions& options) {
    validate(d);
    RegionAssignment single;
    single.region.assign(d.n(), 0);
    single.counts.assign(1, d.n());

    LmmModel m;
    m.beta = least_squares(d.X, d.y);
    m.b_tilde = Eigen::VectorXd::Zero(d.Z.cols());
    const Eigen::VectorXd res = d.y - d.X * m.beta;
    const double var = d.n() > 1 ? (res.array() - res.mean()).square().sum() / static_cast<double>(d.n() - 1) : 0.0;
    m.sigma_eps2 = std::max(kMinSigmaEps2, var);
    m.sigma_b2 = 1.0;

    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        Eigen::VectorXd beta, b;
        solve_mixed_model_equations(d, m.sigma_b2, m.sigma_eps2, beta, b);
        const VarianceComponents vc = update_variance_components(d, single, beta, b, {m.sigma_b2, m.sigma_eps2});
        const double change = std::max({std::abs(vc.sigma_b2 - m.sigma_b2) / (1.0 + m.sigma_b2),
                                        std::abs(vc.sigma_eps2 - m.sigma_eps2) / (1.0 + m.sigma_eps2),
                                        (beta - m.beta).norm() / (1.0 + m.beta.norm())});
        m.beta = beta;
        m.b_tilde = b;
        m.sigma_b2 = vc.sigma_b2;
        m.sigma_eps2 = vc.sigma_eps2;
        if (m.sigma_b2 == 0.0) m.b_tilde.setZero();
        if (change <= options.tol) break;
    }
    return m;
}

ForestModel fit_forest(const Dataset& d, const ForestOptions& options, std::uint64_t seed) {
    if (options.n_trees < 1) throw std::invalid_argument("a forest needs at least one tree");
    const std::size_t predictors = d.p() > 0 ? d.p() - 1 : 0;
    ForestModel f;
    f.bootstrap = options.bootstrap;
    f.features_per_split = options.feature_subsampling
                               ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(predictors))))
                               : 0;
    f.trees.resize(options.n_trees);
    const TreeOptions tree_options{options.max_leaves, options.min_leaf, f.features_per_split};

    parallel_for(options.n_trees, [&](std::size_t t) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(t)};
        std::mt19937_64 rng(seq);
        std::vector<std::size_t> rows(d.n());
        if (options.bootstrap) {
            std::uniform_int_distribution<std::size_t> pick(0, d.n() - 1);
            for (auto& r : rows) r = pick(rng);
        } else {
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        f.trees[t] = grow_tree(d.X, d.y, rows, tree_options, &rng).tree;
    });
    return f;
}

Eigen::VectorXd predict_baseline(const LmmModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
    if (X.cols() != m.beta.size()) throw std::invalid_argument("X has the wrong number of columns for the LMM");
    if (Z.cols() != m.b_tilde.size() || Z.rows() != X.rows())
        throw std::invalid_argument("Z has the wrong shape for the LMM");
    return X * m.beta + Z * m.b_tilde;
}

Eigen::VectorXd predict_baseline(const RegressionTree& t, const Eigen::MatrixXd& X) { return predict_tree(t, X); }

Eigen::VectorXd predict_baseline(const ForestModel& f, const Eigen::MatrixXd& X) {
    if (f.trees.empty()) throw std::invalid_argument("empty forest");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(X.rows());
    for (const auto& t : f.trees) sum += predict_tree(t, X);
    return sum / static_cast<double>(f.trees.size());
}

}  // namespace gtimm
