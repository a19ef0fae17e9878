#include "gtimm/fit.hpp"

#include "gtimm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace gtimm {

void validate(const FitConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw std::invalid_argument("learning_rate must be a finite non-negative number");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (!(cfg.rel_tol >= 0.0)) throw std::invalid_argument("rel_tol must be non-negative");
    if (cfg.patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (cfg.blup_refresh_every < 1) throw std::invalid_argument("blup_refresh_every must be at least 1");
    if (cfg.max_leaves && *cfg.max_leaves < 1) throw std::invalid_argument("max_leaves must be at least 1");
    if (!cfg.max_leaves && cfg.cv_folds < 2) throw std::invalid_argument("cv_folds must be at least 2");
    if (cfg.min_leaf < 1) throw std::invalid_argument("min_leaf must be at least 1");
    if (!(cfg.min_region_fraction > 0.0 && cfg.min_region_fraction <= 0.5))
        throw std::invalid_argument("min_region_fraction must lie in (0, 0.5]");
}

RegressionTree merge_small_regions(RegressionTree tree, const Dataset& d, double min_region_fraction,
                                   Warnings* warnings) {
    // A region also needs 5p rows before its own regression is trusted.
    const auto threshold = std::max(static_cast<std::size_t>(std::ceil(min_region_fraction * static_cast<double>(d.n()))),
                                    5 * d.p());
    while (tree.leaf_count() > 1) {
        const RegionAssignment a = assign_regions(tree, d.X);
        std::size_t smallest = 0;
        for (std::size_t m = 1; m < a.counts.size(); ++m)
            if (a.counts[m] < a.counts[smallest]) smallest = m;
        if (a.counts[smallest] >= threshold) break;
        warn(warnings, "region " + std::to_string(smallest + 1) + " holds " + std::to_string(a.counts[smallest]) +
                           " rows (< " + std::to_string(threshold) + "); merged into its sibling");
        tree = tree.without_leaf(smallest);
    }
    const RegionAssignment a = assign_regions(tree, d.X);
    for (std::size_t m = 0; m < a.counts.size(); ++m) {
        if (a.counts[m] < d.p()) {
            throw IllPosedRegionError("region " + std::to_string(m + 1) + " has " + std::to_string(a.counts[m]) +
                                      " rows but the design has p = " + std::to_string(d.p()) +
                                      " columns; lower max_leaves");
        }
    }
    return tree;
}

GtimmModel initialize_model(const Dataset& d, const RegressionTree& tree, const RegionAssignment& r,
                            const LinkFamily& family) {
    const std::size_t M = tree.leaf_count();
    GtimmModel m;
    m.tree = tree;
    m.family = family;
    m.beta_star.resize(d.X.cols(), static_cast<Eigen::Index>(M));
    m.b_hat = Eigen::VectorXd::Zero(d.Z.cols());
    m.sigma_b2 = 1.0;

    // Starting response on the linear-predictor scale.
    Eigen::VectorXd target(d.y.size());
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        double mu = d.y(i);
        if (family.kind() == FamilyKind::Poisson) mu = d.y(i) + 0.1;
        if (family.kind() == FamilyKind::Bernoulli) mu = 0.25 + 0.5 * d.y(i);
        target(i) = family.link(mu);
    }

    for (std::size_t reg = 0; reg < M; ++reg) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < r.region.size(); ++i)
            if (static_cast<std::size_t>(r.region[i]) == reg) rows.push_back(static_cast<Eigen::Index>(i));
        Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), d.X.cols());
        Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            A.row(static_cast<Eigen::Index>(k)) = d.X.row(rows[k]);
            b(static_cast<Eigen::Index>(k)) = target(rows[k]);
        }
        m.beta_star.col(static_cast<Eigen::Index>(reg)) = least_squares(A, b);
    }

    const Eigen::VectorXd res = target - fixed_part(m.beta_star, d.X, r);
    const double n = static_cast<double>(res.size());
    double var = 0.0;
    if (res.size() > 1) var = (res.array() - res.mean()).square().sum() / (n - 1.0);
    m.sigma_eps2 = std::max(kMinSigmaEps2, var);
    return m;
}

Eigen::MatrixXd region_preconditioner(const Dataset& d, const RegionAssignment& r, std::size_t region) {
    const auto p = d.X.cols();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(p);
    double count = 0.0;
    for (std::size_t i = 0; i < r.region.size(); ++i) {
        if (static_cast<std::size_t>(r.region[i]) != region) continue;
        mean += d.X.row(static_cast<Eigen::Index>(i)).transpose();
        count += 1.0;
    }
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(p, p);
    if (count < 2.0) return L;
    mean /= count;
    for (std::size_t i = 0; i < r.region.size(); ++i) {
        if (static_cast<std::size_t>(r.region[i]) != region) continue;
        sq += (d.X.row(static_cast<Eigen::Index>(i)).transpose() - mean).cwiseAbs2();
    }
    // x~_0 = x_0 (the intercept); x~_j = (x_j - mean_j) / sd_j.
    for (Eigen::Index j = 1; j < p; ++j) {
        const double sd = std::sqrt(sq(j) / (count - 1.0));
        const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
        L(j, j) = scale;
        L(j, 0) = -mean(j) * scale;
    }
    return L.transpose() * L;
}

namespace {

bool run_epoch(SgdState& state, const Dataset& d, const RegionAssignment& r, const FitConfig& cfg,
               const std::vector<Eigen::MatrixXd>& precond, double learning_rate) {
    const std::size_t N = d.n();
    const std::size_t M = state.model.regions();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(state.epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t batch = std::min(cfg.batch_size, N);
    std::vector<char> touched(M);
    for (std::size_t start = 0; start < N; start += batch) {
        const std::size_t stop = std::min(N, start + batch);
        const std::span<const std::size_t> rows(order.data() + start, stop - start);
        std::fill(touched.begin(), touched.end(), 0);
        for (std::size_t i : rows) touched[static_cast<std::size_t>(r.region[i])] = 1;
        // Gradients for every touched region are taken at the same iterate.
        std::vector<Eigen::VectorXd> step(M);
        for (std::size_t m = 0; m < M; ++m) {
            if (!touched[m]) continue;
            const Eigen::VectorXd g = ql_gradient_beta(state.model, d, r, m, rows);
            step[m] = (learning_rate / static_cast<double>(rows.size())) * (precond[m] * g);
        }
        for (std::size_t m = 0; m < M; ++m) {
            if (!touched[m]) continue;
            state.model.beta_star.col(static_cast<Eigen::Index>(m)) += step[m];
        }
        if (!state.model.beta_star.allFinite()) return false;
    }
    return true;
}

}  // namespace

SgdState sgd_epoch(const SgdState& state, const Dataset& d, const RegionAssignment& r, const FitConfig& cfg) {
    const std::size_t M = state.model.regions();
    std::vector<Eigen::MatrixXd> precond(M);
    for (std::size_t m = 0; m < M; ++m) precond[m] = region_preconditioner(d, r, m);

    double lr = cfg.learning_rate;
    for (int attempt = 0; attempt < 2; ++attempt) {
        SgdState next = state;
        if (run_epoch(next, d, r, cfg, precond, lr)) {
            ++next.epoch;
            return next;
        }
        lr *= 0.5;
    }
    throw NumericalError("SGD diverged in epoch " + std::to_string(state.epoch + 1) +
                         " even at half the learning rate");
}

double scored_quasi_loglik(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                           const VarianceComponents& at) {
    GtimmModel scored = m;
    scored.sigma_b2 = at.sigma_b2;
    scored.sigma_eps2 = at.sigma_eps2;
    if (m.family.kind() == FamilyKind::Gaussian) scored.family = m.family.with_dispersion(at.sigma_eps2);
    if (at.sigma_b2 == 0.0 && !m.b_hat.isZero(0.0)) return -std::numeric_limits<double>::infinity();
    return quasi_loglik(scored, d, r);
}

FitResult fit_gtimm(const Dataset& d, const FitConfig& cfg) {
    validate(cfg);
    validate(d);
    for (Eigen::Index i = 0; i < d.y.size(); ++i)
        if (!cfg.family.valid_response(d.y(i)))
            throw DataError("response value on row " + std::to_string(i + 1) + " is outside the " + cfg.family.name() +
                            " family's range");

    FitResult result;
    std::size_t leaves = 0;
    if (cfg.max_leaves) {
        leaves = *cfg.max_leaves;
    } else {
        result.cv = cross_validate_leaves(d, cfg.cv_folds, cfg.cv_candidates, cfg.seed, cfg.cv, &result.warnings);
        leaves = result.cv->selected;
    }
    result.selected_leaves = leaves;

    RegressionTree tree = fit_tree(d, leaves, cfg.min_leaf);
    tree = merge_small_regions(std::move(tree), d, cfg.min_region_fraction, &result.warnings);
    result.regions = assign_regions(tree, d.X);
    const RegionAssignment& r = result.regions;

    SgdState state{initialize_model(d, tree, r, cfg.family), 0};
    auto current = [&](const GtimmModel& m) {
        return scored_quasi_loglik(m, d, r, {m.sigma_b2, m.sigma_eps2});
    };
    double ql = current(state.model);
    result.log.push_back({0, ql, state.model.sigma_b2, state.model.sigma_eps2});
    std::vector<GtimmModel> iterates{state.model};

    std::size_t stalled = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        state = sgd_epoch(state, d, r, cfg);
        if (epoch % cfg.blup_refresh_every == 0) {
            GtimmModel& m = state.model;
            m.b_hat = blup(m.beta_star, d, r, m.sigma_b2, m.sigma_eps2, m.family);
            const VarianceComponents vc =
                update_variance_components(d, r, m.beta_star, m.b_hat, {m.sigma_b2, m.sigma_eps2}, m.family);
            m.sigma_b2 = vc.sigma_b2;
            m.sigma_eps2 = vc.sigma_eps2;
            if (!std::isfinite(m.sigma_b2) || !std::isfinite(m.sigma_eps2) || !m.b_hat.allFinite())
                throw NumericalError("variance components became non-finite in epoch " + std::to_string(epoch));
            // A zero variance makes the penalty undefined for any b != 0.
            if (m.sigma_b2 == 0.0) m.b_hat.setZero();
        }
        const double prev = ql;
        ql = current(state.model);
        result.log.push_back({epoch, ql, state.model.sigma_b2, state.model.sigma_eps2});
        if (!std::isfinite(ql)) throw NumericalError("quasi-likelihood became non-finite in epoch " + std::to_string(epoch));
        iterates.push_back(state.model);
        const double rel = std::abs(ql - prev) / std::max(std::abs(prev), std::numeric_limits<double>::min());
        stalled = rel < cfg.rel_tol ? stalled + 1 : 0;
        if (stalled >= cfg.patience) break;
    }

    // The variance update is not an ascent step, so the logged values are not
    // comparable across epochs. Every iterate is scored at the final variance
    // components instead; ties go to the later iterate.
    const VarianceComponents at{state.model.sigma_b2, state.model.sigma_eps2};
    std::size_t best_index = 0;
    double best_ql = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < iterates.size(); ++t) {
        const double v = scored_quasi_loglik(iterates[t], d, r, at);
        if (v >= best_ql) {
            best_ql = v;
            best_index = t;
        }
    }
    result.best_epoch = best_index;
    result.model = std::move(iterates[best_index]);
    result.model.sigma_b2 = at.sigma_b2;
    result.model.sigma_eps2 = at.sigma_eps2;
    return result;
}

Eigen::VectorXd predict(const GtimmModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, bool include_random,
                        Warnings* warnings) {
    if (X.cols() != m.beta_star.rows())
        throw std::invalid_argument("X has " + std::to_string(X.cols()) + " columns, model expects " +
                                    std::to_string(m.beta_star.rows()));
    if (include_random && (Z.cols() != m.b_hat.size() || Z.rows() != X.rows()))
        throw std::invalid_argument("Z must be N x " + std::to_string(m.b_hat.size()) + " when include_random is set");
    const RegionAssignment r = assign_regions(m.tree, X);
    Eigen::VectorXd out(X.rows());
    std::size_t unseen = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double eta = X.row(i).dot(m.beta_star.col(r.region[static_cast<std::size_t>(i)]));
        if (include_random) {
            if (Z.row(i).isZero(0.0)) ++unseen;
            eta += Z.row(i).dot(m.b_hat);
        }
        out(i) = m.family.inverse_link(eta);
    }
    if (unseen > 0)
        warn(warnings, std::to_string(unseen) + " row(s) belong to groups not seen in training; "
                                                "their random effect is taken as 0");
    return out;
}

}  // namespace gtimm
