#include "gtimm/mixed_model.hpp"

#include "gtimm/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gtimm {

namespace {

void check_shapes(const GtimmModel& m, const Dataset& d, const RegionAssignment& r) {
    if (static_cast<std::size_t>(m.beta_star.rows()) != d.p())
        throw std::invalid_argument("beta_star has " + std::to_string(m.beta_star.rows()) + " rows, data has p = " +
                                    std::to_string(d.p()));
    if (static_cast<std::size_t>(m.b_hat.size()) != d.q())
        throw std::invalid_argument("b_hat has length " + std::to_string(m.b_hat.size()) + ", data has q = " +
                                    std::to_string(d.q()));
    if (r.region.size() != d.n()) throw std::invalid_argument("region assignment length differs from N");
    for (int reg : r.region)
        if (reg < 0 || reg >= m.beta_star.cols()) throw std::invalid_argument("region index out of range");
}

double penalty(const Eigen::VectorXd& b, double sigma_b2) {
    if (sigma_b2 > 0.0) return 0.5 * b.squaredNorm() / sigma_b2;
    if (b.isZero(0.0)) return 0.0;
    throw NumericalError("random-effect penalty undefined: sigma_b2 = 0 with non-zero b_hat");
}

}  // namespace

void check_model(const GtimmModel& m) {
    if (m.regions() != m.tree.leaf_count())
        throw std::invalid_argument("beta_star has " + std::to_string(m.regions()) + " columns but the tree has " +
                                    std::to_string(m.tree.leaf_count()) + " leaves");
    if (!m.beta_star.allFinite() || !m.b_hat.allFinite() || !std::isfinite(m.sigma_b2) || !std::isfinite(m.sigma_eps2))
        throw std::invalid_argument("model has non-finite entries");
    if (m.sigma_b2 < 0.0 || !(m.sigma_eps2 > 0.0)) throw std::invalid_argument("invalid variance components");
}

double linear_predictor(const GtimmModel& m, const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t region,
                        const Eigen::Ref<const Eigen::VectorXd>& z) {
    if (region >= m.regions()) throw std::invalid_argument("region " + std::to_string(region) + " out of range");
    if (x.size() != m.beta_star.rows()) throw std::invalid_argument("x has the wrong length");
    if (z.size() != m.b_hat.size()) throw std::invalid_argument("z has the wrong length");
    return x.dot(m.beta_star.col(static_cast<Eigen::Index>(region))) + z.dot(m.b_hat);
}

Eigen::VectorXd fixed_part(const Eigen::MatrixXd& beta_star, const Eigen::MatrixXd& X, const RegionAssignment& r) {
    if (r.region.size() != static_cast<std::size_t>(X.rows()))
        throw std::invalid_argument("region assignment length differs from X rows");
    if (beta_star.rows() != X.cols()) throw std::invalid_argument("beta_star rows differ from X columns");
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int m = r.region[static_cast<std::size_t>(i)];
        if (m < 0 || m >= beta_star.cols()) throw std::invalid_argument("region index out of range");
        out(i) = X.row(i).dot(beta_star.col(m));
    }
    return out;
}

QuasiState quasi_state(const GtimmModel& m, const Dataset& d, const RegionAssignment& r) {
    check_shapes(m, d, r);
    const auto& fam = m.family;
    const double phi = fam.dispersion();
    const Eigen::VectorXd eta = fixed_part(m.beta_star, d.X, r) + d.Z * m.b_hat;

    QuasiState s;
    const auto n = d.y.size();
    s.mu.resize(n);
    s.residual.resize(n);
    s.weight.resize(n);
    double kernel = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = fam.inverse_link(eta(i));
        const double alpha = fam.prior_weight(static_cast<std::size_t>(i));
        const double gp = fam.link_derivative(mu);
        s.mu(i) = mu;
        s.residual(i) = d.y(i) - mu;
        s.weight(i) = 1.0 / (phi * alpha * fam.variance(mu) * gp * gp);
        kernel += fam.quasi_kernel(d.y(i), mu) / alpha;
    }
    s.quasi_loglik = kernel / phi - penalty(m.b_hat, m.sigma_b2);
    return s;
}

double quasi_loglik(const GtimmModel& m, const Dataset& d, const RegionAssignment& r) {
    return quasi_state(m, d, r).quasi_loglik;
}

Eigen::VectorXd ql_gradient_beta(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                                 std::size_t region, std::span<const std::size_t> batch) {
    check_shapes(m, d, r);
    if (region >= m.regions()) throw std::invalid_argument("region out of range");
    const auto& fam = m.family;
    const auto beta = m.beta_star.col(static_cast<Eigen::Index>(region));
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.beta_star.rows());
    for (std::size_t idx : batch) {
        if (idx >= d.n()) throw std::invalid_argument("batch index out of range");
        if (static_cast<std::size_t>(r.region[idx]) != region) continue;
        const auto i = static_cast<Eigen::Index>(idx);
        const double eta = d.X.row(i).dot(beta) + d.Z.row(i).dot(m.b_hat);
        const double mu = fam.inverse_link(eta);
        const double score = (d.y(i) - mu) / (fam.prior_weight(idx) * fam.variance(mu) * fam.link_derivative(mu));
        grad.noalias() += score * d.X.row(i).transpose();
    }
    return grad / fam.dispersion();
}

Eigen::VectorXd ql_gradient_beta(const GtimmModel& m, const Dataset& d, const RegionAssignment& r,
                                 std::size_t region) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < r.region.size(); ++i)
        if (static_cast<std::size_t>(r.region[i]) == region) rows.push_back(i);
    return ql_gradient_beta(m, d, r, region, rows);
}

Eigen::VectorXd fixed_effect_residuals(const Eigen::MatrixXd& beta_star, const Dataset& d, const RegionAssignment& r,
                                       const LinkFamily& family) {
    const Eigen::VectorXd eta = fixed_part(beta_star, d.X, r);
    if (family.kind() == FamilyKind::Gaussian) return d.y - eta;
    Eigen::VectorXd out(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double mu = family.inverse_link(eta(i));
        out(i) = (d.y(i) - mu) * family.link_derivative(mu);
    }
    return out;
}

Eigen::VectorXd blup_from_residuals(const Eigen::MatrixXd& Z, const Eigen::VectorXd& residual, double sigma_b2,
                                    double sigma_eps2) {
    if (!(sigma_eps2 > 0.0)) throw std::invalid_argument("sigma_eps2 must be positive");
    if (sigma_b2 < 0.0) throw std::invalid_argument("sigma_b2 must be non-negative");
    if (Z.rows() != residual.size()) throw std::invalid_argument("Z rows differ from residual length");
    if (sigma_b2 == 0.0) return Eigen::VectorXd::Zero(Z.cols());

    Eigen::MatrixXd A = Z.transpose() * Z / sigma_eps2;
    A.diagonal().array() += 1.0 / sigma_b2;
    const Eigen::VectorXd rhs = Z.transpose() * residual / sigma_eps2;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw NumericalError("BLUP system is not positive definite");
    Eigen::VectorXd b = llt.solve(rhs);
    if (!b.allFinite()) throw NumericalError("BLUP solution is not finite");
    return b;
}

Eigen::VectorXd blup(const Eigen::MatrixXd& beta_star, const Dataset& d, const RegionAssignment& r, double sigma_b2,
                     double sigma_eps2, const LinkFamily& family) {
    return blup_from_residuals(d.Z, fixed_effect_residuals(beta_star, d, r, family), sigma_b2, sigma_eps2);
}

VarianceComponents update_variance_components(const Dataset& d, const RegionAssignment& r,
                                              const Eigen::MatrixXd& beta_star, const Eigen::VectorXd& b_hat,
                                              const VarianceComponents& previous, const LinkFamily& family) {
    const std::size_t N = d.n();
    const std::size_t pM = static_cast<std::size_t>(beta_star.rows() * beta_star.cols());
    if (N <= pM)
        throw NumericalError("not enough degrees of freedom: N = " + std::to_string(N) + " <= p*M = " +
                             std::to_string(pM));
    if (static_cast<std::size_t>(b_hat.size()) != d.q()) throw std::invalid_argument("b_hat length differs from q");

    const Eigen::VectorXd eta = fixed_part(beta_star, d.X, r) + d.Z * b_hat;
    double sse = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        double res = 0.0;
        if (family.kind() == FamilyKind::Gaussian) {
            res = d.y(i) - eta(i);
        } else {
            const double mu = family.inverse_link(eta(i));
            res = (d.y(i) - mu) * family.link_derivative(mu);
        }
        sse += res * res;
    }

    VarianceComponents next;
    next.sigma_eps2 = std::max(kMinSigmaEps2, sse / static_cast<double>(N - pM));

    next.sigma_b2 = 0.0;
    if (previous.sigma_b2 > 0.0 && previous.sigma_eps2 > 0.0) {
        const Eigen::VectorXd n_g = d.Z.colwise().squaredNorm().transpose();
        double acc = 0.0;
        std::size_t used = 0;
        for (Eigen::Index g = 0; g < b_hat.size(); ++g) {
            if (n_g(g) <= 0.0) continue;
            const double shrink = n_g(g) * previous.sigma_b2 / (previous.sigma_eps2 + n_g(g) * previous.sigma_b2);
            acc += b_hat(g) * b_hat(g) / shrink;
            ++used;
        }
        if (used > 0) next.sigma_b2 = std::max(0.0, acc / static_cast<double>(used));
    }
    return next;
}

}  // namespace gtimm
