#include "gtimm/family.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gtimm {

namespace {

// x log(x / y) with the 0 log 0 = 0 convention.
double xlogx_over(double x, double y) {
    if (x == 0.0) return 0.0;
    return x * std::log(x / y);
}

constexpr double kMinProbability = 1e-15;

}  // namespace

LinkFamily::LinkFamily(FamilyKind kind, double dispersion) : kind_(kind), dispersion_(dispersion) {
    if (!(dispersion > 0.0) || !std::isfinite(dispersion)) throw std::invalid_argument("dispersion must be positive");
}

LinkFamily LinkFamily::gaussian(double dispersion) { return {FamilyKind::Gaussian, dispersion}; }
LinkFamily LinkFamily::poisson(double dispersion) { return {FamilyKind::Poisson, dispersion}; }
LinkFamily LinkFamily::bernoulli(double dispersion) { return {FamilyKind::Bernoulli, dispersion}; }

LinkFamily LinkFamily::with_dispersion(double dispersion) const {
    LinkFamily f(kind_, dispersion);
    f.prior_weights_ = prior_weights_;
    return f;
}

LinkFamily LinkFamily::from_name(const std::string& name, double dispersion) {
    if (name == "gaussian") return gaussian(dispersion);
    if (name == "poisson") return poisson(dispersion);
    if (name == "bernoulli" || name == "binomial") return bernoulli(dispersion);
    throw std::invalid_argument("unknown family '" + name + "' (expected gaussian, poisson or bernoulli)");
}

std::string LinkFamily::name() const {
    switch (kind_) {
        case FamilyKind::Gaussian: return "gaussian";
        case FamilyKind::Poisson: return "poisson";
        case FamilyKind::Bernoulli: return "bernoulli";
    }
    return "gaussian";
}

double LinkFamily::link(double mu) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return mu;
        case FamilyKind::Poisson: return std::log(mu);
        case FamilyKind::Bernoulli: return std::log(mu / (1.0 - mu));
    }
    return mu;
}

double LinkFamily::inverse_link(double eta) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return eta;
        case FamilyKind::Poisson: return std::exp(eta);
        case FamilyKind::Bernoulli: {
            const double mu = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
            return std::clamp(mu, kMinProbability, 1.0 - kMinProbability);
        }
    }
    return eta;
}

double LinkFamily::link_derivative(double mu) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return 1.0;
        case FamilyKind::Poisson: return 1.0 / mu;
        case FamilyKind::Bernoulli: return 1.0 / (mu * (1.0 - mu));
    }
    return 1.0;
}

double LinkFamily::variance(double mu) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return 1.0;
        case FamilyKind::Poisson: return mu;
        case FamilyKind::Bernoulli: return mu * (1.0 - mu);
    }
    return 1.0;
}

double LinkFamily::quasi_kernel(double y, double mu) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return -0.5 * (y - mu) * (y - mu);
        case FamilyKind::Poisson: return -xlogx_over(y, mu) + y - mu;
        case FamilyKind::Bernoulli: return -xlogx_over(y, mu) - xlogx_over(1.0 - y, 1.0 - mu);
    }
    return 0.0;
}

bool LinkFamily::valid_mean(double mu) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return std::isfinite(mu);
        case FamilyKind::Poisson: return mu > 0.0 && std::isfinite(mu);
        case FamilyKind::Bernoulli: return mu > 0.0 && mu < 1.0;
    }
    return false;
}

bool LinkFamily::valid_response(double y) const {
    switch (kind_) {
        case FamilyKind::Gaussian: return std::isfinite(y);
        case FamilyKind::Poisson: return y >= 0.0 && std::isfinite(y);
        case FamilyKind::Bernoulli: return y >= 0.0 && y <= 1.0;
    }
    return false;
}

void LinkFamily::set_prior_weights(std::vector<double> weights) {
    for (double w : weights)
        if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("prior weights must be positive and finite");
    prior_weights_ = std::move(weights);
}

}  // namespace gtimm
