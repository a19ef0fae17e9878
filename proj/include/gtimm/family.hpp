#pragma once

#include <string>
#include <vector>

namespace gtimm {

enum class FamilyKind { Gaussian, Poisson, Bernoulli };

// Mean/variance specification of a quasi-likelihood model: link g, inverse
// link h, link derivative g', variance function v, dispersion phi, and
// optional per-observation prior weights alpha_i (default 1).
//
// Built-in canonical pairs:
//   gaussian  : identity link, v(mu) = 1
//   poisson   : log link,      v(mu) = mu
//   bernoulli : logit link,    v(mu) = mu (1 - mu)
class LinkFamily {
public:
    LinkFamily() = default;

    static LinkFamily gaussian(double dispersion = 1.0);
    static LinkFamily poisson(double dispersion = 1.0);
    static LinkFamily bernoulli(double dispersion = 1.0);
    static LinkFamily from_name(const std::string& name, double dispersion = 1.0);

    FamilyKind kind() const { return kind_; }
    std::string name() const;
    double dispersion() const { return dispersion_; }
    // Same family and prior weights at another dispersion.
    LinkFamily with_dispersion(double dispersion) const;

    double link(double mu) const;
    double inverse_link(double eta) const;
    double link_derivative(double mu) const;
    double variance(double mu) const;

    // Closed form of the quasi-likelihood kernel  int_y^mu (y - u) / v(u) du.
    double quasi_kernel(double y, double mu) const;

    bool valid_mean(double mu) const;
    bool valid_response(double y) const;

    void set_prior_weights(std::vector<double> weights);
    const std::vector<double>& prior_weights() const { return prior_weights_; }
    double prior_weight(std::size_t i) const { return prior_weights_.empty() ? 1.0 : prior_weights_[i]; }

private:
    LinkFamily(FamilyKind kind, double dispersion);

    FamilyKind kind_ = FamilyKind::Gaussian;
    double dispersion_ = 1.0;
    std::vector<double> prior_weights_;
};

}  // namespace gtimm
