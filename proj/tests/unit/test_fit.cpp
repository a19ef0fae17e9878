#include <doctest.h>

#include "gtimm/baselines.hpp"
#include "gtimm/eval.hpp"
#include "gtimm/fit.hpp"
#include "gtimm/folds.hpp"
#include "gtimm/linalg.hpp"

#include "support.hpp"

#include <cmath>
#include <random>

using namespace gtimm;

namespace {

RegionAssignment all_rows(const Dataset& d, const RegressionTree& t) { return assign_regions(t, d.X); }

// Largest |fitted - true| coefficient after matching each fitted region to the
// generating cluster most of its rows came from.
double coefficient_error(const FitResult& fit, const SimTruth& truth) {
    double worst = 0.0;
    for (std::size_t m = 0; m < fit.model.regions(); ++m) {
        std::vector<int> votes(4, 0);
        for (std::size_t i = 0; i < fit.regions.region.size(); ++i)
            if (static_cast<std::size_t>(fit.regions.region[i]) == m) ++votes[static_cast<std::size_t>(truth.region[i])];
        const auto t = std::max_element(votes.begin(), votes.end()) - votes.begin();
        worst = std::max(worst, (fit.model.beta_star.col(static_cast<Eigen::Index>(m)) - truth.beta_star.col(t))
                                    .cwiseAbs()
                                    .maxCoeff());
    }
    return worst;
}

}  // namespace

TEST_CASE("noiseless single-region data recovers the least-squares coefficients") {
    std::mt19937_64 rng(1);
    Eigen::VectorXd beta;
    Dataset d = testing::random_grouped(rng, 300, 2, 5, 0.0, 0.0, &beta);
    FitConfig cfg;
    cfg.max_leaves = 1;
    const FitResult fit = fit_gtimm(d, cfg);
    REQUIRE(fit.model.regions() == 1);
    CHECK((fit.model.beta_star.col(0) - beta).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(fit.model.b_hat.cwiseAbs().maxCoeff() < 1e-6);
    const Eigen::VectorXd pred = predict(fit.model, d.X, d.Z, true);
    CHECK((pred - d.y).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero epochs return the initialization") {
    const auto d = simulate_gtimm(800, 2, 2.0, 1.0).first;
    FitConfig cfg;
    cfg.max_epochs = 0;
    const FitResult fit = fit_gtimm(d, cfg);
    const GtimmModel init = initialize_model(d, fit.model.tree, fit.regions, cfg.family);
    CHECK(fit.model.beta_star == init.beta_star);
    CHECK(fit.model.b_hat == init.b_hat);
    CHECK(fit.model.sigma_b2 == init.sigma_b2);
    CHECK(fit.model.sigma_eps2 == init.sigma_eps2);
    CHECK(fit.log.size() == 1);
    CHECK(fit.best_epoch == 0);

    // Per-region least squares oracle.
    for (std::size_t m = 0; m < init.regions(); ++m) {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < d.n(); ++i)
            if (static_cast<std::size_t>(fit.regions.region[i]) == m) rows.push_back(static_cast<Eigen::Index>(i));
        Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), 3);
        Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            A.row(static_cast<Eigen::Index>(k)) = d.X.row(rows[k]);
            b(static_cast<Eigen::Index>(k)) = d.y(rows[k]);
        }
        const Eigen::VectorXd ols = (A.transpose() * A).ldlt().solve(A.transpose() * b);
        CHECK((init.beta_star.col(static_cast<Eigen::Index>(m)) - ols).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("SGD epoch") {
    const auto d = simulate_gtimm(400, 3, 2.0, 1.0).first;
    const RegressionTree tree = fit_tree(d, 4, 10);
    const RegionAssignment r = all_rows(d, tree);
    GtimmModel init = initialize_model(d, tree, r, LinkFamily::gaussian());
    init.b_hat = blup(init.beta_star, d, r, 2.0, 1.0);
    init.beta_star.array() += 0.3;  // move away from the optimum
    const SgdState start{init, 0};

    SUBCASE("zero learning rate changes nothing") {
        FitConfig cfg;
        cfg.learning_rate = 0.0;
        const SgdState next = sgd_epoch(start, d, r, cfg);
        CHECK(next.model.beta_star == init.beta_star);
        CHECK(next.model.b_hat == init.b_hat);
        CHECK(next.epoch == 1);
    }
    SUBCASE("a full batch is one preconditioned gradient step") {
        FitConfig cfg;
        cfg.batch_size = d.n();
        cfg.learning_rate = 0.3;
        const SgdState next = sgd_epoch(start, d, r, cfg);
        for (std::size_t m = 0; m < 4; ++m) {
            const Eigen::VectorXd g = ql_gradient_beta(init, d, r, m);
            const Eigen::VectorXd manual = init.beta_star.col(static_cast<Eigen::Index>(m)) +
                                           0.3 / static_cast<double>(d.n()) * region_preconditioner(d, r, m) * g;
            CHECK((next.model.beta_star.col(static_cast<Eigen::Index>(m)) - manual).cwiseAbs().maxCoeff() < 1e-12);
        }
        CHECK(next.model.b_hat == init.b_hat);
    }
    SUBCASE("identical seeds give identical trajectories") {
        FitConfig cfg;
        cfg.seed = 77;
        SgdState a = start, b = start;
        for (int e = 0; e < 5; ++e) {
            a = sgd_epoch(a, d, r, cfg);
            b = sgd_epoch(b, d, r, cfg);
            CHECK(a.model.beta_star == b.model.beta_star);
        }
        cfg.seed = 78;
        CHECK_FALSE(sgd_epoch(start, d, r, cfg).model.beta_star == sgd_epoch(start, d, r, FitConfig{}).model.beta_star);
    }
    SUBCASE("epochs ascend the quasi-likelihood at fixed b and variances") {
        FitConfig cfg;
        SgdState s = start;
        double prev = quasi_loglik(s.model, d, r);
        for (int e = 0; e < 10; ++e) {
            s = sgd_epoch(s, d, r, cfg);
            const double ql = quasi_loglik(s.model, d, r);
            CHECK(ql >= prev);
            prev = ql;
        }
    }
    SUBCASE("divergence is reported") {
        FitConfig cfg;
        cfg.learning_rate = 1e300;
        CHECK_THROWS_AS(sgd_epoch(start, d, r, cfg), NumericalError);
    }
}

TEST_CASE("preconditioner is the whitening map of the region design") {
    const auto d = simulate_gtimm(400, 4, 2.0, 1.0).first;
    const RegressionTree tree = fit_tree(d, 4, 10);
    const RegionAssignment r = all_rows(d, tree);
    for (std::size_t m = 0; m < 4; ++m) {
        const Eigen::MatrixXd P = region_preconditioner(d, r, m);
        CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(P.llt().info() == Eigen::Success);
        // In whitened coordinates the region's predictors have unit variance.
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(r.counts[m]), 3);
        Eigen::Index k = 0;
        for (std::size_t i = 0; i < d.n(); ++i)
            if (static_cast<std::size_t>(r.region[i]) == m) rows.row(k++) = d.X.row(static_cast<Eigen::Index>(i));
        const Eigen::Vector2d mean = rows.rightCols(2).colwise().mean().transpose();
        for (int j = 1; j < 3; ++j) {
            const double sd =
                std::sqrt((rows.col(j).array() - mean(j - 1)).square().sum() / static_cast<double>(rows.rows() - 1));
            CHECK(P(j, j) == doctest::Approx(1.0 / (sd * sd)).epsilon(1e-12));
        }
    }
}

TEST_CASE("prediction") {
    const auto [d, truth] = simulate_gtimm(800, 5, 2.0, 1.0);
    const FitResult fit = fit_gtimm(d, FitConfig{});
    const Eigen::VectorXd pred = predict(fit.model, d.X, d.Z, true);
    const RegionAssignment r = assign_regions(fit.model.tree, d.X);
    for (std::size_t i = 0; i < d.n(); i += 37) {
        const auto k = static_cast<Eigen::Index>(i);
        const double manual = fit.model.family.inverse_link(linear_predictor(
            fit.model, d.X.row(k).transpose(), static_cast<std::size_t>(r.region[i]), d.Z.row(k).transpose()));
        CHECK(pred(k) == doctest::Approx(manual).epsilon(1e-14));
    }
    const Eigen::VectorXd fixed = predict(fit.model, d.X, d.Z, false);
    CHECK((fixed - fixed_part(fit.model.beta_star, d.X, r)).cwiseAbs().maxCoeff() < 1e-12);

    SUBCASE("zero model") {
        GtimmModel zero = fit.model;
        zero.beta_star.setZero();
        zero.b_hat.setZero();
        CHECK(predict(zero, d.X, d.Z, true).isZero(0.0));
    }
    SUBCASE("unseen group gets no random effect and a warning") {
        Eigen::MatrixXd Z = d.Z.topRows(3);
        Z.row(1).setZero();
        Warnings w;
        const Eigen::VectorXd p = predict(fit.model, d.X.topRows(3), Z, true, &w);
        CHECK(w.size() == 1);
        CHECK(p(1) == doctest::Approx(fixed(1)).epsilon(1e-14));
        CHECK(p(0) == doctest::Approx(pred(0)).epsilon(1e-14));
    }
    SUBCASE("Poisson family maps through the inverse link") {
        Dataset c = d;
        for (Eigen::Index i = 0; i < c.y.size(); ++i) c.y(i) = std::floor(std::abs(c.y(i)) / 5.0);
        FitConfig cfg;
        cfg.family = LinkFamily::poisson();
        cfg.max_epochs = 20;
        const FitResult pf = fit_gtimm(c, cfg);
        const Eigen::VectorXd mu = predict(pf.model, c.X, c.Z, true);
        CHECK((mu.array() > 0).all());
        CHECK(mu.allFinite());
    }
}

TEST_CASE("returned iterate is at least as good as the initialization") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto d = simulate_gtimm(800, seed, 2.0, 1.0).first;
        FitConfig cfg;
        cfg.seed = seed;
        const FitResult fit = fit_gtimm(d, cfg);
        const GtimmModel init = initialize_model(d, fit.model.tree, fit.regions, cfg.family);
        const VarianceComponents at{fit.model.sigma_b2, fit.model.sigma_eps2};
        CHECK(scored_quasi_loglik(fit.model, d, fit.regions, at) >= scored_quasi_loglik(init, d, fit.regions, at));
        CHECK(fit.best_epoch < fit.log.size());
        CHECK(fit.log.size() <= cfg.max_epochs + 1);
    }
}

TEST_CASE("small regions are merged and tiny ones rejected") {
    const auto d = simulate_gtimm(2000, 6, 2.0, 1.0).first;
    FitConfig cfg;
    cfg.max_leaves = 12;
    cfg.max_epochs = 5;
    const FitResult fit = fit_gtimm(d, cfg);
    const auto need = std::max(static_cast<std::size_t>(std::ceil(cfg.min_region_fraction * 2000.0)), 5 * d.p());
    for (auto c : fit.regions.counts) {
        CHECK(c >= need);
        CHECK(c >= d.p());
    }
    CHECK(fit.selected_leaves == 12);
    if (fit.model.regions() < 12) CHECK_FALSE(fit.warnings.empty());

    std::mt19937_64 rng(2);
    const Dataset wide = testing::random_grouped(rng, 60, 6, 3, 1.0, 1.0);
    FitConfig many;
    many.max_leaves = 30;
    many.min_leaf = 1;
    many.min_region_fraction = 0.001;
    many.max_epochs = 5;
    const FitResult merged = fit_gtimm(wide, many);
    for (auto c : merged.regions.counts) CHECK(c >= 5 * wide.p());

    // Fewer rows than design columns cannot be rescued by merging.
    const Dataset tiny = subset_rows(wide, {0, 1, 2, 3, 4});
    CHECK_THROWS_AS(merge_small_regions(RegressionTree{}, tiny, 0.05), IllPosedRegionError);
}

TEST_CASE("configuration is validated") {
    const auto d = simulate_gtimm(400, 1, 2.0, 1.0).first;
    FitConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(fit_gtimm(d, cfg), std::invalid_argument);
    cfg = FitConfig{};
    cfg.min_region_fraction = 0.6;
    CHECK_THROWS_AS(fit_gtimm(d, cfg), std::invalid_argument);
    cfg = FitConfig{};
    cfg.max_leaves.reset();
    cfg.cv_folds = 1;
    CHECK_THROWS_AS(fit_gtimm(d, cfg), std::invalid_argument);
    cfg = FitConfig{};
    cfg.family = LinkFamily::poisson();
    CHECK_THROWS_AS(fit_gtimm(d, cfg), DataError);  // negative responses
}

TEST_CASE("cross-validated fit records its choice") {
    const auto d = simulate_gtimm(2000, 1, 2.0, 1.0).first;
    FitConfig cfg;
    cfg.max_leaves.reset();
    const FitResult fit = fit_gtimm(d, cfg);
    REQUIRE(fit.cv);
    CHECK(fit.selected_leaves == 4);
    CHECK(fit.model.regions() == 4);
    CHECK(fit.cv->mean_error.size() == 8);
}

TEST_CASE("one region matches the linear mixed model") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto [data, truth] =
            simulate(common_coefficient_design(Eigen::Vector3d(1.0, 2.0, -1.0)), 800, seed, 2.0, 1.0);
        const TrainTestSplit split = stratified_split(data.group, data.n(), 0.5, seed);
        const Dataset train = subset_rows(data, split.train), test = subset_rows(data, split.test);
        FitConfig cfg = GapOptions::full_batch_config();
        cfg.max_leaves = 1;
        const FitResult g = fit_gtimm(train, cfg);
        const LmmModel l = fit_lmm(train);
        CHECK((g.model.beta_star.col(0) - l.beta).cwiseAbs().maxCoeff() < 1e-4);
        const double a = mspe(test.y, predict(g.model, test.X, test.Z, true));
        const double b = mspe(test.y, predict_baseline(l, test.X, test.Z));
        CHECK(std::abs(a - b) < 1e-4);
    }
}

TEST_CASE("coefficient error does not grow with N") {
    std::vector<double> small, large;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        FitConfig cfg;
        cfg.seed = seed;
        const auto [d1, t1] = simulate_gtimm(1000, seed, 2.0, 1.0);
        small.push_back(coefficient_error(fit_gtimm(d1, cfg), t1));
        const auto [d2, t2] = simulate_gtimm(2000, seed + 1000, 2.0, 1.0);
        large.push_back(coefficient_error(fit_gtimm(d2, cfg), t2));
    }
    MESSAGE("median coefficient error N=1000: " << testing::median(small) << ", N=2000: " << testing::median(large));
    CHECK(testing::median(large) <= testing::median(small));
}

TEST_CASE("training log") {
    const auto d = simulate_gtimm(800, 9, 2.0, 1.0).first;
    FitConfig cfg;
    cfg.max_epochs = 7;
    cfg.rel_tol = 0.0;
    const FitResult fit = fit_gtimm(d, cfg);
    REQUIRE(fit.log.size() == 8);
    for (std::size_t e = 0; e < fit.log.size(); ++e) {
        CHECK(fit.log[e].epoch == e);
        CHECK(std::isfinite(fit.log[e].quasi_loglik));
        CHECK(fit.log[e].sigma_eps2 > 0);
    }
    const FitResult again = fit_gtimm(d, cfg);
    CHECK(again.model.beta_star == fit.model.beta_star);
    CHECK(again.model.b_hat == fit.model.b_hat);
}
