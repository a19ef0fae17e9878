#include <doctest.h>

#include "gtimm/dataset.hpp"
#include "gtimm/folds.hpp"
#include "gtimm/tree.hpp"

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

using namespace gtimm;

namespace {

struct BruteSplit {
    int feature = -1;
    double threshold = 0.0;
    double sse = std::numeric_limits<double>::infinity();
};

double sse_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
}

// Tries every midpoint of every feature and recomputes both child SSEs from scratch.
BruteSplit brute_force_root(const Dataset& d, std::size_t min_leaf) {
    BruteSplit best;
    for (Eigen::Index f = 1; f < d.X.cols(); ++f) {
        std::set<double> values(d.X.col(f).data(), d.X.col(f).data() + d.X.rows());
        std::vector<double> u(values.begin(), values.end());
        for (std::size_t k = 1; k < u.size(); ++k) {
            const double t = 0.5 * (u[k - 1] + u[k]);
            std::vector<double> l, r;
            for (Eigen::Index i = 0; i < d.X.rows(); ++i) (d.X(i, f) <= t ? l : r).push_back(d.y(i));
            if (l.size() < min_leaf || r.size() < min_leaf) continue;
            const double s = sse_of(l) + sse_of(r);
            if (s < best.sse * (1 - 1e-12)) best = {static_cast<int>(f), t, s};
        }
    }
    return best;
}

Dataset step_data() {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> neg(-3.0, -0.01), pos(0.0, 3.0);
    Eigen::VectorXd y(100);
    Eigen::MatrixXd P(100, 2);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 100; ++i) {
        const bool right = i >= 50;
        P(i, 0) = right ? pos(rng) : neg(rng);
        P(i, 1) = nd(rng);
        y(i) = right ? 10.0 : 0.0;
    }
    std::vector<int> g(100);
    for (int i = 0; i < 100; ++i) g[i] = i % 2;
    return make_dataset(y, P, g, 2);
}

}  // namespace

TEST_CASE("step function is split between the two sides") {
    const Dataset d = step_data();
    const RegressionTree t = fit_tree(d, 2, 10);
    REQUIRE(t.leaf_count() == 2);
    const TreeNode& root = t.nodes()[0];
    CHECK_FALSE(root.leaf);
    CHECK(root.feature == 1);
    const double largest_neg = d.X.col(1).head(50).maxCoeff();
    const double smallest_pos = d.X.col(1).tail(50).minCoeff();
    CHECK(root.threshold > largest_neg);
    CHECK(root.threshold < smallest_pos);
    const BruteSplit oracle = brute_force_root(d, 10);
    CHECK(oracle.feature == root.feature);
    CHECK(oracle.threshold == root.threshold);
    const Eigen::VectorXd pred = predict_tree(t, d.X);
    CHECK((pred - d.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("root split agrees with exhaustive search on random data") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        Dataset d = testing::random_grouped(rng, 40 + trial, 3, 3, 0.5, 1.0);
        for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y(i) += d.X(i, 2) > 0.3 ? 2.0 : 0.0;
        const std::size_t min_leaf = 1 + static_cast<std::size_t>(trial % 7);
        const RegressionTree t = fit_tree(d, 2, min_leaf);
        const BruteSplit oracle = brute_force_root(d, min_leaf);
        REQUIRE(t.leaf_count() == 2);
        CHECK(t.nodes()[0].feature == oracle.feature);
        CHECK(t.nodes()[0].threshold == oracle.threshold);
        CHECK(within_leaf_sse(t, d.X, d.y) == doctest::Approx(oracle.sse).epsilon(1e-9));
    }
}

TEST_CASE("constant response gives a single leaf") {
    std::mt19937_64 rng(1);
    Dataset d = testing::random_grouped(rng, 200, 2, 4, 1.0, 1.0);
    d.y.setConstant(3.25);
    for (std::size_t m : {1u, 2u, 8u}) {
        const RegressionTree t = fit_tree(d, m, 5);
        CHECK(t.leaf_count() == 1);
        CHECK(t.leaf_mean(0) == 3.25);
    }
}

TEST_CASE("argument and structural errors") {
    std::mt19937_64 rng(1);
    const Dataset d = testing::random_grouped(rng, 50, 2, 2, 1.0, 1.0);
    CHECK_THROWS_AS(fit_tree(d, 0, 5), std::invalid_argument);
    SUBCASE("too few rows for a split is a single leaf") {
        const RegressionTree t = fit_tree(subset_rows(d, {0, 1, 2, 3, 4, 5, 6, 7, 8}), 4, 5);
        CHECK(t.leaf_count() == 1);
    }
    SUBCASE("feature outside the design") {
        const RegressionTree t = fit_tree(d, 3, 5);
        REQUIRE(t.leaf_count() > 1);
        CHECK_THROWS_AS(assign_regions(t, d.X.leftCols(1)), DataError);
    }
}

TEST_CASE("routing") {
    SUBCASE("single leaf") {
        const RegressionTree t;
        Eigen::MatrixXd X = Eigen::MatrixXd::Random(7, 3);
        const RegionAssignment a = assign_regions(t, X);
        CHECK(a.region == std::vector<int>(7, 0));
        CHECK(a.counts == std::vector<std::size_t>{7});
    }
    SUBCASE("a point on the threshold goes left") {
        const RegressionTree t = fit_tree(step_data(), 2, 10);
        Eigen::RowVectorXd x(3);
        x << 1.0, t.nodes()[0].threshold, 0.0;
        const int left = t.nodes()[t.nodes()[0].left].region;
        CHECK(static_cast<int>(t.route(x)) == left);
        x(1) = std::nextafter(t.nodes()[0].threshold, 1e9);
        CHECK(static_cast<int>(t.route(x)) != left);
    }
    SUBCASE("re-routing the training rows reproduces the grown assignment") {
        std::mt19937_64 rng(5);
        const auto [d, truth] = simulate_gtimm(400, 5, 2.0, 1.0);
        std::vector<std::size_t> rows(d.n());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        TreeOptions opt;
        opt.max_leaves = 6;
        const GrownTree g = grow_tree(d.X, d.y, rows, opt);
        const RegionAssignment a = assign_regions(g.tree, d.X);
        CHECK(a.region == g.assignment.region);
        CHECK(a.counts == g.assignment.counts);
        std::size_t total = 0;
        for (auto c : a.counts) {
            CHECK(c >= 10);
            total += c;
        }
        CHECK(total == d.n());
    }
}

TEST_CASE("training SSE does not increase with more leaves") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto d = simulate_gtimm(800, seed, 2.0, 1.0).first;
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t m = 1; m <= 12; ++m) {
            const double s = within_leaf_sse(fit_tree(d, m, 10), d.X, d.y);
            CHECK(s <= prev * (1 + 1e-12));
            prev = s;
        }
    }
}

TEST_CASE("four leaves recover the simulated clusters") {
    std::vector<double> rates;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto [d, truth] = simulate_gtimm(2000, seed, 2.0, 1.0);
        const RegressionTree t = fit_tree(d, 4, 10);
        REQUIRE(t.leaf_count() == 4);
        const RegionAssignment a = assign_regions(t, d.X);
        rates.push_back(static_cast<double>(testing::misassigned(truth.region, a.region, 4)) / 2000.0);
    }
    CHECK(testing::median(rates) <= 0.01);
}

TEST_CASE("text round-trip") {
    const auto d = simulate_gtimm(800, 3, 2.0, 1.0).first;
    const RegressionTree t = fit_tree(d, 7, 10);
    std::istringstream in(t.to_text());
    const RegressionTree back = RegressionTree::from_text(in);
    REQUIRE(back.nodes().size() == t.nodes().size());
    for (std::size_t k = 0; k < t.nodes().size(); ++k) {
        const TreeNode &a = t.nodes()[k], &b = back.nodes()[k];
        CHECK(a.leaf == b.leaf);
        CHECK(a.feature == b.feature);
        CHECK(a.threshold == b.threshold);
        CHECK(a.left == b.left);
        CHECK(a.right == b.right);
        CHECK(a.region == b.region);
        CHECK(a.count == b.count);
        CHECK(a.mean == b.mean);
    }
    CHECK(predict_tree(back, d.X) == predict_tree(t, d.X));

    std::istringstream junk("nodes 2\n0 split x\n");
    CHECK_THROWS_AS(RegressionTree::from_text(junk), DataError);
    std::istringstream dangling("nodes 1 leaves 1\n0 split 1 0.5 4 5 -1 10 0\n");
    CHECK_THROWS_AS(RegressionTree::from_text(dangling), DataError);
}

TEST_CASE("collapsing a leaf into its sibling") {
    const auto d = simulate_gtimm(800, 4, 2.0, 1.0).first;
    const RegressionTree t = fit_tree(d, 4, 10);
    const RegressionTree s = t.without_leaf(2);
    CHECK(s.leaf_count() == 3);
    const RegionAssignment a = assign_regions(s, d.X);
    for (auto c : a.counts) CHECK(c > 0);
}

TEST_CASE("cross-validated leaf count") {
    SUBCASE("simulated clusters select four") {
        const auto d = simulate_gtimm(2000, 1, 2.0, 1.0).first;
        CHECK(select_leaves_cv(d, 5, {1, 2, 3, 4, 5, 6, 7, 8}, 1) == 4);
    }
    SUBCASE("a single candidate is returned as is") {
        const auto d = simulate_gtimm(400, 1, 2.0, 1.0).first;
        CHECK(select_leaves_cv(d, 5, {3}, 1) == 3);
    }
    SUBCASE("pure noise selects one leaf in most seeds") {
        int ones = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            std::mt19937_64 rng(seed);
            Dataset d = testing::random_grouped(rng, 300, 2, 5, 0.0, 1.0);
            std::normal_distribution<double> nd;
            for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y(i) = nd(rng);
            if (select_leaves_cv(d, 5, {1, 2, 4}, seed) == 1) ++ones;
        }
        CHECK(ones > 10);
    }
    SUBCASE("leaf-mean scoring also runs") {
        const auto d = simulate_gtimm(800, 2, 2.0, 1.0).first;
        CvOptions opt;
        opt.score = CvScore::LeafMean;
        const CvResult r = cross_validate_leaves(d, 5, {1, 2, 4}, 2, opt);
        CHECK(r.mean_error.size() == 3);
        CHECK(r.mean_error[2] < r.mean_error[0]);
    }
    SUBCASE("small groups fall back to unstratified folds with a warning") {
        std::mt19937_64 rng(4);
        Dataset d = testing::random_grouped(rng, 60, 1, 3, 1.0, 1.0);
        d.group[0] = 2;
        for (int i = 1; i < 60; ++i) d.group[i] = i < 3 ? 0 : 1;
        d.Z = one_hot(d.group, 3);
        Warnings w;
        CHECK_NOTHROW(select_leaves_cv(d, 5, {1, 2}, 1, &w));
        CHECK_FALSE(w.empty());
    }
    CHECK_THROWS_AS(select_leaves_cv(simulate_gtimm(400, 1, 2.0, 1.0).first, 1, {1, 2}, 1), std::invalid_argument);
}

TEST_CASE("folds cover every group") {
    const auto d = simulate_gtimm(2000, 6, 2.0, 1.0).first;
    Warnings w;
    const std::vector<int> fold = assign_folds(d.group, d.n(), 5, 3, &w);
    CHECK(w.empty());
    std::vector<std::vector<int>> seen(5, std::vector<int>(10, 0));
    for (std::size_t i = 0; i < d.n(); ++i) seen[static_cast<std::size_t>(fold[i])][static_cast<std::size_t>(d.group[i])] = 1;
    for (const auto& f : seen)
        for (int s : f) CHECK(s == 1);
}

TEST_CASE("stratified holdout keeps every group in training") {
    const auto d = simulate_gtimm(400, 2, 2.0, 1.0).first;
    const TrainTestSplit s = stratified_split(d.group, d.n(), 0.8, 9);
    CHECK(s.train.size() + s.test.size() == d.n());
    std::set<int> groups;
    for (auto i : s.train) groups.insert(d.group[i]);
    CHECK(groups.size() == 10);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == d.n());
    const TrainTestSplit again = stratified_split(d.group, d.n(), 0.8, 9);
    CHECK(again.train == s.train);
}
