#include <doctest.h>

#include "gtimm/dataset.hpp"
#include "gtimm/errors.hpp"
#include "gtimm/text.hpp"

#include "support.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

using namespace gtimm;

namespace {

CsvSchema basic_schema() {
    CsvSchema s;
    s.y_col = "y";
    s.x_cols = {"x1"};
    s.group_col = "group";
    return s;
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool bitwise_equal(const Dataset& a, const Dataset& b) {
    return bitwise_equal(a.y, b.y) && bitwise_equal(a.X, b.X) && bitwise_equal(a.Z, b.Z) && a.group == b.group &&
           a.group_levels == b.group_levels && a.x_names == b.x_names && a.y_name == b.y_name;
}

}  // namespace

TEST_CASE("three-row table expands the group column") {
    std::istringstream in("y,x1,group\n1.5,2,A\n-1,0.5,B\n3,1,A\n");
    const Dataset d = read_csv(in, basic_schema());
    CHECK(d.n() == 3);
    CHECK(d.p() == 2);
    CHECK(d.q() == 2);
    CHECK(d.X(0, 0) == 1.0);
    CHECK(d.X(1, 1) == 0.5);
    CHECK(d.group == std::vector<int>{0, 1, 0});
    CHECK(d.group_levels == std::vector<std::string>{"A", "B"});
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(d.Z.row(i).sum() == 1.0);
    CHECK(d.Z(0, 0) == 1.0);
    CHECK(d.Z(1, 1) == 1.0);
    CHECK(d.Z(2, 0) == 1.0);
}

TEST_CASE("numeric group labels are ordered numerically") {
    std::istringstream in("y,x1,group\n1,1,10\n2,2,9\n3,3,10\n");
    const Dataset d = read_csv(in, basic_schema());
    CHECK(d.group_levels == std::vector<std::string>{"9", "10"});
    CHECK(d.group == std::vector<int>{1, 0, 1});
}

TEST_CASE("malformed input is reported") {
    SUBCASE("NaN names its row and column") {
        std::istringstream in("y,x1,group\n1,1,A\nNaN,2,B\n");
        try {
            read_csv(in, basic_schema());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.row() == 2);
            CHECK(e.column() == "y");
            CHECK(std::string(e.what()).find("row 2") != std::string::npos);
        }
    }
    SUBCASE("empty cell") {
        std::istringstream in("y,x1,group\n1,,A\n2,2,B\n");
        CHECK_THROWS_AS(read_csv(in, basic_schema()), ParseError);
    }
    SUBCASE("ragged row") {
        std::istringstream in("y,x1,group\n1,1\n2,2,B\n");
        CHECK_THROWS_AS(read_csv(in, basic_schema()), ParseError);
    }
    SUBCASE("missing column") {
        std::istringstream in("y,x2,group\n1,1,A\n2,2,B\n");
        CHECK_THROWS_AS(read_csv(in, basic_schema()), SchemaError);
    }
    SUBCASE("single group") {
        std::istringstream in("y,x1,group\n1,1,A\n2,2,A\n");
        CHECK_THROWS_AS(read_csv(in, basic_schema()), DataError);
    }
    SUBCASE("header only") {
        std::istringstream in("y,x1,group\n");
        CHECK_THROWS_AS(read_csv(in, basic_schema()), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_csv("/nonexistent/gtimm.csv", basic_schema()), DataError);
    }
}

TEST_CASE("write_csv re-parses to a bitwise-equal dataset") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> rows(2, 40), preds(1, 4), groups(2, 6);
    std::uniform_int_distribution<std::uint64_t> bits;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rows(rng), k = preds(rng), g = std::min(groups(rng), n);
        Eigen::VectorXd y(n);
        Eigen::MatrixXd P(n, k);
        std::vector<int> grp(n);
        auto finite = [&] {
            for (;;) {
                const std::uint64_t b = bits(rng);
                double v;
                std::memcpy(&v, &b, sizeof v);
                if (std::isfinite(v)) return v;
            }
        };
        for (int i = 0; i < n; ++i) {
            y(i) = trial % 2 ? finite() : std::normal_distribution<double>()(rng);
            for (int j = 0; j < k; ++j) P(i, j) = finite();
            grp[i] = i % g;
        }
        const Dataset d = make_dataset(y, P, grp, static_cast<std::size_t>(g));
        std::stringstream buf;
        write_csv(d, buf);
        const Dataset back = read_csv(buf, schema_of(d));
        CHECK(bitwise_equal(d, back));
    }
}

TEST_CASE("explicit Z columns") {
    std::istringstream in("y,x1,z1,z2\n1,1,0.5,1\n2,3,1,0\n4,2,0,0\n");
    CsvSchema s;
    s.y_col = "y";
    s.x_cols = {"x1"};
    s.z_cols = {"z1", "z2"};
    const Dataset d = read_csv(in, s);
    CHECK_FALSE(d.has_groups());
    CHECK(d.q() == 2);
    CHECK(d.Z(0, 0) == 0.5);
    std::stringstream buf;
    write_csv(d, buf);
    CHECK(bitwise_equal(d, read_csv(buf, schema_of(d))));
}

TEST_CASE("read_csv_like keeps reference levels and zeroes unseen groups") {
    std::istringstream train("y,x1,group\n1,1,A\n2,2,B\n3,3,C\n");
    const Dataset ref = read_csv(train, basic_schema());
    std::istringstream fresh("y,x1,group\n5,1,C\n6,2,Q\n");
    const Dataset d = read_csv_like(fresh, basic_schema(), ref, true);
    CHECK(d.q() == 3);
    CHECK(d.Z(0, 2) == 1.0);
    CHECK(d.Z.row(0).sum() == 1.0);
    CHECK(d.Z.row(1).isZero());

    std::istringstream no_y("x1,group\n1,A\n");
    const Dataset u = read_csv_like(no_y, basic_schema(), ref, false);
    CHECK(u.n() == 1);
    CHECK(u.Z(0, 0) == 1.0);
}

TEST_CASE("standardize") {
    Eigen::VectorXd y(3);
    y << 4, 6, 8;
    Eigen::MatrixXd P(3, 1);
    P << 1, 2, 3;
    const Dataset d = make_dataset(y, P, {0, 1, 0}, 2);
    const auto [s, params] = standardize(d);
    CHECK(s.X(0, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(std::abs(s.X(1, 1)) < 1e-15);
    CHECK(s.X(2, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.y(0) == doctest::Approx(-1.0));
    CHECK(params.x[0].mean == 2.0);
    CHECK(params.x[0].sd == doctest::Approx(1.0));
    CHECK(s.X.col(0).isOnes());
    CHECK(s.Z == d.Z);

    SUBCASE("idempotent") {
        const auto again = standardize(s).first;
        CHECK((again.X - s.X).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((again.y - s.y).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("standardize: moments and inverse on random data") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Dataset d = testing::random_grouped(rng, 50 + trial, 3, 4, 1.0, 1.0);
        d.X.rightCols(3) = (d.X.rightCols(3).array() * 100.0 + 7.0).matrix();
        const auto [s, params] = standardize(d);
        for (Eigen::Index j = 1; j < s.X.cols(); ++j) {
            const auto col = s.X.col(j);
            const double mean = col.mean();
            const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(col.size() - 1));
            CHECK(std::abs(mean) < 1e-12);
            CHECK(std::abs(sd - 1.0) < 1e-12);
        }
        const Dataset back = destandardize(s, params);
        CHECK((back.X - d.X).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((back.y - d.y).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("zero-variance column is named") {
    Eigen::VectorXd y(3);
    y << 1, 2, 3;
    Eigen::MatrixXd P(3, 2);
    P << 1, 5, 2, 5, 3, 5;
    const Dataset d = make_dataset(y, P, {0, 1, 0}, 2);
    try {
        standardize(d);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("x2") != std::string::npos);
    }
}

TEST_CASE("simulation") {
    SUBCASE("even clusters") {
        const auto [d, truth] = simulate_gtimm(2000, 1, 2.0, 1.0);
        CHECK(d.n() == 2000);
        CHECK(d.p() == 3);
        CHECK(d.q() == 10);
        std::vector<int> counts(4, 0);
        for (int r : truth.region) ++counts[static_cast<std::size_t>(r)];
        CHECK(counts == std::vector<int>{500, 500, 500, 500});
        CHECK(truth.b.size() == 10);
        validate(d);
    }
    SUBCASE("noiseless limit equals the regional mean") {
        const auto [d, truth] = simulate_gtimm(400, 5, 0.0, 0.0);
        for (std::size_t i = 0; i < d.n(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            CHECK(std::abs(d.y(k) - regional_mean(d.X(k, 1), d.X(k, 2), static_cast<std::size_t>(truth.region[i]))) <
                  1e-10);
        }
    }
    SUBCASE("deterministic per seed") {
        const auto a = simulate_gtimm(800, 42, 2.0, 1.0).first;
        const auto b = simulate_gtimm(800, 42, 2.0, 1.0).first;
        const auto c = simulate_gtimm(800, 43, 2.0, 1.0).first;
        CHECK(bitwise_equal(a, b));
        CHECK_FALSE(bitwise_equal(a, c));
    }
    SUBCASE("cluster centers") {
        const double sx[4] = {5, -5, -5, 5};
        const double sy[4] = {5, 5, -5, -5};
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto [d, truth] = simulate_gtimm(2000, seed, 2.0, 1.0);
            for (int m = 0; m < 4; ++m) {
                double mx = 0, my = 0, n = 0;
                for (std::size_t i = 0; i < d.n(); ++i) {
                    if (truth.region[i] != m) continue;
                    mx += d.X(static_cast<Eigen::Index>(i), 1);
                    my += d.X(static_cast<Eigen::Index>(i), 2);
                    ++n;
                }
                CHECK(std::abs(mx / n - sx[m]) < 0.2);
                CHECK(std::abs(my / n - sy[m]) < 0.2);
            }
        }
    }
    SUBCASE("bad sizes") {
        CHECK_THROWS_AS(simulate_gtimm(2001, 1, 2.0, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(simulate_gtimm(0, 1, 2.0, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(simulate_gtimm(400, 1, -1.0, 1.0), std::invalid_argument);
    }
}

TEST_CASE("regional_mean") {
    CHECK(regional_mean(0, 0, 0) == 2.0);
    CHECK(regional_mean(1, 1, 2) == 0.0);
    CHECK(regional_mean(0, 0, 3) == -2.0);
    CHECK(regional_mean(1, 1, 1) == doctest::Approx(-1 + 2.5 - 0.5));
    CHECK_THROWS_AS(regional_mean(0, 0, 4), std::invalid_argument);
}

TEST_CASE("simulation CSV has the documented columns") {
    const auto [d, truth] = simulate_gtimm(8, 1, 2.0, 1.0);
    std::ostringstream out;
    write_simulation_csv(d, truth, out);
    const std::string s = out.str();
    CHECK(s.rfind("y,x1,x2,group,region_true\n", 0) == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 9);
}

TEST_CASE("subset_rows and group_indices") {
    std::mt19937_64 rng(8);
    const Dataset d = testing::random_grouped(rng, 20, 2, 3, 1.0, 1.0);
    const Dataset s = subset_rows(d, {4, 0, 7});
    CHECK(s.n() == 3);
    CHECK(s.y(0) == d.y(4));
    CHECK(s.group[2] == d.group[7]);
    CHECK(s.group_levels == d.group_levels);

    Dataset z = d;
    z.group.clear();
    CHECK(group_indices(z) == d.group);
    z.Z(0, 0) = 0.5;
    CHECK(group_indices(z).empty());
}
