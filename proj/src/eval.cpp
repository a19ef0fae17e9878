#include "gtimm/eval.hpp"

#include "gtimm/folds.hpp"
#include "gtimm/parallel.hpp"
#include "gtimm/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>

namespace gtimm {

double mspe(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("mspe: lengths differ (" + std::to_string(y_true.size()) + " vs " +
                                    std::to_string(y_pred.size()) + ")");
    if (y_true.size() == 0) throw std::invalid_argument("mspe: empty input");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < y_true.size(); ++i) {
        const double e = y_true(i) - y_pred(i);
        acc += e * e;
    }
    return acc / static_cast<double>(y_true.size());
}

double MspeReport::at(const std::string& model) const {
    for (const auto& e : entries)
        if (e.model == model) return e.mspe;
    throw std::out_of_range("no MSPE entry for model '" + model + "'");
}

MspeReport benchmark(const Dataset& d, const FitConfig& cfg, double train_fraction, std::uint64_t seed,
                     const BenchmarkOptions& options) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("train fraction must lie in (0, 1)");
    validate(d);
    if (!d.has_groups()) throw DataError("benchmark needs a group column to stratify the split");

    const TrainTestSplit split = stratified_split(d.group, d.n(), train_fraction, seed);
    const Dataset train = subset_rows(d, split.train);
    const Dataset test = subset_rows(d, split.test);

    MspeReport report;
    report.train_fraction = train_fraction;
    report.seed = seed;
    report.n_train = train.n();
    report.n_test = test.n();

    FitConfig gcfg = cfg;
    gcfg.seed = seed;
    FitResult g = fit_gtimm(train, gcfg);
    for (auto& w : g.warnings) report.warnings.push_back("GTIMM: " + w);
    report.entries.push_back({"GTIMM", mspe(test.y, predict(g.model, test.X, test.Z, true, &report.warnings))});

    const LmmModel lmm = fit_lmm(train, options.lmm);
    report.entries.push_back({"LMM", mspe(test.y, predict_baseline(lmm, test.X, test.Z))});

    const RegressionTree tree = fit_tree(train, options.tree_max_leaves, options.tree_min_leaf);
    report.entries.push_back({"Tree", mspe(test.y, predict_baseline(tree, test.X))});

    const ForestModel forest = fit_forest(train, options.forest, seed);
    report.entries.push_back({"RF", mspe(test.y, predict_baseline(forest, test.X))});
    return report;
}

void write_report_csv(const MspeReport& report, std::ostream& out) {
    out << "model,mspe\n";
    for (const auto& e : report.entries) out << e.model << ',' << text::format_double(e.mspe) << '\n';
}

FitConfig GapOptions::full_batch_config() {
    FitConfig c;
    c.batch_size = std::numeric_limits<std::size_t>::max();
    c.learning_rate = 1.0;
    c.max_epochs = 5000;
    c.rel_tol = 1e-15;
    c.patience = 5;
    return c;
}

namespace {

std::uint64_t cell_seed(std::uint64_t seed, std::size_t n, std::size_t rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(rep)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

struct CellOutcome {
    std::optional<double> gap;
    std::string error;
};

CellOutcome run_cell(std::size_t n, std::size_t m, std::uint64_t s, const GapOptions& options) {
    CellOutcome out;
    try {
        const auto [data, truth] = simulate(common_coefficient_design(options.common_coefficients), 2 * n, s,
                                            options.sigma_b2, options.sigma_eps2);
        const TrainTestSplit split = stratified_split(data.group, data.n(), options.train_fraction, s);
        const Dataset train = subset_rows(data, split.train);
        const Dataset test = subset_rows(data, split.test);

        FitConfig cfg = options.fit;
        cfg.max_leaves = m;
        cfg.seed = s;
        const FitResult g = fit_gtimm(train, cfg);
        const LmmModel lmm = fit_lmm(train);
        const double a = mspe(test.y, predict(g.model, test.X, test.Z, true));
        const double b = mspe(test.y, predict_baseline(lmm, test.X, test.Z));
        out.gap = std::abs(a - b);
    } catch (const NumericalError& e) {
        out.error = e.what();
    } catch (const DataError& e) {
        out.error = e.what();
    }
    return out;
}

}  // namespace

GapCurve gap_experiment(const std::vector<std::size_t>& n_grid, std::size_t m, std::size_t replications,
                        std::uint64_t seed, const GapOptions& options) {
    if (n_grid.empty()) throw std::invalid_argument("gap experiment needs at least one N");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
        if (n_grid[i] == 0 || n_grid[i] % 4 != 0)
            throw std::invalid_argument("every N must be a positive multiple of 4, got " + std::to_string(n_grid[i]));
        if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw std::invalid_argument("N grid must be strictly increasing");
    }
    if (replications < 5) throw std::invalid_argument("gap experiment needs at least 5 replications");
    if (m < 1) throw std::invalid_argument("M must be at least 1");

    const std::size_t cells = n_grid.size() * replications;
    std::vector<CellOutcome> outcome(cells);
    parallel_for(cells, [&](std::size_t c) {
        const std::size_t n = n_grid[c / replications];
        const std::size_t rep = c % replications;
        outcome[c] = run_cell(n, m, cell_seed(seed, n, rep), options);
    });

    GapCurve curve;
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
        GapPoint pt;
        pt.n = n_grid[k];
        pt.m = m;
        std::vector<double> gaps;
        for (std::size_t rep = 0; rep < replications; ++rep) {
            const CellOutcome& o = outcome[k * replications + rep];
            if (o.gap) {
                gaps.push_back(*o.gap);
            } else {
                ++pt.failures;
                curve.warnings.push_back("N=" + std::to_string(pt.n) + " replication " + std::to_string(rep + 1) +
                                         " failed: " + o.error);
            }
        }
        if (5 * pt.failures > replications)
            throw NumericalError("gap experiment: " + std::to_string(pt.failures) + " of " +
                                 std::to_string(replications) + " fits failed at N=" + std::to_string(pt.n));
        double mean = 0.0;
        for (double g : gaps) mean += g;
        mean /= static_cast<double>(gaps.size());
        double var = 0.0;
        for (double g : gaps) var += (g - mean) * (g - mean);
        pt.gap_mean = mean;
        pt.gap_std = gaps.size() > 1 ? std::sqrt(var / static_cast<double>(gaps.size() - 1)) : 0.0;
        curve.points.push_back(pt);
    }
    return curve;
}

double log_log_slope(const GapCurve& curve) {
    std::vector<double> lx, ly;
    for (const auto& p : curve.points) {
        if (p.gap_mean > 0.0) {
            lx.push_back(std::log(static_cast<double>(p.n)));
            ly.push_back(std::log(p.gap_mean));
        }
    }
    if (lx.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double k = static_cast<double>(lx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= k;
    my /= k;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

void write_gap_csv(const GapCurve& curve, std::ostream& out) {
    out << "N,M,gap_mean,gap_std\n";
    for (const auto& p : curve.points)
        out << p.n << ',' << p.m << ',' << text::format_double(p.gap_mean) << ',' << text::format_double(p.gap_std)
            << '\n';
}

Crosstab crosstab_regions(const std::vector<int>& region, const std::vector<int>& groups, std::size_t regions,
                          std::size_t group_count) {
    if (region.size() != groups.size()) throw std::invalid_argument("crosstab: region and group lengths differ");
    std::size_t rows = regions, cols = group_count;
    for (std::size_t i = 0; i < region.size(); ++i) {
        if (region[i] < 0 || groups[i] < 0) throw std::invalid_argument("crosstab: negative index");
        rows = std::max(rows, static_cast<std::size_t>(region[i]) + 1);
        cols = std::max(cols, static_cast<std::size_t>(groups[i]) + 1);
    }
    Crosstab t;
    t.counts.assign(rows, std::vector<std::size_t>(cols, 0));
    for (std::size_t i = 0; i < region.size(); ++i) ++t.counts[region[i]][groups[i]];
    for (std::size_t g = 0; g < cols; ++g) t.group_labels.push_back(std::to_string(g + 1));
    return t;
}

void write_crosstab_csv(const Crosstab& table, std::ostream& out) {
    out << "node,group,count\n";
    for (std::size_t r = 0; r < table.counts.size(); ++r)
        for (std::size_t g = 0; g < table.counts[r].size(); ++g) {
            const std::string& label = g < table.group_labels.size() ? table.group_labels[g] : std::to_string(g + 1);
            out << r + 1 << ',' << label << ',' << table.counts[r][g] << '\n';
        }
}

}  // namespace gtimm
