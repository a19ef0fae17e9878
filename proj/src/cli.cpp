#include "gtimm/cli.hpp"

#include "gtimm/model_io.hpp"
#include "gtimm/text.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace gtimm::cli {

namespace {

namespace fs = std::filesystem;

struct GlobalFlags {
    std::uint64_t seed = 1;
    std::string config;
    std::string out = ".";
    bool quiet = false;
};

struct DataFlags {
    std::string data;
    std::string y_col = "y";
    std::string x_cols = "x1,x2";
    std::string group_col = "group";
    std::string z_cols;
    bool standardize = false;
};

struct SimFlags {
    std::size_t n = 2000;
    int groups = 10;
    double sigma_b2 = 2.0;
    double sigma_eps2 = 1.0;
};

struct FitFlags {
    std::string family = "gaussian";
    double dispersion = 1.0;
    std::string max_leaves = "4";
    std::size_t cv_folds = 5;
    std::string cv_candidates = "1,2,3,4,5,6,7,8";
    std::string cv_score = "region-linear";
    bool one_se_rule = true;
    std::size_t min_leaf = 10;
    double min_region_fraction = 0.05;
    double learning_rate = 0.01;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 500;
    double rel_tol = 1e-6;
    std::size_t patience = 3;
    std::size_t blup_refresh_every = 1;
};

struct BaselineFlags {
    std::size_t tree_max_leaves = 32;
    std::size_t tree_min_leaf = 10;
    std::size_t n_trees = 200;
    std::size_t forest_max_leaves = 32;
    std::size_t forest_min_leaf = 5;
};

std::vector<std::size_t> parse_counts(const std::string& s, const char* flag) {
    std::vector<std::size_t> out;
    for (const auto& part : text::split(s, ',')) {
        const auto v = text::parse_integer(text::trim(part));
        if (!v || *v < 0) throw std::invalid_argument(std::string(flag) + ": '" + part + "' is not a count");
        out.push_back(static_cast<std::size_t>(*v));
    }
    if (out.empty()) throw std::invalid_argument(std::string(flag) + " is empty");
    return out;
}

std::vector<std::string> parse_names(const std::string& s) {
    std::vector<std::string> out;
    if (text::trim(s).empty()) return out;
    for (const auto& part : text::split(s, ',')) out.emplace_back(text::trim(part));
    return out;
}

CsvSchema schema_from(const DataFlags& f) {
    CsvSchema s;
    s.y_col = f.y_col;
    s.x_cols = parse_names(f.x_cols);
    if (!text::trim(f.group_col).empty()) s.group_col = std::string(text::trim(f.group_col));
    s.z_cols = parse_names(f.z_cols);
    if (s.group_col && !s.z_cols.empty()) throw std::invalid_argument("give either --group-col or --z-cols, not both");
    if (!s.group_col && s.z_cols.empty()) throw std::invalid_argument("one of --group-col or --z-cols is required");
    return s;
}

FitConfig config_from(const FitFlags& f, std::uint64_t seed) {
    FitConfig c;
    c.family = LinkFamily::from_name(f.family, f.dispersion);
    if (f.max_leaves == "cv") {
        c.max_leaves.reset();
    } else {
        const auto v = text::parse_integer(f.max_leaves);
        if (!v || *v < 1) throw std::invalid_argument("--max-leaves must be a positive count or 'cv'");
        c.max_leaves = static_cast<std::size_t>(*v);
    }
    c.cv_folds = f.cv_folds;
    c.cv_candidates = parse_counts(f.cv_candidates, "--cv-candidates");
    if (f.cv_score == "region-linear") {
        c.cv.score = CvScore::RegionLinear;
    } else if (f.cv_score == "leaf-mean") {
        c.cv.score = CvScore::LeafMean;
    } else {
        throw std::invalid_argument("--cv-score must be region-linear or leaf-mean");
    }
    c.cv.one_se_rule = f.one_se_rule;
    c.cv.min_leaf = f.min_leaf;
    c.min_leaf = f.min_leaf;
    c.min_region_fraction = f.min_region_fraction;
    c.learning_rate = f.learning_rate;
    c.batch_size = f.batch_size;
    c.max_epochs = f.max_epochs;
    c.rel_tol = f.rel_tol;
    c.patience = f.patience;
    c.blup_refresh_every = f.blup_refresh_every;
    c.seed = seed;
    validate(c);
    if (c.cv_folds < 2) throw std::invalid_argument("--cv-folds must be at least 2");
    return c;
}

BenchmarkOptions baseline_options(const BaselineFlags& f) {
    BenchmarkOptions b;
    b.tree_max_leaves = f.tree_max_leaves;
    b.tree_min_leaf = f.tree_min_leaf;
    b.forest.n_trees = f.n_trees;
    b.forest.max_leaves = f.forest_max_leaves;
    b.forest.min_leaf = f.forest_min_leaf;
    return b;
}

void add_data_flags(CLI::App* app, DataFlags& f, bool data_required) {
    auto* o = app->add_option("--data", f.data, data_required ? "input CSV" : "input CSV (simulated data when omitted)");
    if (data_required) o->required();
    app->add_option("--y-col", f.y_col, "response column");
    app->add_option("--x-cols", f.x_cols, "comma-separated predictor columns");
    app->add_option("--group-col", f.group_col, "grouping column (empty to use --z-cols)");
    app->add_option("--z-cols", f.z_cols, "comma-separated random-effect design columns");
    app->add_flag("--standardize", f.standardize, "center and scale y and predictors before fitting");
}

void add_sim_flags(CLI::App* app, SimFlags& f) {
    app->add_option("--n", f.n, "number of simulated rows (multiple of 4)");
    app->add_option("--groups", f.groups, "number of groups");
    app->add_option("--sigma-b2", f.sigma_b2, "random-effect variance");
    app->add_option("--sigma-eps2", f.sigma_eps2, "residual variance");
}

void add_fit_flags(CLI::App* app, FitFlags& f) {
    app->add_option("--family", f.family, "gaussian, poisson or bernoulli");
    app->add_option("--dispersion", f.dispersion, "dispersion parameter phi");
    app->add_option("--max-leaves", f.max_leaves, "number of tree leaves, or 'cv'");
    app->add_option("--cv-folds", f.cv_folds, "folds for leaf selection");
    app->add_option("--cv-candidates", f.cv_candidates, "comma-separated leaf counts tried by cv");
    app->add_option("--cv-score", f.cv_score, "region-linear or leaf-mean");
    app->add_option("--one-se-rule", f.one_se_rule, "pick the fewest leaves within one standard error");
    app->add_option("--min-leaf", f.min_leaf, "minimum rows per leaf");
    app->add_option("--min-region-fraction", f.min_region_fraction, "regions below this share of rows are merged");
    app->add_option("--learning-rate", f.learning_rate, "SGD learning rate");
    app->add_option("--batch-size", f.batch_size, "SGD mini-batch size");
    app->add_option("--max-epochs", f.max_epochs, "maximum SGD epochs");
    app->add_option("--rel-tol", f.rel_tol, "relative quasi-likelihood change treated as converged");
    app->add_option("--patience", f.patience, "consecutive converged epochs before stopping");
    app->add_option("--blup-refresh-every", f.blup_refresh_every, "epochs between BLUP refreshes");
}

void add_baseline_flags(CLI::App* app, BaselineFlags& f) {
    app->add_option("--tree-max-leaves", f.tree_max_leaves, "leaves of the single-tree baseline");
    app->add_option("--tree-min-leaf", f.tree_min_leaf, "minimum leaf size of the single-tree baseline");
    app->add_option("--n-trees", f.n_trees, "trees in the random forest");
    app->add_option("--forest-max-leaves", f.forest_max_leaves, "leaves per forest tree");
    app->add_option("--forest-min-leaf", f.forest_min_leaf, "minimum leaf size of forest trees");
}

// key=value lines; '#' starts a comment.
std::vector<std::string> config_arguments(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + " is not key=value");
        const auto key = text::trim(t.substr(0, eq));
        const auto value = text::trim(t.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + " has an empty key");
        if (key == "config") throw std::invalid_argument("config files cannot include other config files");
        out.push_back("--" + std::string(key) + "=" + std::string(value));
    }
    return out;
}

std::optional<std::string> find_config(const std::vector<std::string>& args) {
    std::optional<std::string> found;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) found = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) found = args[i].substr(9);
    }
    return found;
}

fs::path output_dir(const GlobalFlags& g) {
    fs::path dir(g.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + g.out + "': " + ec.message());
    return dir;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    return out;
}

std::vector<std::string> csv_header(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cols;
    for (const auto& c : text::split_csv_line(line)) cols.emplace_back(text::trim(c));
    return cols;
}

bool has_column(const fs::path& path, const std::string& name) {
    const auto h = csv_header(path);
    return std::find(h.begin(), h.end(), name) != h.end();
}

// Training data for fit/benchmark/cv-leaves: the CSV, or the simulated
// four-cluster design when no --data was given.
Dataset load_or_simulate(const DataFlags& df, const SimFlags& sf, std::uint64_t seed) {
    if (!df.data.empty()) return load_csv(df.data, schema_from(df));
    SimDesign design = default_design();
    design.groups = sf.groups;
    return simulate(design, sf.n, seed, sf.sigma_b2, sf.sigma_eps2).first;
}

void report_warnings(const Warnings& w, const GlobalFlags& g, std::ostream& err) {
    if (g.quiet) return;
    for (const auto& m : w) err << "warning: " << m << '\n';
}

const RegressionTree* routing_tree(const AnyModel& m) {
    if (const auto* g = std::get_if<GtimmModel>(&m)) return &g->tree;
    if (const auto* t = std::get_if<RegressionTree>(&m)) return t;
    return nullptr;
}

Dataset load_with_model_schema(const fs::path& data, const ModelFile& f, const std::string& y_col) {
    CsvSchema s = f.schema;
    s.y_col = y_col;
    Dataset ref;
    ref.group_levels = f.group_levels;
    std::ifstream in(data);
    if (!in) throw DataError("cannot open '" + data.string() + "'");
    return read_csv_like(in, s, ref, true);
}

Eigen::MatrixXd routed_design(const Dataset& d, const ModelFile& f) {
    if (!f.standardization) return d.X;
    return apply_standardization(d, *f.standardization).X;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalFlags& g, const SimFlags& sf, const std::string& design_name, std::ostream& out) {
    SimDesign design;
    if (design_name == "default") {
        design = default_design();
    } else if (design_name == "common") {
        design = common_coefficient_design(GapOptions{}.common_coefficients);
    } else {
        throw std::invalid_argument("--design must be default or common");
    }
    design.groups = sf.groups;
    const auto [d, truth] = simulate(design, sf.n, g.seed, sf.sigma_b2, sf.sigma_eps2);
    const fs::path dir = output_dir(g);
    auto sim = open_output(dir / "sim.csv");
    write_simulation_csv(d, truth, sim);
    auto tr = open_output(dir / "sim_truth.csv");
    write_truth_csv(truth, tr);
    if (!g.quiet) out << "wrote " << d.n() << " rows to " << (dir / "sim.csv").string() << '\n';
    return kOk;
}

int cmd_fit(const GlobalFlags& g, const DataFlags& df, const FitFlags& ff, const BaselineFlags& bf,
            const std::string& kind, std::ostream& out, std::ostream& err) {
    const CsvSchema schema = schema_from(df);
    const FitConfig cfg = config_from(ff, g.seed);
    if (kind != "gtimm" && kind != "lmm" && kind != "tree" && kind != "forest")
        throw std::invalid_argument("--model-kind must be gtimm, lmm, tree or forest");
    if (df.standardize && cfg.family.kind() != FamilyKind::Gaussian)
        throw std::invalid_argument("--standardize applies to the gaussian family only");

    Dataset d = load_csv(df.data, schema);
    ModelFile file;
    file.schema = schema;
    file.group_levels = d.group_levels;
    if (df.standardize) {
        auto [s, params] = standardize(d);
        d = std::move(s);
        file.standardization = params;
    }

    const fs::path dir = output_dir(g);
    Warnings warnings;
    if (kind == "gtimm") {
        FitResult r = fit_gtimm(d, cfg);
        warnings = r.warnings;
        if (r.cv) {
            auto cv = open_output(dir / "cv.csv");
            cv << "leaves,mean_error,std_error\n";
            for (std::size_t i = 0; i < r.cv->candidates.size(); ++i)
                cv << r.cv->candidates[i] << ',' << text::format_double(r.cv->mean_error[i]) << ','
                   << text::format_double(r.cv->std_error[i]) << '\n';
        }
        auto log = open_output(dir / "train_log.csv");
        log << "epoch,quasi_loglik,sigma_b2,sigma_eps2\n";
        for (const auto& e : r.log)
            log << e.epoch << ',' << text::format_double(e.quasi_loglik) << ',' << text::format_double(e.sigma_b2)
                << ',' << text::format_double(e.sigma_eps2) << '\n';
        if (!g.quiet) {
            out << "selected leaves: " << r.selected_leaves << '\n';
            out << "regions: " << r.model.regions() << '\n';
            out << "best epoch: " << r.best_epoch << " of " << r.log.size() - 1 << '\n';
            out << "sigma_b2: " << text::format_double(r.model.sigma_b2)
                << "  sigma_eps2: " << text::format_double(r.model.sigma_eps2) << '\n';
        }
        file.model = std::move(r.model);
    } else if (kind == "lmm") {
        file.model = fit_lmm(d);
    } else if (kind == "tree") {
        file.model = fit_tree(d, bf.tree_max_leaves, bf.tree_min_leaf);
    } else {
        file.model = fit_forest(d, baseline_options(bf).forest, g.seed);
    }
    write_model(file, dir / "model.txt");

    if (routing_tree(file.model) != nullptr && has_column(df.data, "region_true"))
        emit_plotdata(PlotKind::Regions, {df.data, dir / "model.txt", nullptr}, dir / "regions.csv");
    report_warnings(warnings, g, err);
    return kOk;
}

int cmd_predict(const GlobalFlags& g, const std::string& model_path, const std::string& data_path, bool no_random,
                std::ostream& out, std::ostream& err) {
    const ModelFile f = read_model(fs::path(model_path));
    const bool has_y = has_column(data_path, f.schema.y_col);
    Dataset ref;
    ref.group_levels = f.group_levels;
    std::ifstream in(data_path);
    if (!in) throw DataError("cannot open '" + data_path + "'");
    const Dataset d = read_csv_like(in, f.schema, ref, false);
    const Eigen::MatrixXd X = routed_design(d, f);

    Warnings warnings;
    Eigen::VectorXd pred;
    if (const auto* m = std::get_if<GtimmModel>(&f.model)) {
        pred = predict(*m, X, d.Z, !no_random, &warnings);
    } else if (const auto* l = std::get_if<LmmModel>(&f.model)) {
        pred = no_random ? Eigen::VectorXd(X * l->beta) : predict_baseline(*l, X, d.Z);
    } else if (const auto* t = std::get_if<RegressionTree>(&f.model)) {
        pred = predict_baseline(*t, X);
    } else {
        pred = predict_baseline(std::get<ForestModel>(f.model), X);
    }
    if (f.standardization) pred = pred.array() * f.standardization->y.sd + f.standardization->y.mean;

    // --out names the CSV itself when it ends in .csv, a directory otherwise.
    fs::path target(g.out);
    if (target.extension() != ".csv") target = output_dir(g) / "pred.csv";
    else if (target.has_parent_path()) fs::create_directories(target.parent_path());
    auto o = open_output(target);
    o << (has_y ? "y,prediction\n" : "prediction\n");
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        if (has_y) o << text::format_double(d.y(i)) << ',';
        o << text::format_double(pred(i)) << '\n';
    }
    if (!g.quiet) {
        out << "wrote " << pred.size() << " predictions to " << target.string() << '\n';
        if (has_y) out << "mspe: " << text::format_double(mspe(d.y, pred)) << '\n';
    }
    report_warnings(warnings, g, err);
    return kOk;
}

int cmd_benchmark(const GlobalFlags& g, const DataFlags& df, const SimFlags& sf, const FitFlags& ff,
                  const BaselineFlags& bf, double train_fraction, std::ostream& out, std::ostream& err) {
    const FitConfig cfg = config_from(ff, g.seed);
    if (!df.data.empty()) schema_from(df);
    Dataset d = load_or_simulate(df, sf, g.seed);
    if (df.standardize) d = standardize(d).first;
    const MspeReport report = benchmark(d, cfg, train_fraction, g.seed, baseline_options(bf));
    const fs::path dir = output_dir(g);
    auto o = open_output(dir / "benchmark.csv");
    write_report_csv(report, o);
    if (!g.quiet) {
        out << "train " << report.n_train << " / test " << report.n_test << '\n';
        for (const auto& e : report.entries) out << e.model << ": " << text::format_double(e.mspe) << '\n';
    }
    report_warnings(report.warnings, g, err);
    return kOk;
}

int cmd_cv(const GlobalFlags& g, const DataFlags& df, const SimFlags& sf, const FitFlags& ff, std::ostream& out,
           std::ostream& err) {
    const FitConfig cfg = config_from(ff, g.seed);
    if (!df.data.empty()) schema_from(df);
    Dataset d = load_or_simulate(df, sf, g.seed);
    if (df.standardize) d = standardize(d).first;
    Warnings warnings;
    const CvResult r = cross_validate_leaves(d, cfg.cv_folds, cfg.cv_candidates, g.seed, cfg.cv, &warnings);
    const fs::path dir = output_dir(g);
    auto o = open_output(dir / "cv.csv");
    o << "leaves,mean_error,std_error\n";
    for (std::size_t i = 0; i < r.candidates.size(); ++i)
        o << r.candidates[i] << ',' << text::format_double(r.mean_error[i]) << ','
          << text::format_double(r.std_error[i]) << '\n';
    if (!g.quiet) out << "selected leaves: " << r.selected << '\n';
    report_warnings(warnings, g, err);
    return kOk;
}

int cmd_gap(const GlobalFlags& g, const std::string& grid, std::size_t m, std::size_t reps, const SimFlags& sf,
            std::ostream& out, std::ostream& err) {
    GapOptions opts;
    opts.sigma_b2 = sf.sigma_b2;
    opts.sigma_eps2 = sf.sigma_eps2;
    const GapCurve curve = gap_experiment(parse_counts(grid, "--grid"), m, reps, g.seed, opts);
    const fs::path dir = output_dir(g);
    emit_plotdata(PlotKind::Gap, {{}, {}, &curve}, dir / "gap.csv");
    if (!g.quiet) {
        for (const auto& p : curve.points)
            out << "N=" << p.n << " gap_mean=" << text::format_double(p.gap_mean)
                << " gap_std=" << text::format_double(p.gap_std) << '\n';
        out << "log-log slope: " << text::format_double(log_log_slope(curve)) << '\n';
    }
    report_warnings(curve.warnings, g, err);
    return kOk;
}

int cmd_crosstab(const GlobalFlags& g, const std::string& model, const std::string& data, std::ostream& out) {
    const fs::path dir = output_dir(g);
    emit_plotdata(PlotKind::Crosstab, {data, model, nullptr}, dir / "crosstab.csv");
    if (!g.quiet) out << "wrote " << (dir / "crosstab.csv").string() << '\n';
    return kOk;
}

}  // namespace

void emit_plotdata(PlotKind kind, const PlotInputs& inputs, const fs::path& output) {
    if (kind == PlotKind::Gap) {
        if (inputs.gap == nullptr) throw DataError("gap plot data needs a gap curve");
        auto o = open_output(output);
        write_gap_csv(*inputs.gap, o);
        return;
    }
    if (!fs::exists(inputs.model)) throw DataError("model file '" + inputs.model.string() + "' does not exist");
    if (!fs::exists(inputs.data)) throw DataError("data file '" + inputs.data.string() + "' does not exist");
    const ModelFile f = read_model(inputs.model);
    const RegressionTree* tree = routing_tree(f.model);
    if (tree == nullptr) throw DataError("a " + model_kind(f.model) + " model has no regions");

    if (kind == PlotKind::Regions) {
        if (!has_column(inputs.data, "region_true"))
            throw DataError("'" + inputs.data.string() + "' has no region_true column");
        const Dataset d = load_with_model_schema(inputs.data, f, "region_true");
        const RegionAssignment r = assign_regions(*tree, routed_design(d, f));
        auto o = open_output(output);
        for (const auto& c : f.schema.x_cols) o << c << ',';
        o << "region_true,region_tree\n";
        for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
            for (Eigen::Index j = 1; j < d.X.cols(); ++j) o << text::format_double(d.X(i, j)) << ',';
            o << text::format_double(d.y(i)) << ',' << r.region[static_cast<std::size_t>(i)] + 1 << '\n';
        }
        return;
    }

    if (!f.schema.group_col) throw DataError("crosstab needs a model fit with a group column");
    const Dataset d = load_with_model_schema(inputs.data, f, f.schema.y_col);
    const RegionAssignment r = assign_regions(*tree, routed_design(d, f));
    // Rows of groups the model never saw get their own trailing columns.
    std::vector<std::string> labels = f.group_levels;
    std::vector<int> groups = d.group;
    {
        std::ifstream in(inputs.data);
        CsvSchema s = f.schema;
        const Dataset own = read_csv(in, s);
        for (std::size_t i = 0; i < groups.size(); ++i) {
            if (groups[i] >= 0) continue;
            const std::string& label = own.group_levels[static_cast<std::size_t>(own.group[i])];
            auto it = std::find(labels.begin(), labels.end(), label);
            if (it == labels.end()) {
                labels.push_back(label);
                it = labels.end() - 1;
            }
            groups[i] = static_cast<int>(it - labels.begin());
        }
    }
    Crosstab t = crosstab_regions(r.region, groups, tree->leaf_count(), labels.size());
    t.group_labels = labels;
    auto o = open_output(output);
    write_crosstab_csv(t, o);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tree-informed mixed models for clustered data", "gtimm"};
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1, 1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--seed", g.seed, "seed for every random draw");
    app.add_option("--config", g.config, "key=value file of defaults; explicit flags win");
    app.add_option("--out", g.out, "output directory (predict: a .csv path is also accepted)");
    app.add_flag("--quiet", g.quiet, "suppress progress and warnings");

    DataFlags df;
    SimFlags sf;
    FitFlags ff;
    BaselineFlags bf;
    std::string design = "default";
    std::string model_kind_flag = "gtimm";
    std::string model_path, data_path;
    bool no_random = false;
    double train_fraction = 0.8;
    std::string grid = "500,1000,2000,4000,8000";
    std::size_t gap_m = 4, reps = 20;

    auto* sim = app.add_subcommand("simulate", "simulate the four-cluster design (sim.csv, sim_truth.csv)");
    add_sim_flags(sim, sf);
    sim->add_option("--design", design, "default (region-specific coefficients) or common");

    auto* fit = app.add_subcommand("fit", "fit a model (model.txt, train_log.csv)");
    add_data_flags(fit, df, true);
    add_fit_flags(fit, ff);
    add_baseline_flags(fit, bf);
    fit->add_option("--model-kind", model_kind_flag, "gtimm, lmm, tree or forest");

    auto* pred = app.add_subcommand("predict", "predict with a saved model (pred.csv)");
    pred->add_option("--model", model_path, "model file")->required();
    pred->add_option("--data", data_path, "input CSV")->required();
    pred->add_flag("--no-random", no_random, "leave out the random effects");

    auto* bench = app.add_subcommand("benchmark", "test MSPE of GTIMM, LMM, tree and forest (benchmark.csv)");
    add_data_flags(bench, df, false);
    add_sim_flags(bench, sf);
    add_fit_flags(bench, ff);
    add_baseline_flags(bench, bf);
    bench->add_option("--train-fraction", train_fraction, "share of each group used for training");

    auto* cv = app.add_subcommand("cv-leaves", "cross-validated number of leaves (cv.csv)");
    add_data_flags(cv, df, false);
    add_sim_flags(cv, sf);
    add_fit_flags(cv, ff);

    auto* gap = app.add_subcommand("gap-scaling", "MSPE gap between GTIMM and LMM against N (gap.csv)");
    gap->add_option("--grid", grid, "comma-separated training sizes, multiples of 4");
    gap->add_option("--m", gap_m, "number of leaves");
    gap->add_option("--replications", reps, "replications per N");
    gap->add_option("--sigma-b2", sf.sigma_b2, "random-effect variance");
    gap->add_option("--sigma-eps2", sf.sigma_eps2, "residual variance");

    auto* xt = app.add_subcommand("crosstab", "region by group counts (crosstab.csv)");
    xt->add_option("--model", model_path, "model file")->required();
    xt->add_option("--data", data_path, "input CSV")->required();

    // Every flag shows a default in --help; subcommand help also lists the
    // global flags, which CLI11 would otherwise show only at the top level.
    auto show_defaults = [](CLI::App* a) {
        for (CLI::Option* o : a->get_options()) {
            if (o->get_name() == "--help" || o->get_required() || !o->get_default_str().empty()) continue;
            o->default_str(o->get_expected_min() == 0 ? "false" : "\"\"");
        }
    };
    show_defaults(&app);
    std::ostringstream globals;
    globals << "Global options (before or after the subcommand):\n";
    for (const CLI::Option* o : app.get_options()) {
        if (o->get_name() == "--help") continue;
        globals << "  " << o->get_name() << " [" << o->get_default_str() << "]  " << o->get_description() << '\n';
    }
    for (CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; })) {
        show_defaults(s);
        s->footer(globals.str());
    }

    try {
        std::vector<std::string> argv = args;
        if (auto cfg = find_config(args)) {
            // Config entries go right after the subcommand name so later
            // explicit flags override them.
            const auto extra = config_arguments(*cfg);
            auto it = std::find_if(argv.begin(), argv.end(), [&](const std::string& a) {
                for (const auto* s : app.get_subcommands([](const CLI::App*) { return true; }))
                    if (a == s->get_name()) return true;
                return false;
            });
            if (it != argv.end()) argv.insert(it + 1, extra.begin(), extra.end());
        }
        std::reverse(argv.begin(), argv.end());
        try {
            app.parse(argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kOk : kUsage;
        }

        if (sim->parsed()) return cmd_simulate(g, sf, design, out);
        if (fit->parsed()) return cmd_fit(g, df, ff, bf, model_kind_flag, out, err);
        if (pred->parsed()) return cmd_predict(g, model_path, data_path, no_random, out, err);
        if (bench->parsed()) return cmd_benchmark(g, df, sf, ff, bf, train_fraction, out, err);
        if (cv->parsed()) return cmd_cv(g, df, sf, ff, out, err);
        if (gap->parsed()) return cmd_gap(g, grid, gap_m, reps, sf, out, err);
        if (xt->parsed()) return cmd_crosstab(g, model_path, data_path, out);
        err << app.help();
        return kUsage;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << " (row " << e.row() << ", column '" << e.column() << "')\n";
        return kDataError;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumericalError;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::out_of_range& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace gtimm::cli
