#include "gtimm/dataset.hpp"

#include "gtimm/errors.hpp"
#include "gtimm/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gtimm {

namespace {

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawTable read_table(std::istream& in) {
    RawTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input: no header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
    }
    for (auto& h : text::split_csv_line(line)) table.header.emplace_back(text::trim(h));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        auto fields = text::split_csv_line(line);
        if (fields.size() != table.header.size()) {
            throw ParseError("row " + std::to_string(table.rows.size() + 1) + " (line " +
                                 std::to_string(line_no) + "): expected " +
                                 std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             table.rows.size() + 1, "");
        }
        table.rows.push_back(std::move(fields));
    }
    if (table.rows.empty()) throw DataError("CSV input has a header but no data rows");
    return table;
}

std::size_t column_index(const RawTable& t, const std::string& name) {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw SchemaError("column '" + name + "' not found in CSV header");
    return static_cast<std::size_t>(it - t.header.begin());
}

double numeric_cell(const RawTable& t, std::size_t row, std::size_t col) {
    const auto& cell = t.rows[row][col];
    auto v = text::parse_finite(cell);
    if (!v) {
        const std::string shown = text::trim(cell).empty() ? "missing value" : "'" + cell + "'";
        throw ParseError("row " + std::to_string(row + 1) + ", column '" + t.header[col] +
                             "': " + shown + " is not a finite number",
                         row + 1, t.header[col]);
    }
    return *v;
}

std::string label_cell(const RawTable& t, std::size_t row, std::size_t col) {
    std::string label(text::trim(t.rows[row][col]));
    if (label.empty()) {
        throw ParseError("row " + std::to_string(row + 1) + ", column '" + t.header[col] +
                             "': missing group label",
                         row + 1, t.header[col]);
    }
    return label;
}

// Integer-looking labels sort numerically, anything else lexicographically.
std::vector<std::string> sorted_levels(std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    const bool numeric = std::all_of(labels.begin(), labels.end(),
                                     [](const std::string& s) { return text::parse_integer(s).has_value(); });
    if (numeric) {
        std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
            return *text::parse_integer(a) < *text::parse_integer(b);
        });
    }
    return labels;
}

void check_schema(const CsvSchema& schema) {
    if (schema.y_col.empty()) throw SchemaError("schema names no response column");
    if (schema.x_cols.empty()) throw SchemaError("schema names no predictor columns");
    if (schema.group_col && !schema.z_cols.empty())
        throw SchemaError("schema declares both a group column and explicit Z columns");
    if (!schema.group_col && schema.z_cols.empty())
        throw SchemaError("schema needs a group column or explicit Z columns");
}

// Fills y, X and names; Z/group are left to the caller.
Dataset fill_fixed_part(const RawTable& t, const CsvSchema& schema, bool require_y) {
    Dataset d;
    const std::size_t n = t.rows.size();
    const std::size_t p = schema.x_cols.size() + 1;
    d.y_name = schema.y_col;
    d.x_names.push_back(kInterceptName);
    for (const auto& c : schema.x_cols) d.x_names.push_back(c);

    std::vector<std::size_t> xcol;
    for (const auto& c : schema.x_cols) xcol.push_back(column_index(t, c));
    std::optional<std::size_t> ycol;
    if (require_y) {
        ycol = column_index(t, schema.y_col);
    } else if (std::find(t.header.begin(), t.header.end(), schema.y_col) != t.header.end()) {
        ycol = column_index(t, schema.y_col);
    }

    d.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (ycol) d.y(r) = numeric_cell(t, i, *ycol);
        d.X(r, 0) = 1.0;
        for (std::size_t j = 0; j < xcol.size(); ++j)
            d.X(r, static_cast<Eigen::Index>(j + 1)) = numeric_cell(t, i, xcol[j]);
    }
    return d;
}

void fill_explicit_z(Dataset& d, const RawTable& t, const CsvSchema& schema) {
    const std::size_t n = t.rows.size();
    std::vector<std::size_t> zcol;
    for (const auto& c : schema.z_cols) zcol.push_back(column_index(t, c));
    d.z_names = schema.z_cols;
    d.Z.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(zcol.size()));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < zcol.size(); ++j)
            d.Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = numeric_cell(t, i, zcol[j]);
}

}  // namespace

void validate(const Dataset& d, bool require_intercept) {
    const auto n = d.y.size();
    if (n < 1) throw DataError("dataset has no observations");
    if (d.X.rows() != n || d.Z.rows() != n)
        throw DataError("y, X and Z must have the same number of rows");
    if (d.X.cols() < 1) throw DataError("X has no columns");
    if (d.Z.cols() < 1) throw DataError("Z must have at least one column");
    if (!d.y.allFinite()) throw DataError("y contains non-finite values");
    if (!d.X.allFinite()) throw DataError("X contains non-finite values");
    if (!d.Z.allFinite()) throw DataError("Z contains non-finite values");
    if (require_intercept && !(d.X.col(0).array() == 1.0).all())
        throw DataError("X column 0 must be the constant intercept column");
    if (d.has_groups()) {
        if (d.group.size() != static_cast<std::size_t>(n))
            throw DataError("group label vector length differs from N");
        for (Eigen::Index i = 0; i < n; ++i) {
            const int g = d.group[static_cast<std::size_t>(i)];
            if (g < 0 || g >= d.Z.cols()) throw DataError("group index out of range");
            if (d.Z.row(i).sum() != 1.0 || d.Z(i, g) != 1.0)
                throw DataError("row " + std::to_string(i + 1) + " of one-hot Z does not sum to 1");
        }
    }
}

Eigen::MatrixXd one_hot(const std::vector<int>& group, std::size_t levels) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(group.size()),
                                              static_cast<Eigen::Index>(levels));
    for (std::size_t i = 0; i < group.size(); ++i) {
        const int g = group[i];
        if (g >= 0 && static_cast<std::size_t>(g) < levels) z(static_cast<Eigen::Index>(i), g) = 1.0;
    }
    return z;
}

Dataset make_dataset(const Eigen::VectorXd& y, const Eigen::MatrixXd& predictors,
                     const std::vector<int>& group, std::size_t levels) {
    Dataset d;
    const auto n = y.size();
    d.y = y;
    d.X.resize(n, predictors.cols() + 1);
    d.X.col(0).setOnes();
    d.X.rightCols(predictors.cols()) = predictors;
    d.group = group;
    d.Z = one_hot(group, levels);
    d.x_names.push_back(kInterceptName);
    for (Eigen::Index j = 0; j < predictors.cols(); ++j) d.x_names.push_back("x" + std::to_string(j + 1));
    d.group_name = "group";
    for (std::size_t g = 0; g < levels; ++g) d.group_levels.push_back(std::to_string(g + 1));
    return d;
}

Dataset subset_rows(const Dataset& d, const std::vector<std::size_t>& rows) {
    Dataset out;
    const auto n = static_cast<Eigen::Index>(rows.size());
    out.y.resize(n);
    out.X.resize(n, d.X.cols());
    out.Z.resize(n, d.Z.cols());
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
        out.y(k) = d.y(i);
        out.X.row(k) = d.X.row(i);
        out.Z.row(k) = d.Z.row(i);
        if (d.has_groups()) out.group.push_back(d.group[static_cast<std::size_t>(i)]);
    }
    out.y_name = d.y_name;
    out.x_names = d.x_names;
    out.group_name = d.group_name;
    out.group_levels = d.group_levels;
    out.z_names = d.z_names;
    return out;
}

std::vector<int> group_indices(const Dataset& d) {
    if (d.has_groups()) return d.group;
    std::vector<int> g(d.n(), -1);
    for (Eigen::Index i = 0; i < d.Z.rows(); ++i) {
        int hot = -1;
        for (Eigen::Index j = 0; j < d.Z.cols(); ++j) {
            const double v = d.Z(i, j);
            if (v == 1.0 && hot < 0) {
                hot = static_cast<int>(j);
            } else if (v != 0.0) {
                return {};
            }
        }
        if (hot < 0) return {};
        g[static_cast<std::size_t>(i)] = hot;
    }
    return g;
}

Dataset read_csv(std::istream& in, const CsvSchema& schema) {
    check_schema(schema);
    const RawTable t = read_table(in);
    Dataset d = fill_fixed_part(t, schema, true);
    if (schema.group_col) {
        const std::size_t gcol = column_index(t, *schema.group_col);
        std::vector<std::string> labels;
        labels.reserve(t.rows.size());
        for (std::size_t i = 0; i < t.rows.size(); ++i) labels.push_back(label_cell(t, i, gcol));
        d.group_levels = sorted_levels(labels);
        if (d.group_levels.size() < 2)
            throw DataError("group column '" + *schema.group_col + "' has fewer than 2 distinct groups");
        std::map<std::string, int> index;
        for (std::size_t g = 0; g < d.group_levels.size(); ++g) index[d.group_levels[g]] = static_cast<int>(g);
        for (const auto& l : labels) d.group.push_back(index.at(l));
        d.group_name = *schema.group_col;
        d.Z = one_hot(d.group, d.group_levels.size());
    } else {
        fill_explicit_z(d, t, schema);
    }
    validate(d);
    return d;
}

Dataset read_csv_like(std::istream& in, const CsvSchema& schema, const Dataset& reference,
                      bool require_y) {
    check_schema(schema);
    const RawTable t = read_table(in);
    Dataset d = fill_fixed_part(t, schema, require_y);
    if (schema.group_col) {
        const std::size_t gcol = column_index(t, *schema.group_col);
        std::map<std::string, int> index;
        for (std::size_t g = 0; g < reference.group_levels.size(); ++g)
            index[reference.group_levels[g]] = static_cast<int>(g);
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            auto it = index.find(label_cell(t, i, gcol));
            d.group.push_back(it == index.end() ? -1 : it->second);
        }
        d.group_name = *schema.group_col;
        d.group_levels = reference.group_levels;
        d.Z = one_hot(d.group, d.group_levels.size());
    } else {
        fill_explicit_z(d, t, schema);
    }
    return d;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    return read_csv(in, schema);
}

CsvSchema schema_of(const Dataset& d) {
    CsvSchema s;
    s.y_col = d.y_name;
    s.x_cols.assign(d.x_names.begin() + 1, d.x_names.end());
    if (d.has_groups()) {
        s.group_col = d.group_name;
    } else {
        s.z_cols = d.z_names;
    }
    return s;
}

void write_csv(const Dataset& d, std::ostream& out) {
    const CsvSchema s = schema_of(d);
    std::vector<std::string> header{s.y_col};
    header.insert(header.end(), s.x_cols.begin(), s.x_cols.end());
    if (s.group_col) {
        header.push_back(*s.group_col);
    } else {
        header.insert(header.end(), s.z_cols.begin(), s.z_cols.end());
    }
    out << text::join(header, ",") << '\n';
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        out << text::format_double(d.y(i));
        for (Eigen::Index j = 1; j < d.X.cols(); ++j) out << ',' << text::format_double(d.X(i, j));
        if (d.has_groups()) {
            out << ',' << d.group_levels[static_cast<std::size_t>(d.group[static_cast<std::size_t>(i)])];
        } else {
            for (Eigen::Index j = 0; j < d.Z.cols(); ++j) out << ',' << text::format_double(d.Z(i, j));
        }
        out << '\n';
    }
}

void write_csv(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    write_csv(d, out);
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

namespace {

ColumnScale column_scale(const Eigen::VectorXd& v, const std::string& name) {
    const auto n = v.size();
    if (n < 2) throw DataError("cannot standardize column '" + name + "' with fewer than 2 rows");
    ColumnScale s;
    s.mean = v.mean();
    s.sd = std::sqrt((v.array() - s.mean).square().sum() / static_cast<double>(n - 1));
    if (!(s.sd > 0.0)) throw DataError("column '" + name + "' has zero variance");
    return s;
}

}  // namespace

std::pair<Dataset, StandardizationParams> standardize(const Dataset& d) {
    StandardizationParams params;
    params.y = column_scale(d.y, d.y_name);
    for (Eigen::Index j = 1; j < d.X.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        params.x.push_back(column_scale(d.X.col(j), k < d.x_names.size() ? d.x_names[k] : "x" + std::to_string(j)));
    }
    return {apply_standardization(d, params), params};
}

Dataset apply_standardization(const Dataset& d, const StandardizationParams& params) {
    if (params.x.size() + 1 != d.p()) throw std::invalid_argument("standardization width differs from X");
    Dataset out = d;
    out.y = (d.y.array() - params.y.mean) / params.y.sd;
    for (Eigen::Index j = 1; j < d.X.cols(); ++j) {
        const auto& s = params.x[static_cast<std::size_t>(j - 1)];
        out.X.col(j) = (d.X.col(j).array() - s.mean) / s.sd;
    }
    return out;
}

Dataset destandardize(const Dataset& d, const StandardizationParams& params) {
    if (params.x.size() + 1 != d.p()) throw std::invalid_argument("standardization width differs from X");
    Dataset out = d;
    out.y = d.y.array() * params.y.sd + params.y.mean;
    for (Eigen::Index j = 1; j < d.X.cols(); ++j) {
        const auto& s = params.x[static_cast<std::size_t>(j - 1)];
        out.X.col(j) = d.X.col(j).array() * s.sd + s.mean;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

SimDesign default_design() {
    SimDesign design;
    design.coefficients.resize(3, 4);
    design.coefficients.col(0) << 2.0, 1.5, 0.5;
    design.coefficients.col(1) << -1.0, 2.5, -0.5;
    design.coefficients.col(2) << 1.0, -2.0, 1.0;
    design.coefficients.col(3) << -2.0, -1.5, -1.0;
    design.centers = {{5.0, 5.0}, {-5.0, 5.0}, {-5.0, -5.0}, {5.0, -5.0}};
    return design;
}

SimDesign common_coefficient_design(const Eigen::Vector3d& common) {
    SimDesign design = default_design();
    for (Eigen::Index m = 0; m < design.coefficients.cols(); ++m) design.coefficients.col(m) = common;
    return design;
}

std::pair<Dataset, SimTruth> simulate(const SimDesign& design, std::size_t n_total,
                                      std::uint64_t seed, double sigma_b2, double sigma_eps2) {
    const std::size_t clusters = design.centers.size();
    if (clusters == 0 || static_cast<std::size_t>(design.coefficients.cols()) != clusters)
        throw std::invalid_argument("simulation design needs one coefficient column per cluster");
    if (n_total == 0 || n_total % clusters != 0)
        throw std::invalid_argument("n_total must be a positive multiple of " + std::to_string(clusters));
    if (sigma_b2 < 0.0 || sigma_eps2 < 0.0) throw std::invalid_argument("variances must be non-negative");
    if (design.groups < 1) throw std::invalid_argument("simulation needs at least one group");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::uniform_int_distribution<int> pick_group(0, design.groups - 1);

    SimTruth truth;
    truth.beta_star = design.coefficients;
    truth.sigma_b2 = sigma_b2;
    truth.sigma_eps2 = sigma_eps2;
    truth.b.resize(design.groups);
    for (int g = 0; g < design.groups; ++g) truth.b(g) = std::sqrt(sigma_b2) * std_normal(rng);

    const auto n = static_cast<Eigen::Index>(n_total);
    Eigen::VectorXd y(n);
    Eigen::MatrixXd predictors(n, 2);
    std::vector<int> group(n_total);
    truth.region.resize(n_total);

    const std::size_t per_cluster = n_total / clusters;
    const double sd_eps = std::sqrt(sigma_eps2);
    for (std::size_t i = 0; i < n_total; ++i) {
        const std::size_t m = i / per_cluster;
        const auto r = static_cast<Eigen::Index>(i);
        const auto& c = design.centers[m];
        const double x1 = c[0] + design.cluster_sd * std_normal(rng);
        const double x2 = c[1] + design.cluster_sd * std_normal(rng);
        const int g = pick_group(rng);
        const double noise = sd_eps * std_normal(rng);
        const auto beta = design.coefficients.col(static_cast<Eigen::Index>(m));
        predictors(r, 0) = x1;
        predictors(r, 1) = x2;
        group[i] = g;
        truth.region[i] = static_cast<int>(m);
        y(r) = beta(0) + beta(1) * x1 + beta(2) * x2 + truth.b(g) + noise;
    }
    Dataset d = make_dataset(y, predictors, group, static_cast<std::size_t>(design.groups));
    return {std::move(d), std::move(truth)};
}

std::pair<Dataset, SimTruth> simulate_gtimm(std::size_t n_total, std::uint64_t seed,
                                            double sigma_b2, double sigma_eps2) {
    return simulate(default_design(), n_total, seed, sigma_b2, sigma_eps2);
}

double regional_mean(double x1, double x2, std::size_t region) {
    static const SimDesign design = default_design();
    if (region >= static_cast<std::size_t>(design.coefficients.cols()))
        throw std::invalid_argument("region " + std::to_string(region) + " out of range");
    const auto beta = design.coefficients.col(static_cast<Eigen::Index>(region));
    return beta(0) + beta(1) * x1 + beta(2) * x2;
}

void write_simulation_csv(const Dataset& d, const SimTruth& truth, std::ostream& out) {
    out << "y,x1,x2,group,region_true\n";
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        out << text::format_double(d.y(i)) << ',' << text::format_double(d.X(i, 1)) << ','
            << text::format_double(d.X(i, 2)) << ',' << d.group_levels[static_cast<std::size_t>(d.group[k])] << ','
            << truth.region[k] + 1 << '\n';
    }
}

void write_truth_csv(const SimTruth& truth, std::ostream& out) {
    out << "parameter,index,value\n";
    for (Eigen::Index m = 0; m < truth.beta_star.cols(); ++m)
        for (Eigen::Index j = 0; j < truth.beta_star.rows(); ++j)
            out << "beta" << j << ',' << m + 1 << ',' << text::format_double(truth.beta_star(j, m)) << '\n';
    for (Eigen::Index g = 0; g < truth.b.size(); ++g)
        out << "b," << g + 1 << ',' << text::format_double(truth.b(g)) << '\n';
    out << "sigma_b2,0," << text::format_double(truth.sigma_b2) << '\n';
    out << "sigma_eps2,0," << text::format_double(truth.sigma_eps2) << '\n';
}

}  // namespace gtimm
