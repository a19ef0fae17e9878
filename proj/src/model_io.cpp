#include "gtimm/model_io.hpp"

#include "gtimm/errors.hpp"
#include "gtimm/text.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace gtimm {

namespace {

constexpr const char* kMagic = "gtimm-model 1";

std::string num(double v) { return text::format_double(v); }

void write_names(std::ostream& out, const char* key, const std::vector<std::string>& names) {
    out << key << ' ' << names.size() << '\n';
    for (const auto& n : names) out << n << '\n';
}

void write_vector_line(std::ostream& out, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << num(v(i));
    out << '\n';
}

void write_variance(std::ostream& out, double sigma_b2, double sigma_eps2) {
    out << "[variance]\nsigma_b2 " << num(sigma_b2) << "\nsigma_eps2 " << num(sigma_eps2) << '\n';
}

void write_tree(std::ostream& out, const RegressionTree& t) { out << "[tree]\n" << t.to_text(); }

// Line cursor over the whole file.
class Reader {
public:
    explicit Reader(std::istream& in) {
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines_.push_back(std::move(line));
        }
    }

    bool done() const { return pos_ >= lines_.size(); }

    const std::string& next(const char* what) {
        if (done()) throw DataError(std::string("model file ends before ") + what);
        return lines_[pos_++];
    }

    const std::string& peek() const { return lines_.at(pos_); }

    void section(const std::string& name) {
        const std::string& l = next(("[" + name + "]").c_str());
        if (l != "[" + name + "]")
            throw DataError("model file: expected [" + name + "] on line " + std::to_string(pos_) + ", found '" + l +
                            "'");
    }

    // "key value" line; returns value.
    std::string keyed(const std::string& key) {
        const std::string& l = next(key.c_str());
        if (l.rfind(key + ' ', 0) != 0 && l != key)
            throw DataError("model file: expected '" + key + "' on line " + std::to_string(pos_));
        return l.size() > key.size() ? l.substr(key.size() + 1) : std::string();
    }

    double keyed_double(const std::string& key) { return to_double(keyed(key)); }

    std::size_t keyed_count(const std::string& key) { return to_count(keyed(key)); }

    std::vector<std::string> names(const std::string& key) {
        const std::size_t k = keyed_count(key);
        std::vector<std::string> out;
        for (std::size_t i = 0; i < k; ++i) out.push_back(next(key.c_str()));
        return out;
    }

    Eigen::VectorXd vector_line(std::size_t expected) {
        const auto parts = text::split(text::trim(next("a vector")), ' ');
        Eigen::VectorXd v(static_cast<Eigen::Index>(expected));
        if (expected == 0) return v;
        if (parts.size() != expected)
            throw DataError("model file: line " + std::to_string(pos_) + " has " + std::to_string(parts.size()) +
                            " values, expected " + std::to_string(expected));
        for (std::size_t i = 0; i < expected; ++i) v(static_cast<Eigen::Index>(i)) = to_double(parts[i]);
        return v;
    }

    RegressionTree tree() {
        section("tree");
        std::ostringstream block;
        while (!done() && !peek().starts_with("[")) block << next("tree") << '\n';
        std::istringstream in(block.str());
        return RegressionTree::from_text(in);
    }

    double to_double(const std::string& s) const {
        auto v = text::parse_finite(s);
        if (!v) throw DataError("model file: bad number '" + s + "' near line " + std::to_string(pos_));
        return *v;
    }

    std::size_t to_count(const std::string& s) const {
        auto v = text::parse_integer(s);
        if (!v || *v < 0) throw DataError("model file: bad count '" + s + "' near line " + std::to_string(pos_));
        return static_cast<std::size_t>(*v);
    }

private:
    std::vector<std::string> lines_;
    std::size_t pos_ = 0;
};

std::pair<std::size_t, std::size_t> two_counts(Reader& r, const std::string& line) {
    const auto parts = text::split(text::trim(line), ' ');
    if (parts.size() != 2) throw DataError("model file: expected two counts, found '" + line + "'");
    return {r.to_count(parts[0]), r.to_count(parts[1])};
}

}  // namespace

std::string model_kind(const AnyModel& m) {
    static const char* kinds[] = {"gtimm", "lmm", "tree", "forest"};
    return kinds[m.index()];
}

void write_model(const ModelFile& f, std::ostream& out) {
    out << kMagic << "\n[kind]\n" << model_kind(f.model) << '\n';

    out << "[schema]\ny " << f.schema.y_col << '\n';
    write_names(out, "x", f.schema.x_cols);
    out << "group " << (f.schema.group_col ? 1 : 0) << '\n';
    if (f.schema.group_col) out << *f.schema.group_col << '\n';
    write_names(out, "z", f.schema.z_cols);
    write_names(out, "levels", f.group_levels);

    if (const auto* g = std::get_if<GtimmModel>(&f.model)) {
        out << "[family]\n" << g->family.name() << ' ' << num(g->family.dispersion()) << '\n';
        write_tree(out, g->tree);
        out << "[beta_star]\n" << g->beta_star.rows() << ' ' << g->beta_star.cols() << '\n';
        for (Eigen::Index i = 0; i < g->beta_star.rows(); ++i) write_vector_line(out, g->beta_star.row(i).transpose());
        out << "[b_hat]\n" << g->b_hat.size() << '\n';
        write_vector_line(out, g->b_hat);
        write_variance(out, g->sigma_b2, g->sigma_eps2);
    } else if (const auto* l = std::get_if<LmmModel>(&f.model)) {
        out << "[beta]\n" << l->beta.size() << '\n';
        write_vector_line(out, l->beta);
        out << "[b_hat]\n" << l->b_tilde.size() << '\n';
        write_vector_line(out, l->b_tilde);
        write_variance(out, l->sigma_b2, l->sigma_eps2);
    } else if (const auto* t = std::get_if<RegressionTree>(&f.model)) {
        write_tree(out, *t);
    } else {
        const auto& fo = std::get<ForestModel>(f.model);
        out << "[forest]\ntrees " << fo.trees.size() << "\nfeatures_per_split " << fo.features_per_split
            << "\nbootstrap " << (fo.bootstrap ? 1 : 0) << '\n';
        for (const auto& tr : fo.trees) write_tree(out, tr);
    }

    out << "[standardization]\n";
    if (!f.standardization) {
        out << "none\n";
    } else {
        const auto& s = *f.standardization;
        out << "y " << num(s.y.mean) << ' ' << num(s.y.sd) << "\nx " << s.x.size() << '\n';
        for (const auto& c : s.x) out << num(c.mean) << ' ' << num(c.sd) << '\n';
    }
    out << "[end]\n";
}

void write_model(const ModelFile& f, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    write_model(f, out);
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

ModelFile read_model(std::istream& in) {
    Reader r(in);
    if (r.next("the header") != kMagic) throw DataError("not a model file (missing '" + std::string(kMagic) + "')");
    r.section("kind");
    const std::string kind = r.next("the model kind");

    ModelFile f;
    r.section("schema");
    f.schema.y_col = r.keyed("y");
    f.schema.x_cols = r.names("x");
    const std::size_t has_group = r.keyed_count("group");
    if (has_group > 1) throw DataError("model file: group flag must be 0 or 1");
    if (has_group) f.schema.group_col = r.next("the group column name");
    f.schema.z_cols = r.names("z");
    f.group_levels = r.names("levels");

    if (kind == "gtimm") {
        GtimmModel g;
        r.section("family");
        const auto fam = text::split(r.next("the family"), ' ');
        if (fam.size() != 2) throw DataError("model file: family line must be '<name> <dispersion>'");
        try {
            g.family = LinkFamily::from_name(fam[0], r.to_double(fam[1]));
        } catch (const std::invalid_argument& e) {
            throw DataError(std::string("model file: ") + e.what());
        }
        g.tree = r.tree();
        r.section("beta_star");
        const auto [p, m] = two_counts(r, r.next("beta_star dimensions"));
        g.beta_star.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
        for (std::size_t i = 0; i < p; ++i) g.beta_star.row(static_cast<Eigen::Index>(i)) = r.vector_line(m);
        r.section("b_hat");
        g.b_hat = r.vector_line(r.to_count(r.next("b_hat length")));
        r.section("variance");
        g.sigma_b2 = r.keyed_double("sigma_b2");
        g.sigma_eps2 = r.keyed_double("sigma_eps2");
        try {
            check_model(g);
        } catch (const std::invalid_argument& e) {
            throw DataError(std::string("model file: ") + e.what());
        }
        f.model = std::move(g);
    } else if (kind == "lmm") {
        LmmModel l;
        r.section("beta");
        l.beta = r.vector_line(r.to_count(r.next("beta length")));
        r.section("b_hat");
        l.b_tilde = r.vector_line(r.to_count(r.next("b_hat length")));
        r.section("variance");
        l.sigma_b2 = r.keyed_double("sigma_b2");
        l.sigma_eps2 = r.keyed_double("sigma_eps2");
        f.model = std::move(l);
    } else if (kind == "tree") {
        f.model = r.tree();
    } else if (kind == "forest") {
        ForestModel fo;
        r.section("forest");
        const std::size_t n_trees = r.keyed_count("trees");
        fo.features_per_split = r.keyed_count("features_per_split");
        fo.bootstrap = r.keyed_count("bootstrap") != 0;
        for (std::size_t t = 0; t < n_trees; ++t) fo.trees.push_back(r.tree());
        f.model = std::move(fo);
    } else {
        throw DataError("model file: unknown model kind '" + kind + "'");
    }

    r.section("standardization");
    const std::string first = r.next("standardization");
    if (first != "none") {
        StandardizationParams s;
        const auto y = text::split(first, ' ');
        if (y.size() != 3 || y[0] != "y") throw DataError("model file: bad standardization line '" + first + "'");
        s.y = {r.to_double(y[1]), r.to_double(y[2])};
        const std::size_t k = r.keyed_count("x");
        for (std::size_t i = 0; i < k; ++i) {
            const auto v = r.vector_line(2);
            s.x.push_back({v(0), v(1)});
        }
        f.standardization = std::move(s);
    }
    r.section("end");
    return f;
}

ModelFile read_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file '" + path.string() + "'");
    return read_model(in);
}

}  // namespace gtimm
