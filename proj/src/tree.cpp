#include "gtimm/tree.hpp"

#include "gtimm/folds.hpp"
#include "gtimm/linalg.hpp"
#include "gtimm/parallel.hpp"
#include "gtimm/text.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gtimm {

// ---------------------------------------------------------------------------
// RegressionTree
// ---------------------------------------------------------------------------

RegressionTree::RegressionTree() : nodes_{TreeNode{}} { relabel(); }

RegressionTree::RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw std::invalid_argument("tree needs at least one node");
    relabel();
}

// Drops unreachable nodes and numbers leaves left to right.
void RegressionTree::relabel() {
    std::vector<TreeNode> compact;
    compact.reserve(nodes_.size());
    std::size_t leaves = 0;
    auto visit = [&](auto&& self, int id, std::size_t depth) -> int {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size() || depth > nodes_.size())
            throw std::invalid_argument("malformed tree: bad child reference");
        const int new_id = static_cast<int>(compact.size());
        compact.push_back(nodes_[static_cast<std::size_t>(id)]);
        TreeNode node = nodes_[static_cast<std::size_t>(id)];
        if (node.leaf) {
            node.region = static_cast<int>(leaves++);
            node.left = node.right = -1;
            node.feature = -1;
        } else {
            node.region = -1;
            node.left = self(self, node.left, depth + 1);
            node.right = self(self, node.right, depth + 1);
        }
        compact[static_cast<std::size_t>(new_id)] = node;
        return new_id;
    };
    visit(visit, 0, 0);
    nodes_ = std::move(compact);
    leaf_count_ = leaves;
}

int RegressionTree::max_feature() const {
    int f = 0;
    for (const auto& n : nodes_)
        if (!n.leaf) f = std::max(f, n.feature);
    return f;
}

std::size_t RegressionTree::route(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    std::size_t id = 0;
    while (!nodes_[id].leaf) {
        const auto& n = nodes_[id];
        if (n.feature >= x.size())
            throw DataError("tree splits on column " + std::to_string(n.feature) + " but the design has " +
                            std::to_string(x.size()) + " columns");
        id = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
    }
    return static_cast<std::size_t>(nodes_[id].region);
}

int RegressionTree::leaf_node(std::size_t region) const {
    for (std::size_t id = 0; id < nodes_.size(); ++id)
        if (nodes_[id].leaf && static_cast<std::size_t>(nodes_[id].region) == region) return static_cast<int>(id);
    throw std::out_of_range("region " + std::to_string(region) + " not in tree");
}

double RegressionTree::leaf_mean(std::size_t region) const {
    return nodes_[static_cast<std::size_t>(leaf_node(region))].mean;
}

RegressionTree RegressionTree::without_leaf(std::size_t region) const {
    const int leaf = leaf_node(region);
    if (leaf == 0) return *this;
    std::vector<TreeNode> nodes = nodes_;
    for (auto& parent : nodes) {
        if (parent.leaf) continue;
        if (parent.left != leaf && parent.right != leaf) continue;
        const int sibling = parent.left == leaf ? parent.right : parent.left;
        const std::size_t merged_count = parent.count;
        const double merged_mean = parent.mean;
        parent = nodes[static_cast<std::size_t>(sibling)];
        // The merged region now owns the leaf's rows as well.
        if (parent.leaf) {
            parent.count = merged_count;
            parent.mean = merged_mean;
        }
        break;
    }
    return RegressionTree(std::move(nodes));
}

std::string RegressionTree::to_text() const {
    std::ostringstream out;
    out << "nodes " << nodes_.size() << " leaves " << leaf_count_ << '\n';
    out << "# id kind feature threshold left right region count mean\n";
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const auto& n = nodes_[id];
        out << id << ' ' << (n.leaf ? "leaf" : "split") << ' ' << n.feature << ' '
            << text::format_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' ' << n.region << ' '
            << n.count << ' ' << text::format_double(n.mean) << '\n';
    }
    return out.str();
}

RegressionTree RegressionTree::from_text(std::istream& in) {
    std::string line;
    std::size_t declared = 0;
    std::vector<TreeNode> nodes;
    while (std::getline(in, line)) {
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::istringstream row{std::string(t)};
        if (t.rfind("nodes", 0) == 0) {
            std::string word;
            row >> word >> declared;
            continue;
        }
        std::size_t id = 0;
        std::string kind, threshold, mean;
        TreeNode n;
        row >> id >> kind >> n.feature >> threshold >> n.left >> n.right >> n.region >> n.count >> mean;
        if (!row || id != nodes.size() || (kind != "leaf" && kind != "split"))
            throw DataError("malformed tree line: '" + line + "'");
        auto th = text::parse_finite(threshold);
        auto mu = text::parse_finite(mean);
        if (!th || !mu) throw DataError("malformed number in tree line: '" + line + "'");
        n.leaf = kind == "leaf";
        n.threshold = *th;
        n.mean = *mu;
        nodes.push_back(n);
        if (nodes.size() == declared) break;
    }
    if (nodes.empty() || nodes.size() != declared) throw DataError("tree block is truncated");
    try {
        return RegressionTree(std::move(nodes));
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Growth
// ---------------------------------------------------------------------------

namespace {

struct SplitCandidate {
    bool valid = false;
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

struct OpenLeaf {
    int node = 0;
    std::vector<std::size_t> positions;  // indices into the `rows` argument
    SplitCandidate best;
};

std::vector<int> candidate_features(int predictors, std::size_t per_split, std::mt19937_64* rng) {
    std::vector<int> all(static_cast<std::size_t>(predictors));
    std::iota(all.begin(), all.end(), 1);
    if (per_split == 0 || per_split >= all.size() || rng == nullptr) return all;
    std::vector<int> chosen;
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), static_cast<std::ptrdiff_t>(per_split), *rng);
    return chosen;  // std::sample keeps ascending order
}

// Exact search over midpoints of consecutive distinct values. Gain is the SSE
// reduction n_L n_R / n (mean_L - mean_R)^2, computed on centered responses.
SplitCandidate best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<std::size_t>& rows,
                          const std::vector<std::size_t>& positions, std::size_t min_leaf,
                          const std::vector<int>& features) {
    SplitCandidate best;
    const std::size_t n = positions.size();
    if (n < 2 * min_leaf || n < 2) return best;

    double mean = 0.0, sum_sq = 0.0;
    for (std::size_t pos : positions) mean += y(static_cast<Eigen::Index>(rows[pos]));
    mean /= static_cast<double>(n);
    double sse = 0.0;
    for (std::size_t pos : positions) {
        const double v = y(static_cast<Eigen::Index>(rows[pos]));
        sse += (v - mean) * (v - mean);
        sum_sq += v * v;
    }
    if (sse <= 1e-20 * (sum_sq + 1.0)) return best;
    const double min_gain = 1e-12 * sse;

    std::vector<std::pair<double, double>> sorted(n);
    for (int f : features) {
        for (std::size_t k = 0; k < n; ++k) {
            const auto r = static_cast<Eigen::Index>(rows[positions[k]]);
            sorted[k] = {X(r, f), y(r) - mean};
        }
        std::sort(sorted.begin(), sorted.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        double left_sum = 0.0;
        for (std::size_t k = 1; k < n; ++k) {
            left_sum += sorted[k - 1].second;
            const std::size_t n_left = k, n_right = n - k;
            if (n_left < min_leaf || n_right < min_leaf) continue;
            if (!(sorted[k - 1].first < sorted[k].first)) continue;
            const double gain = left_sum * left_sum * static_cast<double>(n) /
                                (static_cast<double>(n_left) * static_cast<double>(n_right));
            if (gain > min_gain && gain > best.gain) {
                double threshold = 0.5 * (sorted[k - 1].first + sorted[k].first);
                if (!(threshold < sorted[k].first)) threshold = sorted[k - 1].first;
                best = {true, gain, f, threshold};
            }
        }
    }
    return best;
}

}  // namespace

GrownTree grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<std::size_t>& rows,
                    const TreeOptions& options, std::mt19937_64* rng) {
    if (options.max_leaves < 1) throw std::invalid_argument("max_leaves must be at least 1");
    if (options.min_leaf < 1) throw std::invalid_argument("min_leaf must be at least 1");
    if (rows.empty()) throw std::invalid_argument("cannot grow a tree on zero rows");
    const int predictors = static_cast<int>(X.cols()) - 1;

    std::vector<TreeNode> nodes(1);
    auto stats = [&](const std::vector<std::size_t>& positions, TreeNode& node) {
        double s = 0.0;
        for (std::size_t pos : positions) s += y(static_cast<Eigen::Index>(rows[pos]));
        node.count = positions.size();
        node.mean = positions.empty() ? 0.0 : s / static_cast<double>(positions.size());
    };

    std::vector<OpenLeaf> open;
    {
        OpenLeaf root;
        root.positions.resize(rows.size());
        std::iota(root.positions.begin(), root.positions.end(), std::size_t{0});
        stats(root.positions, nodes[0]);
        if (options.max_leaves > 1 && predictors > 0)
            root.best = best_split(X, y, rows, root.positions, options.min_leaf,
                                   candidate_features(predictors, options.features_per_split, rng));
        open.push_back(std::move(root));
    }

    std::size_t leaves = 1;
    while (leaves < options.max_leaves) {
        // Global best split; ties go to the earliest-created leaf.
        std::size_t pick = open.size();
        for (std::size_t k = 0; k < open.size(); ++k) {
            if (!open[k].best.valid) continue;
            if (pick == open.size() || open[k].best.gain > open[pick].best.gain ||
                (open[k].best.gain == open[pick].best.gain && open[k].node < open[pick].node))
                pick = k;
        }
        if (pick == open.size()) break;

        OpenLeaf parent = std::move(open[pick]);
        open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));

        OpenLeaf left, right;
        for (std::size_t pos : parent.positions) {
            const double v = X(static_cast<Eigen::Index>(rows[pos]), parent.best.feature);
            (v <= parent.best.threshold ? left : right).positions.push_back(pos);
        }
        left.node = static_cast<int>(nodes.size());
        right.node = left.node + 1;
        nodes.resize(nodes.size() + 2);
        TreeNode& pn = nodes[static_cast<std::size_t>(parent.node)];
        pn.leaf = false;
        pn.feature = parent.best.feature;
        pn.threshold = parent.best.threshold;
        pn.left = left.node;
        pn.right = right.node;
        stats(left.positions, nodes[static_cast<std::size_t>(left.node)]);
        stats(right.positions, nodes[static_cast<std::size_t>(right.node)]);
        ++leaves;

        if (leaves < options.max_leaves) {
            for (OpenLeaf* child : {&left, &right})
                child->best = best_split(X, y, rows, child->positions, options.min_leaf,
                                         candidate_features(predictors, options.features_per_split, rng));
        }
        open.push_back(std::move(left));
        open.push_back(std::move(right));
    }

    // Leaf node ids before relabeling; RegressionTree numbers regions left to right.
    GrownTree out{RegressionTree(nodes), {}};
    std::vector<int> region_of_node(nodes.size(), -1);
    {
        int next = 0;
        auto visit = [&](auto&& self, int id) -> void {
            const auto& n = nodes[static_cast<std::size_t>(id)];
            if (n.leaf) {
                region_of_node[static_cast<std::size_t>(id)] = next++;
                return;
            }
            self(self, n.left);
            self(self, n.right);
        };
        visit(visit, 0);
    }
    out.assignment.region.assign(rows.size(), -1);
    out.assignment.counts.assign(out.tree.leaf_count(), 0);
    for (const auto& leaf : open) {
        const int region = region_of_node[static_cast<std::size_t>(leaf.node)];
        for (std::size_t pos : leaf.positions) out.assignment.region[pos] = region;
        out.assignment.counts[static_cast<std::size_t>(region)] += leaf.positions.size();
    }
    return out;
}

RegressionTree fit_tree(const Dataset& d, std::size_t max_leaves, std::size_t min_leaf) {
    if (max_leaves < 1) throw std::invalid_argument("max_leaves must be at least 1");
    std::vector<std::size_t> rows(d.n());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return grow_tree(d.X, d.y, rows, TreeOptions{max_leaves, min_leaf, 0}).tree;
}

RegionAssignment assign_regions(const RegressionTree& tree, const Eigen::MatrixXd& X) {
    if (tree.max_feature() >= X.cols())
        throw DataError("tree splits on column " + std::to_string(tree.max_feature()) + " but the design has " +
                        std::to_string(X.cols()) + " columns");
    RegionAssignment a;
    a.region.resize(static_cast<std::size_t>(X.rows()));
    a.counts.assign(tree.leaf_count(), 0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const std::size_t m = tree.route(X.row(i));
        a.region[static_cast<std::size_t>(i)] = static_cast<int>(m);
        ++a.counts[m];
    }
    return a;
}

Eigen::VectorXd predict_tree(const RegressionTree& tree, const Eigen::MatrixXd& X) {
    std::vector<double> means(tree.leaf_count());
    for (std::size_t m = 0; m < means.size(); ++m) means[m] = tree.leaf_mean(m);
    const RegionAssignment a = assign_regions(tree, X);
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = means[static_cast<std::size_t>(a.region[static_cast<std::size_t>(i)])];
    return out;
}

double within_leaf_sse(const RegressionTree& tree, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    return (y - predict_tree(tree, X)).squaredNorm();
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

namespace {

double out_of_fold_mse(const Dataset& d, const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                       std::size_t leaves, const CvOptions& options) {
    const GrownTree grown = grow_tree(d.X, d.y, train, TreeOptions{leaves, options.min_leaf, 0});
    const std::size_t M = grown.tree.leaf_count();

    std::vector<Eigen::VectorXd> coef(M);
    if (options.score == CvScore::RegionLinear) {
        for (std::size_t m = 0; m < M; ++m) {
            const auto n_m = static_cast<Eigen::Index>(grown.assignment.counts[m]);
            Eigen::MatrixXd A(n_m, d.X.cols());
            Eigen::VectorXd b(n_m);
            Eigen::Index k = 0;
            for (std::size_t pos = 0; pos < train.size(); ++pos) {
                if (static_cast<std::size_t>(grown.assignment.region[pos]) != m) continue;
                A.row(k) = d.X.row(static_cast<Eigen::Index>(train[pos]));
                b(k) = d.y(static_cast<Eigen::Index>(train[pos]));
                ++k;
            }
            coef[m] = least_squares(A, b);
        }
    }

    double sse = 0.0;
    for (std::size_t r : test) {
        const auto i = static_cast<Eigen::Index>(r);
        const std::size_t m = grown.tree.route(d.X.row(i));
        const double pred = options.score == CvScore::RegionLinear ? d.X.row(i).dot(coef[m]) : grown.tree.leaf_mean(m);
        sse += (d.y(i) - pred) * (d.y(i) - pred);
    }
    return sse / static_cast<double>(test.size());
}

}  // namespace

CvResult cross_validate_leaves(const Dataset& d, std::size_t folds, std::vector<std::size_t> candidates,
                               std::uint64_t seed, const CvOptions& options, Warnings* warnings) {
    if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
    if (candidates.empty()) throw std::invalid_argument("no candidate leaf counts");
    for (std::size_t c : candidates)
        if (c < 1) throw std::invalid_argument("candidate leaf counts must be at least 1");
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    CvResult result;
    result.candidates = candidates;
    if (candidates.size() == 1) {
        result.selected = candidates.front();
        result.mean_error.assign(1, 0.0);
        result.std_error.assign(1, 0.0);
        return result;
    }

    const std::vector<int> fold = assign_folds(group_indices(d), d.n(), folds, seed, warnings);
    std::vector<std::vector<std::size_t>> train(folds), test(folds);
    for (std::size_t i = 0; i < d.n(); ++i) {
        for (std::size_t k = 0; k < folds; ++k) (static_cast<std::size_t>(fold[i]) == k ? test : train)[k].push_back(i);
    }

    const std::size_t C = candidates.size();
    std::vector<double> err(C * folds, 0.0);
    parallel_for(C * folds, [&](std::size_t cell) {
        const std::size_t c = cell / folds, k = cell % folds;
        err[cell] = out_of_fold_mse(d, train[k], test[k], candidates[c], options);
    });

    result.mean_error.resize(C);
    result.std_error.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t k = 0; k < folds; ++k) mean += err[c * folds + k];
        mean /= static_cast<double>(folds);
        double var = 0.0;
        for (std::size_t k = 0; k < folds; ++k) var += (err[c * folds + k] - mean) * (err[c * folds + k] - mean);
        var /= static_cast<double>(folds - 1);
        result.mean_error[c] = mean;
        result.std_error[c] = std::sqrt(var / static_cast<double>(folds));
    }

    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
        if (result.mean_error[c] < result.mean_error[best]) best = c;
    std::size_t chosen = best;
    if (options.one_se_rule) {
        const double bound = result.mean_error[best] + result.std_error[best];
        for (std::size_t c = 0; c < best; ++c) {
            if (result.mean_error[c] <= bound) {
                chosen = c;
                break;
            }
        }
    }
    result.selected = candidates[chosen];
    return result;
}

std::size_t select_leaves_cv(const Dataset& d, std::size_t folds, const std::vector<std::size_t>& candidates,
                             std::uint64_t seed, Warnings* warnings) {
    return cross_validate_leaves(d, folds, candidates, seed, CvOptions{}, warnings).selected;
}

}  // namespace gtimm
