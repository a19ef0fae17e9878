#pragma once

#include "gtimm/dataset.hpp"
#include "gtimm/errors.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace gtimm {

// One node of an axis-aligned binary regression tree. Internal nodes route
// x[feature] <= threshold to `left`; leaves carry their 0-based region index.
// `count` and `mean` are training statistics and are kept for internal nodes
// too, so a subtree can be collapsed back into a leaf.
struct TreeNode {
    bool leaf = true;
    int feature = -1;  // column of X (column 0 is the intercept and never split on)
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int region = -1;
    std::size_t count = 0;
    double mean = 0.0;
};

class RegressionTree {
public:
    RegressionTree();  // single leaf
    explicit RegressionTree(std::vector<TreeNode> nodes);

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::size_t leaf_count() const { return leaf_count_; }
    int max_feature() const;

    // Region of one design row.
    std::size_t route(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;

    // Node id of the leaf holding `region`.
    int leaf_node(std::size_t region) const;
    double leaf_mean(std::size_t region) const;

    // Replaces the parent of `region`'s leaf by the leaf's sibling subtree,
    // so rows that reached the leaf follow the sibling's splits instead.
    RegressionTree without_leaf(std::size_t region) const;

    std::string to_text() const;
    static RegressionTree from_text(std::istream& in);

private:
    void relabel();

    std::vector<TreeNode> nodes_;
    std::size_t leaf_count_ = 1;
};

struct RegionAssignment {
    std::vector<int> region;          // 0-based, one per row
    std::vector<std::size_t> counts;  // per region
};

struct TreeOptions {
    std::size_t max_leaves = 4;
    std::size_t min_leaf = 10;
    // Candidate features drawn per split; 0 uses every predictor.
    std::size_t features_per_split = 0;
};

struct GrownTree {
    RegressionTree tree;
    RegionAssignment assignment;  // for `rows`, in the order given
};

// Best-first CART growth on the rows listed in `rows` (duplicates allowed,
// as in a bootstrap sample). Predictors are the non-intercept columns of X.
GrownTree grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<std::size_t>& rows,
                    const TreeOptions& options, std::mt19937_64* rng = nullptr);

RegressionTree fit_tree(const Dataset& d, std::size_t max_leaves, std::size_t min_leaf = 10);

RegionAssignment assign_regions(const RegressionTree& tree, const Eigen::MatrixXd& X);

// Leaf-mean prediction.
Eigen::VectorXd predict_tree(const RegressionTree& tree, const Eigen::MatrixXd& X);

// Within-leaf sum of squared errors of y under the tree's own leaf means.
double within_leaf_sse(const RegressionTree& tree, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// ---------------------------------------------------------------------------
// Cross-validated choice of the number of leaves
// ---------------------------------------------------------------------------

enum class CvScore {
    // Out-of-fold error of a least-squares linear model fit inside each leaf:
    // scores a partition the way the mixed model will use it.
    RegionLinear,
    // Out-of-fold error of the leaf-mean predictor.
    LeafMean,
};

struct CvOptions {
    CvScore score = CvScore::RegionLinear;
    // Choose the fewest leaves whose error is within one standard error of
    // the minimum; otherwise the plain argmin (ties toward fewer leaves).
    bool one_se_rule = true;
    std::size_t min_leaf = 10;
};

struct CvResult {
    std::size_t selected = 1;
    std::vector<std::size_t> candidates;
    std::vector<double> mean_error;  // mean over folds of out-of-fold MSE
    std::vector<double> std_error;
};

CvResult cross_validate_leaves(const Dataset& d, std::size_t folds, std::vector<std::size_t> candidates,
                               std::uint64_t seed, const CvOptions& options = {}, Warnings* warnings = nullptr);

std::size_t select_leaves_cv(const Dataset& d, std::size_t folds, const std::vector<std::size_t>& candidates,
                             std::uint64_t seed, Warnings* warnings = nullptr);

}  // namespace gtimm
