#include "gtimm/folds.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace gtimm {

namespace {

std::map<int, std::vector<std::size_t>> members_by_group(const std::vector<int>& groups) {
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
    return members;
}

}  // namespace

std::vector<int> assign_folds(const std::vector<int>& groups, std::size_t n, std::size_t folds,
                              std::uint64_t seed, Warnings* warnings) {
    if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
    if (n < folds) throw std::invalid_argument("fewer rows than folds");
    if (!groups.empty() && groups.size() != n) throw std::invalid_argument("group vector length differs from N");

    std::mt19937_64 rng(seed);
    std::vector<int> fold(n, 0);

    bool stratify = !groups.empty();
    auto members = members_by_group(groups);
    if (stratify) {
        for (const auto& [g, rows] : members) {
            if (rows.size() < folds) {
                warn(warnings, "group " + std::to_string(g + 1) + " has " + std::to_string(rows.size()) +
                                   " members, fewer than " + std::to_string(folds) +
                                   " folds; using unstratified folds");
                stratify = false;
                break;
            }
        }
    }

    if (stratify) {
        std::size_t next = 0;
        for (auto& [g, rows] : members) {
            std::shuffle(rows.begin(), rows.end(), rng);
            for (std::size_t r : rows) {
                fold[r] = static_cast<int>(next % folds);
                ++next;
            }
        }
    } else {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t k = 0; k < n; ++k) fold[order[k]] = static_cast<int>(k % folds);
    }
    return fold;
}

TrainTestSplit stratified_split(const std::vector<int>& groups, std::size_t n, double train_fraction,
                                std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("train_fraction must lie in (0, 1)");
    if (n < 2) throw DataError("need at least 2 rows for a train/test split");

    std::vector<int> labels = groups.empty() ? std::vector<int>(n, 0) : groups;
    if (labels.size() != n) throw std::invalid_argument("group vector length differs from N");
    auto members = members_by_group(labels);

    const double test_share = 1.0 - train_fraction;
    const std::size_t target = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(test_share * static_cast<double>(n))));

    struct Quota {
        int group;
        std::size_t size;
        std::size_t take;
        double remainder;
    };
    std::vector<Quota> quota;
    std::size_t assigned = 0;
    for (const auto& [g, rows] : members) {
        const double ideal = test_share * static_cast<double>(rows.size());
        std::size_t take = std::min(static_cast<std::size_t>(std::floor(ideal)), rows.size() - 1);
        quota.push_back({g, rows.size(), take, ideal - std::floor(ideal)});
        assigned += take;
    }
    // Hand out the rounding remainder by largest fractional part.
    std::vector<std::size_t> order(quota.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return quota[a].remainder > quota[b].remainder; });
    while (assigned < target) {
        bool progressed = false;
        for (std::size_t k : order) {
            if (assigned >= target) break;
            if (quota[k].take + 1 < quota[k].size) {
                ++quota[k].take;
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) {
            throw DataError("stratified split: cannot hold out " + std::to_string(target) +
                            " rows without removing some group from the training set");
        }
    }

    std::mt19937_64 rng(seed);
    TrainTestSplit split;
    std::size_t qi = 0;
    for (auto& [g, rows] : members) {
        std::shuffle(rows.begin(), rows.end(), rng);
        const std::size_t take = quota[qi++].take;
        split.test.insert(split.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
        split.train.insert(split.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace gtimm
