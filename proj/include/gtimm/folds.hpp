#pragma once

#include "gtimm/errors.hpp"

#include <cstdint>
#include <vector>

namespace gtimm {

// Fold id in [0, folds) per row. With group labels, each group's members are
// shuffled and dealt round-robin so every fold sees every group; when some
// group is smaller than `folds` a warning is recorded and rows are dealt
// without stratification. Empty `groups` means unstratified.
std::vector<int> assign_folds(const std::vector<int>& groups, std::size_t n, std::size_t folds,
                              std::uint64_t seed, Warnings* warnings = nullptr);

struct TrainTestSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Group-stratified holdout split. Every group keeps at least one training
// row; the test set has at least one row. Throws DataError when a group
// would be absent from training.
TrainTestSplit stratified_split(const std::vector<int>& groups, std::size_t n, double train_fraction,
                                std::uint64_t seed);

}  // namespace gtimm
