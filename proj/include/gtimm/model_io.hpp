#pragma once

#include "gtimm/baselines.hpp"
#include "gtimm/dataset.hpp"
#include "gtimm/mixed_model.hpp"
#include "gtimm/tree.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace gtimm {

using AnyModel = std::variant<GtimmModel, LmmModel, RegressionTree, ForestModel>;

std::string model_kind(const AnyModel& m);  // "gtimm", "lmm", "tree", "forest"

// Everything needed to score a new CSV with a fitted model: the model, the
// column roles it was trained with, the group levels (so new rows map onto
// the same b entries) and optional standardization of the inputs.
struct ModelFile {
    AnyModel model;
    CsvSchema schema;
    std::vector<std::string> group_levels;
    std::optional<StandardizationParams> standardization;
};

// Plain text, one [section] per component; numbers are written in shortest
// round-trip form so read_model(write_model(f)) reproduces f exactly.
void write_model(const ModelFile& f, std::ostream& out);
void write_model(const ModelFile& f, const std::filesystem::path& path);
// Throws DataError on malformed input.
ModelFile read_model(std::istream& in);
ModelFile read_model(const std::filesystem::path& path);

}  // namespace gtimm
