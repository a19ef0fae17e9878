#pragma once

#include "gtimm/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace gtimm::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericalError = 3;

// Runs one subcommand. `args` excludes the program name. Results go to
// files under --out; progress goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

enum class PlotKind { Regions, Gap, Crosstab };

struct PlotInputs {
    std::filesystem::path data;   // regions, crosstab
    std::filesystem::path model;  // regions, crosstab
    const GapCurve* gap = nullptr;
};

// Tidy CSVs for external plotting:
//   regions  : <x columns>,region_true,region_tree (data needs region_true)
//   gap      : N,M,gap_mean,gap_std
//   crosstab : node,group,count
// Missing or unusable inputs throw DataError.
void emit_plotdata(PlotKind kind, const PlotInputs& inputs, const std::filesystem::path& output);

}  // namespace gtimm::cli
