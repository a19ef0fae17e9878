#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gtimm::text {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);

// Parses a complete finite decimal number; nullopt on anything else
// (empty cell, trailing junk, nan, inf).
std::optional<double> parse_finite(std::string_view s);

std::optional<long long> parse_integer(std::string_view s);

std::string_view trim(std::string_view s);

// Splits one CSV record on commas; double-quoted fields may contain commas
// and "" escapes. No multi-line fields.
std::vector<std::string> split_csv_line(std::string_view line);

std::vector<std::string> split(std::string_view s, char delim);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace gtimm::text
