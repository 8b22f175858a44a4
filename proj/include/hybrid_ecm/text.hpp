#pragma once

// Small text helpers shared by the CSV and JSON writers.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hybrid_ecm {

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

/// Whole-string decimal parse; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view s);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace hybrid_ecm
