#pragma once

// Minimal comma-separated text helpers shared by every artifact writer and
// reader. Fields never contain commas or quotes in this project's files.

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qmcssa::csv {

/// 17 significant digits: enough to round-trip any finite double exactly.
std::string format_double(double value);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

/// Whole-field parse; nullopt on trailing garbage, empty input or overflow.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

std::string_view trim(std::string_view text);

/// Reads one line, stripping a trailing '\r'. False at end of input.
bool read_line(std::istream& in, std::string& line);

std::string join(const std::vector<std::string>& fields, char sep = ',');

} // namespace qmcssa::csv
