#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdmea {

// Shortest representation that parses back to the same double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);

// Parses "a,b,c" into doubles; throws ArgumentError on a bad item.
std::vector<double> parse_double_list(std::string_view text);

}  // namespace cdmea
