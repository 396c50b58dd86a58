#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ddam {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Strict parse of a full token; throws std::invalid_argument on junk.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view line);
std::vector<std::string> split(std::string_view text, char sep);

/// Parses "a,b,c" into doubles.
std::vector<double> parse_double_list(std::string_view text);

/// Writes the whole string, LF line endings as given. Throws on I/O failure.
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ddam
