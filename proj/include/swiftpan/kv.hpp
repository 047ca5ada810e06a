#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace swiftpan {

// `key = value` text: one pair per line, '#' starts a comment, blank lines
// ignored. Later keys override earlier ones.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<text>");
KeyValues read_key_values(const std::filesystem::path& path);

double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);
std::vector<double> parse_double_list(const std::string& s, const std::string& what);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// Shortest decimal form that round-trips the value exactly.
std::string format_double(double v);

}  // namespace swiftpan
