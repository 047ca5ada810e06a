#include "swiftpan/kv.hpp"

#include "swiftpan/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace swiftpan {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    return parse_key_values(read_text(path), path.string());
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(what + ": '" + s + "' is not a number");
}

long long parse_int(const std::string& s, const std::string& what) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(what + ": '" + s + "' is not an integer");
    return v;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_double(trim(item), what));
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path.string() + ": cannot open for writing");
    f << text;
    if (!f) throw IoError(path.string() + ": write failed");
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace swiftpan
