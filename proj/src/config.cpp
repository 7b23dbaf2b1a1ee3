#include "avx/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "avx/errors.hpp"

namespace avx {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Settings::Settings(const std::vector<std::pair<std::string, std::string>>& defaults) {
    for (const auto& [k, v] : defaults) {
        order_.push_back(k);
        values_[k] = v;
    }
}

void Settings::merge_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingInputError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    merge_text(ss.str(), path.string());
}

void Settings::merge_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void Settings::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown setting '" + key + "'");
    values_[key] = value;
}

void Settings::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Settings::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown setting '" + key + "'");
    return it->second;
}

int64_t Settings::get_int(const std::string& key) const {
    const auto& s = get(key);
    int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + " must be an integer, got '" + s + "'");
    return v;
}

uint64_t Settings::get_u64(const std::string& key) const {
    const auto& s = get(key);
    uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError(key + " must be a non-negative integer, got '" + s + "'");
    }
    return v;
}

double Settings::get_double(const std::string& key) const {
    const auto& s = get(key);
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + " must be a number, got '" + s + "'");
    return v;
}

bool Settings::get_bool(const std::string& key) const {
    const auto& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no" || s.empty()) return false;
    throw ConfigError(key + " must be true or false, got '" + s + "'");
}

std::string Settings::echo(const std::string& title) const {
    std::ostringstream os;
    os << "# " << title << ": effective config\n";
    for (const auto& k : order_) os << k << " = " << values_.at(k) << '\n';
    os << "# end config\n";
    return os.str();
}

std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ec == std::errc() ? p : buf);
}

}  // namespace avx
