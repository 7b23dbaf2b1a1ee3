#pragma once

// Flat key = value settings with '#' comments. A command declares its keys and
// defaults; config files and overrides may only set declared keys.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace avx {

class Settings {
public:
    explicit Settings(const std::vector<std::pair<std::string, std::string>>& defaults);

    void merge_file(const std::filesystem::path& path);
    void merge_text(const std::string& text, const std::string& origin);
    void set(const std::string& key, const std::string& value);
    void set_override(const std::string& assignment);  // "key=value"

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Header line, one "key = value" line per setting in declaration order,
    // footer line. The output parses back through merge_text.
    std::string echo(const std::string& title) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

std::string format_double(double v);

}  // namespace avx
