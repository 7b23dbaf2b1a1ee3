#include "avx/tokenizer.hpp"

#include <array>

namespace avx::AVX_ABI_NS {

std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

std::string strip_placeholders(std::string_view text) {
    static constexpr std::array<std::string_view, 3> markers{"{AUDIO}", "{VIDEO}", "{QUESTION}"};
    std::string out(text);
    for (auto m : markers) {
        for (auto pos = out.find(m); pos != std::string::npos; pos = out.find(m)) out.erase(pos, m.size());
    }
    const auto first = out.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = out.find_last_not_of(" \t\r\n");
    return out.substr(first, last - first + 1);
}

std::vector<int> encode_prompt(std::string_view question) {
    std::vector<int> ids{kBos};
    for (int id : encode_bytes(strip_placeholders(question))) ids.push_back(id);
    return ids;
}

std::vector<int> encode_answer(std::string_view answer) {
    auto ids = encode_bytes(answer);
    ids.push_back(kEos);
    return ids;
}

std::string decode(std::span<const int> ids) {
    std::string out;
    for (int id : ids)
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    return out;
}

}  // namespace avx
