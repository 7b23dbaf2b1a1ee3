#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "avx/eval.hpp"

namespace avx {

using nlohmann::json;

ApiJudge::ApiJudge(ApiJudgeOptions opts) : opts_(std::move(opts)) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(opts_.url, m, url_re)) throw ConfigError("judge url must be http(s)://host[:port]/path");
    scheme_host_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
}

std::string ApiJudge::reply(const JudgeRequest&, const JudgePrompt& prompt) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(opts_.timeout_seconds, 0);
    client.set_read_timeout(opts_.timeout_seconds, 0);
    client.set_write_timeout(opts_.timeout_seconds, 0);

    httplib::Headers headers;
    if (const char* token = std::getenv(opts_.token_env.c_str()); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const json body{{"model", opts_.model},
                    {"temperature", 0},
                    {"messages",
                     json::array({{{"role", "system"}, {"content", prompt.system}},
                                  {{"role", "user"}, {"content", prompt.user}}})}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw TransportError("judge request to " + opts_.url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw TransportError("judge at " + opts_.url + " answered HTTP " + std::to_string(res->status));
    }
    json j;
    try {
        j = json::parse(res->body);
    } catch (const json::parse_error&) {
        // A plain-text body is taken as the reply itself.
        return res->body;
    }
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& c = j["choices"][0];
        if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string()) {
            return c["message"]["content"].get<std::string>();
        }
    }
    for (const char* key : {"reply", "content"})
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
    return res->body;
}

}  // namespace avx
