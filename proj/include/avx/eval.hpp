#pragma once

// Judge-based evaluation: prompts, reply parsing, the offline token-F1 stub,
// exact aggregation and the evaluation driver.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "avx/data.hpp"
#include "avx/errors.hpp"

namespace avx {

enum class Metric { Correctness, Detail, Context, Temporal, Consistency };

std::string to_string(Metric m);
Metric parse_metric(std::string_view name);  // ConfigError on unknown names
const std::vector<Metric>& all_metrics();

struct EvalRecord {
    std::string sample_id;
    Metric metric = Metric::Correctness;
    int score = 0;  // 1..5
    std::string rationale;
    std::string judge;

    nlohmann::json to_json() const;
    static EvalRecord from_json(const nlohmann::json& j);
};

// Raised by a judge backend when the request did not complete. Callers may retry.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct JudgeFormatError : std::runtime_error {
    JudgeFormatError(const std::string& msg, std::string raw) : std::runtime_error(msg), raw_reply(std::move(raw)) {}
    std::string raw_reply;
};

struct JudgeRequest {
    Metric metric = Metric::Correctness;
    std::string question;
    std::string reference;
    std::string prediction;
    std::optional<std::string> paired_question;
    std::optional<std::string> paired_prediction;
};

struct JudgePrompt {
    std::string system;
    std::string user;
};

inline constexpr const char* kJudgePromptVersion = "v1";
JudgePrompt render_prompt(const JudgeRequest& req);

class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string id() const = 0;
    // Raw reply text. Throws TransportError when the backend is unreachable.
    virtual std::string reply(const JudgeRequest& req, const JudgePrompt& prompt) = 0;
};

// Deterministic offline judge: token-F1 between normalized texts, binned to
// 1..5. Consistency scores the weakest of the three pairwise agreements.
class StubJudge : public Judge {
public:
    std::string id() const override { return "stub"; }
    std::string reply(const JudgeRequest& req, const JudgePrompt& prompt) override;
};

struct ApiJudgeOptions {
    std::string url;  // e.g. https://host/v1/chat/completions
    std::string model = "gpt-3.5-turbo";
    std::string token_env = "AVX_JUDGE_TOKEN";
    int timeout_seconds = 30;
};

// Chat-completions style HTTP client. The reply text is read from
// choices[0].message.content, or a top-level "reply" or "content" string.
class ApiJudge : public Judge {
public:
    explicit ApiJudge(ApiJudgeOptions opts);
    std::string id() const override { return "api"; }
    std::string reply(const JudgeRequest& req, const JudgePrompt& prompt) override;

private:
    ApiJudgeOptions opts_;
    std::string scheme_host_, path_;
};

std::vector<std::string> normalize_tokens(std::string_view text);
double token_f1(std::string_view a, std::string_view b);
int f1_bin(int64_t overlap2, int64_t total);  // bin of 2c/(na+nb), exact
int stub_score(std::string_view reference, std::string_view prediction);

// Accepts "Score: 4", "score=4", {"score": 4}, "4/5" and a bare leading
// integer. Values outside 1..5 are rejected.
std::optional<int> parse_score(std::string_view reply);

inline constexpr int kJudgeAttempts = 3;
EvalRecord judge_one(const JudgeRequest& req, Judge& judge, const std::string& sample_id);

// Exact non-negative rational used for means so display rounding never
// depends on binary floating point.
struct Rational {
    __int128 num = 0;
    __int128 den = 1;

    static Rational of(int64_t n, int64_t d);
    static Rational parse_decimal(std::string_view text);  // "2.34" -> 234/100
    Rational operator+(const Rational& o) const;
    Rational operator/(int64_t k) const;
    bool operator==(const Rational& o) const;
    double to_double() const;
};

enum class Rounding { Truncate, HalfUp };
std::string format2(const Rational& r, Rounding mode);

struct MetricSummary {
    Metric metric = Metric::Correctness;
    int64_t n = 0;
    int64_t sum = 0;
    Rational mean;
    int failures = 0;
};

struct Scorecard {
    std::vector<MetricSummary> metrics;  // included metrics, in enum order
    Rational overall;
    std::vector<std::string> excluded;
    std::vector<std::string> incomplete;  // metrics with at least one failed judgment
    int samples = 0;
    Rounding rounding = Rounding::Truncate;

    bool empty() const { return metrics.empty(); }
    std::string display(const Rational& r) const { return format2(r, rounding); }
    nlohmann::json to_json() const;
};

// Per-metric means over records and the mean of those means. Metrics with no
// records are left out. Order of `records` does not matter.
Scorecard aggregate(const std::vector<EvalRecord>& records, Rounding rounding = Rounding::Truncate);

// Table-style average from already-averaged metric means.
Rational average_of_means(const std::vector<Rational>& means);

struct Prediction {
    std::string text;
    std::optional<std::string> paired;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Prediction predict(const InstructionSample& sample, bool want_paired) = 0;
};

// Returns the reference answer for every question.
class EchoPredictor : public Predictor {
public:
    Prediction predict(const InstructionSample& sample, bool want_paired) override;
};

// Serves predictions persisted by an earlier run.
class ReplayPredictor : public Predictor {
public:
    explicit ReplayPredictor(const std::filesystem::path& predictions_jsonl);
    Prediction predict(const InstructionSample& sample, bool want_paired) override;

private:
    std::map<std::string, Prediction> stored_;
};

struct EvalOptions {
    std::vector<Metric> metrics = all_metrics();
    int workers = 4;
    Rounding rounding = Rounding::Truncate;
    std::optional<std::filesystem::path> records_path;
    std::optional<std::filesystem::path> predictions_path;
};

struct EvalResult {
    Scorecard scorecard;
    std::vector<EvalRecord> records;
    std::vector<std::string> warnings;
};

// Judge failures are recorded as warnings and flag the metric incomplete.
// TransportError from the judge aborts the run after all workers stop.
EvalResult run_eval(const BenchmarkSet& benchmark, Predictor& predictor, Judge& judge, const EvalOptions& opts);

}  // namespace avx
