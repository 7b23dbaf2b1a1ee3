#include "avx/eval.hpp"

#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

namespace avx {

using nlohmann::json;

namespace {

struct MetricName {
    Metric metric;
    const char* name;
    const char* title;
    const char* focus;
};

constexpr MetricName kMetricNames[] = {
    {Metric::Correctness, "correctness", "Correctness of Information",
     "whether the facts in the predicted answer agree with the reference answer"},
    {Metric::Detail, "detail", "Detail Orientation",
     "whether the predicted answer covers the specific details present in the reference answer"},
    {Metric::Context, "context", "Contextual Understanding",
     "whether the predicted answer fits the overall context of the question and the reference answer"},
    {Metric::Temporal, "temporal", "Temporal Understanding",
     "whether the predicted answer describes the order and timing of events as the reference answer does"},
    {Metric::Consistency, "consistency", "Consistency",
     "whether the two predicted answers to the paraphrased questions agree with each other and with the reference"},
};

const MetricName& info(Metric m) {
    for (const auto& n : kMetricNames)
        if (n.metric == m) return n;
    throw ContractError("unknown metric");
}

}  // namespace

std::string to_string(Metric m) { return info(m).name; }

Metric parse_metric(std::string_view name) {
    std::string lower(name);
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const auto& n : kMetricNames)
        if (lower == n.name) return n.metric;
    throw ConfigError("unknown metric '" + std::string(name) +
                      "' (expected correctness, detail, context, temporal, consistency)");
}

const std::vector<Metric>& all_metrics() {
    static const std::vector<Metric> all{Metric::Correctness, Metric::Detail, Metric::Context, Metric::Temporal,
                                         Metric::Consistency};
    return all;
}

json EvalRecord::to_json() const {
    return {{"sample_id", sample_id}, {"metric", to_string(metric)}, {"score", score},
            {"rationale", rationale}, {"judge", judge}};
}

EvalRecord EvalRecord::from_json(const json& j) {
    EvalRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.metric = parse_metric(j.at("metric").get<std::string>());
    r.score = j.at("score").get<int>();
    if (r.score < 1 || r.score > 5) throw ValidationError("record score outside 1..5");
    r.rationale = j.value("rationale", "");
    r.judge = j.value("judge", "");
    return r;
}

JudgePrompt render_prompt(const JudgeRequest& req) {
    const auto& m = info(req.metric);
    JudgePrompt p;
    p.system = std::string("You evaluate answers produced by a video question answering system. Metric: ") + m.title +
               ". Judge " + m.focus +
               ". Reply with a line of the form \"Score: <1-5>\" (5 is best), then one sentence of rationale.";
    std::ostringstream u;
    u << "Question: " << req.question << "\n";
    if (req.metric == Metric::Consistency) {
        u << "Paraphrased question: " << req.paired_question.value_or("") << "\n";
        u << "Reference answer: " << req.reference << "\n";
        u << "Predicted answer 1: " << req.prediction << "\n";
        u << "Predicted answer 2: " << req.paired_prediction.value_or("") << "\n";
    } else {
        u << "Reference answer: " << req.reference << "\n";
        u << "Predicted answer: " << req.prediction << "\n";
    }
    p.user = u.str();
    return p;
}

std::vector<std::string> normalize_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace {

// Returns (2 * overlap, |a| + |b|) over token multisets.
std::pair<int64_t, int64_t> f1_parts(std::string_view a, std::string_view b) {
    const auto ta = normalize_tokens(a), tb = normalize_tokens(b);
    std::map<std::string, int64_t> counts;
    for (const auto& t : ta) ++counts[t];
    int64_t overlap = 0;
    for (const auto& t : tb) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return {2 * overlap, static_cast<int64_t>(ta.size() + tb.size())};
}

}  // namespace

double token_f1(std::string_view a, std::string_view b) {
    const auto [num, den] = f1_parts(a, b);
    if (den == 0) return 1.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

int f1_bin(int64_t overlap2, int64_t total) {
    if (total == 0) return 5;
    // F1 = overlap2 / total; bin k+1 while F1 >= k/5.
    int bin = 1;
    for (int k = 1; k <= 4; ++k)
        if (5 * overlap2 >= k * total) bin = k + 1;
    return bin;
}

int stub_score(std::string_view reference, std::string_view prediction) {
    const auto [num, den] = f1_parts(reference, prediction);
    return f1_bin(num, den);
}

std::string StubJudge::reply(const JudgeRequest& req, const JudgePrompt&) {
    std::ostringstream os;
    if (req.metric == Metric::Consistency) {
        const std::string p2 = req.paired_prediction.value_or("");
        const std::pair<std::string_view, std::string_view> pairs[] = {
            {req.reference, req.prediction}, {req.reference, p2}, {req.prediction, p2}};
        int worst = 5;
        for (const auto& [a, b] : pairs) {
            const auto [num, den] = f1_parts(a, b);
            worst = std::min(worst, f1_bin(num, den));
        }
        os << "Score: " << worst << "\nRationale: weakest pairwise token overlap among reference and both answers.";
    } else {
        const auto [num, den] = f1_parts(req.reference, req.prediction);
        os << "Score: " << f1_bin(num, den) << "\nRationale: token F1 " << num << "/" << den << ".";
    }
    return os.str();
}

std::optional<int> parse_score(std::string_view reply) {
    static const std::regex keyed(R"re(score["']?\s*[:=]\s*["']?\s*(-?\d+))re", std::regex::icase);
    static const std::regex fraction(R"((-?\d+)\s*/\s*5(?!\d))");
    static const std::regex leading(R"(^\s*(-?\d+)(?=$|[\s.,:;)!]))");
    const std::string text(reply);
    std::smatch m;
    std::string digits;
    if (std::regex_search(text, m, keyed) || std::regex_search(text, m, fraction) ||
        std::regex_search(text, m, leading)) {
        digits = m[1].str();
    } else {
        return std::nullopt;
    }
    if (digits.size() > 3) return std::nullopt;
    const int v = std::stoi(digits);
    if (v < 1 || v > 5) return std::nullopt;
    return v;
}

EvalRecord judge_one(const JudgeRequest& req, Judge& judge, const std::string& sample_id) {
    if (req.question.empty() || req.reference.empty()) {
        throw ContractError("judge_one needs a question and a reference (sample " + sample_id + ")");
    }
    if (req.metric == Metric::Consistency && (!req.paired_question || !req.paired_prediction)) {
        throw ContractError("consistency needs a paired question and prediction (sample " + sample_id + ")");
    }
    const auto prompt = render_prompt(req);
    std::string last;
    std::optional<TransportError> transport;
    for (int attempt = 0; attempt < kJudgeAttempts; ++attempt) {
        try {
            last = judge.reply(req, prompt);
            transport.reset();
        } catch (const TransportError& e) {
            transport = e;
            continue;
        }
        if (auto score = parse_score(last)) {
            return {sample_id, req.metric, *score, last, judge.id()};
        }
    }
    if (transport) throw *transport;
    throw JudgeFormatError("judge reply for sample " + sample_id + " metric " + to_string(req.metric) +
                               " has no score after " + std::to_string(kJudgeAttempts) + " attempts",
                           last);
}

// --- exact aggregation ---------------------------------------------------

namespace {

__int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

Rational reduced(__int128 num, __int128 den) {
    if (den == 0) throw ContractError("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const __int128 g = gcd128(num, den);
    if (g > 1) {
        num /= g;
        den /= g;
    }
    return {num, den};
}

__int128 floor_div(__int128 a, __int128 b) {
    __int128 q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

Rational Rational::of(int64_t n, int64_t d) { return reduced(n, d); }

Rational Rational::parse_decimal(std::string_view text) {
    __int128 num = 0, den = 1;
    bool frac = false, any = false;
    for (char c : text) {
        if (c == '.' && !frac) {
            frac = true;
        } else if (c >= '0' && c <= '9') {
            num = num * 10 + (c - '0');
            if (frac) den *= 10;
            any = true;
        } else {
            throw ConfigError("not a non-negative decimal: '" + std::string(text) + "'");
        }
    }
    if (!any) throw ConfigError("not a non-negative decimal: '" + std::string(text) + "'");
    return reduced(num, den);
}

Rational Rational::operator+(const Rational& o) const { return reduced(num * o.den + o.num * den, den * o.den); }
Rational Rational::operator/(int64_t k) const { return reduced(num, den * k); }
bool Rational::operator==(const Rational& o) const { return num * o.den == o.num * den; }
double Rational::to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

std::string format2(const Rational& r, Rounding mode) {
    const __int128 hundredths = mode == Rounding::Truncate ? floor_div(r.num * 100, r.den)
                                                           : floor_div(r.num * 200 + r.den, 2 * r.den);
    const bool neg = hundredths < 0;
    const __int128 a = neg ? -hundredths : hundredths;
    const auto whole = static_cast<long long>(a / 100);
    const auto frac = static_cast<int>(a % 100);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s%lld.%02d", neg ? "-" : "", whole, frac);
    return buf;
}

Rational average_of_means(const std::vector<Rational>& means) {
    if (means.empty()) return {};
    Rational total;
    for (const auto& m : means) total = total + m;
    return total / static_cast<int64_t>(means.size());
}

Scorecard aggregate(const std::vector<EvalRecord>& records, Rounding rounding) {
    Scorecard card;
    card.rounding = rounding;
    std::map<Metric, MetricSummary> by_metric;
    std::map<std::string, bool> samples;
    for (const auto& r : records) {
        if (r.score < 1 || r.score > 5) throw ValidationError("record score outside 1..5 for " + r.sample_id);
        auto& s = by_metric[r.metric];
        s.metric = r.metric;
        s.n += 1;
        s.sum += r.score;
        samples[r.sample_id] = true;
    }
    std::vector<Rational> means;
    for (Metric m : all_metrics()) {
        auto it = by_metric.find(m);
        if (it == by_metric.end()) continue;
        it->second.mean = Rational::of(it->second.sum, it->second.n);
        means.push_back(it->second.mean);
        card.metrics.push_back(it->second);
    }
    card.overall = average_of_means(means);
    card.samples = static_cast<int>(samples.size());
    return card;
}

json Scorecard::to_json() const {
    json metrics_json = json::object();
    for (const auto& m : metrics) {
        const std::string shown = display(m.mean);
        metrics_json[to_string(m.metric)] = {{"mean", std::stod(shown)},     {"mean_display", shown},
                                             {"mean_raw", m.mean.to_double()}, {"n", m.n},
                                             {"sum", m.sum},                   {"failures", m.failures}};
    }
    const std::string shown = empty() ? "0.00" : display(overall);
    return {{"metrics", metrics_json},
            {"overall", std::stod(shown)},
            {"overall_display", shown},
            {"overall_raw", overall.to_double()},
            {"excluded", excluded},
            {"incomplete", incomplete},
            {"samples", samples},
            {"rounding", rounding == Rounding::Truncate ? "truncate" : "half_up"}};
}

// --- predictors ----------------------------------------------------------

Prediction EchoPredictor::predict(const InstructionSample& sample, bool want_paired) {
    Prediction p{sample.answer, std::nullopt};
    if (want_paired) p.paired = sample.answer;
    return p;
}

ReplayPredictor::ReplayPredictor(const std::filesystem::path& predictions_jsonl) {
    std::ifstream is(predictions_jsonl);
    if (!is) throw MissingInputError("cannot open predictions file " + predictions_jsonl.string());
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            Prediction p{j.at("prediction").get<std::string>(), std::nullopt};
            if (j.contains("paired_prediction") && !j["paired_prediction"].is_null()) {
                p.paired = j["paired_prediction"].get<std::string>();
            }
            stored_[j.at("sample_id").get<std::string>()] = p;
        } catch (const json::exception& e) {
            throw FormatError(predictions_jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

Prediction ReplayPredictor::predict(const InstructionSample& sample, bool want_paired) {
    auto it = stored_.find(sample.id);
    if (it == stored_.end()) throw ValidationError("no stored prediction for sample " + sample.id);
    if (want_paired && !it->second.paired) throw ValidationError("no stored paired prediction for sample " + sample.id);
    return it->second;
}

// --- driver --------------------------------------------------------------

EvalResult run_eval(const BenchmarkSet& benchmark, Predictor& predictor, Judge& judge, const EvalOptions& opts) {
    EvalResult result;
    std::vector<Metric> metrics;
    for (Metric m : all_metrics())
        if (std::find(opts.metrics.begin(), opts.metrics.end(), m) != opts.metrics.end()) metrics.push_back(m);

    const bool any_paired = std::any_of(benchmark.samples.begin(), benchmark.samples.end(),
                                        [](const InstructionSample& s) { return s.paired_question.has_value(); });
    std::vector<std::string> excluded;
    if (std::find(metrics.begin(), metrics.end(), Metric::Consistency) != metrics.end() && !any_paired) {
        metrics.erase(std::remove(metrics.begin(), metrics.end(), Metric::Consistency), metrics.end());
        excluded.push_back("consistency");
        result.warnings.push_back("consistency excluded: no sample in " + benchmark.name + " has a paired_question");
    }
    const bool want_consistency = std::find(metrics.begin(), metrics.end(), Metric::Consistency) != metrics.end();

    // Predictions are produced sequentially so model-backed predictors need no locking.
    std::vector<Prediction> predictions;
    predictions.reserve(benchmark.samples.size());
    for (const auto& s : benchmark.samples) {
        predictions.push_back(predictor.predict(s, want_consistency && s.paired_question.has_value()));
    }
    if (opts.predictions_path) {
        std::ofstream os(*opts.predictions_path, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + opts.predictions_path->string());
        for (size_t i = 0; i < predictions.size(); ++i) {
            json j{{"sample_id", benchmark.samples[i].id}, {"prediction", predictions[i].text}};
            if (predictions[i].paired) j["paired_prediction"] = *predictions[i].paired;
            os << j.dump() << '\n';
        }
    }

    struct Job {
        size_t sample;
        Metric metric;
    };
    std::vector<Job> jobs;
    for (size_t i = 0; i < benchmark.samples.size(); ++i) {
        for (Metric m : metrics) {
            if (m == Metric::Consistency && !benchmark.samples[i].paired_question) continue;
            jobs.push_back({i, m});
        }
    }

    std::ofstream records_out;
    if (opts.records_path) {
        records_out.open(*opts.records_path, std::ios::trunc);
        if (!records_out) throw std::runtime_error("cannot write " + opts.records_path->string());
    }

    std::vector<std::optional<EvalRecord>> slots(jobs.size());
    std::map<Metric, int> failures;
    std::mutex mu;
    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;

    auto worker = [&]() {
        while (!abort.load()) {
            const size_t k = next.fetch_add(1);
            if (k >= jobs.size()) return;
            const auto& job = jobs[k];
            const auto& s = benchmark.samples[job.sample];
            JudgeRequest req{job.metric, s.question, s.answer, predictions[job.sample].text, std::nullopt, std::nullopt};
            if (job.metric == Metric::Consistency) {
                req.paired_question = s.paired_question;
                req.paired_prediction = predictions[job.sample].paired;
            }
            try {
                EvalRecord rec = judge_one(req, judge, s.id);
                std::lock_guard lock(mu);
                if (records_out.is_open()) {
                    records_out << rec.to_json().dump() << '\n';
                    records_out.flush();
                }
                slots[k] = std::move(rec);
            } catch (const JudgeFormatError& e) {
                std::lock_guard lock(mu);
                ++failures[job.metric];
                result.warnings.push_back(std::string(e.what()) + "; raw reply: " + e.raw_reply);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!fatal) fatal = std::current_exception();
                abort.store(true);
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (fatal) std::rethrow_exception(fatal);

    for (auto& slot : slots)
        if (slot) result.records.push_back(std::move(*slot));
    result.scorecard = aggregate(result.records, opts.rounding);
    result.scorecard.excluded = excluded;
    result.scorecard.samples = static_cast<int>(benchmark.samples.size());
    for (Metric m : metrics) {
        const int f = failures.count(m) ? failures[m] : 0;
        if (f == 0) continue;
        result.scorecard.incomplete.push_back(to_string(m));
        bool present = false;
        for (auto& ms : result.scorecard.metrics) {
            if (ms.metric == m) {
                ms.failures = f;
                present = true;
            }
        }
        if (!present) result.scorecard.excluded.push_back(to_string(m));
    }
    // Warnings from concurrent workers arrive in completion order; sort for stable output.
    std::sort(result.warnings.begin(), result.warnings.end());
    return result;
}

}  // namespace avx
