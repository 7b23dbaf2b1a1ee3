#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

#include "avx/eval.hpp"
#include "test_support.hpp"

using namespace avx;
using testing_support::TempDir;

namespace {

// Replies from a script; "!transport" throws a TransportError instead.
class ScriptedJudge : public Judge {
public:
    explicit ScriptedJudge(std::deque<std::string> script) : script_(std::move(script)) {}
    std::string id() const override { return "scripted"; }
    std::string reply(const JudgeRequest&, const JudgePrompt&) override {
        ++calls;
        if (script_.empty()) return "no score";
        std::string r = script_.front();
        script_.pop_front();
        if (r == "!transport") throw TransportError("connection refused");
        return r;
    }
    int calls = 0;

private:
    std::deque<std::string> script_;
};

JudgeRequest request(std::string reference, std::string prediction) {
    return {Metric::Correctness, "What?", std::move(reference), std::move(prediction), std::nullopt, std::nullopt};
}

std::vector<EvalRecord> records_for_means(const std::vector<std::string>& means) {
    // A metric mean m.mm is realized by 100 records summing to m.mm * 100.
    std::vector<EvalRecord> out;
    for (size_t k = 0; k < means.size(); ++k) {
        const auto r = Rational::parse_decimal(means[k]);
        const auto target = static_cast<int>(r.num * 100 / r.den);
        int remaining = target;
        for (int i = 0; i < 100; ++i) {
            const int left = 100 - i - 1;
            const int s = std::clamp(remaining - left, 1, 5);
            remaining -= s;
            out.push_back({"s" + std::to_string(i), all_metrics()[k], s, "", "stub"});
        }
    }
    return out;
}

BenchmarkSet tiny_benchmark(bool paired) {
    BenchmarkSet b;
    b.name = "tiny";
    for (int i = 0; i < 3; ++i) {
        InstructionSample s;
        s.id = "q" + std::to_string(i);
        s.question = "What is item " + std::to_string(i) + "?";
        s.answer = "Item number " + std::to_string(i) + " is blue.";
        if (paired) s.paired_question = "Describe item " + std::to_string(i) + ".";
        b.samples.push_back(s);
    }
    return b;
}

}  // namespace

TEST_CASE("stub judge examples", "[eval]") {
    CHECK(stub_score("A red square.", "a red SQUARE") == 5);
    CHECK(stub_score("A red square.", "blue circle") == 1);
    CHECK(stub_score("a b c d e", "a b c x y") == 4);
    CHECK(token_f1("a b c d e", "a b c x y") == Catch::Approx(0.6));
    CHECK(stub_score("", "") == 5);
    // Bin edges are exact: F1 = 0.8 lands in bin 5, 0.4 in bin 3.
    CHECK(f1_bin(8, 10) == 5);
    CHECK(f1_bin(4, 10) == 3);
    CHECK(f1_bin(3, 10) == 2);
    CHECK(f1_bin(0, 10) == 1);
}

TEST_CASE("stub score is symmetric", "[eval]") {
    const std::vector<std::string> texts{"the tone rises", "a low tone falls slowly", "rises", "", "tone tone tone"};
    for (const auto& a : texts)
        for (const auto& b : texts) CHECK(stub_score(a, b) == stub_score(b, a));
}

TEST_CASE("stub judgments are deterministic", "[eval]") {
    StubJudge judge;
    const auto req = request("Rising low tone.", "Rising high tone.");
    const auto a = judge_one(req, judge, "x");
    const auto b = judge_one(req, judge, "x");
    CHECK(a.score == b.score);
    CHECK(a.rationale == b.rationale);
    CHECK(a.judge == "stub");
}

TEST_CASE("reply parser over the fixture corpus", "[eval]") {
    std::ifstream is(std::string(AVX_TEST_DATA_DIR) + "/judge_replies.txt");
    REQUIRE(is);
    std::string line;
    int cases = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        REQUIRE(tab != std::string::npos);
        const std::string expect = line.substr(0, tab);
        std::string reply = line.substr(tab + 1);
        for (size_t p; (p = reply.find("\\n")) != std::string::npos;) reply.replace(p, 2, "\n");
        INFO("reply: " << reply);
        const auto got = parse_score(reply);
        if (expect == "none") {
            CHECK_FALSE(got.has_value());
        } else {
            REQUIRE(got.has_value());
            CHECK(*got == std::stoi(expect));
        }
        ++cases;
    }
    CHECK(cases >= 15);
}

TEST_CASE("judge_one retries and then gives up", "[eval]") {
    SECTION("recovers on the third try") {
        ScriptedJudge j({"hmm", "Score: ten", "Score: 2"});
        CHECK(judge_one(request("a", "b"), j, "s").score == 2);
        CHECK(j.calls == 3);
    }
    SECTION("format failure keeps the raw reply") {
        ScriptedJudge j({"nope", "still nope", "last words"});
        try {
            judge_one(request("a", "b"), j, "s");
            FAIL("expected JudgeFormatError");
        } catch (const JudgeFormatError& e) {
            CHECK(e.raw_reply == "last words");
        }
        CHECK(j.calls == kJudgeAttempts);
    }
    SECTION("transport errors are retried") {
        ScriptedJudge j({"!transport", "Score: 3"});
        CHECK(judge_one(request("a", "b"), j, "s").score == 3);
    }
    SECTION("persistent transport failure surfaces as TransportError") {
        ScriptedJudge j({"!transport", "!transport", "!transport"});
        CHECK_THROWS_AS(judge_one(request("a", "b"), j, "s"), TransportError);
    }
    SECTION("preconditions") {
        ScriptedJudge j({});
        CHECK_THROWS_AS(judge_one(request("", "b"), j, "s"), ContractError);
        JudgeRequest c = request("a", "b");
        c.metric = Metric::Consistency;
        CHECK_THROWS_AS(judge_one(c, j, "s"), ContractError);
    }
}

TEST_CASE("consistency takes the weakest pair", "[eval]") {
    StubJudge judge;
    JudgeRequest r{Metric::Consistency, "Q?", "red square", "red square", std::string("Q2?"), std::string("blue")};
    CHECK(judge_one(r, judge, "s").score == 1);
    r.paired_prediction = "red square";
    CHECK(judge_one(r, judge, "s").score == 5);
}

TEST_CASE("exact two-decimal display", "[eval]") {
    CHECK(format2(Rational::parse_decimal("2.405"), Rounding::Truncate) == "2.40");
    CHECK(format2(Rational::parse_decimal("2.405"), Rounding::HalfUp) == "2.41");
    CHECK(format2(Rational::of(1982, 1000), Rounding::HalfUp) == "1.98");
    CHECK(format2(Rational::of(5, 1), Rounding::Truncate) == "5.00");
    CHECK(format2(Rational::of(2, 3), Rounding::Truncate) == "0.66");
    CHECK(format2(Rational::of(2, 3), Rounding::HalfUp) == "0.67");
    CHECK(Rational::parse_decimal("1.7") == Rational::of(17, 10));
    CHECK_THROWS_AS(Rational::parse_decimal("abc"), ConfigError);
}

TEST_CASE("aggregation of per-metric means", "[eval]") {
    const auto card = aggregate(records_for_means({"2.69", "2.49", "3.04", "2.22", "2.71"}));
    REQUIRE(card.metrics.size() == 5);
    CHECK(card.metrics[0].mean == Rational::parse_decimal("2.69"));
    CHECK(card.display(card.overall) == "2.63");
    const auto four = aggregate(records_for_means({"2.77", "2.44", "3.04", "2.4"}));
    CHECK(four.metrics.size() == 4);
    CHECK(four.display(four.overall) == "2.66");
    const auto j = four.to_json();
    CHECK(j["overall_display"] == "2.66");
    CHECK(j["metrics"]["correctness"]["n"] == 100);
    CHECK_FALSE(j["metrics"].contains("consistency"));
    CHECK(aggregate({}).empty());
    CHECK(aggregate({}).to_json()["overall"] == 0.0);
}

TEST_CASE("aggregation ignores record order", "[eval]") {
    auto recs = records_for_means({"2.34", "2.35", "2.74", "1.97", "2.45"});
    const auto base = aggregate(recs);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(recs.begin(), recs.end(), rng);
        const auto again = aggregate(recs);
        CHECK(again.overall == base.overall);
        CHECK(again.to_json() == base.to_json());
    }
}

TEST_CASE("run_eval with an echo predictor scores 5.00", "[eval]") {
    TempDir dir;
    EchoPredictor echo;
    StubJudge judge;
    EvalOptions opts;
    opts.records_path = dir / "r.jsonl";
    const auto res = run_eval(tiny_benchmark(true), echo, judge, opts);
    CHECK(res.scorecard.metrics.size() == 5);
    CHECK(res.scorecard.display(res.scorecard.overall) == "5.00");
    CHECK(res.records.size() == 15);
    CHECK(res.warnings.empty());
    std::ifstream is(dir / "r.jsonl");
    int lines = 0;
    for (std::string l; std::getline(is, l);) {
        const auto rec = EvalRecord::from_json(nlohmann::json::parse(l));
        CHECK(rec.score == 5);
        ++lines;
    }
    CHECK(lines == 15);
}

TEST_CASE("consistency is excluded without paired questions", "[eval]") {
    EchoPredictor echo;
    StubJudge judge;
    const auto res = run_eval(tiny_benchmark(false), echo, judge, {});
    CHECK(res.scorecard.metrics.size() == 4);
    CHECK(res.scorecard.excluded == std::vector<std::string>{"consistency"});
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("consistency excluded") != std::string::npos);
}

TEST_CASE("replaying stored predictions reproduces the scorecard", "[eval]") {
    TempDir dir;
    class Wobbly : public Predictor {
    public:
        Prediction predict(const InstructionSample& s, bool paired) override {
            return {s.answer.substr(0, s.answer.size() / 2), paired ? std::optional<std::string>("blue") : std::nullopt};
        }
    } wobbly;
    StubJudge judge;
    EvalOptions opts;
    opts.predictions_path = dir / "p.jsonl";
    const auto first = run_eval(tiny_benchmark(true), wobbly, judge, opts);
    ReplayPredictor replay(dir / "p.jsonl");
    EvalOptions again;
    const auto second = run_eval(tiny_benchmark(true), replay, judge, again);
    CHECK(second.scorecard.to_json() == first.scorecard.to_json());
    CHECK(first.scorecard.display(first.scorecard.overall) != "5.00");
}

TEST_CASE("format failures mark the metric incomplete", "[eval]") {
    class Picky : public Judge {
    public:
        std::string id() const override { return "picky"; }
        std::string reply(const JudgeRequest& req, const JudgePrompt&) override {
            if (req.metric == Metric::Temporal && req.question.find('1') != std::string::npos) return "no idea";
            return "Score: 4";
        }
    } picky;
    EchoPredictor echo;
    EvalOptions opts;
    opts.metrics = {Metric::Correctness, Metric::Temporal};
    const auto res = run_eval(tiny_benchmark(true), echo, picky, opts);
    CHECK(res.scorecard.incomplete == std::vector<std::string>{"temporal"});
    REQUIRE(res.scorecard.metrics.size() == 2);
    CHECK(res.scorecard.metrics[1].n == 2);
    CHECK(res.scorecard.metrics[1].failures == 1);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("raw reply: no idea") != std::string::npos);
}

TEST_CASE("API judge over HTTP", "[eval]") {
    httplib::Server server;
    std::string seen_auth, seen_body;
    server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        res.set_content(R"({"choices":[{"message":{"content":"Score: 4 because it is close."}}]})", "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("AVX_JUDGE_TOKEN", "secret-token", 1);
    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    ApiJudge ok({base + "/v1/chat", "judge-model", "AVX_JUDGE_TOKEN", 5});
    const auto rec = judge_one(request("Red square.", "Blue square."), ok, "s1");
    CHECK(rec.score == 4);
    CHECK(rec.judge == "api");
    CHECK(seen_auth == "Bearer secret-token");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "judge-model");
    CHECK(body["messages"][1]["content"].get<std::string>().find("Blue square.") != std::string::npos);

    ApiJudge broken({base + "/broken", "m", "AVX_JUDGE_TOKEN", 5});
    CHECK_THROWS_AS(judge_one(request("a", "b"), broken, "s2"), TransportError);

    server.stop();
    t.join();
    ::unsetenv("AVX_JUDGE_TOKEN");

    ApiJudge dead({base + "/v1/chat", "m", "AVX_JUDGE_TOKEN", 1});
    CHECK_THROWS_AS(judge_one(request("a", "b"), dead, "s3"), TransportError);
    CHECK_THROWS_AS(ApiJudge({"ftp://nowhere", "m", "X", 1}), ConfigError);
}
