#include <catch_amalgamated.hpp>

#include <fstream>

#include "avx/data.hpp"
#include "test_support.hpp"

using namespace avx;
using nlohmann::json;
using testing_support::TempDir;

TEST_CASE("sample records parse and keep unknown keys", "[data]") {
    const json j = json::parse(R"({"id":"s1","audio":"a.wav","question":"Q?","answer":"A.","mood":"calm","n":3})");
    const auto s = sample_from_json(j, LoadMode::Train);
    CHECK(s.id == "s1");
    CHECK(s.audio == std::optional<std::string>("a.wav"));
    CHECK_FALSE(s.frames.has_value());
    CHECK(s.extra["mood"] == "calm");
    CHECK(s.extra["n"] == 3);
    CHECK(sample_from_json(sample_to_json(s), LoadMode::Train) == s);
}

TEST_CASE("answers are required outside inference", "[data]") {
    const json j = json::parse(R"({"id":"s1","question":"Q?"})");
    CHECK_THROWS_AS(sample_from_json(j, LoadMode::Train), ValidationError);
    CHECK_THROWS_AS(sample_from_json(j, LoadMode::Eval), ValidationError);
    CHECK(sample_from_json(j, LoadMode::Inference).answer.empty());
    CHECK_THROWS_AS(sample_from_json(json::parse(R"({"question":"Q?","answer":"A"})"), LoadMode::Train),
                    ValidationError);
    CHECK_THROWS_AS(sample_from_json(json::parse(R"({"id":"x","answer":"A"})"), LoadMode::Train), ValidationError);
    CHECK_THROWS_AS(sample_from_json(json::parse(R"({"id":"x","question":3,"answer":"A"})"), LoadMode::Train),
                    ValidationError);
}

TEST_CASE("JSONL loading reports the failing line", "[data]") {
    TempDir dir;
    {
        std::ofstream os(dir / "bad.jsonl");
        os << R"({"id":"a","question":"Q","answer":"A."})" << "\n\n{not json\n";
    }
    try {
        load_jsonl(dir / "bad.jsonl");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("bad.jsonl:3") != std::string::npos);
    }
    {
        std::ofstream os(dir / "dup.jsonl");
        os << R"({"id":"a","question":"Q","answer":"A."})" << "\n" << R"({"id":"a","question":"Q2","answer":"B."})";
    }
    CHECK_THROWS_AS(load_jsonl(dir / "dup.jsonl"), ValidationError);
}

TEST_CASE("JSONL round trip", "[data]") {
    TempDir dir;
    InstructionSample s;
    s.id = "x";
    s.frames = "frames/x";
    s.question = "What?";
    s.answer = "That.";
    s.paired_question = "Which?";
    s.extra["kind"] = "visual";
    const std::vector<InstructionSample> v{s};
    write_jsonl(dir / "o.jsonl", v);
    CHECK(load_jsonl(dir / "o.jsonl") == v);
}

TEST_CASE("builtin templates", "[data]") {
    for (TaskKind k : {TaskKind::Transcribe, TaskKind::Caption, TaskKind::VisualCaption}) {
        const auto& ts = builtin_templates(k);
        CHECK(ts.size() == 10);
        for (const auto& t : ts) CHECK_NOTHROW(check_template(t));
    }
    CHECK_THROWS_AS(check_template({"t", TaskKind::Caption, "Describe."}), ConfigError);
    CHECK_THROWS_AS(check_template({"t", TaskKind::Caption, "{AUDIO}{VIDEO} Describe."}), ConfigError);
}

TEST_CASE("template choice is uniform", "[data]") {
    std::vector<int> counts(10, 0);
    for (uint64_t seed = 0; seed < 10000; ++seed) ++counts[pick_template(10, seed)];
    for (int c : counts) {
        CHECK(c >= 850);
        CHECK(c <= 1150);
    }
}

TEST_CASE("to_instruction fills media and template", "[data]") {
    const auto& ts = builtin_templates(TaskKind::Caption);
    const auto s = to_instruction("c1", "audio/c1.wav", "A dog barks.", TaskKind::Caption, ts, 5);
    CHECK(s.audio == std::optional<std::string>("audio/c1.wav"));
    CHECK(s.answer == "A dog barks.");
    CHECK(s.extra["template"] == ts[pick_template(ts.size(), 5)].id);
    CHECK_THROWS_AS(to_instruction("c1", "x", "y", TaskKind::VisualCaption, ts, 5), ConfigError);
    CHECK_THROWS_AS(to_instruction("c1", "x", "y", TaskKind::Qa, ts, 5), ConfigError);
}

TEST_CASE("sentence counting", "[data]") {
    CHECK(count_sentences("") == 0);
    CHECK(count_sentences("One.") == 1);
    CHECK(count_sentences("One. Two! Three?") == 3);
    CHECK(count_sentences("No terminal punctuation") == 1);
    CHECK(count_sentences("Ellipsis... then more.") == 2);
}

TEST_CASE("benchmark validation collects every violation", "[data]") {
    TempDir dir;
    std::filesystem::create_directories(dir / "frames/ok");
    std::ofstream(dir / "ok.wav") << "x";
    BenchmarkSet set;
    set.base_dir = dir.path();
    auto mk = [](std::string id, std::string answer) {
        InstructionSample s;
        s.id = std::move(id);
        s.question = "Q?";
        s.answer = std::move(answer);
        return s;
    };
    auto good = mk("good", "Fine.");
    good.audio = "ok.wav";
    good.frames = "frames/ok";
    auto missing = mk("missing", "Fine.");
    missing.audio = "nope.wav";
    auto verbose = mk("verbose", "A. B. C. D. E.");
    auto same = mk("same", "Fine.");
    same.paired_question = "Q?";
    auto blank = mk("blank", "Fine.");
    blank.paired_question = "  ";
    set.samples = {good, missing, verbose, same, blank, mk("good", "Again.")};

    const auto report = validate_benchmark(set);
    std::vector<std::string> kinds;
    for (const auto& v : report.violations) kinds.push_back(v.sample_id + ":" + v.kind);
    CHECK(kinds == std::vector<std::string>{"missing:missing file", "verbose:answer length", "same:paired question",
                                            "blank:paired question", "good:duplicate id"});
}

TEST_CASE("fixtures", "[data]") {
    TempDir dir;
    SECTION("zero samples write nothing") {
        const auto set = make_fixtures(dir / "empty", 0, 1);
        CHECK(set.samples.empty());
        CHECK_FALSE(std::filesystem::exists(dir / "empty/benchmark.jsonl"));
    }
    SECTION("media encode the recorded attributes") {
        const auto set = make_fixtures(dir / "fx", 8, 3);
        REQUIRE(set.samples.size() == 8);
        CHECK(validate_benchmark(set).clean());
        const auto loaded = load_benchmark(dir / "fx/benchmark.jsonl");
        CHECK(loaded.samples == set.samples);
        for (const auto& s : set.samples) {
            const auto& at = s.extra["attributes"];
            const FixtureAttributes want{at["direction"].get<std::string>(), at["pitch"].get<std::string>(),
                                         at["color"].get<std::string>()};
            CHECK(analyze_media(set.resolve(*s.audio), set.resolve(*s.frames)) == want);
            CHECK((s.answer == audio_answer(want) || s.answer == visual_answer(want)));
            CHECK(s.paired_question.has_value());
        }
        CHECK(std::filesystem::exists(dir / "fx/pretrain_audio.jsonl"));
        CHECK(std::filesystem::exists(dir / "fx/pretrain_vision.jsonl"));
    }
    SECTION("same seed, same bytes") {
        make_fixtures(dir / "a", 4, 9);
        make_fixtures(dir / "b", 4, 9);
        using testing_support::read_file;
        CHECK(read_file(dir / "a/benchmark.jsonl") == read_file(dir / "b/benchmark.jsonl"));
        CHECK(read_file(dir / "a/audio/fx_0002.wav") == read_file(dir / "b/audio/fx_0002.wav"));
        CHECK(read_file(dir / "a/frames/fx_0001/frame_000003.png") ==
              read_file(dir / "b/frames/fx_0001/frame_000003.png"));
    }
}
