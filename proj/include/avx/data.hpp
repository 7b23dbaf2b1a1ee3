#pragma once

// Instruction-sample schema (JSONL), prompt templates, benchmark validation
// and synthetic fixture generation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avx/errors.hpp"

namespace avx {

struct InstructionSample {
    std::string id;
    std::optional<std::string> audio;   // WAV path, relative to the JSONL file
    std::optional<std::string> frames;  // frame directory, relative to the JSONL file
    std::string question;
    std::string answer;
    std::optional<std::string> paired_question;
    nlohmann::json extra = nlohmann::json::object();  // unknown keys, kept verbatim

    bool operator==(const InstructionSample&) const = default;
};

enum class LoadMode {
    Train,    // answer required
    Eval,     // answer required (reference)
    Inference // answer optional
};

InstructionSample sample_from_json(const nlohmann::json& j, LoadMode mode);
nlohmann::json sample_to_json(const InstructionSample& s);

// Errors carry the 1-based line number. Duplicate ids are a ValidationError.
std::vector<InstructionSample> load_jsonl(const std::filesystem::path& path, LoadMode mode = LoadMode::Train);
void write_jsonl(const std::filesystem::path& path, std::span<const InstructionSample> samples);

enum class TaskKind { Transcribe, Caption, VisualCaption, Qa };

struct PromptTemplate {
    std::string id;
    TaskKind kind;
    std::string text;
};

std::string to_string(TaskKind k);
// Placeholders a template of this kind must contain (and no others).
std::vector<std::string> required_placeholders(TaskKind k);
void check_template(const PromptTemplate& t);  // throws ConfigError
// Ten authored templates per pretraining kind; one for Qa.
const std::vector<PromptTemplate>& builtin_templates(TaskKind k);

// Wraps a transcription/caption pair as an instruction sample; the template is
// drawn uniformly by a generator seeded with `seed`.
InstructionSample to_instruction(const std::string& id, const std::string& media_path, const std::string& target,
                                 TaskKind kind, std::span<const PromptTemplate> templates, uint64_t seed);
size_t pick_template(size_t count, uint64_t seed);

struct BenchmarkSet {
    std::string name;
    std::string version = "1";
    std::vector<InstructionSample> samples;
    std::filesystem::path base_dir;  // media paths resolve against this

    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

BenchmarkSet load_benchmark(const std::filesystem::path& jsonl, LoadMode mode = LoadMode::Eval);

struct Violation {
    std::string sample_id;
    std::string kind;  // "duplicate id", "missing file", "answer length", "paired question"
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool clean() const { return violations.empty(); }
};

// Sentences are spans terminated by '.', '?' or '!' (a trailing unterminated
// span also counts).
int count_sentences(std::string_view text);
inline constexpr int kMinAnswerSentences = 1;
inline constexpr int kMaxAnswerSentences = 4;

ValidationReport validate_benchmark(const BenchmarkSet& set);

// --- synthetic fixtures ---------------------------------------------------

struct FixtureOptions {
    int image_size = 8;
    int square = 4;
    int frames = 8;
    double seconds = 1.0;
    int sample_rate = 16000;
};

// Ground truth that the generated media encode.
struct FixtureAttributes {
    std::string direction;  // "rising" | "falling"
    std::string pitch;      // "low" | "high"
    std::string color;      // "red" | "green" | "blue" | "yellow"

    bool operator==(const FixtureAttributes&) const = default;
};

// Writes <out>/benchmark.jsonl (QA with paired questions), <out>/pretrain_audio.jsonl,
// <out>/pretrain_vision.jsonl and the media they reference. n = 0 writes nothing.
BenchmarkSet make_fixtures(const std::filesystem::path& out, int n, uint64_t seed, const FixtureOptions& opts = {});

// Recovers attributes from media bytes alone (zero-crossing pitch track,
// dominant foreground colour).
FixtureAttributes analyze_media(const std::filesystem::path& wav, const std::filesystem::path& frames_dir);

std::string audio_answer(const FixtureAttributes& a);
std::string visual_answer(const FixtureAttributes& a);

}  // namespace avx
