#include "avx/data.hpp"

#include <fstream>
#include <random>
#include <set>

namespace avx {

using nlohmann::json;

namespace {

const std::set<std::string>& declared_keys() {
    static const std::set<std::string> keys{"id", "audio", "frames", "question", "answer", "paired_question"};
    return keys;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
}

}  // namespace

InstructionSample sample_from_json(const json& j, LoadMode mode) {
    if (!j.is_object()) throw ValidationError("record is not a JSON object");
    InstructionSample s;
    auto id = opt_string(j, "id");
    if (!id || id->empty()) throw ValidationError("missing required field 'id'");
    s.id = *id;
    s.audio = opt_string(j, "audio");
    s.frames = opt_string(j, "frames");
    s.question = opt_string(j, "question").value_or("");
    auto answer = opt_string(j, "answer");
    if (mode != LoadMode::Inference && (!answer || answer->empty())) {
        throw ValidationError("missing required field 'answer' in sample " + s.id);
    }
    s.answer = answer.value_or("");
    s.paired_question = opt_string(j, "paired_question");
    if (!s.audio && !s.frames && s.question.empty()) {
        throw ValidationError("sample " + s.id + " has none of 'audio', 'frames', 'question'");
    }
    for (const auto& [k, v] : j.items())
        if (!declared_keys().count(k)) s.extra[k] = v;
    return s;
}

json sample_to_json(const InstructionSample& s) {
    json j = json::object();
    j["id"] = s.id;
    if (s.audio) j["audio"] = *s.audio;
    if (s.frames) j["frames"] = *s.frames;
    j["question"] = s.question;
    j["answer"] = s.answer;
    if (s.paired_question) j["paired_question"] = *s.paired_question;
    for (const auto& [k, v] : s.extra.items()) j[k] = v;
    return j;
}

std::vector<InstructionSample> load_jsonl(const std::filesystem::path& path, LoadMode mode) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<InstructionSample> out;
    std::set<std::string> ids;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        }
        try {
            auto s = sample_from_json(j, mode);
            if (!ids.insert(s.id).second) throw ValidationError("duplicate id '" + s.id + "'");
            out.push_back(std::move(s));
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const InstructionSample> samples) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::Transcribe: return "transcribe";
        case TaskKind::Caption: return "caption";
        case TaskKind::VisualCaption: return "visual_caption";
        case TaskKind::Qa: return "qa";
    }
    return "?";
}

std::vector<std::string> required_placeholders(TaskKind k) {
    switch (k) {
        case TaskKind::Transcribe:
        case TaskKind::Caption: return {"{AUDIO}"};
        case TaskKind::VisualCaption: return {"{VIDEO}"};
        case TaskKind::Qa: return {"{AUDIO}", "{VIDEO}", "{QUESTION}"};
    }
    return {};
}

void check_template(const PromptTemplate& t) {
    const auto need = required_placeholders(t.kind);
    for (const std::string p : {"{AUDIO}", "{VIDEO}", "{QUESTION}"}) {
        const bool present = t.text.find(p) != std::string::npos;
        const bool wanted = std::find(need.begin(), need.end(), p) != need.end();
        if (present != wanted) {
            throw ConfigError("template " + t.id + (wanted ? " lacks " : " must not contain ") + p);
        }
    }
}

// Authored for this project; no published wording exists for these prompts.
const std::vector<PromptTemplate>& builtin_templates(TaskKind k) {
    static const std::vector<PromptTemplate> transcribe = {
        {"tr0", TaskKind::Transcribe, "{AUDIO}\nTranscribe the speech."},
        {"tr1", TaskKind::Transcribe, "{AUDIO}\nWrite down what is said."},
        {"tr2", TaskKind::Transcribe, "{AUDIO}\nWhat words are spoken?"},
        {"tr3", TaskKind::Transcribe, "{AUDIO}\nProvide a transcript."},
        {"tr4", TaskKind::Transcribe, "{AUDIO}\nConvert the audio to text."},
        {"tr5", TaskKind::Transcribe, "{AUDIO}\nRepeat the spoken words."},
        {"tr6", TaskKind::Transcribe, "{AUDIO}\nWhat does the speaker say?"},
        {"tr7", TaskKind::Transcribe, "{AUDIO}\nTranscribe this clip."},
        {"tr8", TaskKind::Transcribe, "{AUDIO}\nType out the utterance."},
        {"tr9", TaskKind::Transcribe, "{AUDIO}\nGive the exact words."},
    };
    static const std::vector<PromptTemplate> caption = {
        {"ca0", TaskKind::Caption, "{AUDIO}\nDescribe the sound."},
        {"ca1", TaskKind::Caption, "{AUDIO}\nWhat do you hear?"},
        {"ca2", TaskKind::Caption, "{AUDIO}\nCaption the audio."},
        {"ca3", TaskKind::Caption, "{AUDIO}\nSummarize the audio."},
        {"ca4", TaskKind::Caption, "{AUDIO}\nWhat is this sound?"},
        {"ca5", TaskKind::Caption, "{AUDIO}\nDescribe what is audible."},
        {"ca6", TaskKind::Caption, "{AUDIO}\nName the sound."},
        {"ca7", TaskKind::Caption, "{AUDIO}\nCharacterize this audio."},
        {"ca8", TaskKind::Caption, "{AUDIO}\nWhat can be heard?"},
        {"ca9", TaskKind::Caption, "{AUDIO}\nBriefly describe the audio."},
    };
    static const std::vector<PromptTemplate> visual = {
        {"vc0", TaskKind::VisualCaption, "{VIDEO}\nDescribe the video."},
        {"vc1", TaskKind::VisualCaption, "{VIDEO}\nWhat is shown?"},
        {"vc2", TaskKind::VisualCaption, "{VIDEO}\nCaption the clip."},
        {"vc3", TaskKind::VisualCaption, "{VIDEO}\nWhat do you see?"},
        {"vc4", TaskKind::VisualCaption, "{VIDEO}\nSummarize the frames."},
        {"vc5", TaskKind::VisualCaption, "{VIDEO}\nDescribe the scene."},
        {"vc6", TaskKind::VisualCaption, "{VIDEO}\nWhat is visible?"},
        {"vc7", TaskKind::VisualCaption, "{VIDEO}\nName the object."},
        {"vc8", TaskKind::VisualCaption, "{VIDEO}\nWhat appears here?"},
        {"vc9", TaskKind::VisualCaption, "{VIDEO}\nBriefly describe the clip."},
    };
    static const std::vector<PromptTemplate> qa = {
        {"qa0", TaskKind::Qa, "{AUDIO}{VIDEO}\n{QUESTION}"},
    };
    switch (k) {
        case TaskKind::Transcribe: return transcribe;
        case TaskKind::Caption: return caption;
        case TaskKind::VisualCaption: return visual;
        case TaskKind::Qa: return qa;
    }
    return qa;
}

size_t pick_template(size_t count, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> dist(0, count - 1);
    return dist(rng);
}

InstructionSample to_instruction(const std::string& id, const std::string& media_path, const std::string& target,
                                 TaskKind kind, std::span<const PromptTemplate> templates, uint64_t seed) {
    if (kind == TaskKind::Qa) throw ConfigError("to_instruction converts transcription or caption data only");
    if (templates.empty()) throw ConfigError("no templates for task " + to_string(kind));
    for (const auto& t : templates) {
        if (t.kind != kind) throw ConfigError("template " + t.id + " is not a " + to_string(kind) + " template");
        check_template(t);
    }
    const auto& t = templates[pick_template(templates.size(), seed)];
    InstructionSample s;
    s.id = id;
    if (kind == TaskKind::VisualCaption) {
        s.frames = media_path;
    } else {
        s.audio = media_path;
    }
    s.question = t.text;
    s.answer = target;
    s.extra["template"] = t.id;
    return s;
}

BenchmarkSet load_benchmark(const std::filesystem::path& jsonl, LoadMode mode) {
    BenchmarkSet set;
    set.name = jsonl.stem().string();
    set.base_dir = jsonl.parent_path();
    set.samples = load_jsonl(jsonl, mode);
    return set;
}

int count_sentences(std::string_view text) {
    int n = 0;
    bool content = false;
    for (char c : text) {
        if (c == '.' || c == '?' || c == '!') {
            if (content) ++n;
            content = false;
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            content = true;
        }
    }
    return n + (content ? 1 : 0);
}

ValidationReport validate_benchmark(const BenchmarkSet& set) {
    ValidationReport r;
    std::set<std::string> ids;
    for (const auto& s : set.samples) {
        if (!ids.insert(s.id).second) r.violations.push_back({s.id, "duplicate id", "id appears more than once"});
        if (s.audio && !std::filesystem::is_regular_file(set.resolve(*s.audio))) {
            r.violations.push_back({s.id, "missing file", set.resolve(*s.audio).string()});
        }
        if (s.frames && !std::filesystem::is_directory(set.resolve(*s.frames))) {
            r.violations.push_back({s.id, "missing file", set.resolve(*s.frames).string()});
        }
        const int sentences = count_sentences(s.answer);
        if (sentences < kMinAnswerSentences || sentences > kMaxAnswerSentences) {
            r.violations.push_back({s.id, "answer length", std::to_string(sentences) + " sentences"});
        }
        if (s.paired_question) {
            const auto& pq = *s.paired_question;
            if (pq.find_first_not_of(" \t\r\n") == std::string::npos) {
                r.violations.push_back({s.id, "paired question", "empty"});
            } else if (pq == s.question) {
                r.violations.push_back({s.id, "paired question", "identical to the question"});
            }
        }
    }
    return r;
}

}  // namespace avx
