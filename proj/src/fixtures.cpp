#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "avx/audio.hpp"
#include "avx/data.hpp"
#include "avx/vision.hpp"

namespace avx {

namespace {

struct Rgb {
    float r, g, b;
};

constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<Rgb, 4> kColors{{{0.9f, 0.1f, 0.1f}, {0.1f, 0.8f, 0.1f}, {0.1f, 0.2f, 0.9f}, {0.9f, 0.85f, 0.1f}}};
constexpr float kBackground = 0.1f;
constexpr double kPitchSplitHz = 1200.0;

std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

AudioWaveform synth_tone(const FixtureAttributes& a, const FixtureOptions& o, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> jitter(0.9, 1.1);
    std::uniform_real_distribution<double> noise(-0.005, 0.005);
    const double base = (a.pitch == "low" ? 300.0 : 2000.0) * jitter(rng);
    const double lo = base, hi = 2.0 * base;
    const double f0 = a.direction == "rising" ? lo : hi;
    const double f1 = a.direction == "rising" ? hi : lo;
    AudioWaveform w;
    w.sample_rate = o.sample_rate;
    const auto n = static_cast<size_t>(std::lround(o.seconds * o.sample_rate));
    w.samples.resize(n);
    double phase = 0;
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n);
        const double f = f0 + (f1 - f0) * t;
        w.samples[i] = static_cast<float>(0.5 * std::sin(phase) + noise(rng));
        phase += 2.0 * std::numbers::pi * f / o.sample_rate;
    }
    return w;
}

std::vector<Image> synth_frames(const FixtureAttributes& a, const FixtureOptions& o) {
    size_t ci = 0;
    while (ci < kColorNames.size() && a.color != kColorNames[ci]) ++ci;
    const Rgb c = kColors.at(ci);
    std::vector<Image> frames;
    const int travel = o.image_size - o.square;
    const int y0 = travel / 2;
    for (int t = 0; t < o.frames; ++t) {
        Image img;
        img.height = img.width = o.image_size;
        img.rgb.assign(static_cast<size_t>(o.image_size) * o.image_size * 3, kBackground);
        const int x0 = o.frames > 1 ? (t * travel) / (o.frames - 1) : 0;
        for (int y = y0; y < y0 + o.square; ++y)
            for (int x = x0; x < x0 + o.square; ++x) {
                float* px = img.rgb.data() + (static_cast<size_t>(y) * o.image_size + x) * 3;
                px[0] = c.r;
                px[1] = c.g;
                px[2] = c.b;
            }
        frames.push_back(std::move(img));
    }
    return frames;
}

double zero_crossing_hz(const std::vector<float>& s, size_t begin, size_t end, int rate) {
    int crossings = 0;
    for (size_t i = begin + 1; i < end; ++i)
        if ((s[i - 1] < 0) != (s[i] < 0)) ++crossings;
    const double seconds = static_cast<double>(end - begin) / rate;
    return crossings / (2.0 * seconds);
}

}  // namespace

std::string audio_answer(const FixtureAttributes& a) { return capitalized(a.direction) + " " + a.pitch + " tone."; }
std::string visual_answer(const FixtureAttributes& a) { return capitalized(a.color) + " square."; }

BenchmarkSet make_fixtures(const std::filesystem::path& out, int n, uint64_t seed, const FixtureOptions& opts) {
    namespace fs = std::filesystem;
    BenchmarkSet set;
    set.name = "fixtures";
    set.base_dir = out;
    if (n <= 0) return set;
    if (opts.square > opts.image_size || opts.frames < 1) throw ConfigError("fixture geometry is inconsistent");

    std::error_code ec;
    fs::create_directories(out / "audio", ec);
    if (ec) throw std::runtime_error("cannot create " + (out / "audio").string() + ": " + ec.message());
    fs::create_directories(out / "frames", ec);
    if (ec) throw std::runtime_error("cannot create " + (out / "frames").string() + ": " + ec.message());

    std::mt19937_64 rng(seed);
    std::vector<InstructionSample> captions, visual_captions;
    for (int i = 0; i < n; ++i) {
        FixtureAttributes a;
        a.direction = std::uniform_int_distribution<int>(0, 1)(rng) ? "rising" : "falling";
        a.pitch = std::uniform_int_distribution<int>(0, 1)(rng) ? "high" : "low";
        a.color = kColorNames[static_cast<size_t>(std::uniform_int_distribution<int>(0, 3)(rng))];

        char id[16];
        std::snprintf(id, sizeof id, "fx_%04d", i);
        const std::string audio_rel = "audio/" + std::string(id) + ".wav";
        const std::string frames_rel = "frames/" + std::string(id);

        write_wav_pcm16(out / audio_rel, synth_tone(a, opts, rng));
        fs::create_directories(out / frames_rel, ec);
        if (ec) throw std::runtime_error("cannot create " + (out / frames_rel).string() + ": " + ec.message());
        const auto frames = synth_frames(a, opts);
        for (size_t t = 0; t < frames.size(); ++t) {
            write_png(out / frames_rel / frame_filename(static_cast<int>(t)), frames[t]);
        }

        const bool audio_question = i % 2 == 0;
        InstructionSample s;
        s.id = id;
        s.audio = audio_rel;
        s.frames = frames_rel;
        if (audio_question) {
            s.question = "How does the tone sound?";
            s.paired_question = "What does the tone do?";
            s.answer = audio_answer(a);
        } else {
            s.question = "What color is the square?";
            s.paired_question = "Which color does the square have?";
            s.answer = visual_answer(a);
        }
        s.extra["kind"] = audio_question ? "audio" : "visual";
        s.extra["attributes"] = {{"direction", a.direction}, {"pitch", a.pitch}, {"color", a.color}};
        set.samples.push_back(s);

        captions.push_back(to_instruction(s.id + "_cap", audio_rel, audio_answer(a), TaskKind::Caption,
                                          builtin_templates(TaskKind::Caption), seed * 7919 + static_cast<uint64_t>(i)));
        visual_captions.push_back(to_instruction(s.id + "_vcap", frames_rel, visual_answer(a), TaskKind::VisualCaption,
                                                 builtin_templates(TaskKind::VisualCaption),
                                                 seed * 7919 + static_cast<uint64_t>(i)));
    }
    write_jsonl(out / "benchmark.jsonl", set.samples);
    write_jsonl(out / "pretrain_audio.jsonl", captions);
    write_jsonl(out / "pretrain_vision.jsonl", visual_captions);
    return set;
}

FixtureAttributes analyze_media(const std::filesystem::path& wav, const std::filesystem::path& frames_dir) {
    FixtureAttributes a;
    const auto w = load_wav(wav);
    const size_t window = w.samples.size() / 5;
    const double start = zero_crossing_hz(w.samples, 0, window, w.sample_rate);
    const double end = zero_crossing_hz(w.samples, w.samples.size() - window, w.samples.size(), w.sample_rate);
    a.direction = end > start ? "rising" : "falling";
    a.pitch = 0.5 * (start + end) < kPitchSplitHz ? "low" : "high";

    const auto clip = load_frames(frames_dir);
    double acc[3] = {0, 0, 0};
    long count = 0;
    for (const auto& f : clip.frames)
        for (int y = 0; y < f.height; ++y)
            for (int x = 0; x < f.width; ++x) {
                const float r = f.at(y, x, 0), g = f.at(y, x, 1), b = f.at(y, x, 2);
                if (std::abs(r - kBackground) + std::abs(g - kBackground) + std::abs(b - kBackground) < 0.3f) continue;
                acc[0] += r;
                acc[1] += g;
                acc[2] += b;
                ++count;
            }
    if (count == 0) throw FormatError(frames_dir.string() + ": no foreground pixels");
    double best = 1e9;
    for (size_t c = 0; c < kColors.size(); ++c) {
        const double dr = acc[0] / count - kColors[c].r, dg = acc[1] / count - kColors[c].g,
                     db = acc[2] / count - kColors[c].b;
        const double dist = dr * dr + dg * dg + db * db;
        if (dist < best) {
            best = dist;
            a.color = kColorNames[c];
        }
    }
    return a;
}

}  // namespace avx
