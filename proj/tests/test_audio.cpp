#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "avx/audio.hpp"
#include "avx/params.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace avx;
using Catch::Approx;
using testing_support::TempDir;

namespace {

AudioWaveform sine(double hz, double seconds, double amp = 0.5) {
    AudioWaveform w;
    w.samples.resize(static_cast<size_t>(std::lround(seconds * w.sample_rate)));
    for (size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * double(i) / w.sample_rate));
    return w;
}

void put16(std::string& s, uint16_t v) { s.append({char(v & 0xff), char(v >> 8)}); }
void put32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

// Minimal WAV writer for formats the library only reads.
void write_raw_wav(const std::filesystem::path& p, uint16_t format, uint16_t channels, uint32_t rate, uint16_t bits,
                   const std::string& payload) {
    std::string s = "RIFF";
    put32(s, static_cast<uint32_t>(36 + payload.size()));
    s += "WAVEfmt ";
    put32(s, 16);
    put16(s, format);
    put16(s, channels);
    put32(s, rate);
    put32(s, rate * channels * bits / 8);
    put16(s, static_cast<uint16_t>(channels * bits / 8));
    put16(s, bits);
    s += "data";
    put32(s, static_cast<uint32_t>(payload.size()));
    s += payload;
    std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("HTK mel scale round trips", "[audio]") {
    CHECK(hz_to_mel(0) == 0);
    CHECK(hz_to_mel(700) == Approx(2595.0 * std::log10(2.0)));
    for (double hz : {50.0, 440.0, 1000.0, 7999.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == Approx(hz).epsilon(1e-12));
}

TEST_CASE("thirty seconds give 2998 frames", "[audio]") {
    LogMelConfig cfg;
    CHECK(cfg.padded_length() == 480000);
    CHECK(cfg.n_frames() == 2998);
    const auto spec = log_mel(sine(440, 2.0));
    CHECK(spec.n_frames == 2998);
    CHECK(spec.n_mels == 80);
    CHECK(spec.values.size() == size_t{80} * 2998);
}

TEST_CASE("silence gives a constant spectrogram", "[audio]") {
    AudioWaveform w;
    w.samples.assign(16000, 0.0f);
    const auto spec = log_mel(w);
    for (float v : spec.values) CHECK(v == spec.values.front());
    // log10(1e-10) = -10, normalized as (-10 + 4) / 4.
    CHECK(spec.values.front() == Approx(-1.5f));
}

TEST_CASE("filterbank matches an independent construction", "[audio]") {
    LogMelConfig cfg;
    const auto fb = mel_filterbank(cfg);
    const auto bank = oracle::triangle_bank({});
    const int bins = cfg.n_fft / 2 + 1;
    double worst = 0;
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int k = 0; k < bins; ++k)
            worst = std::max(worst, std::abs(double(fb[size_t(m) * bins + k]) - bank[size_t(m)][size_t(k)]));
    CHECK(worst < 1e-6);
}

TEST_CASE("log-mel agrees with a direct DFT", "[audio]") {
    LogMelConfig cfg;
    cfg.target_seconds = 0.25;
    const auto w = sine(1234.5, 0.25, 0.3);
    const auto spec = log_mel(w, cfg);
    const std::vector<double> x(w.samples.begin(), w.samples.end());
    const auto ref = oracle::dft_log_mel(x, {}, spec.n_frames);
    double peak = -1e9;
    for (const auto& row : ref) for (double v : row) peak = std::max(peak, v);
    double worst = 0;
    for (int t = 0; t < spec.n_frames; ++t) {
        for (int m = 0; m < spec.n_mels; ++m) {
            const double expect = (std::max(ref[size_t(t)][size_t(m)], peak - 8.0) + 4.0) / 4.0;
            worst = std::max(worst, std::abs(expect - spec.at(m, t)));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("a 440 Hz tone peaks in mel bin 15", "[audio]") {
    // Bin 15 is the oracle's answer for the 80-bin HTK bank; frozen here.
    const auto w = sine(440, 1.0);
    const auto spec = log_mel(w);
    const std::vector<double> x(w.samples.begin(), w.samples.end());
    const int interior = (16000 - 400) / 160 + 1;  // frames fully inside the tone
    const auto ref = oracle::dft_log_mel(x, {}, interior);
    for (int t = 1; t < interior - 1; ++t) {
        int best = 0;
        for (int m = 1; m < spec.n_mels; ++m)
            if (spec.at(m, t) > spec.at(best, t)) best = m;
        CHECK(best == oracle::argmax(ref[size_t(t)]));
        CHECK(best == 15);
    }
}

TEST_CASE("log_mel rejects a mismatched sample rate", "[audio]") {
    AudioWaveform w;
    w.sample_rate = 8000;
    w.samples.assign(8000, 0.0f);
    CHECK_THROWS_AS(log_mel(w), ConfigError);
}

TEST_CASE("WAV reading", "[audio]") {
    TempDir dir;
    SECTION("PCM16 round trip") {
        const auto w = sine(300, 0.1);
        write_wav_pcm16(dir / "a.wav", w);
        const auto back = load_wav(dir / "a.wav");
        REQUIRE(back.samples.size() == w.samples.size());
        for (size_t i = 0; i < w.samples.size(); ++i) CHECK(back.samples[i] == Approx(w.samples[i]).margin(1e-4));
    }
    SECTION("stereo float32 is averaged") {
        std::string payload;
        for (float pair : {0.5f, -0.1f, 0.2f, 0.4f}) {
            char b[4];
            std::memcpy(b, &pair, 4);
            payload.append(b, 4);
        }
        write_raw_wav(dir / "s.wav", 3, 2, 16000, 32, payload);
        const auto w = load_wav(dir / "s.wav");
        REQUIRE(w.samples.size() == 2);
        CHECK(w.samples[0] == Approx(0.2f));
        CHECK(w.samples[1] == Approx(0.3f));
    }
    SECTION("8 kHz input is resampled") {
        std::string payload;
        for (int i = 0; i < 800; ++i) put16(payload, 0);
        write_raw_wav(dir / "r.wav", 1, 1, 8000, 16, payload);
        const auto w = load_wav(dir / "r.wav");
        CHECK(w.sample_rate == 16000);
        CHECK(w.samples.size() == 1600);
    }
    SECTION("unsupported layouts") {
        std::string payload(12, '\0');
        write_raw_wav(dir / "c.wav", 1, 3, 16000, 16, payload);
        CHECK_THROWS_AS(load_wav(dir / "c.wav"), UnsupportedError);
        write_raw_wav(dir / "u.wav", 1, 1, 16000, 8, payload);
        CHECK_THROWS_AS(load_wav(dir / "u.wav"), UnsupportedError);
        std::ofstream(dir / "junk.wav") << "not audio at all";
        CHECK_THROWS_AS(load_wav(dir / "junk.wav"), FormatError);
    }
}

TEST_CASE("budget chunks split frames evenly", "[audio]") {
    CHECK(budget_chunk_sizes(10, 4) == std::vector<int>{3, 3, 2, 2});
    CHECK(budget_chunk_sizes(8, 8) == std::vector<int>(8, 1));
    CHECK(budget_chunk_sizes(1500, 64).size() == 64);
    CHECK_THROWS_AS(budget_chunk_sizes(0, 4), ContractError);
}

TEST_CASE("pooling to a budget", "[audio]") {
    SECTION("chunk means") {
        const Tensor h = Tensor::from({5, 1}, {1, 2, 3, 4, 5});
        const auto t = pool_to_budget(h, 2);
        REQUIRE(t.budget() == 2);
        CHECK(t.embeddings.at(0, 0) == Approx(2.0));
        CHECK(t.embeddings.at(1, 0) == Approx(4.5));
    }
    SECTION("short input repeats the last frame") {
        const Tensor h = Tensor::from({2, 1}, {1, 7});
        const auto t = pool_to_budget(h, 4);
        REQUIRE(t.budget() == 4);
        CHECK(t.embeddings.at(0, 0) == 1);
        for (int i = 1; i < 4; ++i) CHECK(t.embeddings.at(i, 0) == 7);
    }
}

TEST_CASE("audio encoder halves the frame count", "[audio]") {
    ParameterSet set;
    AudioEncoderConfig cfg;
    cfg.n_mels = 16;
    const auto enc = AudioEncoder::create(set, cfg, Initializer(1));
    LogMelConfig mel;
    mel.n_mels = 16;
    mel.target_seconds = 1.0;
    const auto spec = log_mel(sine(500, 1.0), mel);
    CHECK(spec.n_frames == 98);
    const Tensor h = encode_audio(spec, enc);
    CHECK(h.rows() == 49);
    CHECK(h.cols() == cfg.d_model);

    LogMelConfig wrong = mel;
    wrong.n_mels = 20;
    CHECK_THROWS_AS(encode_audio(log_mel(sine(500, 1.0), wrong), enc), ConfigError);
}
