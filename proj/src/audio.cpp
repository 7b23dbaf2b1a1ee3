#include "avx/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

namespace avx::AVX_ABI_NS {

namespace {

uint32_t read_u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24); }
uint16_t read_u16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void write_u32(std::ostream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioWaveform load_wav(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto bad = [&](const std::string& why) { return FormatError(path.string() + ": " + why); };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw bad("not a RIFF/WAVE file");
    }

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const unsigned char* data = nullptr;
    size_t data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + pos;
        const uint32_t len = read_u32(hdr + 4);
        const size_t body = pos + 8;
        if (body + len > bytes.size()) {
            // Truncated data chunks are common in the wild; accept what is there.
            if (std::memcmp(hdr, "data", 4) != 0) throw bad("chunk overruns file");
        }
        const size_t avail = std::min<size_t>(len, bytes.size() - body);
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (avail < 16) throw bad("fmt chunk too short");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            if (format == kFormatExtensible) {
                if (avail < 26) throw bad("extensible fmt chunk too short");
                format = read_u16(bytes.data() + body + 24);
            }
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = avail;
        }
        pos = body + len + (len & 1);
    }
    if (channels == 0 || rate == 0) throw bad("missing or invalid fmt chunk");
    if (!data) throw bad("missing data chunk");
    if (channels > 2) throw UnsupportedError(path.string() + ": " + std::to_string(channels) + " channels");

    std::vector<float> interleaved;
    if (format == kFormatPcm && bits == 16) {
        interleaved.resize(data_len / 2);
        for (size_t i = 0; i < interleaved.size(); ++i) {
            const auto s = static_cast<int16_t>(read_u16(data + 2 * i));
            interleaved[i] = static_cast<float>(s) / 32768.0f;
        }
    } else if (format == kFormatFloat && bits == 32) {
        interleaved.resize(data_len / 4);
        std::memcpy(interleaved.data(), data, interleaved.size() * 4);
    } else {
        throw UnsupportedError(path.string() + ": codec " + std::to_string(format) + " with " + std::to_string(bits) +
                               " bits (need PCM16 or float32)");
    }

    AudioWaveform w;
    w.sample_rate = static_cast<int>(rate);
    const size_t frames = interleaved.size() / channels;
    w.samples.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        float v = channels == 2 ? 0.5f * (interleaved[2 * i] + interleaved[2 * i + 1]) : interleaved[i];
        if (!std::isfinite(v)) v = 0.0f;
        w.samples[i] = std::clamp(v, -1.0f, 1.0f);
    }
    if (w.samples.empty()) throw bad("no samples");
    if (w.sample_rate != kCanonicalSampleRate) w = resample_linear(w, kCanonicalSampleRate);
    return w;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioWaveform& w) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const auto n = static_cast<uint32_t>(w.samples.size());
    os.write("RIFF", 4);
    write_u32(os, 36 + 2 * n);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    write_u32(os, 16);
    write_u16(os, kFormatPcm);
    write_u16(os, 1);
    write_u32(os, static_cast<uint32_t>(w.sample_rate));
    write_u32(os, static_cast<uint32_t>(w.sample_rate) * 2);
    write_u16(os, 2);
    write_u16(os, 16);
    os.write("data", 4);
    write_u32(os, 2 * n);
    for (float s : w.samples) {
        const long q = std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f);
        write_u16(os, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

AudioWaveform resample_linear(const AudioWaveform& w, int target_rate) {
    if (w.sample_rate <= 0 || target_rate <= 0) throw ConfigError("sample rates must be positive");
    if (w.sample_rate == target_rate) return w;
    const size_t n_in = w.samples.size();
    const auto n_out = static_cast<size_t>(
        std::llround(static_cast<double>(n_in) * target_rate / static_cast<double>(w.sample_rate)));
    AudioWaveform out;
    out.sample_rate = target_rate;
    out.samples.resize(std::max<size_t>(n_out, 1));
    const double ratio = static_cast<double>(w.sample_rate) / target_rate;
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const double x = static_cast<double>(i) * ratio;
        const auto i0 = std::min(static_cast<size_t>(x), n_in - 1);
        const size_t i1 = std::min(i0 + 1, n_in - 1);
        const double frac = x - static_cast<double>(i0);
        out.samples[i] = static_cast<float>((1.0 - frac) * w.samples[i0] + frac * w.samples[i1]);
    }
    return out;
}

int LogMelConfig::padded_length() const {
    return static_cast<int>(std::lround(target_seconds * sample_rate));
}

int LogMelConfig::n_frames() const {
    const int len = padded_length();
    if (len < n_fft) throw ConfigError("target length shorter than one FFT window");
    return 1 + (len - n_fft) / hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const LogMelConfig& cfg) {
    const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
    std::vector<double> hz(static_cast<size_t>(cfg.n_mels + 2));
    for (size_t i = 0; i < hz.size(); ++i) {
        hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    }
    return hz;
}

// r2c plans are created once per size; execution with the new-array API is thread-safe.
fftwf_plan plan_for(int n) {
    static std::mutex mu;
    static std::map<int, fftwf_plan> plans;
    std::lock_guard lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    float* in = fftwf_alloc_real(static_cast<size_t>(n));
    fftwf_complex* out = fftwf_alloc_complex(static_cast<size_t>(n / 2 + 1));
    fftwf_plan p = fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftwf_free(in);
    fftwf_free(out);
    plans[n] = p;
    return p;
}

}  // namespace

std::vector<double> mel_center_frequencies(const LogMelConfig& cfg) {
    auto edges = mel_edges(cfg);
    return {edges.begin() + 1, edges.end() - 1};
}

std::vector<float> mel_filterbank(const LogMelConfig& cfg) {
    const int bins = cfg.n_fft / 2 + 1;
    const auto edges = mel_edges(cfg);
    std::vector<float> fb(static_cast<size_t>(cfg.n_mels * bins), 0.0f);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[static_cast<size_t>(m)], center = edges[static_cast<size_t>(m) + 1],
                     right = edges[static_cast<size_t>(m) + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            fb[static_cast<size_t>(m * bins + k)] = static_cast<float>(std::max(0.0, std::min(up, down)));
        }
    }
    return fb;
}

LogMelSpectrogram log_mel(const AudioWaveform& w, const LogMelConfig& cfg) {
    if (w.sample_rate != cfg.sample_rate) {
        throw ConfigError("log_mel expects " + std::to_string(cfg.sample_rate) + " Hz input, got " +
                          std::to_string(w.sample_rate));
    }
    const int len = cfg.padded_length();
    const int n_frames = cfg.n_frames();
    const int bins = cfg.n_fft / 2 + 1;
    std::vector<float> signal(static_cast<size_t>(len), 0.0f);
    std::copy_n(w.samples.begin(), std::min<size_t>(w.samples.size(), signal.size()), signal.begin());

    std::vector<float> window(static_cast<size_t>(cfg.n_fft));
    for (int i = 0; i < cfg.n_fft; ++i) {
        window[static_cast<size_t>(i)] =
            static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.n_fft));
    }
    const auto fb = mel_filterbank(cfg);
    fftwf_plan plan = plan_for(cfg.n_fft);
    float* in = fftwf_alloc_real(static_cast<size_t>(cfg.n_fft));
    fftwf_complex* out = fftwf_alloc_complex(static_cast<size_t>(bins));
    std::vector<float> power(static_cast<size_t>(bins));

    LogMelSpectrogram spec;
    spec.n_mels = cfg.n_mels;
    spec.n_frames = n_frames;
    spec.hop_samples = cfg.hop;
    spec.values.assign(static_cast<size_t>(cfg.n_mels) * n_frames, 0.0f);
    for (int t = 0; t < n_frames; ++t) {
        const float* frame = signal.data() + static_cast<ptrdiff_t>(t) * cfg.hop;
        for (int i = 0; i < cfg.n_fft; ++i) in[i] = frame[i] * window[static_cast<size_t>(i)];
        fftwf_execute_dft_r2c(plan, in, out);
        for (int k = 0; k < bins; ++k) power[static_cast<size_t>(k)] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0;
            const float* row = fb.data() + static_cast<ptrdiff_t>(m) * bins;
            for (int k = 0; k < bins; ++k) e += static_cast<double>(row[k]) * power[static_cast<size_t>(k)];
            spec.values[static_cast<size_t>(m) * n_frames + t] = static_cast<float>(std::log10(std::max(e, 1e-10)));
        }
    }
    fftwf_free(in);
    fftwf_free(out);

    const float peak = *std::max_element(spec.values.begin(), spec.values.end());
    const float floor = peak - 8.0f;
    for (auto& v : spec.values) v = (std::max(v, floor) + 4.0f) / 4.0f;
    spec.floor_db = (floor + 4.0f) / 4.0f;
    return spec;
}

AudioEncoder AudioEncoder::create(ParameterSet& set, const AudioEncoderConfig& cfg, const Initializer& init) {
    if (cfg.d_model % cfg.n_heads != 0) throw ConfigError("audio d_model must be divisible by n_heads");
    AudioEncoder e;
    e.cfg = cfg;
    const int64_t d = cfg.d_model;
    e.conv1_w = set.add("audio.conv1.w", init.normal("audio.conv1.w", {3 * int64_t{cfg.n_mels}, d}, 0.1));
    e.conv1_b = set.add("audio.conv1.b", Tensor::zeros({d}));
    e.conv2_w = set.add("audio.conv2.w", init.normal("audio.conv2.w", {3 * d, d}, 0.1));
    e.conv2_b = set.add("audio.conv2.b", Tensor::zeros({d}));
    for (int l = 0; l < cfg.n_layers; ++l) {
        e.layers.push_back(make_block(set, "audio.layers." + std::to_string(l), d, 4 * d, init));
    }
    e.ln_g = set.add("audio.ln_post.g", Tensor::full({d}, 1));
    e.ln_b = set.add("audio.ln_post.b", Tensor::zeros({d}));
    return e;
}

Tensor encode_audio(const LogMelSpectrogram& m, const AudioEncoder& enc) {
    if (m.n_mels != enc.cfg.n_mels) {
        throw ConfigError("spectrogram has " + std::to_string(m.n_mels) + " mel bins, encoder expects " +
                          std::to_string(enc.cfg.n_mels));
    }
    // Frame-major [n_frames x n_mels] input.
    std::vector<Scalar> x(static_cast<size_t>(m.n_frames) * m.n_mels);
    for (int t = 0; t < m.n_frames; ++t)
        for (int b = 0; b < m.n_mels; ++b) x[static_cast<size_t>(t) * m.n_mels + b] = m.at(b, t);
    Tensor h = Tensor::from({m.n_frames, m.n_mels}, std::move(x));
    h = gelu(conv1d(h, enc.conv1_w, enc.conv1_b, 3, 1, 1));
    h = gelu(conv1d(h, enc.conv2_w, enc.conv2_b, 3, 2, 1));
    h = add(h, sinusoidal_positions(h.rows(), h.cols()));
    for (const auto& layer : enc.layers) h = block_forward(layer, h, enc.cfg.n_heads, {});
    return layer_norm(h, enc.ln_g, enc.ln_b);
}

std::vector<int> budget_chunk_sizes(int frames, int budget) {
    if (frames < 1 || budget < 1) throw ContractError("chunking needs at least one frame and one token");
    const int n = std::max(frames, budget);
    std::vector<int> sizes(static_cast<size_t>(budget), n / budget);
    for (int c = 0; c < n % budget; ++c) ++sizes[static_cast<size_t>(c)];
    return sizes;
}

AudioTokens pool_to_budget(const Tensor& h, int budget) {
    const auto frames = static_cast<int>(h.rows());
    const auto sizes = budget_chunk_sizes(frames, budget);
    RowMix mix(sizes.size());
    int64_t start = 0;
    for (size_t c = 0; c < sizes.size(); ++c) {
        const Scalar w = Scalar(1) / static_cast<Scalar>(sizes[c]);
        for (int i = 0; i < sizes[c]; ++i) {
            // Frames past the end repeat the last one.
            mix[c].emplace_back(std::min<int64_t>(start + i, frames - 1), w);
        }
        start += sizes[c];
    }
    return {mix_rows(h, mix)};
}

}  // namespace avx
