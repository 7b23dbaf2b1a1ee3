#pragma once

// Audio branch: WAV ingest, log-mel frontend, a small conv-stem transformer
// encoder and chunk-mean pooling to a fixed token budget.

#include <filesystem>
#include <vector>

#include "avx/transformer.hpp"

namespace avx::AVX_ABI_NS {

inline constexpr int kCanonicalSampleRate = 16000;

struct AudioWaveform {
    std::vector<float> samples;  // mono, clamped to [-1, 1]
    int sample_rate = kCanonicalSampleRate;

    double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Reads RIFF/WAVE (PCM16 or float32, mono or stereo). Stereo is averaged and
// the result is linearly resampled to 16 kHz.
AudioWaveform load_wav(const std::filesystem::path& path);
void write_wav_pcm16(const std::filesystem::path& path, const AudioWaveform& w);
AudioWaveform resample_linear(const AudioWaveform& w, int target_rate);

struct LogMelConfig {
    int sample_rate = kCanonicalSampleRate;
    int n_fft = 400;
    int hop = 160;
    int n_mels = 80;
    double target_seconds = 30.0;
    double f_min = 0.0;
    double f_max = 8000.0;

    int padded_length() const;
    int n_frames() const;  // 1 + floor((padded_len - n_fft) / hop)
};

struct LogMelSpectrogram {
    int n_mels = 0;
    int n_frames = 0;
    int hop_samples = 0;
    float floor_db = 0;          // normalized clamp floor
    std::vector<float> values;   // [n_mels x n_frames], mel-major

    float at(int mel, int frame) const { return values[static_cast<size_t>(mel) * n_frames + frame]; }
};

double hz_to_mel(double hz);  // HTK: 2595 log10(1 + f/700)
double mel_to_hz(double mel);
// Triangular HTK filters, [n_mels x (n_fft/2 + 1)], unit peak.
std::vector<float> mel_filterbank(const LogMelConfig& cfg);
std::vector<double> mel_center_frequencies(const LogMelConfig& cfg);

LogMelSpectrogram log_mel(const AudioWaveform& w, const LogMelConfig& cfg = {});

struct AudioEncoderConfig {
    int n_mels = 80;
    int d_model = 32;
    int n_layers = 1;
    int n_heads = 2;
};

struct AudioEncoder {
    AudioEncoderConfig cfg;
    Tensor conv1_w, conv1_b, conv2_w, conv2_b;
    std::vector<BlockParams> layers;
    Tensor ln_g, ln_b;

    // Registers parameters under "audio.".
    static AudioEncoder create(ParameterSet& set, const AudioEncoderConfig& cfg, const Initializer& init);
};

// conv(k3,s1) + GELU, conv(k3,s2) + GELU, sinusoidal positions, blocks, final
// norm. Returns the last hidden state [ceil(n_frames/2) x d_model].
Tensor encode_audio(const LogMelSpectrogram& m, const AudioEncoder& enc);

struct AudioTokens {
    Tensor embeddings;  // [A x d]
    int budget() const { return static_cast<int>(embeddings.rows()); }
};

// Chunk boundaries used by pool_to_budget: sizes differ by at most one and the
// larger chunks come first.
std::vector<int> budget_chunk_sizes(int frames, int budget);
AudioTokens pool_to_budget(const Tensor& h, int budget);

}  // namespace avx
