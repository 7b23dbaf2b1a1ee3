#pragma once

// Audio-visual-text model: two modality branches, mlp2x-gelu projectors and a
// causal decoder over the concatenated [audio][video][text] sequence, with
// optional LoRA adapters on the attention q/v projections.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avx/audio.hpp"
#include "avx/params.hpp"
#include "avx/tokenizer.hpp"
#include "avx/vision.hpp"

namespace avx::AVX_ABI_NS {

struct LmConfig {
    int vocab = kVocabSize;
    int d_lm = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_positions = 128;
    int audio_budget = 8;  // A
    int vision_grid = 2;   // spatial tokens = grid^2
    int n_frames = 4;      // temporal tokens = N

    int video_tokens() const { return vision_grid * vision_grid + n_frames; }
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    double scale() const { return alpha / rank; }
};

struct ModelConfig {
    LogMelConfig mel;
    AudioEncoderConfig audio;
    VisionEncoderConfig vision;
    LmConfig lm;
    LoraConfig lora;
    int proj_hidden = 0;  // 0: use d_lm

    static ModelConfig toy();
    // Token geometry of the reference system (A=64, 27x27 grid, N=100) on a
    // narrow LM; encoders stay tiny.
    static ModelConfig paper_scale();

    int projector_hidden() const { return proj_hidden > 0 ? proj_hidden : lm.d_lm; }
    void validate() const;  // throws ConfigError
    std::vector<std::pair<std::string, double>> to_meta() const;
    static ModelConfig from_meta(const std::map<std::string, double>& meta);
};

struct ProjectorParams {
    Tensor w1, b1, w2, b2;
    int64_t d_in() const { return w1.rows(); }
    int64_t d_out() const { return w2.cols(); }

    static ProjectorParams create(ParameterSet& set, const std::string& prefix, int64_t d_in, int64_t d_hidden,
                                  int64_t d_out, const Initializer& init);
};

// W2 * gelu(W1 x + b1) + b2, row-wise.
Tensor project(const Tensor& tokens, const ProjectorParams& p);

struct LmParams {
    Tensor tok_emb, pos_emb;
    std::vector<BlockParams> layers;
    Tensor ln_f_g, ln_f_b, head_w;
};

class AvModel {
public:
    static AvModel create(const ModelConfig& cfg, uint64_t seed);
    // Loads base weights (and adapters when `adapters` is given).
    static AvModel load(const std::filesystem::path& base,
                        const std::optional<std::filesystem::path>& adapters = std::nullopt);

    AvModel(AvModel&&) = default;
    AvModel& operator=(AvModel&&) = default;
    AvModel(const AvModel&) = delete;
    AvModel& operator=(const AvModel&) = delete;

    void save(const std::filesystem::path& path) const;
    void save_adapters(const std::filesystem::path& path) const;
    void load_adapters(const std::filesystem::path& path);

    // Materialises W + (alpha/r) B A into the q/v weights and resets B to zero.
    void merge_adapters();

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    ParameterSet& adapters() { return adapters_; }
    const ParameterSet& adapters() const { return adapters_; }
    // Base parameters followed by adapters.
    std::vector<Parameter*> all_parameters();
    std::map<std::string, uint64_t> all_checksums() const;

    bool adapters_active() const { return adapters_active_; }
    void set_adapters_active(bool on) { adapters_active_ = on; }

    const AudioEncoder& audio_encoder() const { return audio_; }
    const VisionEncoder& vision_encoder() const { return vision_; }
    const ProjectorParams& audio_projector() const { return proj_audio_; }
    const ProjectorParams& vision_projector() const { return proj_vision_; }
    const LmParams& lm() const { return lm_; }
    const std::vector<BlockLora>& lora() const { return lora_; }

    // Full modality branches up to (not including) projection.
    AudioTokens audio_tokens(const AudioWaveform& w) const;
    VideoTokens video_tokens(const VideoClip& clip) const;

private:
    AvModel() = default;
    void build(uint64_t seed);

    ModelConfig cfg_;
    ParameterSet params_;
    ParameterSet adapters_;
    bool adapters_active_ = true;
    AudioEncoder audio_;
    VisionEncoder vision_;
    ProjectorParams proj_audio_, proj_vision_;
    LmParams lm_;
    std::vector<BlockLora> lora_;
};

struct SpanRange {
    int64_t begin = 0, end = 0;
    int64_t size() const { return end - begin; }
};

struct MultimodalSequence {
    Tensor embeddings;              // [L x d_lm]
    std::vector<int> labels;        // next-token id on answer-predicting positions, else kIgnoreLabel
    std::vector<uint8_t> key_valid; // 0 on padding positions
    SpanRange audio, video, text;
    std::vector<int> text_ids;      // prompt + answer ids as embedded

    int64_t length() const { return embeddings.rows(); }
    int64_t supervised() const;
};

// [proj(audio)][proj(video)][prompt][answer]. Labels shift the answer one
// position left so each position predicts the next token; absent modalities
// contribute empty spans.
MultimodalSequence assemble_sequence(const AudioTokens* audio, const VideoTokens* video,
                                     std::span<const int> prompt_ids, std::span<const int> answer_ids,
                                     const AvModel& model);

// Appends PAD positions up to `length`; they are ignored by the loss and
// masked out as attention keys.
MultimodalSequence pad_sequence(const MultimodalSequence& seq, int64_t length, const AvModel& model);

Tensor forward_lm(const MultimodalSequence& seq, const AvModel& model);
Tensor lm_loss(const MultimodalSequence& seq, const AvModel& model);

// Greedy decoding from a sequence assembled without an answer. Stops at EOS,
// after max_new tokens, or when the position table is exhausted.
std::vector<int> generate(const MultimodalSequence& prefix, const AvModel& model, int max_new);

}  // namespace avx
