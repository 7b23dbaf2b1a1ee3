#pragma once

// Greedy answering for a single instruction sample, and the model-backed
// predictor used by the evaluation driver.

#include <filesystem>
#include <map>
#include <string>

#include "avx/eval.hpp"
#include "avx/model.hpp"

namespace avx {

struct InferOptions {
    int max_new = 64;
    bool no_audio = false;  // leave the audio span empty
    bool no_video = false;
};

// Encoded media for one sample; spans the options disable stay empty.
struct SampleMedia {
    std::optional<AudioTokens> audio;
    std::optional<VideoTokens> video;
};

SampleMedia load_media(const AvModel& model, const InstructionSample& sample, const std::filesystem::path& base_dir,
                       const InferOptions& opts);

std::string answer_question(const AvModel& model, const SampleMedia& media, const std::string& question,
                            const InferOptions& opts);

class ModelPredictor : public Predictor {
public:
    ModelPredictor(const AvModel& model, std::filesystem::path base_dir, InferOptions opts)
        : model_(model), base_dir_(std::move(base_dir)), opts_(opts) {}
    Prediction predict(const InstructionSample& sample, bool want_paired) override;

private:
    const AvModel& model_;
    std::filesystem::path base_dir_;
    InferOptions opts_;
};

}  // namespace avx
