#pragma once

// Stage plans (which parameters train, which modality spans are filled),
// gradient accumulation and the AdamW training loop.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avx/data.hpp"
#include "avx/model.hpp"

namespace avx {

enum class StageId {
    PretrainAudio,       // audio projector only
    PretrainVision,      // vision projector only (image-caption pass)
    PretrainLm,          // text-only pass over the base LM, stands in for a pretrained backbone
    FinetuneAv,          // LoRA + both projectors, both modalities
    FinetuneVisionOnly,  // LoRA + vision projector, audio span empty
};

// Accepts "pretrain-audio" and "pretrain_audio" spellings. Unknown ids throw ConfigError.
StageId parse_stage(std::string_view id);
std::string to_string(StageId id);

struct StagePlan {
    StageId stage = StageId::PretrainAudio;
    std::vector<std::string> trainable;  // fnmatch-style patterns
    std::vector<std::string> frozen;
    bool use_audio = false;
    bool use_video = false;
    bool adapters_active = false;

    int epochs = 1;
    int64_t steps = 0;  // > 0 overrides epochs
    double lr = 1e-3;
    double warmup_ratio = 0.03;
    bool cosine = true;
    double weight_decay = 0.01;
    int global_batch = 4;
    int micro_batch = 4;
    uint64_t seed = 0;
};

StagePlan plan_stage(StageId id, const ModelConfig& cfg);

bool glob_match(const std::string& pattern, const std::string& name);

struct PartitionResult {
    std::vector<std::string> trainable, frozen;
};

// Sorts every model parameter into the trainable or frozen set. A name that
// matches neither or both pattern lists throws ConfigError.
PartitionResult partition(const StagePlan& plan, AvModel& model);
// partition() plus setting the trainable flags and the adapter switch.
PartitionResult apply_plan(const StagePlan& plan, AvModel& model);

struct AccumulationSchedule {
    int micro_batches = 1;  // micro-batches per optimizer step
    int micro_size = 1;
    double loss_scale = 1.0;  // applied to the sum of per-sample losses of one micro-batch
};

AccumulationSchedule accumulate(int micro_batch, int global_batch);

double lr_at(int64_t step, int64_t total, const StagePlan& plan);

// Model inputs for one sample with the frozen encoder outputs cached.
struct TrainExample {
    std::string id;
    std::vector<int> prompt_ids;
    std::vector<int> answer_ids;
    std::optional<AudioTokens> audio;
    std::optional<VideoTokens> video;
};

// Loads and encodes media for the spans the plan fills. Missing media files
// raise std::runtime_error naming the path.
std::vector<TrainExample> prepare_examples(const std::vector<InstructionSample>& samples,
                                           const std::filesystem::path& base_dir, const StagePlan& plan,
                                           const AvModel& model);

MultimodalSequence build_sequence(const TrainExample& ex, const AvModel& model, bool with_answer = true);

struct TrainReport {
    std::vector<double> losses;
    std::vector<double> lrs;
    double wall_seconds = 0;
    uint64_t checksum = 0;  // over every parameter after training
    int updated = 0;
    int frozen = 0;
    bool frozen_intact = true;
    std::vector<std::string> changed;  // parameters whose bytes differ after the run

    double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

uint64_t model_checksum(const AvModel& model);

// Runs the plan. Writes one JSON line per optimizer step to `log` when given.
// A non-finite loss throws NumericError naming the step and batch.
TrainReport run_stage(const StagePlan& plan, const std::vector<TrainExample>& data, AvModel& model,
                      std::ostream* log = nullptr);

}  // namespace avx
