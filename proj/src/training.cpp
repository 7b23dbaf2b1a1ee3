#include "avx/training.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

namespace avx {

namespace {

struct StageName {
    StageId id;
    const char* name;
};

constexpr StageName kStages[] = {
    {StageId::PretrainAudio, "pretrain_audio"},
    {StageId::PretrainVision, "pretrain_vision"},
    {StageId::PretrainLm, "pretrain_lm"},
    {StageId::FinetuneAv, "finetune_av"},
    {StageId::FinetuneVisionOnly, "finetune_vision_only"},
};

}  // namespace

StageId parse_stage(std::string_view id) {
    std::string norm(id);
    std::replace(norm.begin(), norm.end(), '-', '_');
    for (const auto& s : kStages)
        if (norm == s.name) return s.id;
    throw ConfigError("unknown stage '" + std::string(id) +
                      "' (expected pretrain-audio, pretrain-vision, pretrain-lm, finetune-av, finetune-vision-only)");
}

std::string to_string(StageId id) {
    for (const auto& s : kStages)
        if (s.id == id) return s.name;
    return "?";
}

StagePlan plan_stage(StageId id, const ModelConfig& cfg) {
    (void)cfg;
    StagePlan p;
    p.stage = id;
    const std::vector<std::string> encoders{"audio.*", "vision.*"};
    switch (id) {
        case StageId::PretrainAudio:
            p.trainable = {"proj.audio.*"};
            p.frozen = {"audio.*", "vision.*", "lm.*", "proj.vision.*", "lora.*"};
            p.use_audio = true;
            p.lr = 1e-3;
            break;
        case StageId::PretrainVision:
            p.trainable = {"proj.vision.*"};
            p.frozen = {"audio.*", "vision.*", "lm.*", "proj.audio.*", "lora.*"};
            p.use_video = true;
            p.lr = 1e-3;
            break;
        case StageId::PretrainLm:
            p.trainable = {"lm.*"};
            p.frozen = {"audio.*", "vision.*", "proj.*", "lora.*"};
            p.lr = 1e-3;
            break;
        case StageId::FinetuneAv:
            p.trainable = {"lora.*", "proj.audio.*", "proj.vision.*"};
            p.frozen = {"audio.*", "vision.*", "lm.*"};
            p.use_audio = p.use_video = true;
            p.adapters_active = true;
            p.lr = 2e-4;
            break;
        case StageId::FinetuneVisionOnly:
            p.trainable = {"lora.*", "proj.vision.*"};
            p.frozen = {"audio.*", "vision.*", "lm.*", "proj.audio.*"};
            p.use_video = true;
            p.adapters_active = true;
            p.lr = 2e-4;
            break;
    }
    return p;
}

bool glob_match(const std::string& pattern, const std::string& name) {
    return fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

PartitionResult partition(const StagePlan& plan, AvModel& model) {
    auto matches_any = [](const std::vector<std::string>& pats, const std::string& name) {
        return std::any_of(pats.begin(), pats.end(), [&](const std::string& p) { return glob_match(p, name); });
    };
    PartitionResult r;
    for (Parameter* p : model.all_parameters()) {
        const bool t = matches_any(plan.trainable, p->name);
        const bool f = matches_any(plan.frozen, p->name);
        if (t && f) throw ConfigError("parameter " + p->name + " is both trainable and frozen in " + to_string(plan.stage));
        if (!t && !f) throw ConfigError("parameter " + p->name + " is not covered by the " + to_string(plan.stage) + " plan");
        (t ? r.trainable : r.frozen).push_back(p->name);
    }
    return r;
}

PartitionResult apply_plan(const StagePlan& plan, AvModel& model) {
    auto r = partition(plan, model);
    const std::set<std::string> train(r.trainable.begin(), r.trainable.end());
    for (Parameter* p : model.all_parameters()) {
        const bool on = train.count(p->name) != 0;
        p->trainable = on;
        p->tensor.set_requires_grad(on);
    }
    model.set_adapters_active(plan.adapters_active);
    return r;
}

AccumulationSchedule accumulate(int micro_batch, int global_batch) {
    if (micro_batch < 1 || global_batch < 1) throw ConfigError("batch sizes must be positive");
    if (global_batch % micro_batch != 0) {
        throw ConfigError("global_batch " + std::to_string(global_batch) + " is not divisible by micro_batch " +
                          std::to_string(micro_batch));
    }
    return {global_batch / micro_batch, micro_batch, 1.0 / global_batch};
}

double lr_at(int64_t step, int64_t total, const StagePlan& plan) {
    const auto warmup = static_cast<int64_t>(std::ceil(plan.warmup_ratio * static_cast<double>(total)));
    if (step < warmup) return plan.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (!plan.cosine) return plan.lr;
    const double span = static_cast<double>(std::max<int64_t>(1, total - warmup));
    const double progress = static_cast<double>(step - warmup) / span;
    return plan.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<TrainExample> prepare_examples(const std::vector<InstructionSample>& samples,
                                           const std::filesystem::path& base_dir, const StagePlan& plan,
                                           const AvModel& model) {
    NoGradGuard no_grad;
    std::vector<TrainExample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        TrainExample ex;
        ex.id = s.id;
        ex.prompt_ids = encode_prompt(s.question);
        ex.answer_ids = encode_answer(s.answer);
        if (plan.use_audio && s.audio) {
            const auto path = base_dir / *s.audio;
            if (!std::filesystem::is_regular_file(path)) throw MissingInputError("missing audio file " + path.string());
            ex.audio = model.audio_tokens(load_wav(path));
        }
        if (plan.use_video && s.frames) {
            const auto path = base_dir / *s.frames;
            if (!std::filesystem::is_directory(path)) throw MissingInputError("missing frame directory " + path.string());
            ex.video = model.video_tokens(load_frames(path));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

MultimodalSequence build_sequence(const TrainExample& ex, const AvModel& model, bool with_answer) {
    const std::span<const int> answer = with_answer ? std::span<const int>(ex.answer_ids) : std::span<const int>();
    return assemble_sequence(ex.audio ? &*ex.audio : nullptr, ex.video ? &*ex.video : nullptr, ex.prompt_ids, answer,
                             model);
}

uint64_t model_checksum(const AvModel& model) {
    uint64_t h = 14695981039346656037ull;
    for (const auto& [name, sum] : model.all_checksums()) {
        for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
        for (int b = 0; b < 8; ++b) h = (h ^ ((sum >> (8 * b)) & 0xff)) * 1099511628211ull;
    }
    return h;
}

TrainReport run_stage(const StagePlan& plan, const std::vector<TrainExample>& data, AvModel& model,
                      std::ostream* log) {
    if (data.empty()) throw ConfigError("training data is empty");
    const auto sched = accumulate(plan.micro_batch, plan.global_batch);
    const auto parts = apply_plan(plan, model);
    const auto start = std::chrono::steady_clock::now();
    const auto before = model.all_checksums();

    const auto n = static_cast<int64_t>(data.size());
    const int64_t steps_per_epoch = (n + plan.global_batch - 1) / plan.global_batch;
    const int64_t total = plan.steps > 0 ? plan.steps : std::max<int64_t>(1, plan.epochs) * steps_per_epoch;

    AdamWOptions opts;
    opts.lr = plan.lr;
    opts.weight_decay = plan.weight_decay;
    AdamW opt(opts);
    std::vector<Parameter*> params = model.all_parameters();

    // Sample stream: a fresh seeded permutation each time the data runs out.
    std::mt19937_64 rng(plan.seed);
    std::vector<size_t> order;
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor == order.size()) {
            order.resize(data.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    TrainReport report;
    for (int64_t step = 0; step < total; ++step) {
        for (Parameter* p : params) p->tensor.zero_grad();
        const double lr = lr_at(step, total, plan);
        double step_loss = 0;
        for (int mb = 0; mb < sched.micro_batches; ++mb) {
            std::vector<MultimodalSequence> seqs;
            int64_t longest = 0;
            for (int i = 0; i < sched.micro_size; ++i) {
                seqs.push_back(build_sequence(data[next_index()], model));
                longest = std::max(longest, seqs.back().length());
            }
            Tensor micro_loss;
            for (auto& seq : seqs) {
                Tensor l = lm_loss(pad_sequence(seq, longest, model), model);
                micro_loss = micro_loss.defined() ? add(micro_loss, l) : l;
            }
            micro_loss = scale(micro_loss, static_cast<Scalar>(sched.loss_scale));
            const double value = micro_loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("non-finite loss at step " + std::to_string(step) + ", batch " +
                                   std::to_string(mb));
            }
            step_loss += value;
            backward(micro_loss);
        }
        opt.step(params, lr);
        report.losses.push_back(step_loss);
        report.lrs.push_back(lr);
        if (log) {
            const double ts = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
            *log << nlohmann::json{{"step", step + 1}, {"loss", step_loss}, {"lr", lr}, {"timestamp", ts}}.dump()
                 << '\n';
        }
    }
    for (Parameter* p : params) p->tensor.zero_grad();

    const auto after = model.all_checksums();
    const std::set<std::string> frozen(parts.frozen.begin(), parts.frozen.end());
    for (const auto& [name, sum] : after) {
        if (before.at(name) == sum) continue;
        report.changed.push_back(name);
        if (frozen.count(name)) report.frozen_intact = false;
    }
    report.updated = static_cast<int>(parts.trainable.size());
    report.frozen = static_cast<int>(parts.frozen.size());
    report.checksum = model_checksum(model);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace avx
