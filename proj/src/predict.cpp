#include "avx/predict.hpp"

namespace avx {

SampleMedia load_media(const AvModel& model, const InstructionSample& sample, const std::filesystem::path& base_dir,
                       const InferOptions& opts) {
    NoGradGuard no_grad;
    SampleMedia media;
    if (sample.audio && !opts.no_audio) {
        const auto path = base_dir / *sample.audio;
        if (!std::filesystem::is_regular_file(path)) throw MissingInputError("missing audio file " + path.string());
        media.audio = model.audio_tokens(load_wav(path));
    }
    if (sample.frames && !opts.no_video) {
        const auto path = base_dir / *sample.frames;
        if (!std::filesystem::is_directory(path)) throw MissingInputError("missing frame directory " + path.string());
        media.video = model.video_tokens(load_frames(path));
    }
    return media;
}

std::string answer_question(const AvModel& model, const SampleMedia& media, const std::string& question,
                            const InferOptions& opts) {
    NoGradGuard no_grad;
    const auto prompt = encode_prompt(question);
    const auto prefix = assemble_sequence(media.audio ? &*media.audio : nullptr, media.video ? &*media.video : nullptr,
                                          prompt, {}, model);
    return decode(generate(prefix, model, opts.max_new));
}

Prediction ModelPredictor::predict(const InstructionSample& sample, bool want_paired) {
    const auto media = load_media(model_, sample, base_dir_, opts_);
    Prediction p{answer_question(model_, media, sample.question, opts_), std::nullopt};
    if (want_paired && sample.paired_question) p.paired = answer_question(model_, media, *sample.paired_question, opts_);
    return p;
}

}  // namespace avx
