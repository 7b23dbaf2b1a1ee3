#include <catch_amalgamated.hpp>

#include <random>

#include "avx/model.hpp"
#include "test_support.hpp"

using namespace avx;
using Catch::Approx;
using testing_support::TempDir;

namespace {

Tensor random_rows(std::mt19937_64& rng, int64_t rows, int64_t cols) {
    std::normal_distribution<float> nd;
    std::vector<Scalar> v(static_cast<size_t>(rows * cols));
    for (auto& x : v) x = nd(rng);
    return Tensor::from({rows, cols}, std::move(v));
}

struct Inputs {
    AudioTokens audio;
    VideoTokens video;
};

Inputs random_inputs(const ModelConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int g2 = cfg.lm.vision_grid * cfg.lm.vision_grid;
    return {AudioTokens{random_rows(rng, cfg.lm.audio_budget, cfg.audio.d_model)},
            VideoTokens{random_rows(rng, g2 + cfg.lm.n_frames, cfg.vision.d_model), g2, cfg.lm.n_frames}};
}

void randomize_adapters(AvModel& m, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd(0.0f, 0.2f);
    for (auto& p : m.adapters().all())
        for (auto& x : p.tensor.data()) x = nd(rng);
}

double max_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (size_t i = 0; i < a.data().size(); ++i) m = std::max(m, double(std::abs(a.data()[i] - b.data()[i])));
    return m;
}

}  // namespace

TEST_CASE("toy sequence layout", "[model]") {
    const auto cfg = ModelConfig::toy();
    const AvModel model = AvModel::create(cfg, 1);
    const auto in = random_inputs(cfg, 2);
    const auto prompt = encode_prompt("Hi?");
    const auto answer = encode_answer("Yo");
    const auto seq = assemble_sequence(&in.audio, &in.video, prompt, answer, model);
    const int64_t T = static_cast<int64_t>(prompt.size() + answer.size());
    CHECK(seq.length() == 8 + 4 + 4 + T);
    CHECK(seq.audio.size() == 8);
    CHECK(seq.video.begin == 8);
    CHECK(seq.video.size() == 8);
    CHECK(seq.text.begin == 16);
    CHECK(seq.embeddings.cols() == cfg.lm.d_lm);
    // Position before each answer token predicts it; the rest are ignored.
    const int64_t first = 16 + static_cast<int64_t>(prompt.size()) - 1;
    CHECK(seq.supervised() == static_cast<int64_t>(answer.size()));
    for (size_t i = 0; i < answer.size(); ++i) CHECK(seq.labels[size_t(first) + i] == answer[i]);
    CHECK(seq.labels[size_t(first) - 1] == kIgnoreLabel);
    CHECK(seq.labels.back() == kIgnoreLabel);
}

TEST_CASE("missing modalities leave empty spans", "[model]") {
    const auto cfg = ModelConfig::toy();
    const AvModel model = AvModel::create(cfg, 1);
    const auto in = random_inputs(cfg, 2);
    const auto prompt = encode_prompt("Q");
    const auto seq = assemble_sequence(nullptr, &in.video, prompt, {}, model);
    CHECK(seq.audio.size() == 0);
    CHECK(seq.video.begin == 0);
    CHECK(seq.length() == 8 + 2);
    CHECK_THROWS_AS(assemble_sequence(nullptr, nullptr, {}, {}, model), ContractError);
}

TEST_CASE("overlong sequences name every part", "[model]") {
    const auto cfg = ModelConfig::toy();
    const AvModel model = AvModel::create(cfg, 1);
    const auto in = random_inputs(cfg, 2);
    const std::string long_answer(200, 'x');
    const auto prompt = encode_prompt("Q");
    const auto answer = encode_answer(long_answer);
    try {
        (void)assemble_sequence(&in.audio, &in.video, prompt, answer, model);
        FAIL("expected LengthError");
    } catch (const LengthError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("audio 8") != std::string::npos);
        CHECK(msg.find("video 8") != std::string::npos);
        CHECK(msg.find("answer 201") != std::string::npos);
        CHECK(msg.find("budget is 128") != std::string::npos);
    }
}

TEST_CASE("padding does not change real positions", "[model]") {
    const auto cfg = ModelConfig::toy();
    AvModel model = AvModel::create(cfg, 3);
    randomize_adapters(model, 4);
    const auto in = random_inputs(cfg, 5);
    const auto seq = assemble_sequence(&in.audio, &in.video, encode_prompt("Why?"), encode_answer("Because."), model);
    const auto padded = pad_sequence(seq, seq.length() + 7, model);
    CHECK(padded.key_valid.back() == 0);
    const Tensor a = forward_lm(seq, model);
    const Tensor b = forward_lm(padded, model);
    double worst = 0;
    for (int64_t r = 0; r < seq.length(); ++r)
        for (int64_t c = 0; c < a.cols(); ++c) worst = std::max(worst, double(std::abs(a.at(r, c) - b.at(r, c))));
    CHECK(worst < 1e-5);
    CHECK(lm_loss(seq, model).item() == Approx(lm_loss(padded, model).item()).epsilon(1e-5));
    CHECK_THROWS_AS(pad_sequence(seq, seq.length() - 1, model), ContractError);
}

TEST_CASE("zero-initialized adapters change no logit", "[model]") {
    const auto cfg = ModelConfig::toy();
    AvModel model = AvModel::create(cfg, 6);
    const auto in = random_inputs(cfg, 7);
    const auto seq = assemble_sequence(&in.audio, &in.video, encode_prompt("A?"), encode_answer("B."), model);
    model.set_adapters_active(true);
    const Tensor on = forward_lm(seq, model);
    model.set_adapters_active(false);
    const Tensor off = forward_lm(seq, model);
    CHECK(max_diff(on, off) == 0.0);
}

TEST_CASE("merged adapters match the adapter run", "[model]") {
    const auto cfg = ModelConfig::toy();
    AvModel model = AvModel::create(cfg, 8);
    randomize_adapters(model, 9);
    const auto in = random_inputs(cfg, 10);
    const auto seq = assemble_sequence(&in.audio, &in.video, encode_prompt("A?"), encode_answer("B."), model);
    const Tensor before = forward_lm(seq, model);
    model.merge_adapters();
    const Tensor after = forward_lm(seq, model);
    CHECK(max_diff(before, after) < 1e-5);
    for (const auto& p : model.adapters().all())
        if (p.name.ends_with(".B"))
            for (float x : p.tensor.data()) CHECK(x == 0.0f);
}

TEST_CASE("checkpoints and adapter files round trip", "[model]") {
    TempDir dir;
    const auto cfg = ModelConfig::toy();
    AvModel model = AvModel::create(cfg, 11);
    randomize_adapters(model, 12);
    model.save(dir / "m.ckpt");
    model.save_adapters(dir / "m.lora");

    const AvModel base_only = AvModel::load(dir / "m.ckpt");
    const AvModel with_lora = AvModel::load(dir / "m.ckpt", dir / "m.lora");
    CHECK(with_lora.all_checksums() == model.all_checksums());
    CHECK(base_only.params().all().size() == model.params().all().size());
    for (const auto& p : model.params().all())
        CHECK(tensor_checksum(base_only.params().at(p.name).tensor) == tensor_checksum(p.tensor));
    CHECK(with_lora.config().lm.d_lm == cfg.lm.d_lm);
    CHECK(with_lora.config().mel.target_seconds == cfg.mel.target_seconds);

    ModelConfig other = cfg;
    other.lora.rank = 4;
    AvModel narrow = AvModel::create(other, 11);
    CHECK_THROWS_AS(narrow.load_adapters(dir / "m.lora"), FormatError);
}

TEST_CASE("base initialization does not depend on the LoRA rank", "[model]") {
    ModelConfig a = ModelConfig::toy(), b = ModelConfig::toy();
    b.lora.rank = 2;
    const AvModel ma = AvModel::create(a, 42);
    const AvModel mb = AvModel::create(b, 42);
    for (const auto& p : ma.params().all())
        CHECK(tensor_checksum(mb.params().at(p.name).tensor) == tensor_checksum(p.tensor));
    CHECK(ma.lora().front().scale == Approx(2.0));
    CHECK(mb.lora().front().scale == Approx(8.0));
}

TEST_CASE("generation", "[model]") {
    const auto cfg = ModelConfig::toy();
    const AvModel model = AvModel::create(cfg, 13);
    const auto in = random_inputs(cfg, 14);
    const auto prefix = assemble_sequence(&in.audio, &in.video, encode_prompt("Q?"), {}, model);
    CHECK(generate(prefix, model, 0).empty());
    const auto out = generate(prefix, model, 5);
    CHECK(out.size() <= 5);
    CHECK(generate(prefix, model, 5) == out);
    // Generation stops at the position budget.
    CHECK(generate(prefix, model, 1000).size() <= size_t(cfg.lm.max_positions - prefix.length()));
}

TEST_CASE("config validation", "[model]") {
    ModelConfig c = ModelConfig::toy();
    CHECK_NOTHROW(c.validate());
    CHECK_NOTHROW(ModelConfig::paper_scale().validate());
    SECTION("grid mismatch") {
        c.lm.vision_grid = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SECTION("heads") {
        c.lm.n_heads = 5;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SECTION("positions") {
        c.lm.max_positions = 10;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
}
