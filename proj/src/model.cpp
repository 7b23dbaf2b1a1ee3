#include "avx/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace avx::AVX_ABI_NS {

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.mel.n_mels = 16;
    c.mel.target_seconds = 1.0;
    c.audio = {16, 16, 1, 2};
    c.vision.image_size = 8;
    c.vision.patch = 4;
    c.vision.d_model = 16;
    c.vision.n_layers = 1;
    c.vision.n_heads = 2;
    c.lm = LmConfig{};
    return c;
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.mel = LogMelConfig{};  // 16 kHz, n_fft 400, hop 160, 80 mels, 30 s
    c.audio = {80, 8, 1, 2};
    c.vision.image_size = 384;
    c.vision.patch = 14;
    c.vision.d_model = 8;
    c.vision.n_layers = 1;
    c.vision.n_heads = 2;
    c.lm.d_lm = 8;
    c.lm.n_layers = 1;
    c.lm.n_heads = 2;
    c.lm.audio_budget = 64;
    c.lm.vision_grid = 27;
    c.lm.n_frames = 100;
    c.lm.max_positions = 1024;
    return c;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (lm.vocab != kVocabSize) fail("vocab must be " + std::to_string(kVocabSize) + " for the byte tokenizer");
    if (lm.d_lm < 1 || lm.n_heads < 1 || lm.d_lm % lm.n_heads != 0) fail("d_lm must be divisible by n_heads");
    if (lm.n_layers < 1) fail("lm needs at least one layer");
    if (lm.audio_budget < 1 || lm.n_frames < 1) fail("token budgets must be positive");
    if (lm.vision_grid != vision.grid()) {
        fail("lm vision_grid " + std::to_string(lm.vision_grid) + " disagrees with encoder grid " +
             std::to_string(vision.grid()));
    }
    if (lm.max_positions < lm.audio_budget + lm.video_tokens() + 2) {
        fail("max_positions cannot hold the multimodal prefix");
    }
    if (audio.n_mels != mel.n_mels) fail("audio encoder n_mels differs from the frontend");
    if (audio.d_model % 2 != 0) fail("audio d_model must be even for sinusoidal positions");
    if (lora.rank < 1) fail("lora rank must be positive");
}

std::vector<std::pair<std::string, double>> ModelConfig::to_meta() const {
    return {
        {"meta.mel.sample_rate", mel.sample_rate},
        {"meta.mel.n_fft", mel.n_fft},
        {"meta.mel.hop", mel.hop},
        {"meta.mel.n_mels", mel.n_mels},
        {"meta.mel.target_seconds", mel.target_seconds},
        {"meta.mel.f_min", mel.f_min},
        {"meta.mel.f_max", mel.f_max},
        {"meta.audio.d_model", audio.d_model},
        {"meta.audio.n_layers", audio.n_layers},
        {"meta.audio.n_heads", audio.n_heads},
        {"meta.vision.image_size", vision.image_size},
        {"meta.vision.patch", vision.patch},
        {"meta.vision.d_model", vision.d_model},
        {"meta.vision.n_layers", vision.n_layers},
        {"meta.vision.n_heads", vision.n_heads},
        {"meta.vision.use_positions", vision.use_positions ? 1.0 : 0.0},
        {"meta.lm.d_lm", lm.d_lm},
        {"meta.lm.n_layers", lm.n_layers},
        {"meta.lm.n_heads", lm.n_heads},
        {"meta.lm.max_positions", lm.max_positions},
        {"meta.lm.audio_budget", lm.audio_budget},
        {"meta.lm.n_frames", lm.n_frames},
        {"meta.lora.rank", lora.rank},
        {"meta.lora.alpha", lora.alpha},
        {"meta.proj_hidden", proj_hidden},
    };
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, double>& meta) {
    auto get = [&](const std::string& k) {
        auto it = meta.find(k);
        if (it == meta.end()) throw FormatError("checkpoint lacks config entry " + k);
        return it->second;
    };
    auto geti = [&](const std::string& k) { return static_cast<int>(get(k)); };
    ModelConfig c;
    c.mel.sample_rate = geti("meta.mel.sample_rate");
    c.mel.n_fft = geti("meta.mel.n_fft");
    c.mel.hop = geti("meta.mel.hop");
    c.mel.n_mels = geti("meta.mel.n_mels");
    c.mel.target_seconds = get("meta.mel.target_seconds");
    c.mel.f_min = get("meta.mel.f_min");
    c.mel.f_max = get("meta.mel.f_max");
    c.audio = {c.mel.n_mels, geti("meta.audio.d_model"), geti("meta.audio.n_layers"), geti("meta.audio.n_heads")};
    c.vision.image_size = geti("meta.vision.image_size");
    c.vision.patch = geti("meta.vision.patch");
    c.vision.d_model = geti("meta.vision.d_model");
    c.vision.n_layers = geti("meta.vision.n_layers");
    c.vision.n_heads = geti("meta.vision.n_heads");
    c.vision.use_positions = get("meta.vision.use_positions") != 0.0;
    c.lm.d_lm = geti("meta.lm.d_lm");
    c.lm.n_layers = geti("meta.lm.n_layers");
    c.lm.n_heads = geti("meta.lm.n_heads");
    c.lm.max_positions = geti("meta.lm.max_positions");
    c.lm.audio_budget = geti("meta.lm.audio_budget");
    c.lm.n_frames = geti("meta.lm.n_frames");
    c.lm.vision_grid = c.vision.grid();
    c.lora.rank = geti("meta.lora.rank");
    c.lora.alpha = get("meta.lora.alpha");
    c.proj_hidden = geti("meta.proj_hidden");
    return c;
}

ProjectorParams ProjectorParams::create(ParameterSet& set, const std::string& prefix, int64_t d_in,
                                        int64_t d_hidden, int64_t d_out, const Initializer& init) {
    ProjectorParams p;
    p.w1 = set.add(prefix + ".fc1.w", init.normal(prefix + ".fc1.w", {d_in, d_hidden}, 1.0 / std::sqrt(double(d_in))));
    p.b1 = set.add(prefix + ".fc1.b", Tensor::zeros({d_hidden}));
    p.w2 = set.add(prefix + ".fc2.w",
                   init.normal(prefix + ".fc2.w", {d_hidden, d_out}, 1.0 / std::sqrt(double(d_hidden))));
    p.b2 = set.add(prefix + ".fc2.b", Tensor::zeros({d_out}));
    return p;
}

Tensor project(const Tensor& tokens, const ProjectorParams& p) {
    if (tokens.rank() != 2 || tokens.cols() != p.d_in()) {
        throw ConfigError("projector expects width " + std::to_string(p.d_in()) + ", got tokens " +
                          shape_str(tokens.shape()));
    }
    return linear(gelu(linear(tokens, p.w1, p.b1)), p.w2, p.b2);
}

void AvModel::build(uint64_t seed) {
    cfg_.validate();
    const Initializer init(seed);
    audio_ = AudioEncoder::create(params_, cfg_.audio, init);
    vision_ = VisionEncoder::create(params_, cfg_.vision, init);
    const int64_t d = cfg_.lm.d_lm;
    proj_audio_ = ProjectorParams::create(params_, "proj.audio", cfg_.audio.d_model, cfg_.projector_hidden(), d, init);
    proj_vision_ = ProjectorParams::create(params_, "proj.vision", cfg_.vision.d_model, cfg_.projector_hidden(), d, init);

    lm_.tok_emb = params_.add("lm.tok_emb", init.normal("lm.tok_emb", {cfg_.lm.vocab, d}, 0.02));
    lm_.pos_emb = params_.add("lm.pos_emb", init.normal("lm.pos_emb", {cfg_.lm.max_positions, d}, 0.01));
    for (int l = 0; l < cfg_.lm.n_layers; ++l) {
        lm_.layers.push_back(make_block(params_, "lm.layers." + std::to_string(l), d, 4 * d, init));
    }
    lm_.ln_f_g = params_.add("lm.ln_f.g", Tensor::full({d}, 1));
    lm_.ln_f_b = params_.add("lm.ln_f.b", Tensor::zeros({d}));
    lm_.head_w = params_.add("lm.head.w", init.normal("lm.head.w", {d, cfg_.lm.vocab}, 0.02));

    const int64_t r = cfg_.lora.rank;
    for (int l = 0; l < cfg_.lm.n_layers; ++l) {
        const std::string pre = "lora.layers." + std::to_string(l);
        BlockLora bl;
        bl.scale = static_cast<Scalar>(cfg_.lora.scale());
        bl.q.A = adapters_.add(pre + ".q.A", init.normal(pre + ".q.A", {r, d}, 1.0 / std::sqrt(double(d))));
        bl.q.B = adapters_.add(pre + ".q.B", Tensor::zeros({d, r}));
        bl.v.A = adapters_.add(pre + ".v.A", init.normal(pre + ".v.A", {r, d}, 1.0 / std::sqrt(double(d))));
        bl.v.B = adapters_.add(pre + ".v.B", Tensor::zeros({d, r}));
        lora_.push_back(bl);
    }
}

AvModel AvModel::create(const ModelConfig& cfg, uint64_t seed) {
    AvModel m;
    m.cfg_ = cfg;
    m.build(seed);
    return m;
}

namespace {

std::vector<NamedTensor> with_meta(const std::vector<std::pair<std::string, double>>& meta) {
    std::vector<NamedTensor> out;
    for (const auto& [k, v] : meta) out.push_back({k, {1}, {static_cast<float>(v)}});
    return out;
}

void assign_values(ParameterSet& set, const NamedTensor& nt, const std::string& file) {
    auto& p = set.at(nt.name);
    if (p.tensor.shape() != nt.shape) {
        throw FormatError(file + ": tensor " + nt.name + " has shape " + shape_str(nt.shape) + ", model expects " +
                          shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(nt.values[i]);
}

}  // namespace

AvModel AvModel::load(const std::filesystem::path& base, const std::optional<std::filesystem::path>& adapters) {
    const auto tensors = read_checkpoint(base);
    std::map<std::string, double> meta;
    for (const auto& t : tensors)
        if (t.name.rfind("meta.", 0) == 0) meta[t.name] = t.values.at(0);
    AvModel m;
    m.cfg_ = ModelConfig::from_meta(meta);
    m.build(0);
    size_t loaded = 0;
    for (const auto& t : tensors) {
        if (t.name.rfind("meta.", 0) == 0) continue;
        if (t.name.rfind("lora.", 0) == 0) {
            assign_values(m.adapters_, t, base.string());
            continue;
        }
        assign_values(m.params_, t, base.string());
        ++loaded;
    }
    if (loaded != m.params_.size()) {
        throw FormatError(base.string() + ": checkpoint holds " + std::to_string(loaded) + " of " +
                          std::to_string(m.params_.size()) + " model tensors");
    }
    if (adapters) m.load_adapters(*adapters);
    return m;
}

void AvModel::save(const std::filesystem::path& path) const {
    auto out = with_meta(cfg_.to_meta());
    for (const auto& p : params_.all()) out.push_back(to_named(p.name, p.tensor));
    write_checkpoint(path, out);
}

void AvModel::save_adapters(const std::filesystem::path& path) const {
    auto out = with_meta({{"meta.lora.rank", cfg_.lora.rank}, {"meta.lora.alpha", cfg_.lora.alpha}});
    for (const auto& p : adapters_.all()) out.push_back(to_named(p.name, p.tensor));
    write_checkpoint(path, out);
}

void AvModel::load_adapters(const std::filesystem::path& path) {
    const auto tensors = read_checkpoint(path);
    for (const auto& t : tensors) {
        if (t.name == "meta.lora.rank" && static_cast<int>(t.values.at(0)) != cfg_.lora.rank) {
            throw FormatError(path.string() + ": adapter rank differs from the model config");
        }
        if (t.name == "meta.lora.alpha") {
            cfg_.lora.alpha = t.values.at(0);
            for (auto& bl : lora_) bl.scale = static_cast<Scalar>(cfg_.lora.scale());
        }
        if (t.name.rfind("lora.", 0) == 0) assign_values(adapters_, t, path.string());
    }
}

void AvModel::merge_adapters() {
    NoGradGuard no_grad;
    for (size_t l = 0; l < lora_.size(); ++l) {
        auto& bl = lora_[l];
        auto merge_one = [&](const Tensor& w, LoraPair& pair) {
            Tensor delta = scale(matmul(pair.B, pair.A), bl.scale);
            Tensor wt = w;
            auto dst = wt.data();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += delta.data()[i];
            auto b = pair.B.data();
            std::fill(b.begin(), b.end(), Scalar{0});
        };
        merge_one(lm_.layers[l].wq, bl.q);
        merge_one(lm_.layers[l].wv, bl.v);
    }
}

std::vector<Parameter*> AvModel::all_parameters() {
    std::vector<Parameter*> out;
    for (auto& p : params_.all()) out.push_back(&p);
    for (auto& p : adapters_.all()) out.push_back(&p);
    return out;
}

std::map<std::string, uint64_t> AvModel::all_checksums() const {
    auto out = checksums(params_);
    for (const auto& [k, v] : checksums(adapters_)) out[k] = v;
    return out;
}

AudioTokens AvModel::audio_tokens(const AudioWaveform& w) const {
    return pool_to_budget(encode_audio(log_mel(w, cfg_.mel), audio_), cfg_.lm.audio_budget);
}

VideoTokens AvModel::video_tokens(const VideoClip& clip) const {
    return pool_spatiotemporal(encode_clip(sample_frames(clip, cfg_.lm.n_frames), vision_));
}

int64_t MultimodalSequence::supervised() const {
    return std::count_if(labels.begin(), labels.end(), [](int y) { return y != kIgnoreLabel; });
}

MultimodalSequence assemble_sequence(const AudioTokens* audio, const VideoTokens* video,
                                     std::span<const int> prompt_ids, std::span<const int> answer_ids,
                                     const AvModel& model) {
    const int64_t a = audio ? audio->embeddings.rows() : 0;
    const int64_t v = video ? video->embeddings.rows() : 0;
    const auto p = static_cast<int64_t>(prompt_ids.size());
    const auto n = static_cast<int64_t>(answer_ids.size());
    const int64_t total = a + v + p + n;
    const int max_pos = model.config().lm.max_positions;
    if (total > max_pos) {
        std::ostringstream os;
        os << "sequence needs audio " << a << " + video " << v << " + prompt " << p << " + answer " << n << " = "
           << total << " positions, budget is " << max_pos;
        throw LengthError(os.str());
    }
    if (total == 0) throw ContractError("cannot assemble an empty sequence");

    MultimodalSequence seq;
    std::vector<Tensor> parts;
    if (a > 0) parts.push_back(project(audio->embeddings, model.audio_projector()));
    if (v > 0) parts.push_back(project(video->embeddings, model.vision_projector()));
    seq.text_ids.assign(prompt_ids.begin(), prompt_ids.end());
    seq.text_ids.insert(seq.text_ids.end(), answer_ids.begin(), answer_ids.end());
    if (!seq.text_ids.empty()) parts.push_back(embedding(model.lm().tok_emb, seq.text_ids));
    seq.embeddings = parts.size() == 1 ? parts.front() : concat_rows(parts);

    seq.audio = {0, a};
    seq.video = {a, a + v};
    seq.text = {a + v, total};
    seq.labels.assign(static_cast<size_t>(total), kIgnoreLabel);
    const int64_t answer_start = a + v + p;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t pos = answer_start + i - 1;
        if (pos >= 0) seq.labels[static_cast<size_t>(pos)] = answer_ids[static_cast<size_t>(i)];
    }
    seq.key_valid.assign(static_cast<size_t>(total), 1);
    return seq;
}

MultimodalSequence pad_sequence(const MultimodalSequence& seq, int64_t length, const AvModel& model) {
    if (length < seq.length()) throw ContractError("pad target shorter than sequence");
    if (length == seq.length()) return seq;
    if (length > model.config().lm.max_positions) throw LengthError("padded length exceeds position budget");
    MultimodalSequence out = seq;
    const std::vector<int> pads(static_cast<size_t>(length - seq.length()), kPad);
    out.embeddings = concat_rows({seq.embeddings, embedding(model.lm().tok_emb, pads)});
    out.labels.resize(static_cast<size_t>(length), kIgnoreLabel);
    out.key_valid.resize(static_cast<size_t>(length), 0);
    return out;
}

Tensor forward_lm(const MultimodalSequence& seq, const AvModel& model) {
    const auto& cfg = model.config().lm;
    const int64_t L = seq.length();
    if (L > cfg.max_positions) {
        throw LengthError("sequence of " + std::to_string(L) + " positions exceeds budget " +
                          std::to_string(cfg.max_positions));
    }
    const auto& lm = model.lm();
    Tensor x = add(seq.embeddings, slice_rows(lm.pos_emb, 0, L));
    AttentionMask mask{true, seq.key_valid};
    const bool use_lora = model.adapters_active() && !model.lora().empty();
    for (size_t l = 0; l < lm.layers.size(); ++l) {
        x = block_forward(lm.layers[l], x, cfg.n_heads, mask, use_lora ? &model.lora()[l] : nullptr);
    }
    return matmul(layer_norm(x, lm.ln_f_g, lm.ln_f_b), lm.head_w);
}

Tensor lm_loss(const MultimodalSequence& seq, const AvModel& model) {
    if (seq.supervised() == 0) throw ContractError("sequence has no supervised positions");
    return softmax_ce_loss(forward_lm(seq, model), seq.labels);
}

std::vector<int> generate(const MultimodalSequence& prefix, const AvModel& model, int max_new) {
    NoGradGuard no_grad;
    const int max_pos = model.config().lm.max_positions;
    if (prefix.length() > max_pos) throw LengthError("prefix exceeds position budget");
    std::vector<int> out;
    if (max_new <= 0) return out;
    MultimodalSequence seq = prefix;
    while (static_cast<int>(out.size()) < max_new && seq.length() < max_pos) {
        Tensor logits = forward_lm(seq, model);
        const int64_t last = seq.length() - 1;
        const int64_t V = logits.cols();
        int best = 0;
        for (int64_t j = 1; j < V; ++j)
            if (logits.at(last, j) > logits.at(last, best)) best = static_cast<int>(j);
        if (best == kEos) break;
        out.push_back(best);
        const int ids[1] = {best};
        seq.embeddings = concat_rows({seq.embeddings, embedding(model.lm().tok_emb, ids)});
        seq.labels.push_back(kIgnoreLabel);
        seq.key_valid.push_back(1);
        seq.text_ids.push_back(best);
        seq.text.end += 1;
    }
    return out;
}

}  // namespace avx
