#include "avx/transformer.hpp"

#include <cmath>
#include <random>

namespace avx::AVX_ABI_NS {

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor Initializer::normal(const std::string& name, Shape shape, double stddev) const {
    std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32),
                      static_cast<uint32_t>(fnv1a(name)), static_cast<uint32_t>(fnv1a(name) >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> dist(0.0, stddev);
    const auto n = static_cast<size_t>(shape_numel(shape));
    std::vector<Scalar> v(n);
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return Tensor::from(std::move(shape), std::move(v));
}

BlockParams make_block(ParameterSet& set, const std::string& prefix, int64_t d, int64_t mlp_hidden,
                       const Initializer& init) {
    constexpr double std_w = 0.02;
    auto w = [&](const std::string& n, Shape s) { return set.add(prefix + "." + n, init.normal(prefix + "." + n, s, std_w)); };
    auto z = [&](const std::string& n, int64_t len) { return set.add(prefix + "." + n, Tensor::zeros({len})); };
    auto o = [&](const std::string& n, int64_t len) { return set.add(prefix + "." + n, Tensor::full({len}, 1)); };
    BlockParams p;
    p.ln1_g = o("ln1.g", d);
    p.ln1_b = z("ln1.b", d);
    p.wq = w("attn.q.w", {d, d});
    p.bq = z("attn.q.b", d);
    p.wk = w("attn.k.w", {d, d});
    p.bk = z("attn.k.b", d);
    p.wv = w("attn.v.w", {d, d});
    p.bv = z("attn.v.b", d);
    p.wo = w("attn.o.w", {d, d});
    p.bo = z("attn.o.b", d);
    p.ln2_g = o("ln2.g", d);
    p.ln2_b = z("ln2.b", d);
    p.fc1_w = w("mlp.fc1.w", {d, mlp_hidden});
    p.fc1_b = z("mlp.fc1.b", mlp_hidden);
    p.fc2_w = w("mlp.fc2.w", {mlp_hidden, d});
    p.fc2_b = z("mlp.fc2.b", d);
    return p;
}

namespace {

Tensor adapted(const Tensor& x, const Tensor& w, const Tensor& b, const LoraPair* lora, Scalar s) {
    Tensor y = linear(x, w, b);
    if (!lora) return y;
    return add(y, scale(matmul(matmul(x, lora->B), lora->A), s));
}

}  // namespace

Tensor block_forward(const BlockParams& p, const Tensor& x, int n_heads, const AttentionMask& mask,
                     const BlockLora* lora) {
    Tensor h = layer_norm(x, p.ln1_g, p.ln1_b);
    Tensor q = adapted(h, p.wq, p.bq, lora ? &lora->q : nullptr, lora ? lora->scale : 0);
    Tensor k = linear(h, p.wk, p.bk);
    Tensor v = adapted(h, p.wv, p.bv, lora ? &lora->v : nullptr, lora ? lora->scale : 0);
    Tensor a = linear(attention(q, k, v, n_heads, mask), p.wo, p.bo);
    Tensor x1 = add(x, a);
    Tensor m = linear(gelu(linear(layer_norm(x1, p.ln2_g, p.ln2_b), p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
    return add(x1, m);
}

Tensor sinusoidal_positions(int64_t T, int64_t d) {
    if (d % 2 != 0) throw DimensionError("sinusoidal positions need an even width");
    const int64_t half = d / 2;
    const double inc = half > 1 ? std::log(10000.0) / static_cast<double>(half - 1) : 0.0;
    std::vector<Scalar> v(static_cast<size_t>(T * d));
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t c = 0; c < half; ++c) {
            const double ang = static_cast<double>(t) * std::exp(-inc * static_cast<double>(c));
            v[static_cast<size_t>(t * d + c)] = static_cast<Scalar>(std::sin(ang));
            v[static_cast<size_t>(t * d + half + c)] = static_cast<Scalar>(std::cos(ang));
        }
    }
    return Tensor::from({T, d}, std::move(v));
}

}  // namespace avx
