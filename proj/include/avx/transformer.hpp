#pragma once

// Pre-norm transformer block shared by the audio encoder, the vision encoder
// and the decoder LM.

#include <cstdint>
#include <string>

#include "avx/ops.hpp"
#include "avx/params.hpp"

namespace avx::AVX_ABI_NS {

// Deterministic per-parameter init: each tensor draws from its own stream
// seeded by (seed, name), so adding or removing unrelated parameters never
// shifts another tensor's values.
class Initializer {
public:
    explicit Initializer(uint64_t seed) : seed_(seed) {}
    Tensor normal(const std::string& name, Shape shape, double stddev) const;
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
};

uint64_t fnv1a(std::string_view s);

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// Registers `<prefix>.ln1.g`, `<prefix>.attn.q.w`, ... into `set`.
BlockParams make_block(ParameterSet& set, const std::string& prefix, int64_t d, int64_t mlp_hidden,
                       const Initializer& init);

// Low-rank additive update W + scale * B * A for a weight W[d_in x d_out]:
// B is [d_in x r] (zero-initialised), A is [r x d_out].
struct LoraPair {
    Tensor A, B;
};

struct BlockLora {
    LoraPair q, v;
    Scalar scale = 1;
};

Tensor block_forward(const BlockParams& p, const Tensor& x, int n_heads, const AttentionMask& mask,
                     const BlockLora* lora = nullptr);

// Fixed sinusoidal table [T x d]: sin on the first half of channels, cos on the second.
Tensor sinusoidal_positions(int64_t T, int64_t d);

}  // namespace avx
