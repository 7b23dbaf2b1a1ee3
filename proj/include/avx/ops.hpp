#pragma once

// Differentiable primitives. All 2-D ops take row-major [rows x cols] tensors.
// Reductions run in a fixed sequential order so repeated runs are bitwise equal.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "avx/tensor.hpp"

namespace avx::AVX_ABI_NS {

inline constexpr int kIgnoreLabel = -1;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
// x[n x d] + bias[d] on every row.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);
Scalar gelu_value(Scalar x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = Scalar(1e-5));

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Gathers rows of table[V x d] for each id.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);

// Sparse row mixing: out row i = sum over (src, weight) in rows[i] of weight * x[src].
using RowMix = std::vector<std::vector<std::pair<int64_t, Scalar>>>;
Tensor mix_rows(const Tensor& x, const RowMix& rows);

// Unfolds x[T x C] into [T_out x (k*C)] windows for a 1-D convolution;
// column layout is tap-major (tap j occupies columns [j*C, (j+1)*C)).
Tensor im2col_1d(const Tensor& x, int kernel, int stride, int pad);
// w is [(kernel*C_in) x C_out].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride, int pad);

struct AttentionMask {
    bool causal = false;
    // Optional per-key validity (size T); invalid keys get zero weight.
    std::span<const uint8_t> key_valid{};
};

// Multi-head scaled dot-product attention over q, k, v of shape [T x d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads, const AttentionMask& mask);

// Mean negative log-softmax over positions whose label is not kIgnoreLabel.
// Returns 0 when every label is ignored.
Tensor softmax_ce_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace avx
