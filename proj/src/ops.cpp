#include "avx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace avx::AVX_ABI_NS {

namespace {

void require_2d(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<Scalar> out(static_cast<size_t>(m * n), Scalar{0});
    const Scalar* A = a.data().data();
    const Scalar* B = b.data().data();
    for (int64_t i = 0; i < m; ++i) {
        Scalar* row = out.data() + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const Scalar av = A[i * k + p];
            const Scalar* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const Scalar* G = self.grad.data();
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            const Scalar* B = pb.data.data();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t p = 0; p < k; ++p) {
                    Scalar acc = 0;
                    for (int64_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                    ga[static_cast<size_t>(i * k + p)] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            const Scalar* A = pa.data.data();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t p = 0; p < k; ++p) {
                    const Scalar av = A[i * k + p];
                    Scalar* grow = gb.data() + p * n;
                    for (int64_t j = 0; j < n; ++j) grow[j] += av * G[i * n + j];
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Scalar> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto g = p->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Scalar> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto g = pa.grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& a, Scalar s) {
    std::vector<Scalar> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return detail::make_result(a.shape(), std::move(out), {a}, [s](TensorImpl& self) {
        auto g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_rowwise");
    const int64_t n = x.rows(), d = x.cols();
    if (static_cast<int64_t>(bias.numel()) != d) {
        throw DimensionError("add_rowwise: bias " + shape_str(bias.shape()) + " does not match rows of " +
                             shape_str(x.shape()));
    }
    std::vector<Scalar> out(x.numel());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] = x.at(i, j) + bias.data()[static_cast<size_t>(j)];
    return detail::make_result(x.shape(), std::move(out), {x, bias}, [n, d](TensorImpl& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad) {
            auto g = px.grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) g[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * d + j)];
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_rowwise(matmul(x, w), b); }

Scalar gelu_value(Scalar x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const double xd = x;
    return static_cast<Scalar>(0.5 * xd * (1.0 + std::tanh(c * (xd + 0.044715 * xd * xd * xd))));
}

Tensor gelu(const Tensor& x) {
    std::vector<Scalar> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.data()[i]);
    return detail::make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
        constexpr double c = 0.7978845608028654;
        auto& px = *self.parents[0];
        auto g = px.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = px.data[i];
            const double t = std::tanh(c * (v + 0.044715 * v * v * v));
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
            g[i] += static_cast<Scalar>(self.grad[i] * d);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
    require_2d(x, "layer_norm");
    const int64_t n = x.rows(), d = x.cols();
    if (static_cast<int64_t>(gain.numel()) != d || static_cast<int64_t>(bias.numel()) != d) {
        throw DimensionError("layer_norm: affine params do not match " + shape_str(x.shape()));
    }
    if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
    std::vector<Scalar> out(x.numel());
    std::vector<Scalar> xhat(x.numel());
    std::vector<Scalar> rstd(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const Scalar* row = x.data().data() + i * d;
        Scalar mu = 0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<Scalar>(d);
        Scalar var = 0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<Scalar>(d);
        const Scalar r = Scalar(1) / std::sqrt(var + eps);
        rstd[static_cast<size_t>(i)] = r;
        for (int64_t j = 0; j < d; ++j) {
            const auto idx = static_cast<size_t>(i * d + j);
            xhat[idx] = (row[j] - mu) * r;
            out[idx] = xhat[idx] * gain.data()[static_cast<size_t>(j)] + bias.data()[static_cast<size_t>(j)];
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gain, bias},
        [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](TensorImpl& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const Scalar* G = self.grad.data();
            if (pg.requires_grad) {
                auto gg = pg.grad_buffer();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += G[i * d + j] * xhat[static_cast<size_t>(i * d + j)];
            }
            if (pb.requires_grad) {
                auto gb = pb.grad_buffer();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += G[i * d + j];
            }
            if (px.requires_grad) {
                auto gx = px.grad_buffer();
                std::vector<Scalar> dxhat(static_cast<size_t>(d));
                for (int64_t i = 0; i < n; ++i) {
                    Scalar m1 = 0, m2 = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const auto idx = static_cast<size_t>(i * d + j);
                        dxhat[static_cast<size_t>(j)] = G[idx] * pg.data[static_cast<size_t>(j)];
                        m1 += dxhat[static_cast<size_t>(j)];
                        m2 += dxhat[static_cast<size_t>(j)] * xhat[idx];
                    }
                    m1 /= static_cast<Scalar>(d);
                    m2 /= static_cast<Scalar>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const auto idx = static_cast<size_t>(i * d + j);
                        gx[idx] += rstd[static_cast<size_t>(i)] * (dxhat[static_cast<size_t>(j)] - m1 - xhat[idx] * m2);
                    }
                }
            }
        });
}

Tensor sum(const Tensor& x) {
    Scalar s = 0;
    for (Scalar v : x.data()) s += v;
    return detail::make_result({1}, {s}, {x}, [](TensorImpl& self) {
        auto g = self.parents[0]->grad_buffer();
        for (auto& gi : g) gi += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel())); }

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_2d(table, "embedding");
    const int64_t vocab = table.rows(), d = table.cols();
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    std::vector<int> idv(ids.begin(), ids.end());
    std::vector<Scalar> out(idv.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < idv.size(); ++i) {
        if (idv[i] < 0 || idv[i] >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(idv[i]) + " outside vocab of " +
                                    std::to_string(vocab));
        }
        std::copy_n(table.data().data() + idv[i] * d, d, out.data() + static_cast<int64_t>(i) * d);
    }
    const auto n = static_cast<int64_t>(idv.size());
    return detail::make_result({n, d}, std::move(out), {table}, [idv = std::move(idv), d](TensorImpl& self) {
        auto g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < idv.size(); ++i)
            for (int64_t j = 0; j < d; ++j) g[static_cast<size_t>(idv[i] * d + j)] += self.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
    });
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end) {
    require_2d(x, "slice_rows");
    if (begin < 0 || end > x.rows() || begin >= end) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + shape_str(x.shape()));
    }
    const int64_t d = x.cols();
    std::vector<Scalar> out(x.data().begin() + begin * d, x.data().begin() + end * d);
    return detail::make_result({end - begin, d}, std::move(out), {x}, [begin, d](TensorImpl& self) {
        auto g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < self.grad.size(); ++i) g[static_cast<size_t>(begin * d) + i] += self.grad[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const int64_t d = parts.front().cols();
    int64_t n = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != d) {
            throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        n += p.rows();
    }
    std::vector<Scalar> out;
    out.reserve(static_cast<size_t>(n * d));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return detail::make_result({n, d}, std::move(out), parts, [](TensorImpl& self) {
        size_t off = 0;
        for (auto& p : self.parents) {
            const size_t len = p->data.size();
            if (p->requires_grad) {
                auto g = p->grad_buffer();
                for (size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            }
            off += len;
        }
    });
}

Tensor mix_rows(const Tensor& x, const RowMix& rows) {
    require_2d(x, "mix_rows");
    const int64_t d = x.cols();
    const auto n = static_cast<int64_t>(rows.size());
    if (n == 0) throw DimensionError("mix_rows: no output rows");
    std::vector<Scalar> out(static_cast<size_t>(n * d), Scalar{0});
    for (int64_t i = 0; i < n; ++i) {
        for (const auto& [src, w] : rows[static_cast<size_t>(i)]) {
            if (src < 0 || src >= x.rows()) throw DimensionError("mix_rows: source row out of range");
            for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] += w * x.at(src, j);
        }
    }
    return detail::make_result({n, d}, std::move(out), {x}, [rows, d](TensorImpl& self) {
        auto g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < rows.size(); ++i)
            for (const auto& [src, w] : rows[i])
                for (int64_t j = 0; j < d; ++j)
                    g[static_cast<size_t>(src * d + j)] += w * self.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
    });
}

Tensor im2col_1d(const Tensor& x, int kernel, int stride, int pad) {
    require_2d(x, "im2col_1d");
    const int64_t T = x.rows(), C = x.cols();
    if (kernel < 1 || stride < 1 || pad < 0 || T + 2 * pad < kernel) {
        throw DimensionError("im2col_1d: bad geometry for " + shape_str(x.shape()));
    }
    const int64_t t_out = (T + 2 * pad - kernel) / stride + 1;
    const int64_t width = kernel * C;
    std::vector<Scalar> out(static_cast<size_t>(t_out * width), Scalar{0});
    for (int64_t t = 0; t < t_out; ++t) {
        for (int64_t j = 0; j < kernel; ++j) {
            const int64_t src = t * stride + j - pad;
            if (src < 0 || src >= T) continue;
            std::copy_n(x.data().data() + src * C, C, out.data() + t * width + j * C);
        }
    }
    return detail::make_result({t_out, width}, std::move(out), {x},
                               [T, C, t_out, width, kernel, stride, pad](TensorImpl& self) {
                                   auto g = self.parents[0]->grad_buffer();
                                   for (int64_t t = 0; t < t_out; ++t)
                                       for (int64_t j = 0; j < kernel; ++j) {
                                           const int64_t src = t * stride + j - pad;
                                           if (src < 0 || src >= T) continue;
                                           for (int64_t c = 0; c < C; ++c)
                                               g[static_cast<size_t>(src * C + c)] += self.grad[static_cast<size_t>(t * width + j * C + c)];
                                       }
                               });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride, int pad) {
    if (w.rank() != 2 || w.rows() != kernel * x.cols()) {
        throw DimensionError("conv1d: weight " + shape_str(w.shape()) + " does not match input " +
                             shape_str(x.shape()) + " with kernel " + std::to_string(kernel));
    }
    return linear(im2col_1d(x, kernel, stride, pad), w, b);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads, const AttentionMask& mask) {
    require_2d(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const int64_t T = q.rows(), d = q.cols();
    if (n_heads < 1 || d % n_heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                             " heads");
    }
    if (!mask.key_valid.empty() && static_cast<int64_t>(mask.key_valid.size()) != T) {
        throw DimensionError("attention: key mask length does not match sequence");
    }
    const int64_t dh = d / n_heads;
    const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    std::vector<uint8_t> valid(mask.key_valid.begin(), mask.key_valid.end());
    if (valid.empty()) valid.assign(static_cast<size_t>(T), 1);
    const bool causal = mask.causal;

    std::vector<Scalar> probs(static_cast<size_t>(n_heads * T * T), Scalar{0});
    std::vector<Scalar> out(static_cast<size_t>(T * d), Scalar{0});
    const Scalar* Q = q.data().data();
    const Scalar* K = k.data().data();
    const Scalar* V = v.data().data();
    for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t off = h * dh;
        for (int64_t i = 0; i < T; ++i) {
            Scalar* p = probs.data() + (h * T + i) * T;
            const int64_t last = causal ? i : T - 1;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (int64_t j = 0; j <= last; ++j) {
                if (!valid[static_cast<size_t>(j)]) continue;
                Scalar s = 0;
                for (int64_t c = 0; c < dh; ++c) s += Q[i * d + off + c] * K[j * d + off + c];
                p[j] = s * inv;
                mx = std::max(mx, p[j]);
            }
            if (mx == -std::numeric_limits<Scalar>::infinity()) continue;  // nothing visible
            Scalar z = 0;
            for (int64_t j = 0; j <= last; ++j) {
                if (!valid[static_cast<size_t>(j)]) continue;
                p[j] = std::exp(p[j] - mx);
                z += p[j];
            }
            for (int64_t j = 0; j <= last; ++j) {
                if (!valid[static_cast<size_t>(j)]) continue;
                p[j] /= z;
                for (int64_t c = 0; c < dh; ++c) out[static_cast<size_t>(i * d + off + c)] += p[j] * V[j * d + off + c];
            }
        }
    }
    return detail::make_result(
        q.shape(), std::move(out), {q, k, v},
        [T, d, dh, n_heads, inv, causal, valid = std::move(valid), probs = std::move(probs)](TensorImpl& self) {
            auto& pq = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pv = *self.parents[2];
            const Scalar* G = self.grad.data();
            const Scalar* Q = pq.data.data();
            const Scalar* K = pk.data.data();
            const Scalar* V = pv.data.data();
            std::span<Scalar> gq, gk, gv;
            if (pq.requires_grad) gq = pq.grad_buffer();
            if (pk.requires_grad) gk = pk.grad_buffer();
            if (pv.requires_grad) gv = pv.grad_buffer();
            std::vector<Scalar> dp(static_cast<size_t>(T));
            for (int64_t h = 0; h < n_heads; ++h) {
                const int64_t off = h * dh;
                for (int64_t i = 0; i < T; ++i) {
                    const Scalar* p = probs.data() + (h * T + i) * T;
                    const int64_t last = causal ? i : T - 1;
                    Scalar dot = 0;
                    for (int64_t j = 0; j <= last; ++j) {
                        if (!valid[static_cast<size_t>(j)]) continue;
                        Scalar s = 0;
                        for (int64_t c = 0; c < dh; ++c) s += G[i * d + off + c] * V[j * d + off + c];
                        dp[static_cast<size_t>(j)] = s;
                        dot += p[j] * s;
                    }
                    for (int64_t j = 0; j <= last; ++j) {
                        if (!valid[static_cast<size_t>(j)]) continue;
                        const Scalar ds = p[j] * (dp[static_cast<size_t>(j)] - dot) * inv;
                        for (int64_t c = 0; c < dh; ++c) {
                            const auto qi = static_cast<size_t>(i * d + off + c);
                            const auto kj = static_cast<size_t>(j * d + off + c);
                            if (!gv.empty()) gv[kj] += p[j] * G[qi];
                            if (!gq.empty()) gq[qi] += ds * K[kj];
                            if (!gk.empty()) gk[kj] += ds * Q[qi];
                        }
                    }
                }
            }
        });
}

Tensor softmax_ce_loss(const Tensor& logits, std::span<const int> labels) {
    require_2d(logits, "softmax_ce_loss");
    const int64_t T = logits.rows(), V = logits.cols();
    if (static_cast<int64_t>(labels.size()) != T) {
        throw DimensionError("softmax_ce_loss: " + std::to_string(labels.size()) + " labels for " +
                             shape_str(logits.shape()));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    int64_t count = 0;
    for (int y : lab) {
        if (y == kIgnoreLabel) continue;
        if (y < 0 || y >= V) throw std::out_of_range("softmax_ce_loss: label " + std::to_string(y) + " outside [0," + std::to_string(V) + ")");
        ++count;
    }
    std::vector<Scalar> lse(static_cast<size_t>(T), Scalar{0});
    Scalar total = 0;
    for (int64_t i = 0; i < T; ++i) {
        if (lab[static_cast<size_t>(i)] == kIgnoreLabel) continue;
        const Scalar* row = logits.data().data() + i * V;
        Scalar mx = row[0];
        for (int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        Scalar z = 0;
        for (int64_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        lse[static_cast<size_t>(i)] = mx + std::log(z);
        total += lse[static_cast<size_t>(i)] - row[lab[static_cast<size_t>(i)]];
    }
    const Scalar value = count ? total / static_cast<Scalar>(count) : Scalar{0};
    return detail::make_result({1}, {value}, {logits},
                               [T, V, count, lab = std::move(lab), lse = std::move(lse)](TensorImpl& self) {
                                   if (count == 0) return;
                                   auto& pl = *self.parents[0];
                                   auto g = pl.grad_buffer();
                                   const Scalar s = self.grad[0] / static_cast<Scalar>(count);
                                   for (int64_t i = 0; i < T; ++i) {
                                       const int y = lab[static_cast<size_t>(i)];
                                       if (y == kIgnoreLabel) continue;
                                       const Scalar* row = pl.data.data() + i * V;
                                       for (int64_t j = 0; j < V; ++j) {
                                           Scalar p = std::exp(row[j] - lse[static_cast<size_t>(i)]);
                                           if (j == y) p -= 1;
                                           g[static_cast<size_t>(i * V + j)] += s * p;
                                       }
                                   }
                               });
}

}  // namespace avx
