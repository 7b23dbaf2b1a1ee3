#pragma once

// Dense row-major tensor with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle to shared storage. Ops that consume tensors with
// requires_grad() record a backward closure on their output; backward() on a
// scalar walks the recorded graph once and accumulates into leaf gradients.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "avx/abi.hpp"
#include "avx/errors.hpp"

namespace avx::AVX_ABI_NS {

#ifdef AVX_SCALAR_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until needed
    bool requires_grad = false;
    bool grad_touched = false;  // set when backward reached this leaf
    bool consumed = false;      // backward already ran from this root

    // Graph edges; only populated on op outputs that require grad.
    std::vector<TensorImplPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    std::span<Scalar> grad_buffer();  // allocates zeros on first use
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
    static Tensor scalar(Scalar v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
    int64_t rows() const { return impl_->shape.at(0); }
    int64_t cols() const { return impl_->shape.at(1); }
    size_t numel() const { return impl_->data.size(); }

    std::span<Scalar> data() { return impl_->data; }
    std::span<const Scalar> data() const { return impl_->data; }
    Scalar& at(int64_t r, int64_t c) { return impl_->data[static_cast<size_t>(r * cols() + c)]; }
    Scalar at(int64_t r, int64_t c) const { return impl_->data[static_cast<size_t>(r * cols() + c)]; }
    Scalar item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on);
    // Gradient view; zeros if backward never reached this tensor.
    std::span<const Scalar> grad() const;
    bool grad_touched() const { return impl_->grad_touched; }
    void zero_grad();

    // Same storage semantics as a fresh leaf: copies data, drops the tape.
    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    TensorImpl* impl() const { return impl_.get(); }
    const TensorImplPtr& ptr() const { return impl_; }

private:
    TensorImplPtr impl_;
};

// Runs reverse-mode differentiation from a scalar loss. Each root may be
// differentiated once; intermediate gradients and edges are released after.
void backward(const Tensor& loss);

// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace detail {
// Creates an op output. When any input requires grad (and recording is on)
// the output keeps `inputs` alive as parents and runs `fn` during backward.
Tensor make_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> fn);
}  // namespace detail

}  // namespace avx
