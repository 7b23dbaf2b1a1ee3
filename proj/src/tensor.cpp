#include "avx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace avx::AVX_ABI_NS {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::span<Scalar> TensorImpl::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), Scalar{0});
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), Scalar{0}, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    return from(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
    const auto n = shape_numel(shape);
    if (static_cast<size_t>(n) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(n) + " values, got " +
                             std::to_string(values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    Tensor t(std::move(impl));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Scalar Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) {
        impl_->grad_buffer();
    } else {
        impl_->grad.clear();
        impl_->grad_touched = false;
    }
}

std::span<const Scalar> Tensor::grad() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad_buffer();
    return impl_->grad;
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar{0});
    impl_->grad_touched = false;
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != static_cast<int64_t>(numel())) {
        throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    }
    return detail::make_result(std::move(new_shape), impl_->data, {*this}, [](TensorImpl& self) {
        auto& p = *self.parents[0];
        auto g = p.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Tensor make_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        impl->requires_grad = true;
        impl->parents.reserve(inputs.size());
        for (auto& in : inputs) impl->parents.push_back(in.ptr());
        impl->backward_fn = std::move(fn);
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward on undefined tensor");
    TensorImpl* root = loss.impl();
    if (root->data.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(root->shape));
    if (root->consumed) throw ContractError("backward already ran on this loss; rebuild the graph first");
    root->consumed = true;
    if (!root->requires_grad) return;

    // Iterative post-order DFS; parents come before children in `order`.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += Scalar{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->is_leaf()) {
            node->grad_touched = true;
            continue;
        }
        node->grad_buffer();
        node->backward_fn(*node);
        if (node != root) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
    // Edges are dropped only after the sweep: releasing them earlier could
    // free a node that is still queued.
    std::vector<decltype(root->parents)> released;
    released.reserve(order.size());
    for (TensorImpl* node : order) {
        node->backward_fn = nullptr;
        released.push_back(std::move(node->parents));
        node->parents.clear();
    }
}

}  // namespace avx
