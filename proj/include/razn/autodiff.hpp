#pragma once

// Minimal reverse-mode tape over the kernels in ops.hpp.
//
// A Var is a shared node holding a value and a lazily allocated gradient. Ops
// record a backward closure on the tape only when some input requires a
// gradient; Tape::backward replays closures in reverse order.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "razn/ops.hpp"
#include "razn/tensor.hpp"

namespace razn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;

    void accumulate(const Tensor<T>& g) {
        if (grad.empty()) {
            grad = g;
        } else {
            add_inplace(grad, g);
        }
    }
    void accumulate(Tensor<T>&& g) {
        if (grad.empty()) {
            grad = std::move(g);
        } else {
            add_inplace(grad, g);
        }
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

class Tape {
public:
    void record(std::function<void()> fn) { fns_.push_back(std::move(fn)); }

    /// Seeds `root` with `seed` and runs all recorded closures in reverse.
    template <typename T>
    void backward(const Var<T>& root, Tensor<T> seed) {
        root->accumulate(std::move(seed));
        for (auto it = fns_.rbegin(); it != fns_.rend(); ++it) (*it)();
        fns_.clear();
    }

    std::size_t size() const { return fns_.size(); }
    void clear() { fns_.clear(); }

private:
    std::vector<std::function<void()>> fns_;
};

namespace ag {

template <typename T>
bool tracks(const Tape* tape, std::initializer_list<const Var<T>*> vars) {
    if (!tape) return false;
    for (auto* v : vars)
        if (*v && (*v)->requires_grad) return true;
    return false;
}

template <typename T>
Var<T> conv2d(Tape* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ops::Conv2dParams& p) {
    auto out = make_var(ops::conv2d(x->value, w->value, bias ? &bias->value : nullptr, p));
    if (tracks<T>(tape, {&x, &w, &bias})) {
        out->requires_grad = true;
        tape->record([x, w, bias, p, o = out.get()] {
            if (o->grad.empty()) return;
            auto g = ops::conv2d_backward(x->value, w->value, p, o->grad, x->requires_grad, static_cast<bool>(bias));
            if (x->requires_grad) x->accumulate(std::move(g.input));
            if (w->requires_grad) w->accumulate(std::move(g.kernel));
            if (bias && bias->requires_grad) bias->accumulate(std::move(g.bias));
        });
    }
    return out;
}

/// Batch norm; running statistics are plain tensors owned by the caller (updated in Train mode).
template <typename T>
Var<T> batchnorm2d(Tape* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, ops::Mode mode, const ops::BatchNormConfig& cfg = {}) {
    auto cache = std::make_shared<ops::BatchNormCache<T>>();
    const bool track = tracks<T>(tape, {&x, &gamma, &beta});
    auto out = make_var(ops::batchnorm2d(x->value, gamma->value, beta->value, running_mean, running_var, mode, cfg,
                                         track ? cache.get() : nullptr));
    if (track) {
        out->requires_grad = true;
        tape->record([x, gamma, beta, cache, o = out.get()] {
            if (o->grad.empty()) return;
            auto g = ops::batchnorm2d_backward(*cache, gamma->value, o->grad);
            if (x->requires_grad) x->accumulate(std::move(g.input));
            if (gamma->requires_grad) gamma->accumulate(std::move(g.gamma));
            if (beta->requires_grad) beta->accumulate(std::move(g.beta));
        });
    }
    return out;
}

template <typename T>
Var<T> relu(Tape* tape, const Var<T>& x) {
    auto out = make_var(ops::relu(x->value));
    if (tracks<T>(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, o = out.get()] {
            if (o->grad.empty()) return;
            x->accumulate(ops::relu_backward(o->value, o->grad));
        });
    }
    return out;
}

template <typename T>
Var<T> add(Tape* tape, const Var<T>& a, const Var<T>& b) {
    Tensor<T> v = a->value;
    add_inplace(v, b->value);
    auto out = make_var(std::move(v));
    if (tracks<T>(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record([a, b, o = out.get()] {
            if (o->grad.empty()) return;
            if (a->requires_grad) a->accumulate(o->grad);
            if (b->requires_grad) b->accumulate(o->grad);
        });
    }
    return out;
}

template <typename T>
Var<T> maxpool2d(Tape* tape, const Var<T>& x, const ops::PoolParams& p) {
    auto argmax = std::make_shared<std::vector<std::uint32_t>>();
    auto out = make_var(ops::maxpool2d(x->value, p, argmax.get()));
    if (tracks<T>(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, argmax, o = out.get()] {
            if (o->grad.empty()) return;
            x->accumulate(ops::maxpool2d_backward(x->value.shape(), *argmax, o->grad));
        });
    }
    return out;
}

template <typename T>
Var<T> global_avg_pool(Tape* tape, const Var<T>& x) {
    auto out = make_var(ops::global_avg_pool(x->value));
    if (tracks<T>(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, o = out.get()] {
            if (o->grad.empty()) return;
            x->accumulate(ops::global_avg_pool_backward(x->value.shape(), o->grad));
        });
    }
    return out;
}

template <typename T>
Var<T> linear(Tape* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    auto out = make_var(ops::linear(x->value, w->value, b->value));
    if (tracks<T>(tape, {&x, &w, &b})) {
        out->requires_grad = true;
        tape->record([x, w, b, o = out.get()] {
            if (o->grad.empty()) return;
            auto g = ops::linear_backward(x->value, w->value, o->grad);
            if (x->requires_grad) x->accumulate(std::move(g.input));
            if (w->requires_grad) w->accumulate(std::move(g.weight));
            if (b->requires_grad) b->accumulate(std::move(g.bias));
        });
    }
    return out;
}

template <typename T>
Var<T> bilinear_resize(Tape* tape, const Var<T>& x, int out_h, int out_w) {
    auto out = make_var(ops::bilinear_resize(x->value, out_h, out_w));
    if (tracks<T>(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, o = out.get()] {
            if (o->grad.empty()) return;
            x->accumulate(ops::bilinear_resize_backward(x->value.shape(), o->grad));
        });
    }
    return out;
}

template <typename T>
Var<T> reshape(Tape* tape, const Var<T>& x, Shape shape) {
    auto out = make_var(x->value.reshaped(std::move(shape)));
    if (tracks<T>(tape, {&x})) {
        out->requires_grad = true;
        tape->record([x, o = out.get()] {
            if (o->grad.empty()) return;
            x->accumulate(o->grad.reshaped(x->value.shape()));
        });
    }
    return out;
}

}  // namespace ag
}  // namespace razn
