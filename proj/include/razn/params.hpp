#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "razn/autodiff.hpp"
#include "razn/errors.hpp"
#include "razn/tensor.hpp"

namespace razn {

template <typename T>
struct Param {
    Var<T> node;  // value + gradient accumulator
    Tensor<T> adam_m;
    Tensor<T> adam_v;
};

/// Named parameters (with gradients and Adam moments) plus non-trainable
/// buffers such as batch-norm running statistics. Single writer.
template <typename T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Tensor<T> value) {
        if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Param<T> p;
        p.adam_m = Tensor<T>::like(value);
        p.adam_v = Tensor<T>::like(value);
        p.node = make_var(std::move(value), true);
        return params_.emplace(name, std::move(p)).first->second;
    }

    Tensor<T>& add_buffer(const std::string& name, Tensor<T> value) {
        if (params_.count(name) || buffers_.count(name)) throw ConfigError("duplicate buffer name: " + name);
        return buffers_.emplace(name, std::move(value)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

    Param<T>& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Param<T>& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Var<T>& var(const std::string& name) { return param(name).node; }
    const Tensor<T>& value(const std::string& name) const { return param(name).node->value; }

    Tensor<T>& buffer(const std::string& name) {
        auto it = buffers_.find(name);
        if (it == buffers_.end()) throw ConfigError("unknown buffer: " + name);
        return it->second;
    }
    const Tensor<T>& buffer(const std::string& name) const {
        auto it = buffers_.find(name);
        if (it == buffers_.end()) throw ConfigError("unknown buffer: " + name);
        return it->second;
    }

    std::map<std::string, Param<T>>& params() { return params_; }
    const std::map<std::string, Param<T>>& params() const { return params_; }
    std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
    const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

    std::int64_t adam_steps() const { return adam_steps_; }
    void set_adam_steps(std::int64_t t) { adam_steps_ = t; }
    void bump_adam_steps() { ++adam_steps_; }

    void zero_grad() {
        for (auto& [_, p] : params_) p.node->grad = Tensor<T>();
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_) n += p.node->value.numel();
        return n;
    }

    /// Deep copy (fresh nodes; no storage shared with *this).
    ParamStore clone() const {
        ParamStore out;
        for (const auto& [name, p] : params_) {
            Param<T>& q = out.add(name, p.node->value);
            q.adam_m = p.adam_m;
            q.adam_v = p.adam_v;
            q.node->grad = p.node->grad;
        }
        out.buffers_ = buffers_;
        out.adam_steps_ = adam_steps_;
        return out;
    }

    /// Bitwise equality of values, buffers, moments and step count.
    bool bitwise_equal(const ParamStore& o) const {
        if (adam_steps_ != o.adam_steps_ || buffers_ != o.buffers_ || params_.size() != o.params_.size()) return false;
        for (const auto& [name, p] : params_) {
            auto it = o.params_.find(name);
            if (it == o.params_.end()) return false;
            if (!(p.node->value == it->second.node->value) || !(p.adam_m == it->second.adam_m) ||
                !(p.adam_v == it->second.adam_v))
                return false;
        }
        return true;
    }

private:
    std::map<std::string, Param<T>> params_;
    std::map<std::string, Tensor<T>> buffers_;
    std::int64_t adam_steps_ = 0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update on every parameter of the store, then zeroes the gradients.
/// Parameters with no accumulated gradient are treated as having gradient zero.
template <typename T>
void adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg = {}) {
    for (const auto& [name, p] : store.params()) {
        const Tensor<T>& g = p.node->grad;
        if (g.empty()) continue;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (!std::isfinite(static_cast<double>(g[i]))) {
                std::ostringstream os;
                os << "non-finite gradient in parameter '" << name << "' at flat index " << i << " (value " << g[i]
                   << ")";
                throw NumericError(os.str());
            }
        }
    }
    store.bump_adam_steps();
    const double t = static_cast<double>(store.adam_steps());
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : store.params()) {
        Tensor<T>& w = p.node->value;
        const Tensor<T>& g = p.node->grad;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
            const double m = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * gi;
            const double v = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * gi * gi;
            p.adam_m[i] = static_cast<T>(m);
            p.adam_v[i] = static_cast<T>(v);
            const double update = lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
            w[i] = static_cast<T>(w[i] - update);
        }
    }
    store.zero_grad();
}

/// Step-wise decay: rate(t) = initial * factor^floor(t / period).
struct LrSchedule {
    double initial = 0.01;
    double factor = 0.1;
    std::int64_t period = 50000;

    void validate() const {
        if (!(initial > 0.0) || !(factor > 0.0) || period < 1) throw ConfigError("learning-rate schedule must be positive");
    }
};

inline double lr_at(const LrSchedule& s, std::int64_t step) {
    if (step < 0) throw ConfigError("lr_at: step must be >= 0");
    return s.initial * std::pow(s.factor, static_cast<double>(step / s.period));
}

}  // namespace razn
