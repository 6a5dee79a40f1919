#pragma once

// Shared test utilities: central-difference gradient checks on the tape,
// scratch directories, and tiny datasets/configs that train in seconds.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "razn/autodiff.hpp"
#include "razn/random.hpp"
#include "razn/run_config.hpp"
#include "razn/synth.hpp"
#include "razn/tensor.hpp"

namespace razn::testkit {

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

/// Builds the output from leaf variables; must be deterministic and use `tape` when given.
using GraphFn = std::function<Var<double>(const std::vector<Var<double>>&, Tape*)>;

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// Compares tape gradients of sum(w * f(inputs)) against central differences
/// for up to `max_entries` entries per input (all entries when smaller).
inline GradCheck gradcheck(const GraphFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, std::size_t max_entries = 64,
                           double h = 1e-6) {
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(make_var(t, true));
    Tape tape;
    auto y = f(vars, &tape);
    const Tensor<double> w = random_tensor(y->value.shape(), rng);
    tape.backward(y, w);

    auto objective = [&](const std::vector<Var<double>>& vs) {
        auto out = f(vs, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < out->value.numel(); ++i) s += w[i] * out->value[i];
        return s;
    };
    GradCheck res;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t n = inputs[k].numel();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (n > max_entries) {
            for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
            idx.resize(max_entries);
        }
        const Tensor<double> analytic = vars[k]->grad.empty() ? Tensor<double>(inputs[k].shape()) : vars[k]->grad;
        double num2 = 0.0, den_a = 0.0, den_n = 0.0;
        for (std::size_t i : idx) {
            std::vector<Var<double>> plus, minus;
            for (std::size_t j = 0; j < inputs.size(); ++j) {
                Tensor<double> tp = inputs[j], tm = inputs[j];
                if (j == k) {
                    tp[i] += h;
                    tm[i] -= h;
                }
                plus.push_back(make_var(std::move(tp)));
                minus.push_back(make_var(std::move(tm)));
            }
            const double numeric = (objective(plus) - objective(minus)) / (2.0 * h);
            const double d = analytic[i] - numeric;
            num2 += d * d;
            den_a += analytic[i] * analytic[i];
            den_n += numeric * numeric;
            ++res.checked;
        }
        const double denom = std::max({std::sqrt(den_a), std::sqrt(den_n), 1e-10});
        res.max_rel_err = std::max(res.max_rel_err, std::sqrt(num2) / denom);
    }
    return res;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("razn_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// 512x512 finest level, three levels, 64-pixel tiles: generates in well under a second.
inline SynthSpec tiny_spec(std::uint64_t seed = 3) {
    SynthSpec s;
    s.seed = seed;
    s.finest_h = s.finest_w = 512;
    s.tile_size = 64;
    s.tissue_radius_min = 0.15;
    s.tissue_radius_max = 0.35;
    s.lesion_radius_min = 0.04;
    s.lesion_radius_max = 0.1;
    return s;
}

/// Small networks on 32x32 patches over tiny_spec's 128x128 coarsest level.
inline RunConfig tiny_config(const std::string& data_root) {
    RunConfig c;
    c.data_root = data_root;
    c.seed = 11;
    c.steps = 4;
    c.batch = 4;
    c.seg.input_h = c.seg.input_w = 32;
    c.seg.widths = {4, 4, 8, 8};
    c.policy.input_h = c.policy.input_w = 32;
    c.policy.widths = {4, 4, 8, 8};
    c.seg_lr.initial = 2e-3;
    c.policy_lr.initial = 2e-4;
    c.split.block = 64;
    c.split.modulus = 2;
    c.split.test_residue = 1;
    c.sampling.stride = 8;
    c.checkpoint_every = 2;
    c.log_every = 1;
    return c;
}

}  // namespace razn::testkit
