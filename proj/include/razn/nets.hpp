#pragma once

// Segmentation and policy network architectures.
//
// Each architecture is written once, as a template over an executor. The
// autodiff executor runs it on tensors; the shape executor runs it on shapes
// to register parameters and to count multiply-accumulates. Forward pass,
// parameter layout and cost model therefore cannot drift apart.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "razn/autodiff.hpp"
#include "razn/errors.hpp"
#include "razn/ops.hpp"
#include "razn/params.hpp"
#include "razn/random.hpp"
#include "razn/tensor.hpp"

namespace razn {

struct SegNetConfig {
    int input_h = 64;
    int input_w = 64;
    int classes = 4;
    std::array<int, 4> widths{8, 16, 32, 64};
    std::array<int, 4> blocks{1, 1, 1, 1};
    // When set, stage 3 / stage 4 do not downsample (output stride stays at 8).
    bool keep_stride3 = true;
    bool keep_stride4 = true;
    // Realize a removed stride with dilation (2, then 4) rather than plain stride-1 convs.
    bool dilate = true;

    int output_stride() const { return 8 * (keep_stride3 ? 1 : 2) * (keep_stride4 ? 1 : 2); }

    void validate() const {
        if (classes < 2 || classes > 255) throw ConfigError("seg net: classes must be in [2, 255]");
        for (int i = 0; i < 4; ++i) {
            if (widths[static_cast<std::size_t>(i)] < 1 || blocks[static_cast<std::size_t>(i)] < 1) {
                throw ConfigError("seg net: stage widths and block counts must be >= 1");
            }
        }
        check_input(input_h, input_w);
    }

    void check_input(int h, int w) const {
        const int os = output_stride();
        if (h < os || w < os || h % os || w % os) {
            throw ConfigError("seg net: input " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not divisible by the output stride " + std::to_string(os));
        }
    }

    static SegNetConfig desk() { return {}; }

    static SegNetConfig paper() {
        SegNetConfig c;
        c.input_h = c.input_w = 256;
        c.widths = {64, 128, 256, 512};
        c.blocks = {2, 2, 2, 2};
        return c;
    }

    bool operator==(const SegNetConfig&) const = default;
};

struct PolicyNetConfig {
    int input_h = 64;
    int input_w = 64;
    std::array<int, 4> widths{8, 16, 32, 64};
    std::array<int, 4> strides{2, 2, 2, 2};

    void validate() const {
        for (int i = 0; i < 4; ++i) {
            if (widths[static_cast<std::size_t>(i)] < 1) throw ConfigError("policy net: widths must be >= 1");
            if (strides[static_cast<std::size_t>(i)] < 1) throw ConfigError("policy net: strides must be >= 1");
        }
        check_input(input_h, input_w);
    }

    void check_input(int h, int w) const {
        if (h < 16 || w < 16) throw ConfigError("policy net: input must be at least 16x16");
    }

    static PolicyNetConfig desk() { return {}; }

    /// ResNet18 widths; the stage strides keep the ResNet18 downsampling at
    /// stages 2 and 3 and drop it at stage 4, like the segmentation backbone.
    static PolicyNetConfig paper() {
        PolicyNetConfig c;
        c.input_h = c.input_w = 256;
        c.widths = {64, 128, 256, 512};
        c.strides = {1, 2, 2, 1};
        return c;
    }

    bool operator==(const PolicyNetConfig&) const = default;
};

// ---------------------------------------------------------------------------
// architectures

template <typename Ex>
typename Ex::Value stem(Ex& ex, typename Ex::Value x, int width) {
    x = ex.conv("stem.conv", x, width, 7, 2, 3, 1, false);
    x = ex.bn("stem.bn", x);
    x = ex.relu(x);
    return ex.maxpool(x, ops::PoolParams{3, 2, 1});
}

template <typename Ex>
typename Ex::Value basic_block(Ex& ex, const std::string& prefix, typename Ex::Value x, int in_ch, int out_ch, int stride,
                               int dilation) {
    auto y = ex.conv(prefix + ".conv1", x, out_ch, 3, stride, dilation, dilation, false);
    y = ex.bn(prefix + ".bn1", y);
    y = ex.relu(y);
    y = ex.conv(prefix + ".conv2", y, out_ch, 3, 1, dilation, dilation, false);
    y = ex.bn(prefix + ".bn2", y);
    auto shortcut = x;
    if (stride != 1 || in_ch != out_ch) {
        shortcut = ex.conv(prefix + ".down", x, out_ch, 1, stride, 0, 1, false);
        shortcut = ex.bn(prefix + ".down_bn", shortcut);
    }
    return ex.relu(ex.add(y, shortcut));
}

/// ResNet18-style FCN: stem, four residual stages, 1x1 classifier, bilinear upsample to input size.
template <typename Ex>
typename Ex::Value seg_graph(Ex& ex, const SegNetConfig& cfg, typename Ex::Value x, int out_h, int out_w) {
    x = stem(ex, x, cfg.widths[0]);
    int in_ch = cfg.widths[0];
    int dilation = 1;
    for (int s = 0; s < 4; ++s) {
        int stride = s == 0 ? 1 : 2;
        if ((s == 2 && cfg.keep_stride3) || (s == 3 && cfg.keep_stride4)) {
            stride = 1;
            if (cfg.dilate) dilation *= 2;
        }
        const int out_ch = cfg.widths[static_cast<std::size_t>(s)];
        for (int b = 0; b < cfg.blocks[static_cast<std::size_t>(s)]; ++b) {
            const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
            x = basic_block(ex, prefix, x, in_ch, out_ch, b == 0 ? stride : 1, dilation);
            in_ch = out_ch;
        }
    }
    x = ex.conv("head", x, cfg.classes, 1, 1, 0, 1, true);
    return ex.resize(x, out_h, out_w);
}

/// Policy network: same stem, one 3x3 conv + BN + ReLU per stage, global average pool, scalar head.
template <typename Ex>
typename Ex::Value policy_graph(Ex& ex, const PolicyNetConfig& cfg, typename Ex::Value x) {
    x = stem(ex, x, cfg.widths[0]);
    for (int s = 0; s < 4; ++s) {
        const std::string prefix = "block" + std::to_string(s + 1);
        x = ex.conv(prefix + ".conv", x, cfg.widths[static_cast<std::size_t>(s)], 3, cfg.strides[static_cast<std::size_t>(s)],
                    1, 1, false);
        x = ex.bn(prefix + ".bn", x);
        x = ex.relu(x);
    }
    x = ex.gap(x);
    x = ex.linear("head", x, 1);
    return ex.flatten(x);
}

// ---------------------------------------------------------------------------
// executors

/// Runs an architecture on real tensors through the tape.
template <typename T>
struct TensorExec {
    using Value = Var<T>;

    ParamStore<T>& store;
    Tape* tape = nullptr;
    ops::Mode mode = ops::Mode::Eval;
    ops::BatchNormConfig bn_cfg{};

    Value conv(const std::string& name, const Value& x, int /*out_ch*/, int /*k*/, int stride, int pad, int dilation,
               bool bias) {
        Value b = bias ? store.var(name + ".bias") : nullptr;
        return ag::conv2d(tape, x, store.var(name + ".weight"), b, ops::Conv2dParams{stride, pad, dilation});
    }
    Value bn(const std::string& name, const Value& x) {
        return ag::batchnorm2d(tape, x, store.var(name + ".gamma"), store.var(name + ".beta"),
                               store.buffer(name + ".running_mean"), store.buffer(name + ".running_var"), mode, bn_cfg);
    }
    Value relu(const Value& x) { return ag::relu(tape, x); }
    Value add(const Value& a, const Value& b) { return ag::add(tape, a, b); }
    Value maxpool(const Value& x, const ops::PoolParams& p) { return ag::maxpool2d(tape, x, p); }
    Value gap(const Value& x) { return ag::global_avg_pool(tape, x); }
    Value linear(const std::string& name, const Value& x, int /*out*/) {
        return ag::linear(tape, x, store.var(name + ".weight"), store.var(name + ".bias"));
    }
    Value resize(const Value& x, int h, int w) { return ag::bilinear_resize(tape, x, h, w); }
    Value flatten(const Value& x) { return ag::reshape(tape, x, Shape{x->value.dim(0)}); }
};

/// Per-layer multiply-accumulate counts for one image.
struct CostModel {
    struct Layer {
        std::string name;
        std::uint64_t macs = 0;
    };
    std::vector<Layer> layers;

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& l : layers) t += l.macs;
        return t;
    }
};

/// Runs an architecture on shapes: registers parameters (when given a store)
/// and accumulates MAC counts (when given a cost model).
template <typename T = float>
struct ShapeExec {
    using Value = Shape;

    ParamStore<T>* store = nullptr;
    Rng* rng = nullptr;
    CostModel* cost = nullptr;

    void count(const std::string& name, std::uint64_t macs) {
        if (cost) cost->layers.push_back({name, macs});
    }

    Tensor<T> normal(Shape shape, double stddev) {
        Tensor<T> t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng->normal() * stddev);
        return t;
    }

    Value conv(const std::string& name, const Value& x, int out_ch, int k, int stride, int pad, int dilation, bool bias) {
        const int in_ch = x[1];
        const ops::Conv2dParams p{stride, pad, dilation};
        ops::check_conv(x, Shape{out_ch, in_ch, k, k}, p);
        const int oh = ops::conv_out_size(x[2], k, p), ow = ops::conv_out_size(x[3], k, p);
        if (store) {
            const int fan_in = in_ch * k * k;
            store->add(name + ".weight", normal({out_ch, in_ch, k, k}, std::sqrt(2.0 / fan_in)));
            if (bias) store->add(name + ".bias", Tensor<T>({out_ch}));
        }
        const std::uint64_t plane = static_cast<std::uint64_t>(oh) * ow;
        count(name, static_cast<std::uint64_t>(out_ch) * in_ch * k * k * plane + (bias ? out_ch * plane : 0));
        return {x[0], out_ch, oh, ow};
    }
    Value bn(const std::string& name, const Value& x) {
        const int c = x[1];
        if (store) {
            store->add(name + ".gamma", Tensor<T>({c}, T(1)));
            store->add(name + ".beta", Tensor<T>({c}));
            store->add_buffer(name + ".running_mean", Tensor<T>({c}));
            store->add_buffer(name + ".running_var", Tensor<T>({c}, T(1)));
        }
        count(name, static_cast<std::uint64_t>(c) * x[2] * x[3]);
        return x;
    }
    Value relu(const Value& x) { return x; }
    Value add(const Value& a, const Value& b) {
        if (a != b) throw ConfigError("residual add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
        return a;
    }
    Value maxpool(const Value& x, const ops::PoolParams& p) {
        const int oh = (x[2] + 2 * p.pad - p.kernel) / p.stride + 1;
        const int ow = (x[3] + 2 * p.pad - p.kernel) / p.stride + 1;
        if (oh < 1 || ow < 1) throw ConfigError("maxpool: input smaller than window");
        return {x[0], x[1], oh, ow};
    }
    Value gap(const Value& x) {
        count("gap", static_cast<std::uint64_t>(x[1]) * x[2] * x[3]);
        return {x[0], x[1]};
    }
    Value linear(const std::string& name, const Value& x, int out) {
        if (store) {
            store->add(name + ".weight", normal({out, x[1]}, std::sqrt(1.0 / x[1])));
            store->add(name + ".bias", Tensor<T>({out}));
        }
        count(name, static_cast<std::uint64_t>(out) * x[1] + out);
        return {x[0], out};
    }
    Value resize(const Value& x, int h, int w) {
        count("upsample", 4ull * x[1] * h * w);
        return {x[0], x[1], h, w};
    }
    Value flatten(const Value& x) { return {x[0]}; }
};

// ---------------------------------------------------------------------------
// public entry points

template <typename T>
ParamStore<T> init_seg_params(const SegNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    Rng rng(seed);
    ShapeExec<T> ex{&store, &rng, nullptr};
    seg_graph(ex, cfg, Shape{1, 3, cfg.input_h, cfg.input_w}, cfg.input_h, cfg.input_w);
    return store;
}

template <typename T>
ParamStore<T> init_policy_params(const PolicyNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    Rng rng(seed);
    ShapeExec<T> ex{&store, &rng, nullptr};
    policy_graph(ex, cfg, Shape{1, 3, cfg.input_h, cfg.input_w});
    return store;
}

/// Logits [N, C, H, W] for images [N, 3, H, W].
template <typename T>
Var<T> seg_forward(ParamStore<T>& store, const SegNetConfig& cfg, const Var<T>& image, ops::Mode mode,
                   Tape* tape = nullptr) {
    const Shape& s = image->value.shape();
    if (s.size() != 4 || s[1] != 3) throw ConfigError("seg_forward: expected images [N,3,H,W], got " + shape_str(s));
    cfg.check_input(s[2], s[3]);
    TensorExec<T> ex{store, tape, mode};
    return seg_graph(ex, cfg, image, s[2], s[3]);
}

template <typename T>
Var<T> seg_forward(ParamStore<T>& store, const SegNetConfig& cfg, const Tensor<T>& image, ops::Mode mode,
                   Tape* tape = nullptr) {
    return seg_forward(store, cfg, make_var(image), mode, tape);
}

/// Raw scores [N] for images [N, 3, H, W].
template <typename T>
Var<T> policy_forward(ParamStore<T>& store, const PolicyNetConfig& cfg, const Var<T>& image, ops::Mode mode,
                      Tape* tape = nullptr) {
    const Shape& s = image->value.shape();
    if (s.size() != 4 || s[1] != 3) throw ConfigError("policy_forward: expected images [N,3,H,W], got " + shape_str(s));
    cfg.check_input(s[2], s[3]);
    TensorExec<T> ex{store, tape, mode};
    return policy_graph(ex, cfg, image);
}

template <typename T>
Var<T> policy_forward(ParamStore<T>& store, const PolicyNetConfig& cfg, const Tensor<T>& image, ops::Mode mode,
                      Tape* tape = nullptr) {
    return policy_forward(store, cfg, make_var(image), mode, tape);
}

inline CostModel flop_count(const SegNetConfig& cfg, int h, int w) {
    cfg.check_input(h, w);
    CostModel cost;
    ShapeExec<float> ex{nullptr, nullptr, &cost};
    seg_graph(ex, cfg, Shape{1, 3, h, w}, h, w);
    return cost;
}

inline CostModel flop_count(const PolicyNetConfig& cfg, int h, int w) {
    cfg.check_input(h, w);
    CostModel cost;
    ShapeExec<float> ex{nullptr, nullptr, &cost};
    policy_graph(ex, cfg, Shape{1, 3, h, w});
    return cost;
}

struct NetworkCosts {
    CostModel seg;
    CostModel policy;
    double ratio() const { return static_cast<double>(policy.total()) / static_cast<double>(seg.total()); }
};

inline NetworkCosts network_costs(const SegNetConfig& seg, const PolicyNetConfig& policy) {
    return {flop_count(seg, seg.input_h, seg.input_w), flop_count(policy, policy.input_h, policy.input_w)};
}

}  // namespace razn
