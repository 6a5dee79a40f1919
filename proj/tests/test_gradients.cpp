#include <gtest/gtest.h>

#include "razn/autodiff.hpp"
#include "razn/nets.hpp"
#include "razn/ops.hpp"
#include "testing.hpp"

using namespace razn;
using razn::testkit::gradcheck;
using razn::testkit::random_tensor;

namespace {

constexpr double kTol = 1e-4;
constexpr int kInstances = 20;

void expect_ok(const razn::testkit::GradCheck& r, int instance) {
    EXPECT_GT(r.checked, 0u) << "instance " << instance;
    EXPECT_LE(r.max_rel_err, kTol) << "instance " << instance;
}

}  // namespace

TEST(GradCheck, Conv2d) {
    Rng rng(101);
    for (int t = 0; t < kInstances; ++t) {
        const int k = t % 3 == 0 ? 1 : (t % 3 == 1 ? 3 : 5);
        const ops::Conv2dParams p{1 + t % 2, (t / 2) % 3, k == 1 ? 1 : 1 + (t / 3) % 2};
        const int n = 1 + t % 2, c = 1 + t % 3, o = 1 + (t + 1) % 3;
        const int h = 6 + t % 4, w = 5 + (t * 7) % 5;
        const bool with_bias = t % 2 == 0;
        std::vector<Tensor<double>> in{random_tensor({n, c, h, w}, rng), random_tensor({o, c, k, k}, rng)};
        if (with_bias) in.push_back(random_tensor({o}, rng));
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) {
            return ag::conv2d(tape, v[0], v[1], with_bias ? v[2] : Var<double>{}, p);
        };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, BatchNormTrain) {
    Rng rng(102);
    for (int t = 0; t < kInstances; ++t) {
        const int n = 1 + t % 3, c = 1 + t % 4, h = 2 + t % 3, w = 3 + t % 2;
        std::vector<Tensor<double>> in{random_tensor({n, c, h, w}, rng, 1.5), random_tensor({c}, rng),
                                       random_tensor({c}, rng)};
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) {
            Tensor<double> rm({c}), rv({c}, 1.0);
            return ag::batchnorm2d(tape, v[0], v[1], v[2], rm, rv, ops::Mode::Train);
        };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, BatchNormEval) {
    Rng rng(103);
    for (int t = 0; t < kInstances; ++t) {
        const int c = 1 + t % 4;
        std::vector<Tensor<double>> in{random_tensor({2, c, 3, 3}, rng), random_tensor({c}, rng), random_tensor({c}, rng)};
        Tensor<double> rm = random_tensor({c}, rng), rv({c});
        for (std::size_t i = 0; i < rv.numel(); ++i) rv[i] = 0.5 + rng.uniform();
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) {
            Tensor<double> m = rm, s = rv;
            return ag::batchnorm2d(tape, v[0], v[1], v[2], m, s, ops::Mode::Eval);
        };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, Relu) {
    Rng rng(104);
    for (int t = 0; t < kInstances; ++t) {
        std::vector<Tensor<double>> in{random_tensor({1 + t % 2, 2, 3 + t % 3, 4}, rng)};
        auto f = [](const std::vector<Var<double>>& v, Tape* tape) { return ag::relu(tape, v[0]); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, Add) {
    Rng rng(105);
    for (int t = 0; t < kInstances; ++t) {
        const Shape s{1 + t % 3, 2, 3, 1 + t % 4};
        std::vector<Tensor<double>> in{random_tensor(s, rng), random_tensor(s, rng)};
        auto f = [](const std::vector<Var<double>>& v, Tape* tape) { return ag::add(tape, v[0], v[1]); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, MaxPool) {
    Rng rng(106);
    for (int t = 0; t < kInstances; ++t) {
        const ops::PoolParams p{3, 1 + t % 2, t % 2};
        std::vector<Tensor<double>> in{random_tensor({1 + t % 2, 1 + t % 3, 5 + t % 4, 6 + t % 3}, rng)};
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) { return ag::maxpool2d(tape, v[0], p); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, GlobalAvgPool) {
    Rng rng(107);
    for (int t = 0; t < kInstances; ++t) {
        std::vector<Tensor<double>> in{random_tensor({1 + t % 3, 1 + t % 4, 1 + t % 5, 2 + t % 3}, rng)};
        auto f = [](const std::vector<Var<double>>& v, Tape* tape) { return ag::global_avg_pool(tape, v[0]); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, Linear) {
    Rng rng(108);
    for (int t = 0; t < kInstances; ++t) {
        const int n = 1 + t % 3, c = 1 + t % 5, k = 1 + t % 2;
        std::vector<Tensor<double>> in{random_tensor({n, c}, rng), random_tensor({k, c}, rng), random_tensor({k}, rng)};
        auto f = [](const std::vector<Var<double>>& v, Tape* tape) { return ag::linear(tape, v[0], v[1], v[2]); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, BilinearResize) {
    Rng rng(109);
    for (int t = 0; t < kInstances; ++t) {
        const int h = 2 + t % 5, w = 3 + t % 4;
        const int oh = 1 + (t * 5) % 13, ow = 1 + (t * 3) % 11;
        std::vector<Tensor<double>> in{random_tensor({1 + t % 2, 2, h, w}, rng)};
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) { return ag::bilinear_resize(tape, v[0], oh, ow); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, Reshape) {
    Rng rng(110);
    for (int t = 0; t < kInstances; ++t) {
        const int n = 1 + t % 3, c = 2 + t % 2;
        std::vector<Tensor<double>> in{random_tensor({n, c, 1, 1}, rng)};
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) { return ag::reshape(tape, v[0], Shape{n, c}); };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, ComposedGraphWithFanOut) {
    Rng rng(111);
    for (int t = 0; t < kInstances; ++t) {
        std::vector<Tensor<double>> in{random_tensor({2, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng),
                                       random_tensor({2}, rng), random_tensor({2}, rng)};
        auto f = [](const std::vector<Var<double>>& v, Tape* tape) {
            Tensor<double> rm({2}), rv({2}, 1.0);
            auto y = ag::conv2d(tape, v[0], v[1], Var<double>{}, {1, 1, 1});
            y = ag::batchnorm2d(tape, y, v[2], v[3], rm, rv, ops::Mode::Train);
            y = ag::relu(tape, y);
            y = ag::add(tape, y, v[0]);  // v[0] feeds two paths
            return ag::bilinear_resize(tape, y, 9, 4);
        };
        expect_ok(gradcheck(f, in, rng), t);
    }
}

TEST(GradCheck, CrossEntropyLogits) {
    Rng rng(112);
    for (int t = 0; t < kInstances; ++t) {
        const int n = 1 + t % 2, c = 2 + t % 3, h = 1 + t % 3, w = 2 + t % 2;
        Tensor<double> logits = random_tensor({n, c, h, w}, rng, 2.0);
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(n) * h * w);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(c)));
        const auto r = ops::softmax_cross_entropy(logits, labels, true);
        double num2 = 0, den = 0;
        for (std::size_t i = 0; i < logits.numel(); ++i) {
            const double h6 = 1e-6, x0 = logits[i];
            logits[i] = x0 + h6;
            const double up = ops::softmax_cross_entropy(logits, labels, false).loss;
            logits[i] = x0 - h6;
            const double dn = ops::softmax_cross_entropy(logits, labels, false).loss;
            logits[i] = x0;
            const double fd = (up - dn) / (2 * h6);
            num2 += (fd - r.grad[i]) * (fd - r.grad[i]);
            den += fd * fd;
        }
        EXPECT_LE(std::sqrt(num2 / den), kTol) << t;
    }
}

namespace {

// Gradient of sum(w * net(x)) with respect to every sampled parameter entry and the input.
template <typename Forward>
double net_param_check(ParamStore<double>& store, const Tensor<double>& x, Forward forward, Rng& rng) {
    // Zero shifts and zero running means put dead channels exactly on the relu kink.
    for (auto& [name, p] : store.params())
        if (name.ends_with(".beta")) p.node->value = random_tensor(p.node->value.shape(), rng, 0.5);
    for (auto& [name, b] : store.buffers())
        for (std::size_t i = 0; i < b.numel(); ++i)
            b[i] = name.ends_with("running_var") ? 0.5 + rng.uniform() : 0.3 * rng.normal();
    auto xv = make_var(x, true);
    Tape tape;
    auto y = forward(store, xv, &tape);
    const Tensor<double> w = random_tensor(y->value.shape(), rng);
    store.zero_grad();
    tape.backward(y, w);
    auto objective = [&] {
        auto out = forward(store, make_var(x), nullptr);
        double s = 0;
        for (std::size_t i = 0; i < out->value.numel(); ++i) s += w[i] * out->value[i];
        return s;
    };
    double worst = 0.0;
    const double h = 1e-6;
    for (auto& [name, p] : store.params()) {
        const Tensor<double> analytic = p.node->grad.empty() ? Tensor<double>::like(p.node->value) : p.node->grad;
        double num2 = 0, da = 0, dn = 0;
        const std::size_t n = p.node->value.numel();
        for (std::size_t k = 0; k < std::min<std::size_t>(n, 8); ++k) {
            const std::size_t i = n <= 8 ? k : rng.below(n);
            double& v = p.node->value[i];
            const double v0 = v;
            v = v0 + h;
            const double up = objective();
            v = v0 - h;
            const double dn_ = objective();
            v = v0;
            const double fd = (up - dn_) / (2 * h);
            num2 += (fd - analytic[i]) * (fd - analytic[i]);
            da += analytic[i] * analytic[i];
            dn += fd * fd;
        }
        worst = std::max(worst, std::sqrt(num2) / std::max({std::sqrt(da), std::sqrt(dn), 1e-10}));
    }
    return worst;
}

}  // namespace

TEST(GradCheck, TinySegNetParametersAndInput) {
    Rng rng(113);
    for (int t = 0; t < kInstances; ++t) {
        SegNetConfig cfg;
        cfg.input_h = cfg.input_w = 16;
        cfg.widths = {2, 2, 3, 3};
        cfg.dilate = t % 2 == 0;
        const auto mode = t % 4 < 2 ? ops::Mode::Train : ops::Mode::Eval;
        auto store = init_seg_params<double>(cfg, static_cast<std::uint64_t>(t));
        auto fwd = [&](ParamStore<double>& s, const Var<double>& x, Tape* tape) { return seg_forward(s, cfg, x, mode, tape); };
        const auto x = random_tensor({2, 3, 16, 16}, rng);
        EXPECT_LE(net_param_check(store, x, fwd, rng), kTol) << t;
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) { return seg_forward(store, cfg, v[0], mode, tape); };
        expect_ok(gradcheck(f, {x}, rng, 32), t);
    }
}

TEST(GradCheck, TinyPolicyNetParametersAndInput) {
    Rng rng(114);
    for (int t = 0; t < kInstances; ++t) {
        PolicyNetConfig cfg;
        cfg.input_h = cfg.input_w = 16;
        cfg.widths = {2, 2, 3, 3};
        if (t % 2) cfg.strides = {1, 2, 2, 1};
        const auto mode = t % 4 < 2 ? ops::Mode::Train : ops::Mode::Eval;
        auto store = init_policy_params<double>(cfg, static_cast<std::uint64_t>(t));
        auto fwd = [&](ParamStore<double>& s, const Var<double>& x, Tape* tape) {
            return policy_forward(s, cfg, x, mode, tape);
        };
        const auto x = random_tensor({3, 3, 16, 16}, rng);
        EXPECT_LE(net_param_check(store, x, fwd, rng), kTol) << t;
        auto f = [&](const std::vector<Var<double>>& v, Tape* tape) { return policy_forward(store, cfg, v[0], mode, tape); };
        expect_ok(gradcheck(f, {x}, rng, 32), t);
    }
}
