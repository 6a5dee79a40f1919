#include <gtest/gtest.h>

#include <cmath>

#include "razn/policy.hpp"

using namespace razn;

TEST(BoundedProb, Examples) {
    EXPECT_DOUBLE_EQ(bounded_prob(1.0, 0.8), 0.8);
    EXPECT_NEAR(bounded_prob(0.0, 0.8), 0.2, 1e-15);
    EXPECT_DOUBLE_EQ(bounded_prob(0.5, 0.8), 0.5);
    EXPECT_NEAR(bounded_prob(0.25, 0.9), 0.9 * 0.25 + 0.1 * 0.75, 1e-15);
}

TEST(BoundedProb, StaysInsideTheBoundForAnyScore) {
    for (double alpha : {0.6, 0.8, 0.95}) {
        for (double s = -60.0; s <= 60.0; s += 0.5) {
            const double pt = bounded_prob(ops::sigmoid(s), alpha);
            EXPECT_GE(pt, 1.0 - alpha - 1e-15);
            EXPECT_LE(pt, alpha + 1e-15);
        }
    }
}

TEST(Sampling, FrequencyMatchesProbability) {
    Rng rng(123);
    const int n = 100000;
    int zooms = 0;
    for (int i = 0; i < n; ++i) zooms += decide(40.0, 0.8, rng).action;
    EXPECT_NEAR(static_cast<double>(zooms) / n, 0.8, 0.004);
    zooms = 0;
    for (int i = 0; i < n; ++i) zooms += decide(-40.0, 0.8, rng).action;
    EXPECT_NEAR(static_cast<double>(zooms) / n, 0.2, 0.004);
}

TEST(Sampling, DrawDeterminesAction) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto d = decide(rng.normal(), 0.8, rng);
        EXPECT_EQ(d.action, d.draw < d.p_tilde ? 1 : 0);
        EXPECT_DOUBLE_EQ(d.p_tilde, bounded_prob(d.p, 0.8));
    }
}

TEST(Reward, Examples) {
    ZoomConfig cfg;
    EXPECT_NEAR(reward(1, 1.0, 1.2, cfg), 0.2, 1e-12);
    EXPECT_NEAR(reward(1, 2.0, 1.0, cfg), -0.5, 1e-12);
    EXPECT_EQ(reward(0, 2.0, 1.0, cfg), 0.0);
    cfg.sign = RewardSign::LossDecrease;
    EXPECT_NEAR(reward(1, 2.0, 1.0, cfg), 0.5, 1e-12);
    EXPECT_NEAR(reward(1, 1.0, 1.2, cfg), -0.2, 1e-12);
}

TEST(Reward, ZeroCoarseLossUsesEpsilon) {
    ZoomConfig cfg;
    const double r = reward(1, 0.0, 1e-9, cfg);
    EXPECT_TRUE(std::isfinite(r));
    EXPECT_NEAR(r, 1e-9 / cfg.eps, 1e-12);
}

TEST(Reward, InvariantToLossScale) {
    Rng rng(9);
    for (auto sign : {RewardSign::AsWritten, RewardSign::LossDecrease}) {
        ZoomConfig cfg;
        cfg.sign = sign;
        for (int i = 0; i < 200; ++i) {
            const double j0 = 0.01 + rng.uniform(), j1 = rng.uniform(), c = 0.1 + 10 * rng.uniform();
            EXPECT_NEAR(reward(1, c * j0, c * j1, cfg), reward(1, j0, j1, cfg), 1e-12);
        }
    }
}

TEST(PolicyGradient, MatchesClosedFormAndFiniteDifference) {
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        const double s = 4 * rng.normal(), r = rng.normal(), alpha = 0.55 + 0.4 * rng.uniform();
        const int a = static_cast<int>(rng.below(2));
        auto term_at = [&](double score) {
            PolicyDecision d;
            d.score = score;
            d.p = ops::sigmoid(score);
            d.p_tilde = bounded_prob(d.p, alpha);
            d.action = a;
            return policy_objective_and_grad(d, r, alpha);
        };
        const auto t = term_at(s);
        const double p = 1.0 / (1.0 + std::exp(-s));
        const double pt = alpha * p + (1 - alpha) * (1 - p);
        const double dpt = (2 * alpha - 1) * p * (1 - p);
        const double closed = a == 1 ? -r * dpt / pt : r * dpt / (1 - pt);
        EXPECT_NEAR(t.score_grad, closed, 1e-12 * (1 + std::abs(closed)));
        EXPECT_NEAR(t.objective, -r * std::log(a == 1 ? pt : 1 - pt), 1e-12);
        const double h = 1e-6;
        const double fd = (term_at(s + h).objective - term_at(s - h).objective) / (2 * h);
        EXPECT_NEAR(t.score_grad, fd, 1e-6 * (1 + std::abs(fd)));
    }
}

TEST(PolicyGradient, PositiveRewardPushesTowardTheTakenAction) {
    PolicyDecision d;
    d.p = ops::sigmoid(0.3);
    d.p_tilde = bounded_prob(d.p, 0.8);
    d.action = 1;
    EXPECT_LT(policy_objective_and_grad(d, 1.0, 0.8).score_grad, 0.0);
    d.action = 0;
    EXPECT_GT(policy_objective_and_grad(d, 1.0, 0.8).score_grad, 0.0);
    EXPECT_EQ(policy_objective_and_grad(d, 0.0, 0.8).score_grad, 0.0);
}

TEST(ZoomConfig, Validation) {
    ZoomConfig c;
    EXPECT_NO_THROW(c.validate());
    c.alpha = 0.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.max_zoom = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_reward_sign("loss-decrease"), RewardSign::LossDecrease);
    EXPECT_EQ(to_string(RewardSign::AsWritten), "as-written");
    EXPECT_THROW(parse_reward_sign("both"), ConfigError);
}
