#pragma once

// Zoom policy arithmetic: bounded acting probability, action sampling,
// normalized reward, and the score-function gradient with respect to the
// policy network's raw score.

#include <cmath>
#include <string>

#include "razn/errors.hpp"
#include "razn/ops.hpp"
#include "razn/random.hpp"

namespace razn {

enum class RewardSign {
    AsWritten,     // R(1) = (J1 - J0) / J0: zooming is rewarded where the fine loss is higher
    LossDecrease,  // R(1) = (J0 - J1) / J0: zooming is rewarded where the fine loss is lower
};

inline std::string to_string(RewardSign s) { return s == RewardSign::AsWritten ? "as-written" : "loss-decrease"; }

inline RewardSign parse_reward_sign(const std::string& s) {
    if (s == "as-written") return RewardSign::AsWritten;
    if (s == "loss-decrease") return RewardSign::LossDecrease;
    throw ConfigError("reward sign must be as-written or loss-decrease, got '" + s + "'");
}

struct ZoomConfig {
    int max_zoom = 1;
    int rate = 2;
    double alpha = 0.8;
    RewardSign sign = RewardSign::AsWritten;
    double eps = 1e-8;

    void validate() const {
        if (max_zoom < 1) throw ConfigError("max_zoom must be >= 1");
        if (rate < 2) throw ConfigError("zoom rate must be >= 2");
        if (!(alpha > 0.5 && alpha < 1.0)) throw ConfigError("alpha must lie in (0.5, 1)");
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    }
};

/// Probability of zooming: alpha * p + (1 - alpha) * (1 - p), confined to [1 - alpha, alpha].
inline double bounded_prob(double p, double alpha) { return alpha * p + (1.0 - alpha) * (1.0 - p); }

struct PolicyDecision {
    double score = 0.0;
    double p = 0.5;
    double p_tilde = 0.5;
    int action = 0;
    double draw = 0.0;  // the uniform variate that produced `action`
};

inline int sample_action(double p_tilde, Rng& rng, double* draw = nullptr) {
    const double u = rng.uniform();
    if (draw) *draw = u;
    return u < p_tilde ? 1 : 0;
}

inline PolicyDecision decide(double score, double alpha, Rng& rng) {
    PolicyDecision d;
    d.score = score;
    d.p = ops::sigmoid(score);
    d.p_tilde = bounded_prob(d.p, alpha);
    d.action = sample_action(d.p_tilde, rng, &d.draw);
    return d;
}

inline double reward(int action, double j0, double j1, const ZoomConfig& cfg) {
    if (action == 0) return 0.0;
    const double gain = cfg.sign == RewardSign::AsWritten ? j1 - j0 : j0 - j1;
    return gain / std::max(j0, cfg.eps);
}

struct PolicyTerm {
    double objective = 0.0;   // -R * log pi(a)
    double score_grad = 0.0;  // d objective / d raw score
};

/// Single-sample score-function estimate and its derivative through
/// p_tilde = alpha*p + (1-alpha)*(1-p) and p = sigmoid(score).
inline PolicyTerm policy_objective_and_grad(const PolicyDecision& d, double r, double alpha) {
    const double dpt = (2.0 * alpha - 1.0) * d.p * (1.0 - d.p);
    PolicyTerm t;
    if (d.action == 1) {
        t.objective = -r * std::log(d.p_tilde);
        t.score_grad = -r * dpt / d.p_tilde;
    } else {
        t.objective = -r * std::log(1.0 - d.p_tilde);
        t.score_grad = r * dpt / (1.0 - d.p_tilde);
    }
    return t;
}

}  // namespace razn
