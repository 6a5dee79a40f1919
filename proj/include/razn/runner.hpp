#pragma once

// Training loops with interval logging and periodic checkpoints, shared by
// the command-line tool and the end-to-end tests.

#include <cstdint>
#include <functional>
#include <optional>

#include "json.hpp"
#include "razn/checkpoint.hpp"
#include "razn/inference.hpp"
#include "razn/metrics.hpp"
#include "razn/sampling.hpp"
#include "razn/trainer.hpp"

namespace razn {

struct TrainHooks {
    std::function<void(const nlohmann::json&)> log;         // one record per log interval
    std::function<void(const Checkpoint&)> checkpoint;      // every checkpoint interval
};

/// Averages per-step fields over a logging interval.
class IntervalLog {
public:
    void add(const nlohmann::json& rec) {
        for (auto it = rec.begin(); it != rec.end(); ++it) {
            if (it.key() == "step" || !it->is_number()) continue;
            sums_[it.key()] = sums_.value(it.key(), 0.0) + it->get<double>();
        }
        ++count_;
    }
    nlohmann::json flush(std::int64_t step) {
        nlohmann::json out{{"step", step}, {"steps_averaged", count_}};
        for (auto it = sums_.begin(); it != sums_.end(); ++it) out[it.key()] = it->get<double>() / static_cast<double>(count_);
        sums_ = nlohmann::json::object();
        count_ = 0;
        return out;
    }
    bool empty() const { return count_ == 0; }

private:
    nlohmann::json sums_ = nlohmann::json::object();
    std::int64_t count_ = 0;
};

/// Advances `st` until st.step == until.
inline void train_razn(RaznState& st, const PyramidDataset& ds, const PatchSampler& sampler, std::int64_t until,
                       const TrainHooks& hooks = {}) {
    IntervalLog log;
    while (st.step < until) {
        const StepReport r = train_step(st, ds, sampler);
        log.add(to_json_line(r));
        if (st.step % st.cfg.log_every == 0 || st.step == until) {
            if (hooks.log) hooks.log(log.flush(st.step));
        }
        if (hooks.checkpoint && (st.step % st.cfg.checkpoint_every == 0 || st.step == until)) hooks.checkpoint(to_checkpoint(st));
    }
}

inline void train_baseline(BaselineState& st, const PyramidDataset& ds, const PatchSampler& sampler, std::int64_t until,
                           const TrainHooks& hooks = {}) {
    IntervalLog log;
    while (st.step < until) {
        const BaselineReport r = baseline_step(st, ds, sampler);
        log.add({{"loss", r.loss}, {"lr", r.lr}, {"scale2_fraction", r.scale2_fraction}});
        if (st.step % st.cfg.log_every == 0 || st.step == until) {
            if (hooks.log) hooks.log(log.flush(st.step));
        }
        if (hooks.checkpoint && (st.step % st.cfg.checkpoint_every == 0 || st.step == until)) hooks.checkpoint(to_checkpoint(st));
    }
}

/// Trains a baseline of `cfg.method` from scratch for cfg.steps steps.
inline Checkpoint train_baseline(const RunConfig& cfg, const PyramidDataset& ds, const TrainHooks& hooks = {}) {
    check_dataset(ds, cfg);
    const PatchSampler sampler(ds, cfg.seg.input_h, cfg.seg.input_w, cfg.split, cfg.sampling);
    BaselineState st = make_baseline_state(cfg);
    train_baseline(st, ds, sampler, cfg.steps, hooks);
    return to_checkpoint(st);
}

/// Any trained model restored from a checkpoint, ready for inference.
struct LoadedModel {
    RunConfig cfg;
    std::optional<RaznState> razn;
    std::optional<BaselineState> baseline;

    Predictor predictor(const PyramidDataset& ds, ActionMode mode = ActionMode::Greedy) {
        if (razn) {
            auto zi = std::make_shared<ZoomInference>(ZoomInference{razn->cfg, razn->seg0, razn->seg1, razn->policy, ds, mode,
                                                                    hash_combine(razn->cfg.seed, 0x5a3b1eULL)});
            return [zi](const PatchRef& r) { return zi->run(r); };
        }
        auto bi = std::make_shared<BaselineInference>(BaselineInference{baseline->cfg, baseline->seg, ds});
        return [bi](const PatchRef& r) { return bi->run(r); };
    }

    /// Policy cost relative to one segmentation pass (0 for baselines, which run no policy).
    double policy_ratio() const { return network_costs(cfg.seg, cfg.policy).ratio(); }
};

inline LoadedModel load_model(const Checkpoint& ck) {
    LoadedModel m;
    m.cfg = config_of(ck);
    if (kind_of(ck) == Method::Razn) {
        m.razn = razn_from_checkpoint(ck, m.cfg);
    } else {
        m.baseline = baseline_from_checkpoint(ck, m.cfg);
    }
    return m;
}

}  // namespace razn
