#pragma once

// Training: the alternating zoom trainer (coarse net, fine net, policy) and
// the single-network baselines trained on degraded fine-level crops.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "razn/autodiff.hpp"
#include "razn/checkpoint.hpp"
#include "razn/errors.hpp"
#include "razn/nets.hpp"
#include "razn/ops.hpp"
#include "razn/params.hpp"
#include "razn/policy.hpp"
#include "razn/pyramid.hpp"
#include "razn/random.hpp"
#include "razn/run_config.hpp"
#include "razn/sampling.hpp"

namespace razn {

/// Segmentation loss: pixel-averaged cross-entropy against an index mask.
inline double seg_loss(const Tensor<float>& logits, const IntMask& labels) {
    if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(2) != labels.height || logits.dim(3) != labels.width) {
        throw ValidationError("seg_loss: logits " + shape_str(logits.shape()) + " do not match labels " +
                              std::to_string(labels.height) + "x" + std::to_string(labels.width));
    }
    return ops::softmax_cross_entropy(logits, std::span<const std::uint8_t>(labels.data), false).per_sample[0];
}

/// Downsample by `factor` with a box filter, then resize back with bilinear interpolation.
inline Tensor<float> degrade(const Tensor<float>& x, int factor) {
    if (factor == 1) return x;
    return ops::bilinear_resize(ops::area_downsample(x, factor), x.dim(2), x.dim(3));
}

/// Linear magnification between the sampling level and the finest level.
inline int finest_factor(const PyramidDataset& ds, int level) {
    int f = 1;
    for (int l = level; l < ds.levels() - 1; ++l) f *= ds.zoom_rate();
    return f;
}

/// Degradation factor of a baseline relative to the finest level: scale1 keeps
/// the sampling level's resolution, scale2 the next finer level's.
inline int baseline_factor(const PyramidDataset& ds, int level, int scale) {
    const int f = finest_factor(ds, level);
    return scale == 1 ? f : f / ds.zoom_rate();
}

inline std::vector<int> levels_needed(const PyramidDataset& ds, const RunConfig& cfg) {
    std::vector<int> out{cfg.sampling.level};
    if (cfg.method == Method::Razn) {
        for (int l = cfg.sampling.level + 1; l <= std::min(ds.levels() - 1, cfg.sampling.level + cfg.zoom.max_zoom); ++l)
            out.push_back(l);
    }
    out.push_back(ds.levels() - 1);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline void check_dataset(const PyramidDataset& ds, const RunConfig& cfg) {
    if (ds.zoom_rate() != cfg.zoom.rate) {
        throw ConfigError("zoom rate " + std::to_string(cfg.zoom.rate) + " does not match the dataset's " +
                          std::to_string(ds.zoom_rate()));
    }
    if (ds.classes() != cfg.seg.classes) throw ConfigError("segmentation classes do not match the dataset");
    if (cfg.sampling.level + 1 >= ds.levels()) throw ConfigError("sampling level must leave at least one level to zoom into");
}

// ---------------------------------------------------------------------------
// zoom trainer

struct RaznState {
    RunConfig cfg;
    ParamStore<float> seg0;    // coarse network
    ParamStore<float> seg1;    // fine network
    ParamStore<float> policy;  // zoom policy
    std::int64_t step = 0;
    Rng rng;
    std::optional<int> forced_action;  // test hook: overrides sampled actions
};

inline RaznState make_razn_state(const RunConfig& cfg) {
    cfg.validate();
    return RaznState{cfg,
                     init_seg_params<float>(cfg.seg, hash_combine(cfg.seed, 1)),
                     init_seg_params<float>(cfg.seg, hash_combine(cfg.seed, 2)),
                     init_policy_params<float>(cfg.policy, hash_combine(cfg.seed, 3)),
                     0,
                     Rng(hash_combine(cfg.seed, 4)),
                     std::nullopt};
}

struct StepReport {
    std::int64_t step = 0;  // step index that was executed
    double j0_mean = 0.0;
    double j1_mean = 0.0;
    double zoom_fraction = 0.0;
    double reward_mean = 0.0;
    double p_tilde_mean = 0.0;
    double lr = 0.0;
    std::vector<PolicyDecision> decisions;
    bool seg0_updated = false;
    bool seg1_updated = false;
    bool policy_updated = false;
};

inline nlohmann::json to_json_line(const StepReport& r) {
    return {{"step", r.step},
            {"j0", r.j0_mean},
            {"j1", r.j1_mean},
            {"zoom_fraction", r.zoom_fraction},
            {"reward", r.reward_mean},
            {"p_tilde", r.p_tilde_mean},
            {"lr", r.lr}};
}

namespace detail {

inline void check_losses(const std::vector<double>& losses, const std::vector<PatchRef>& refs, std::size_t per_ref,
                         const char* what) {
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!std::isfinite(losses[i])) {
            throw NumericError(std::string("non-finite ") + what + " loss at patch " + to_string(refs[i / per_ref]));
        }
    }
}

/// Forward + backward + one Adam step of a segmentation store on a batch.
inline std::vector<double> fit_batch(ParamStore<float>& store, const SegNetConfig& cfg, const Tensor<float>& x,
                                     const std::vector<std::uint8_t>& labels, double lr, const AdamConfig& adam) {
    Tape tape;
    auto logits = seg_forward(store, cfg, x, ops::Mode::Train, &tape);
    auto ce = ops::softmax_cross_entropy(logits->value, std::span<const std::uint8_t>(labels), true);
    tape.backward(logits, std::move(ce.grad));
    adam_step(store, lr, adam);
    return ce.per_sample;
}

}  // namespace detail

/// One alternating update on explicitly given top-level patches.
inline StepReport train_step_on(RaznState& st, const PyramidDataset& ds, const std::vector<PatchRef>& refs) {
    const RunConfig& cfg = st.cfg;
    const auto B = refs.size();
    if (B == 0) throw ValidationError("train_step: empty batch");
    StepReport rep;
    rep.step = st.step;

    std::vector<Patch> x0s, x1s;
    for (const auto& ref : refs) {
        x0s.push_back(ds.read_patch(ref));
        const PatchGrid grid = crop_grid(zoom_region(ds, ref), cfg.zoom.rate);
        for (const auto& c : grid.children) x1s.push_back(ds.read_patch(c));
    }
    const std::size_t kids = x1s.size() / B;
    auto [x0, y0] = stack(x0s);
    auto [x1, y1] = stack(x1s);

    // Both losses are needed for the reward; neither pass records gradients
    // or touches running statistics.
    const auto ce0 = ops::softmax_cross_entropy(seg_forward(st.seg0, cfg.seg, x0, ops::Mode::Eval)->value,
                                                std::span<const std::uint8_t>(y0), false);
    const auto ce1 = ops::softmax_cross_entropy(seg_forward(st.seg1, cfg.seg, x1, ops::Mode::Eval)->value,
                                                std::span<const std::uint8_t>(y1), false);
    detail::check_losses(ce0.per_sample, refs, 1, "coarse");
    detail::check_losses(ce1.per_sample, refs, kids, "fine");
    std::vector<double> j0(B), j1(B, 0.0);
    for (std::size_t i = 0; i < B; ++i) {
        j0[i] = ce0.per_sample[i];
        for (std::size_t k = 0; k < kids; ++k) j1[i] += ce1.per_sample[i * kids + k];
        j1[i] /= static_cast<double>(kids);
    }

    Tape ptape;
    auto scores = policy_forward(st.policy, cfg.policy, make_var(x0), ops::Mode::Train, &ptape);
    Tensor<float> seed(scores->value.shape());
    std::vector<std::size_t> coarse_idx, fine_idx;
    for (std::size_t i = 0; i < B; ++i) {
        PolicyDecision d = decide(scores->value[i], cfg.zoom.alpha, st.rng);
        if (st.forced_action) d.action = *st.forced_action;
        const double r = reward(d.action, j0[i], j1[i], cfg.zoom);
        seed[i] = static_cast<float>(policy_objective_and_grad(d, r, cfg.zoom.alpha).score_grad / static_cast<double>(B));
        (d.action ? fine_idx : coarse_idx).push_back(i);
        rep.j0_mean += j0[i] / static_cast<double>(B);
        rep.j1_mean += j1[i] / static_cast<double>(B);
        rep.reward_mean += r / static_cast<double>(B);
        rep.p_tilde_mean += d.p_tilde / static_cast<double>(B);
        rep.decisions.push_back(d);
    }
    rep.zoom_fraction = static_cast<double>(fine_idx.size()) / static_cast<double>(B);
    ptape.backward(scores, std::move(seed));
    adam_step(st.policy, lr_at(cfg.policy_lr, st.step), cfg.adam);
    rep.policy_updated = true;

    rep.lr = lr_at(cfg.seg_lr, st.step);
    if (!coarse_idx.empty()) {
        std::vector<Patch> sub;
        for (auto i : coarse_idx) sub.push_back(x0s[i]);
        auto [x, y] = stack(sub);
        detail::fit_batch(st.seg0, cfg.seg, x, y, rep.lr, cfg.adam);
        rep.seg0_updated = true;
    }
    if (!fine_idx.empty()) {
        std::vector<Patch> sub;
        for (auto i : fine_idx)
            for (std::size_t k = 0; k < kids; ++k) sub.push_back(x1s[i * kids + k]);
        auto [x, y] = stack(sub);
        detail::fit_batch(st.seg1, cfg.seg, x, y, rep.lr, cfg.adam);
        rep.seg1_updated = true;
    }
    ++st.step;
    return rep;
}

inline StepReport train_step(RaznState& st, const PyramidDataset& ds, const PatchSampler& sampler) {
    std::vector<PatchRef> refs;
    for (int i = 0; i < st.cfg.batch; ++i) refs.push_back(sampler.draw(st.rng).ref);
    return train_step_on(st, ds, refs);
}

// ---------------------------------------------------------------------------
// baselines

struct BaselineState {
    RunConfig cfg;
    ParamStore<float> seg;
    std::int64_t step = 0;
    Rng rng;
    Rng scale_rng;                    // multi-scale degradation choice only
    std::optional<int> pinned_scale;  // test hook: multi-scale always picks this scale
};

inline BaselineState make_baseline_state(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.method == Method::Razn) throw ConfigError("baseline state requested for the zoom method");
    return BaselineState{cfg, init_seg_params<float>(cfg.seg, hash_combine(cfg.seed, 1)), 0, Rng(hash_combine(cfg.seed, 4)),
                         Rng(hash_combine(cfg.seed, 5)), std::nullopt};
}

struct BaselineReport {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double scale2_fraction = 0.0;
};

/// Finest-level crop of patch size inside the finest window covering `d.ref`.
/// Draws from the lesion pool land on a crop that contains non-normal labels when one exists.
inline PatchRef fine_crop(const PyramidDataset& ds, const Draw& d, Rng& rng) {
    const int f = finest_factor(ds, d.ref.level);
    const int L = ds.levels() - 1;
    const PatchRef big{L, d.ref.row * f, d.ref.col * f, d.ref.height * f, d.ref.width * f};
    const PatchGrid grid = crop_grid(big, f);
    if (d.lesion) {
        std::vector<PatchRef> hits;
        for (const auto& c : grid.children) {
            const IntMask m = ds.read_labels(c);
            if (std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; })) hits.push_back(c);
        }
        if (!hits.empty()) return hits[rng.below(hits.size())];
    }
    return grid.children[rng.below(grid.children.size())];
}

inline BaselineReport baseline_step_on(BaselineState& st, const PyramidDataset& ds, const std::vector<PatchRef>& crops) {
    const RunConfig& cfg = st.cfg;
    BaselineReport rep;
    rep.step = st.step;
    rep.lr = lr_at(cfg.seg_lr, st.step);
    std::vector<Patch> patches;
    for (const auto& c : crops) {
        Patch p = ds.read_patch(c);
        int scale = cfg.method == Method::Scale2 ? 2 : 1;
        if (cfg.method == Method::MultiScale) {
            scale = st.scale_rng.uniform() < 0.5 ? 1 : 2;
            if (st.pinned_scale) scale = *st.pinned_scale;
        }
        if (scale == 2) rep.scale2_fraction += 1.0 / static_cast<double>(crops.size());
        Tensor<float> x = p.image.reshaped({1, 3, p.image.dim(1), p.image.dim(2)});
        p.image = degrade(x, baseline_factor(ds, cfg.sampling.level, scale)).reshaped(p.image.shape());
        patches.push_back(std::move(p));
    }
    auto [x, y] = stack(patches);
    const auto losses = detail::fit_batch(st.seg, cfg.seg, x, y, rep.lr, cfg.adam);
    detail::check_losses(losses, crops, 1, "baseline");
    for (double l : losses) rep.loss += l / static_cast<double>(losses.size());
    ++st.step;
    return rep;
}

inline BaselineReport baseline_step(BaselineState& st, const PyramidDataset& ds, const PatchSampler& sampler) {
    std::vector<PatchRef> crops;
    for (int i = 0; i < st.cfg.batch; ++i) crops.push_back(fine_crop(ds, sampler.draw(st.rng), st.rng));
    return baseline_step_on(st, ds, crops);
}

// ---------------------------------------------------------------------------
// checkpoints

inline Checkpoint to_checkpoint(const RaznState& st) {
    Checkpoint ck;
    ck.step = st.step;
    ck.meta["kind"] = to_string(Method::Razn);
    ck.meta["config"] = st.cfg;
    ck.meta["rng"] = st.rng.state();
    put_store(ck, "seg0/", st.seg0);
    put_store(ck, "seg1/", st.seg1);
    put_store(ck, "policy/", st.policy);
    return ck;
}

inline Checkpoint to_checkpoint(const BaselineState& st) {
    Checkpoint ck;
    ck.step = st.step;
    ck.meta["kind"] = to_string(st.cfg.method);
    ck.meta["config"] = st.cfg;
    ck.meta["rng"] = st.rng.state();
    ck.meta["scale_rng"] = st.scale_rng.state();
    put_store(ck, "seg/", st.seg);
    return ck;
}

inline RunConfig config_of(const Checkpoint& ck) {
    try {
        return ck.meta.at("config").get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactMismatchError(std::string("checkpoint carries no usable config: ") + e.what());
    }
}

inline Method kind_of(const Checkpoint& ck) {
    try {
        return parse_method(ck.meta.at("kind").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactMismatchError(std::string("checkpoint kind missing: ") + e.what());
    } catch (const ConfigError& e) {
        throw ArtifactMismatchError(e.what());
    }
}

/// Rebuilds a trainer from a checkpoint; `cfg` supplies the architecture, which must match.
inline RaznState razn_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg) {
    if (kind_of(ck) != Method::Razn) throw ArtifactMismatchError("checkpoint is not a zoom-network checkpoint");
    RaznState st = make_razn_state(cfg);
    get_store(ck, "seg0/", st.seg0);
    get_store(ck, "seg1/", st.seg1);
    get_store(ck, "policy/", st.policy);
    st.step = ck.step;
    try {
        st.rng.set_state(ck.meta.at("rng").get<std::string>());
    } catch (const std::exception& e) {
        throw ArtifactMismatchError(std::string("checkpoint RNG state unreadable: ") + e.what());
    }
    return st;
}

inline BaselineState baseline_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg) {
    if (kind_of(ck) != cfg.method) {
        throw ArtifactMismatchError("checkpoint holds a " + to_string(kind_of(ck)) + " model, config asks for " +
                                    to_string(cfg.method));
    }
    if (ck.has_prefix("policy/")) throw ArtifactMismatchError("baseline checkpoint unexpectedly contains a policy");
    BaselineState st = make_baseline_state(cfg);
    get_store(ck, "seg/", st.seg);
    st.step = ck.step;
    try {
        st.rng.set_state(ck.meta.at("rng").get<std::string>());
        st.scale_rng.set_state(ck.meta.at("scale_rng").get<std::string>());
    } catch (const std::exception& e) {
        throw ArtifactMismatchError(std::string("checkpoint RNG state unreadable: ") + e.what());
    }
    return st;
}

}  // namespace razn
