#pragma once

// Recursive zoom inference, baseline prediction, and evaluation over a set of
// top-level patches. Predictions are projected to the finest level by nearest
// replication so every method is scored on the same pixels.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "json.hpp"
#include "razn/metrics.hpp"
#include "razn/nets.hpp"
#include "razn/policy.hpp"
#include "razn/pyramid.hpp"
#include "razn/random.hpp"
#include "razn/trainer.hpp"

namespace razn {

enum class ActionMode {
    Greedy,      // zoom when the acting probability exceeds one half
    Sample,      // Bernoulli draw from a stream keyed by the patch location
    ForceBreak,  // test hook
    ForceZoom,   // test hook
};

struct TraceEntry {
    PatchRef ref;
    int depth = 0;
    std::optional<double> p_tilde;  // empty when no policy was consulted
    int action = 0;                 // 1 zoom, 0 break
};

struct ActionTrace {
    std::vector<TraceEntry> entries;
};

inline nlohmann::json to_json(const TraceEntry& e) {
    return {{"ref", {e.ref.level, e.ref.row, e.ref.col, e.ref.height, e.ref.width}},
            {"depth", e.depth},
            {"p_tilde", e.p_tilde ? nlohmann::json(*e.p_tilde) : nlohmann::json(nullptr)},
            {"action", e.action ? "zoom" : "break"}};
}

struct PatchPrediction {
    IntMask mask;  // at `level`
    int level = 0;
    PatchCost cost;
    ActionTrace trace;
    std::optional<double> root_p_tilde;
};

inline int pow_int(int base, int e) {
    int v = 1;
    for (int i = 0; i < e; ++i) v *= base;
    return v;
}

inline IntMask project_mask(const IntMask& m, int from_level, int to_level, int rate) {
    if (to_level < from_level) throw ValidationError("cannot project a mask to a coarser level");
    return to_level == from_level ? m : upsample_mask(m, pow_int(rate, to_level - from_level));
}

inline Tensor<float> batch_of_one(const Tensor<float>& image) {
    return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
}

struct ZoomInference {
    const RunConfig& cfg;
    ParamStore<float>& seg0;
    ParamStore<float>& seg1;
    ParamStore<float>& policy;
    const PyramidDataset& ds;
    ActionMode mode = ActionMode::Greedy;
    std::uint64_t sample_seed = 0;

    PatchPrediction run(const PatchRef& ref) const {
        PatchPrediction out;
        auto [mask, level] = node(ref, 0, out);
        out.mask = std::move(mask);
        out.level = level;
        return out;
    }

private:
    IntMask segment(ParamStore<float>& store, const PatchRef& ref, PatchPrediction& out) const {
        const Patch p = ds.read_patch(ref);
        auto logits = seg_forward(store, cfg.seg, batch_of_one(p.image), ops::Mode::Eval);
        out.cost.add_seg(ref.level);
        return ops::argmax_channels(logits->value, 0);
    }

    int act(const PatchRef& ref, double p_tilde) const {
        switch (mode) {
            case ActionMode::ForceBreak: return 0;
            case ActionMode::ForceZoom: return 1;
            case ActionMode::Greedy: return p_tilde > 0.5 ? 1 : 0;
            case ActionMode::Sample: {
                const std::uint64_t key = hash_combine(hash_combine(static_cast<std::uint64_t>(ref.level),
                                                                    static_cast<std::uint64_t>(ref.row)),
                                                       static_cast<std::uint64_t>(ref.col));
                CounterRng rng(sample_seed, key);
                return rng.uniform() < p_tilde ? 1 : 0;
            }
        }
        return 0;
    }

    std::pair<IntMask, int> node(const PatchRef& ref, int depth, PatchPrediction& out) const {
        ParamStore<float>& net = depth == 0 ? seg0 : seg1;
        if (ref.level + 1 >= ds.levels()) {
            out.trace.entries.push_back({ref, depth, std::nullopt, 0});
            return {segment(net, ref, out), ref.level};
        }
        const Patch p = ds.read_patch(ref);
        const double score = policy_forward(policy, cfg.policy, batch_of_one(p.image), ops::Mode::Eval)->value[0];
        out.cost.policy_units += 1;
        const double pt = bounded_prob(ops::sigmoid(score), cfg.zoom.alpha);
        if (depth == 0) out.root_p_tilde = pt;
        const int a = act(ref, pt);
        out.trace.entries.push_back({ref, depth, pt, a});
        if (a == 0) return {segment(net, ref, out), ref.level};

        const PatchRef zoomed = zoom_region(ds, ref);
        const PatchGrid grid = crop_grid(zoomed, cfg.zoom.rate);
        std::vector<std::pair<IntMask, int>> kids;
        for (const auto& c : grid.children) {
            if (depth + 1 >= cfg.zoom.max_zoom) {
                out.trace.entries.push_back({c, depth + 1, std::nullopt, 0});
                kids.emplace_back(segment(seg1, c, out), c.level);
            } else {
                kids.push_back(node(c, depth + 1, out));
            }
        }
        int target = zoomed.level;
        for (const auto& k : kids) target = std::max(target, k.second);
        const int s = pow_int(cfg.zoom.rate, target - zoomed.level);
        IntMask merged(zoomed.height * s, zoomed.width * s);
        for (std::size_t k = 0; k < kids.size(); ++k) {
            const IntMask m = project_mask(kids[k].first, kids[k].second, target, cfg.zoom.rate);
            const int r0 = (grid.children[k].row - zoomed.row) * s, c0 = (grid.children[k].col - zoomed.col) * s;
            for (int r = 0; r < m.height; ++r)
                std::copy_n(&m.data[static_cast<std::size_t>(r) * m.width], m.width,
                            &merged.data[static_cast<std::size_t>(r0 + r) * merged.width + c0]);
        }
        return {std::move(merged), target};
    }
};

/// Top-level patch `ref` predicted on the finest level by a single-network baseline.
struct BaselineInference {
    const RunConfig& cfg;
    ParamStore<float>& seg;
    const PyramidDataset& ds;

    PatchPrediction run(const PatchRef& ref) const {
        const int L = ds.levels() - 1;
        const int f = finest_factor(ds, ref.level);
        const PatchRef big{L, ref.row * f, ref.col * f, ref.height * f, ref.width * f};
        const Tensor<float> x = batch_of_one(ds.read_patch(big).image);
        PatchPrediction out;
        out.level = L;
        auto logits_at = [&](int scale) {
            return seg_forward(seg, cfg.seg, degrade(x, baseline_factor(ds, ref.level, scale)), ops::Mode::Eval)->value;
        };
        const int r2 = cfg.zoom.rate * cfg.zoom.rate;
        Tensor<float> logits;
        switch (cfg.method) {
            case Method::Scale1:
                logits = logits_at(1);
                out.cost.add_seg(ref.level, 1);
                break;
            case Method::Scale2:
                logits = logits_at(2);
                out.cost.add_seg(ref.level + 1, static_cast<std::uint64_t>(r2));
                break;
            case Method::MultiScale: {
                logits = logits_at(1);
                const Tensor<float> l2 = logits_at(2);
                for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = 0.5f * (logits[i] + l2[i]);
                out.cost.add_seg(ref.level, 1);
                out.cost.add_seg(ref.level + 1, static_cast<std::uint64_t>(r2));
                break;
            }
            case Method::Razn: throw ConfigError("baseline inference cannot run the zoom method");
        }
        out.mask = ops::argmax_channels(logits, 0);
        out.trace.entries.push_back({ref, 0, std::nullopt, 0});
        return out;
    }
};

using Predictor = std::function<PatchPrediction(const PatchRef&)>;

struct PatchSummary {
    PatchRef ref;
    std::optional<double> root_p_tilde;
    bool has_carcinoma = false;
    bool pure_normal = false;
    bool zoomed = false;
};

struct EvalOutcome {
    ConfusionAccumulator confusion{4};
    CostLedger ledger;
    ActionTrace trace;
    std::vector<PatchSummary> patches;
    std::vector<IntMask> masks;  // finest-level predictions, kept only on request
};

/// Scores `refs` in order; workers split the patches but results are merged in input order.
inline EvalOutcome evaluate(const PyramidDataset& ds, const std::vector<PatchRef>& refs, const Predictor& predict,
                            int workers = 1, bool keep_masks = false) {
    const int L = ds.levels() - 1;
    struct Item {
        PatchPrediction pred;
        IntMask truth;
        IntMask finest;
    };
    std::vector<Item> items(refs.size());
    auto work = [&](std::size_t i) {
        Item& it = items[i];
        it.pred = predict(refs[i]);
        const int f = finest_factor(ds, refs[i].level);
        it.truth = ds.read_labels({L, refs[i].row * f, refs[i].col * f, refs[i].height * f, refs[i].width * f});
        it.finest = project_mask(it.pred.mask, it.pred.level, L, ds.zoom_rate());
    };
    const int nw = std::max(1, std::min<int>(workers, static_cast<int>(refs.size())));
    if (nw == 1) {
        for (std::size_t i = 0; i < refs.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < nw; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = static_cast<std::size_t>(w); i < refs.size(); i += static_cast<std::size_t>(nw)) work(i);
            });
        for (auto& t : pool) t.join();
    }
    EvalOutcome out{ConfusionAccumulator(ds.classes()), {}, {}, {}, {}};
    for (std::size_t i = 0; i < refs.size(); ++i) {
        Item& it = items[i];
        out.confusion.add(it.truth, it.finest);
        out.ledger.patches.push_back(it.pred.cost);
        PatchSummary s;
        s.ref = refs[i];
        s.root_p_tilde = it.pred.root_p_tilde;
        s.has_carcinoma = std::any_of(it.truth.data.begin(), it.truth.data.end(), [](std::uint8_t v) { return v == 2 || v == 3; });
        s.pure_normal = std::all_of(it.truth.data.begin(), it.truth.data.end(), [](std::uint8_t v) { return v == 0; });
        s.zoomed = !it.pred.trace.entries.empty() && it.pred.trace.entries.front().action == 1;
        out.patches.push_back(s);
        for (auto& e : it.pred.trace.entries) out.trace.entries.push_back(e);
        if (keep_masks) out.masks.push_back(std::move(it.finest));
    }
    return out;
}

/// Mean root acting probability over patches with carcinoma pixels and over pure-normal patches.
struct PolicyContrast {
    std::optional<double> carcinoma;
    std::optional<double> normal;
    std::size_t carcinoma_patches = 0;
    std::size_t normal_patches = 0;
};

inline PolicyContrast policy_contrast(const std::vector<PatchSummary>& patches) {
    double sc = 0.0, sn = 0.0;
    PolicyContrast c;
    for (const auto& p : patches) {
        if (!p.root_p_tilde) continue;
        if (p.has_carcinoma) {
            sc += *p.root_p_tilde;
            ++c.carcinoma_patches;
        }
        if (p.pure_normal) {
            sn += *p.root_p_tilde;
            ++c.normal_patches;
        }
    }
    if (c.carcinoma_patches) c.carcinoma = sc / static_cast<double>(c.carcinoma_patches);
    if (c.normal_patches) c.normal = sn / static_cast<double>(c.normal_patches);
    return c;
}

/// Deterministic subset of n patches (cycling if the pool is smaller).
inline std::vector<PatchRef> bench_selection(const std::vector<PatchRef>& pool, int n, std::uint64_t seed) {
    if (pool.empty()) throw ConfigError("no patches available for benchmarking");
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(hash_combine(seed, 0xbe7c4ULL));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<PatchRef> out;
    for (int i = 0; i < n; ++i) out.push_back(pool[order[static_cast<std::size_t>(i) % order.size()]]);
    return out;
}

}  // namespace razn
