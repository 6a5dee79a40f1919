#pragma once

// Train/test partition of the starting level and stratified patch draws.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "razn/errors.hpp"
#include "razn/pyramid.hpp"
#include "razn/random.hpp"
#include "razn/run_config.hpp"
#include "razn/tensor.hpp"

namespace razn {

struct Draw {
    PatchRef ref;
    bool lesion = false;  // drawn from the pool of patches with non-normal labels
};

class PatchSampler {
public:
    PatchSampler(const PyramidDataset& ds, int patch_h, int patch_w, const SplitConfig& split, const SamplingConfig& sampling)
        : patch_h_(patch_h), patch_w_(patch_w), split_(split), sampling_(sampling) {
        split.validate();
        sampling.validate();
        const LevelDims d = ds.dims(sampling.level);
        const int bh = d.height / split.block, bw = d.width / split.block;
        if (bh < 1 || bw < 1) throw ConfigError("split block larger than the sampling level");
        for (int bi = 0; bi < bh; ++bi) {
            for (int bj = 0; bj < bw; ++bj) {
                if (is_test_block(bi, bj)) continue;
                for (int r = 0; r + patch_h <= split.block; r += sampling.stride) {
                    for (int c = 0; c + patch_w <= split.block; c += sampling.stride) {
                        const PatchRef ref{sampling.level, bi * split.block + r, bj * split.block + c, patch_h, patch_w};
                        const IntMask lab = ds.read_labels(ref);
                        const bool lesion = std::any_of(lab.data.begin(), lab.data.end(), [](std::uint8_t v) { return v != 0; });
                        (lesion ? lesion_ : plain_).push_back(ref);
                    }
                }
            }
        }
        if (lesion_.empty() && plain_.empty()) throw ConfigError("no training patches: every block is held out");
        for (int bi = 0; bi < bh; ++bi) {
            for (int bj = 0; bj < bw; ++bj) {
                if (!is_test_block(bi, bj)) continue;
                for (int r = 0; r + patch_h <= split.block; r += patch_h)
                    for (int c = 0; c + patch_w <= split.block; c += patch_w)
                        test_.push_back({sampling.level, bi * split.block + r, bj * split.block + c, patch_h, patch_w});
                for (int r = 0; r + patch_h <= split.block; r += std::max(1, patch_h / 2))
                    for (int c = 0; c + patch_w <= split.block; c += std::max(1, patch_w / 2))
                        bench_.push_back({sampling.level, bi * split.block + r, bj * split.block + c, patch_h, patch_w});
            }
        }
    }

    bool is_test_block(int bi, int bj) const { return (bi + bj) % split_.modulus == split_.test_residue; }

    Draw draw(Rng& rng) const {
        const bool want_lesion = rng.uniform() < sampling_.lesion_fraction;
        const bool lesion = lesion_.empty() ? false : (plain_.empty() ? true : want_lesion);
        const auto& pool = lesion ? lesion_ : plain_;
        return {pool[rng.below(pool.size())], lesion};
    }

    const std::vector<PatchRef>& lesion_pool() const { return lesion_; }
    const std::vector<PatchRef>& plain_pool() const { return plain_; }
    /// Non-overlapping patches tiling the held-out blocks.
    const std::vector<PatchRef>& test_patches() const { return test_; }
    /// Half-overlapping held-out patches, a larger pool for timing runs.
    const std::vector<PatchRef>& bench_patches() const { return bench_; }
    /// Non-overlapping patches tiling the training blocks.
    std::vector<PatchRef> train_patches() const {
        std::vector<PatchRef> out;
        for (const auto* pool : {&lesion_, &plain_})
            for (const auto& r : *pool)
                if ((r.row % split_.block) % patch_h_ == 0 && (r.col % split_.block) % patch_w_ == 0) out.push_back(r);
        std::sort(out.begin(), out.end(), [](const PatchRef& a, const PatchRef& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        return out;
    }

private:
    int patch_h_, patch_w_;
    SplitConfig split_;
    SamplingConfig sampling_;
    std::vector<PatchRef> lesion_, plain_, test_, bench_;
};

/// Stacks patches into one [N, 3, H, W] batch and concatenates their labels.
inline std::pair<Tensor<float>, std::vector<std::uint8_t>> stack(const std::vector<Patch>& patches) {
    if (patches.empty()) throw ValidationError("stack: empty batch");
    const Shape s = patches.front().image.shape();
    Tensor<float> x({static_cast<int>(patches.size()), s[0], s[1], s[2]});
    std::vector<std::uint8_t> labels;
    labels.reserve(patches.size() * patches.front().labels.size());
    std::size_t off = 0;
    for (const auto& p : patches) {
        if (p.image.shape() != s) throw ValidationError("stack: patches differ in shape");
        std::copy(p.image.vec().begin(), p.image.vec().end(), x.data() + off);
        off += p.image.numel();
        labels.insert(labels.end(), p.labels.data.begin(), p.labels.data.end());
    }
    return {std::move(x), std::move(labels)};
}

}  // namespace razn
