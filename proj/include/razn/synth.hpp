#pragma once

// Deterministic synthetic histology-like pyramids.
//
// Regions (glass, normal tissue, lesions) are laid out on the coarsest grid.
// Each coarsest-level pixel ("cell") covers cell x cell finest pixels and is
// textured independently from a counter-based stream keyed by its
// coordinates, so tiles can be produced in any order or in parallel.
//
// Lesion classes share base colour, nucleus colour and nucleus count per cell
// and differ only in how the nuclei are arranged inside the cell. Box
// averaging a cell to one coarse pixel erases the arrangement, so those
// classes are indistinguishable at the coarsest level and separable after
// zooming in.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "razn/errors.hpp"
#include "razn/pyramid.hpp"
#include "razn/random.hpp"
#include "razn/raster.hpp"

namespace razn {

inline constexpr int kNumClasses = 4;
inline constexpr std::uint8_t kGlass = 255;

struct TextureParams {
    std::array<int, 3> base{230, 190, 210};
    std::array<int, 3> nucleus{110, 60, 140};
    double dot_density = 0.0625;  // fraction of a cell's finest pixels that are nucleus
    int cluster_h = 1;            // nuclei are placed as cluster_h x cluster_w blocks
    int cluster_w = 1;

    bool operator==(const TextureParams&) const = default;
};

struct SynthSpec {
    std::uint64_t seed = 7;
    int finest_h = 4096;
    int finest_w = 4096;
    int levels = 3;
    int zoom_rate = 2;
    int tile_size = 256;
    double tissue_fraction = 0.55;
    // Area targets as fractions of the slide; index 0 is normal tissue (glass is extra).
    std::array<double, kNumClasses> class_area{0.37, 0.06, 0.06, 0.06};
    std::array<TextureParams, kNumClasses> textures{
        TextureParams{{232, 192, 212}, {120, 64, 150}, 1.0 / 16, 1, 1},
        TextureParams{{206, 150, 192}, {70, 30, 120}, 4.0 / 16, 1, 4},
        TextureParams{{206, 150, 192}, {70, 30, 120}, 4.0 / 16, 2, 2},
        TextureParams{{206, 150, 192}, {70, 30, 120}, 4.0 / 16, 1, 1},
    };
    std::array<int, 3> glass{244, 244, 246};
    int noise = 10;         // per-channel uniform colour noise amplitude
    int label_jitter = 2;   // boundary displacement of annotations, finest pixels
    int jitter_block = 8;   // annotation jitter is constant over blocks of this size
    // Blob radii as fractions of the coarsest level's shorter side.
    double tissue_radius_min = 0.06;
    double tissue_radius_max = 0.18;
    double lesion_radius_min = 0.012;
    double lesion_radius_max = 0.04;

    int cell() const {
        int c = 1;
        for (int i = 1; i < levels; ++i) c *= zoom_rate;
        return c;
    }
    int coarse_h() const { return finest_h / cell(); }
    int coarse_w() const { return finest_w / cell(); }

    // Messages start with the spec-file key they concern so file loaders can anchor them.
    void validate() const {
        if (levels < 1) throw ConfigError("levels: must be >= 1");
        if (zoom_rate < 2) throw ConfigError("zoom_rate: must be >= 2");
        if (finest_h < 1 || finest_w < 1) throw ConfigError("finest: dimensions must be positive");
        const int c = cell();
        if (finest_h % c || finest_w % c) {
            throw ConfigError("finest: " + std::to_string(finest_h) + "x" + std::to_string(finest_w) +
                              " is not divisible by zoom_rate^(levels-1) = " + std::to_string(c));
        }
        if (tile_size < 1 || finest_h % tile_size || finest_w % tile_size) {
            throw ConfigError("tile_size: finest dimensions must be divisible by " + std::to_string(tile_size));
        }
        if (tissue_fraction < 0.0 || tissue_fraction > 1.0) throw ConfigError("tissue_fraction: must be in [0, 1]");
        double sum = 0.0;
        for (double a : class_area) {
            if (a < 0.0) throw ConfigError("class_area: entries must be non-negative");
            sum += a;
        }
        if (std::abs(sum - tissue_fraction) > 1e-6) {
            throw ConfigError("class_area: entries sum to " + std::to_string(sum) + " but tissue_fraction is " +
                              std::to_string(tissue_fraction));
        }
        for (std::size_t k = 0; k < textures.size(); ++k) {
            const auto& t = textures[k];
            const std::string where = "textures: class " + std::to_string(k);
            if (t.dot_density < 0.0 || t.dot_density > 1.0) throw ConfigError(where + " dot_density must be in [0, 1]");
            if (t.cluster_h < 1 || t.cluster_w < 1 || t.cluster_h > c || t.cluster_w > c) {
                throw ConfigError(where + " cluster must fit inside a " + std::to_string(c) + "x" + std::to_string(c) +
                                  " cell");
            }
            const int dots = nucleus_pixels(k);
            if (dots % (t.cluster_h * t.cluster_w)) {
                throw ConfigError(where + " nucleus pixels per cell (" + std::to_string(dots) +
                                  ") not a multiple of the cluster area");
            }
        }
        if (noise < 0) throw ConfigError("noise: must be >= 0");
        if (label_jitter < 0) throw ConfigError("label_jitter: must be >= 0");
        if (jitter_block < 1) throw ConfigError("jitter_block: must be >= 1");
        if (!(tissue_radius_min > 0.0) || tissue_radius_max < tissue_radius_min) {
            throw ConfigError("tissue_radius: range must be positive and ordered");
        }
        if (!(lesion_radius_min > 0.0) || lesion_radius_max < lesion_radius_min) {
            throw ConfigError("lesion_radius: range must be positive and ordered");
        }
    }

    int nucleus_pixels(std::size_t cls) const {
        const int c = cell();
        return static_cast<int>(std::lround(textures[cls].dot_density * c * c));
    }
};

inline void to_json(nlohmann::json& j, const TextureParams& t) {
    j = {{"base", t.base}, {"nucleus", t.nucleus}, {"dot_density", t.dot_density}, {"cluster_h", t.cluster_h},
         {"cluster_w", t.cluster_w}};
}

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = {{"seed", s.seed},
         {"finest_h", s.finest_h},
         {"finest_w", s.finest_w},
         {"levels", s.levels},
         {"zoom_rate", s.zoom_rate},
         {"tile_size", s.tile_size},
         {"tissue_fraction", s.tissue_fraction},
         {"class_area", s.class_area},
         {"textures", s.textures},
         {"glass", s.glass},
         {"noise", s.noise},
         {"label_jitter", s.label_jitter},
         {"jitter_block", s.jitter_block},
         {"tissue_radius", {s.tissue_radius_min, s.tissue_radius_max}},
         {"lesion_radius", {s.lesion_radius_min, s.lesion_radius_max}}};
}

namespace synth_detail {

struct RegionMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cls;  // kGlass or a class index

    std::uint8_t at(int r, int c) const { return cls[static_cast<std::size_t>(r) * width + c]; }
};

// Paints an ellipse; only pixels whose current value equals `from` become `to`.
// Returns the number of pixels changed.
inline std::size_t paint_ellipse(RegionMap& m, double cy, double cx, double ra, double rb, double theta, std::uint8_t from,
                                 std::uint8_t to) {
    const double reach = std::max(ra, rb);
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int r1 = std::min(m.height - 1, static_cast<int>(std::ceil(cy + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int c1 = std::min(m.width - 1, static_cast<int>(std::ceil(cx + reach)));
    const double ct = std::cos(theta), st = std::sin(theta);
    std::size_t changed = 0;
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
            const double u = (dx * ct + dy * st) / ra, v = (-dx * st + dy * ct) / rb;
            auto& px = m.cls[static_cast<std::size_t>(r) * m.width + c];
            if (u * u + v * v <= 1.0 && px == from) {
                px = to;
                ++changed;
            }
        }
    }
    return changed;
}

inline RegionMap layout_regions(const SynthSpec& spec) {
    RegionMap m{spec.coarse_h(), spec.coarse_w(), {}};
    m.cls.assign(static_cast<std::size_t>(m.height) * m.width, kGlass);
    const double total = static_cast<double>(m.cls.size());
    const double side = std::min(m.height, m.width);
    Rng rng(hash_combine(spec.seed, 0x5e9105ULL));

    auto grow = [&](std::uint8_t from, std::uint8_t to, double target_px, double rmin, double rmax, bool centre_on_from) {
        double painted = 0.0;
        for (int attempt = 0; attempt < 20000 && painted + 0.5 < target_px; ++attempt) {
            double cy, cx;
            if (centre_on_from) {
                std::size_t idx = 0;
                bool found = false;
                for (int tries = 0; tries < 200 && !found; ++tries) {
                    idx = rng.below(m.cls.size());
                    found = m.cls[idx] == from;
                }
                if (!found) break;
                cy = static_cast<double>(idx / static_cast<std::size_t>(m.width)) + 0.5;
                cx = static_cast<double>(idx % static_cast<std::size_t>(m.width)) + 0.5;
            } else {
                cy = rng.uniform() * m.height;
                cx = rng.uniform() * m.width;
            }
            double ra = (rmin + (rmax - rmin) * rng.uniform()) * side;
            double rb = (rmin + (rmax - rmin) * rng.uniform()) * side;
            const double theta = rng.uniform() * std::numbers::pi;
            const double remaining = target_px - painted;
            const double area = std::numbers::pi * ra * rb;
            if (area > remaining) {
                const double s = std::sqrt(remaining / area);
                ra = std::max(0.75, ra * s);
                rb = std::max(0.75, rb * s);
            }
            painted += static_cast<double>(paint_ellipse(m, cy, cx, ra, rb, theta, from, to));
        }
    };

    grow(kGlass, 0, spec.tissue_fraction * total, spec.tissue_radius_min, spec.tissue_radius_max, false);
    for (std::uint8_t k = 1; k < kNumClasses; ++k) {
        grow(0, k, spec.class_area[k] * total, spec.lesion_radius_min, spec.lesion_radius_max, true);
    }
    return m;
}

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Textures one cell of the finest level in place.
inline void texture_cell(const SynthSpec& spec, const RegionMap& regions, int cy, int cx, RgbImage& finest) {
    const int cell = spec.cell();
    const std::uint8_t region = regions.at(cy, cx);
    CounterRng rng(spec.seed, hash_combine(0xce11ULL, (static_cast<std::uint64_t>(cy) << 32) | static_cast<std::uint32_t>(cx)));
    std::vector<std::uint8_t> dark(static_cast<std::size_t>(cell) * cell, 0);
    std::array<int, 3> base = spec.glass, nucleus = spec.glass;
    if (region != kGlass) {
        const TextureParams& t = spec.textures[region];
        base = t.base;
        nucleus = t.nucleus;
        const int clusters = spec.nucleus_pixels(region) / (t.cluster_h * t.cluster_w);
        const int span_h = cell - t.cluster_h + 1, span_w = cell - t.cluster_w + 1;
        auto fits = [&](int py, int px) {
            for (int a = 0; a < t.cluster_h; ++a)
                for (int b = 0; b < t.cluster_w; ++b)
                    if (dark[static_cast<std::size_t>(py + a) * cell + px + b]) return false;
            return true;
        };
        for (int k = 0; k < clusters; ++k) {
            int py = -1, px = -1;
            for (int tries = 0; tries < 64; ++tries) {
                const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_h)));
                const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_w)));
                if (fits(y, x)) {
                    py = y;
                    px = x;
                    break;
                }
            }
            for (int y = 0; y < span_h && py < 0; ++y)
                for (int x = 0; x < span_w && py < 0; ++x)
                    if (fits(y, x)) {
                        py = y;
                        px = x;
                    }
            if (py < 0) throw ConfigError("texture: cannot pack nuclei of class " + std::to_string(region) + " into a cell");
            for (int a = 0; a < t.cluster_h; ++a)
                for (int b = 0; b < t.cluster_w; ++b) dark[static_cast<std::size_t>(py + a) * cell + px + b] = 1;
        }
    }
    const int amp = spec.noise;
    for (int a = 0; a < cell; ++a) {
        for (int b = 0; b < cell; ++b) {
            const auto& colour = dark[static_cast<std::size_t>(a) * cell + b] ? nucleus : base;
            std::uint8_t* px = finest.pixel(cy * cell + a, cx * cell + b);
            for (int ch = 0; ch < 3; ++ch) {
                const int n = amp ? static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * amp + 1))) - amp : 0;
                px[ch] = clamp_u8(colour[static_cast<std::size_t>(ch)] + n);
            }
        }
    }
}

// Annotation at a finest pixel: the region found after a block-wise random
// displacement, with glass reported as normal.
inline std::uint8_t noisy_label(const SynthSpec& spec, const RegionMap& regions, int y, int x) {
    int dy = 0, dx = 0;
    if (spec.label_jitter > 0) {
        const auto by = static_cast<std::uint64_t>(y / spec.jitter_block), bx = static_cast<std::uint64_t>(x / spec.jitter_block);
        CounterRng rng(spec.seed, hash_combine(0x1abe1ULL, (by << 32) | bx));
        const auto span = static_cast<std::uint64_t>(2 * spec.label_jitter + 1);
        dy = static_cast<int>(rng.below(span)) - spec.label_jitter;
        dx = static_cast<int>(rng.below(span)) - spec.label_jitter;
    }
    const int yy = std::clamp(y + dy, 0, spec.finest_h - 1), xx = std::clamp(x + dx, 0, spec.finest_w - 1);
    const std::uint8_t r = regions.at(yy / spec.cell(), xx / spec.cell());
    return r == kGlass ? 0 : r;
}

template <typename Fn>
void parallel_rows(int rows, int workers, Fn fn) {
    workers = std::max(1, std::min(workers, rows));
    if (workers == 1) {
        for (int r = 0; r < rows; ++r) fn(r);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int r = w; r < rows; r += workers) fn(r);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace synth_detail

struct SynthLevels {
    std::vector<RgbImage> images;  // coarsest first
    std::vector<IntMask> labels;
};

/// Builds every level in memory without touching disk.
inline SynthLevels synthesize(const SynthSpec& spec, int workers = 1) {
    spec.validate();
    using namespace synth_detail;
    const RegionMap regions = layout_regions(spec);
    RgbImage finest(spec.finest_h, spec.finest_w);
    IntMask labels(spec.finest_h, spec.finest_w);
    parallel_rows(regions.height, workers, [&](int cy) {
        for (int cx = 0; cx < regions.width; ++cx) texture_cell(spec, regions, cy, cx, finest);
        for (int y = cy * spec.cell(); y < (cy + 1) * spec.cell(); ++y)
            for (int x = 0; x < spec.finest_w; ++x) labels.at(y, x) = noisy_label(spec, regions, y, x);
    });
    SynthLevels out;
    out.images.resize(static_cast<std::size_t>(spec.levels));
    out.labels.resize(static_cast<std::size_t>(spec.levels));
    out.images.back() = std::move(finest);
    out.labels.back() = std::move(labels);
    for (int l = spec.levels - 2; l >= 0; --l) {
        out.images[static_cast<std::size_t>(l)] = box_downsample(out.images[static_cast<std::size_t>(l + 1)], spec.zoom_rate);
        out.labels[static_cast<std::size_t>(l)] = label_downsample(out.labels[static_cast<std::size_t>(l + 1)], spec.zoom_rate);
    }
    return out;
}

inline PyramidManifest manifest_for(const SynthSpec& spec) {
    PyramidManifest m;
    m.zoom_rate = spec.zoom_rate;
    m.tile_size = spec.tile_size;
    m.seed = spec.seed;
    m.generator = spec;
    for (int l = 0; l < spec.levels; ++l) {
        int scale = 1;
        for (int k = l; k < spec.levels - 1; ++k) scale *= spec.zoom_rate;
        m.level_dims.push_back({spec.finest_h / scale, spec.finest_w / scale});
    }
    return m;
}

/// Writes the pyramid to out_dir and reopens it.
inline PyramidDataset generate(const SynthSpec& spec, const std::filesystem::path& out_dir, int workers = 1) {
    const SynthLevels lv = synthesize(spec, workers);
    const PyramidManifest m = manifest_for(spec);
    PyramidDataset::write_manifest(out_dir, m);
    for (int l = 0; l < spec.levels; ++l) {
        PyramidDataset::write_level(out_dir, m, l, lv.images[static_cast<std::size_t>(l)], lv.labels[static_cast<std::size_t>(l)]);
    }
    return PyramidDataset::open(out_dir);
}

// ---------------------------------------------------------------------------
// confusability

struct LevelSeparability {
    int level = 0;
    std::optional<double> score;  // total-variation distance, absent if a class is missing
    std::string notice;
};

namespace synth_detail {

// Histogram of mean darkness over aligned window x window blocks that lie entirely inside class `cls`.
inline std::vector<double> darkness_histogram(const RgbImage& im, const IntMask& lab, int cls, int window, int bins,
                                              std::size_t& samples) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    samples = 0;
    for (int r = 0; r + window <= im.height; r += window) {
        for (int c = 0; c + window <= im.width; c += window) {
            bool inside = true;
            double dark = 0.0;
            for (int a = 0; a < window && inside; ++a) {
                for (int b = 0; b < window; ++b) {
                    if (lab.at(r + a, c + b) != cls) {
                        inside = false;
                        break;
                    }
                    const std::uint8_t* p = im.pixel(r + a, c + b);
                    dark += 1.0 - (p[0] + p[1] + p[2]) / (3.0 * 255.0);
                }
            }
            if (!inside) continue;
            dark /= window * window;
            const int bin = std::min(bins - 1, static_cast<int>(dark * bins));
            h[static_cast<std::size_t>(bin)] += 1.0;
            ++samples;
        }
    }
    if (samples)
        for (auto& v : h) v /= static_cast<double>(samples);
    return h;
}

}  // namespace synth_detail

/// Per-level separability of two classes' textures: the larger total-variation
/// distance between their darkness histograms at window sizes 1 and 2.
inline std::vector<LevelSeparability> confusability_report(const PyramidDataset& ds, int class_a = 2, int class_b = 3) {
    std::vector<LevelSeparability> out;
    constexpr int kBins = 32;
    for (int l = 0; l < ds.levels(); ++l) {
        const LevelDims d = ds.dims(l);
        const PatchRef whole{l, 0, 0, d.height, d.width};
        const RgbImage im = ds.read_image(whole);
        const IntMask lab = ds.read_labels(whole);
        LevelSeparability s{l, std::nullopt, ""};
        double best = 0.0;
        for (int window : {1, 2}) {
            std::size_t na = 0, nb = 0;
            const auto ha = synth_detail::darkness_histogram(im, lab, class_a, window, kBins, na);
            const auto hb = synth_detail::darkness_histogram(im, lab, class_b, window, kBins, nb);
            if (na == 0 || nb == 0) {
                s.notice = "class " + std::to_string(na == 0 ? class_a : class_b) + " absent at level " + std::to_string(l);
                best = -1.0;
                break;
            }
            double tv = 0.0;
            for (int k = 0; k < kBins; ++k) tv += std::abs(ha[static_cast<std::size_t>(k)] - hb[static_cast<std::size_t>(k)]);
            best = std::max(best, 0.5 * tv);
        }
        if (best >= 0.0) s.score = best;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace razn
