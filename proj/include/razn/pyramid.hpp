#pragma once

// Multi-resolution tiled image + label pyramid and the patch geometry used by
// the zoom mechanism. Level 0 is the coarsest; level l+1 is `zoom_rate` times
// larger than level l along each axis. Windows are half-open, (row, col) from
// the top-left corner, in pixels of their own level.
//
// On-disk layout:
//   <root>/manifest.json
//   <root>/level_<l>/image_<ty>_<tx>.png   8-bit RGB
//   <root>/level_<l>/label_<ty>_<tx>.png   8-bit class indices

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "razn/errors.hpp"
#include "razn/raster.hpp"
#include "razn/tensor.hpp"

namespace razn {

struct PatchRef {
    int level = 0;
    int row = 0;
    int col = 0;
    int height = 0;
    int width = 0;

    bool operator==(const PatchRef&) const = default;
};

inline std::string to_string(const PatchRef& r) {
    return "L" + std::to_string(r.level) + "@(" + std::to_string(r.row) + "," + std::to_string(r.col) + ")+" +
           std::to_string(r.height) + "x" + std::to_string(r.width);
}

struct PatchGrid {
    PatchRef parent;
    int rate = 1;
    std::vector<PatchRef> children;  // row-major, rate * rate entries
};

struct Patch {
    Tensor<float> image;  // [3, H, W] in [0, 1]
    IntMask labels;
};

struct LevelDims {
    int height = 0;
    int width = 0;
    bool operator==(const LevelDims&) const = default;
};

struct PyramidManifest {
    int version = 1;
    int zoom_rate = 2;
    std::vector<LevelDims> level_dims;  // coarsest first
    int tile_size = 256;
    std::vector<std::string> classes{"normal", "benign", "in_situ", "invasive"};
    std::uint64_t seed = 0;
    nlohmann::json generator = nlohmann::json::object();

    int levels() const { return static_cast<int>(level_dims.size()); }

    void validate() const {
        if (version != 1) throw ArtifactMismatchError("unsupported pyramid manifest version " + std::to_string(version));
        if (zoom_rate < 2) throw ConfigError("zoom rate must be >= 2");
        if (level_dims.empty()) throw ConfigError("pyramid needs at least one level");
        if (tile_size < 1) throw ConfigError("tile size must be >= 1");
        if (classes.empty() || classes.size() > 255) throw ConfigError("class table must have 1..255 entries");
        for (std::size_t l = 0; l < level_dims.size(); ++l) {
            if (level_dims[l].height < 1 || level_dims[l].width < 1) throw ConfigError("level dimensions must be positive");
            if (l > 0 && (level_dims[l].height != zoom_rate * level_dims[l - 1].height ||
                          level_dims[l].width != zoom_rate * level_dims[l - 1].width)) {
                throw ConfigError("level " + std::to_string(l) + " is not zoom_rate times level " + std::to_string(l - 1));
            }
        }
    }
};

inline void to_json(nlohmann::json& j, const PyramidManifest& m) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : m.level_dims) dims.push_back({d.height, d.width});
    j = {{"format", "razn-pyramid"}, {"version", m.version},     {"zoom_rate", m.zoom_rate},
         {"levels", m.levels()},     {"level_dims", dims},       {"tile_size", m.tile_size},
         {"classes", m.classes},     {"seed", m.seed},           {"generator", m.generator}};
}

inline void from_json(const nlohmann::json& j, PyramidManifest& m) {
    if (j.value("format", "") != "razn-pyramid") throw ArtifactMismatchError("manifest format is not razn-pyramid");
    m.version = j.at("version").get<int>();
    m.zoom_rate = j.at("zoom_rate").get<int>();
    m.level_dims.clear();
    for (const auto& d : j.at("level_dims")) m.level_dims.push_back({d.at(0).get<int>(), d.at(1).get<int>()});
    if (j.at("levels").get<int>() != m.levels()) throw ArtifactMismatchError("manifest level count disagrees with dims");
    m.tile_size = j.at("tile_size").get<int>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator = j.value("generator", nlohmann::json::object());
}

/// Read-only view of a pyramid on disk. Immutable after open (and after any
/// preload calls), so concurrent reads need no locking.
class PyramidDataset {
public:
    static PyramidDataset open(const std::filesystem::path& root) {
        std::ifstream in(root / "manifest.json");
        if (!in) throw ArtifactMismatchError("no pyramid manifest at " + root.string());
        PyramidManifest m;
        try {
            m = nlohmann::json::parse(in).get<PyramidManifest>();
        } catch (const nlohmann::json::exception& e) {
            throw ArtifactMismatchError("malformed manifest in " + root.string() + ": " + e.what());
        }
        m.validate();
        PyramidDataset ds;
        ds.root_ = root;
        ds.manifest_ = std::move(m);
        ds.cache_.resize(static_cast<std::size_t>(ds.manifest_.levels()));
        return ds;
    }

    static std::filesystem::path image_tile_path(const std::filesystem::path& root, int level, int ty, int tx) {
        return root / ("level_" + std::to_string(level)) / ("image_" + std::to_string(ty) + "_" + std::to_string(tx) + ".png");
    }
    static std::filesystem::path label_tile_path(const std::filesystem::path& root, int level, int ty, int tx) {
        return root / ("level_" + std::to_string(level)) / ("label_" + std::to_string(ty) + "_" + std::to_string(tx) + ".png");
    }

    static void write_manifest(const std::filesystem::path& root, const PyramidManifest& m) {
        m.validate();
        std::filesystem::create_directories(root);
        std::ofstream out(root / "manifest.json", std::ios::trunc);
        out << nlohmann::json(m).dump(2) << '\n';
    }

    /// Splits a full level raster into tiles under <root>/level_<level>/.
    static void write_level(const std::filesystem::path& root, const PyramidManifest& m, int level, const RgbImage& image,
                            const IntMask& labels) {
        const LevelDims d = m.level_dims.at(static_cast<std::size_t>(level));
        if (image.height != d.height || image.width != d.width || labels.height != d.height || labels.width != d.width) {
            throw ConfigError("level " + std::to_string(level) + " raster does not match manifest dims");
        }
        std::filesystem::create_directories(root / ("level_" + std::to_string(level)));
        const int ts = m.tile_size;
        for (int ty = 0; ty * ts < d.height; ++ty) {
            for (int tx = 0; tx * ts < d.width; ++tx) {
                const int h = std::min(ts, d.height - ty * ts), w = std::min(ts, d.width - tx * ts);
                write_png_rgb(image_tile_path(root, level, ty, tx), crop_rgb(image, ty * ts, tx * ts, h, w));
                write_png_mask(label_tile_path(root, level, ty, tx), crop_mask(labels, ty * ts, tx * ts, h, w));
            }
        }
    }

    const std::filesystem::path& root() const { return root_; }
    const PyramidManifest& manifest() const { return manifest_; }
    int levels() const { return manifest_.levels(); }
    int zoom_rate() const { return manifest_.zoom_rate; }
    int tile_size() const { return manifest_.tile_size; }
    int classes() const { return static_cast<int>(manifest_.classes.size()); }
    LevelDims dims(int level) const {
        if (level < 0 || level >= levels()) throw RangeError("level " + std::to_string(level) + " outside pyramid");
        return manifest_.level_dims[static_cast<std::size_t>(level)];
    }

    bool in_bounds(const PatchRef& ref) const {
        if (ref.level < 0 || ref.level >= levels() || ref.height < 1 || ref.width < 1) return false;
        const LevelDims d = dims(ref.level);
        return ref.row >= 0 && ref.col >= 0 && ref.row + ref.height <= d.height && ref.col + ref.width <= d.width;
    }

    void check_bounds(const PatchRef& ref) const {
        if (!in_bounds(ref)) throw RangeError("patch " + to_string(ref) + " lies outside the pyramid");
    }

    /// Loads whole levels into memory. Must complete before the dataset is shared across threads.
    void preload(const std::vector<int>& level_list) {
        for (int l : level_list) {
            if (cache_.at(static_cast<std::size_t>(l))) continue;
            const LevelDims d = dims(l);
            auto lvl = std::make_shared<Level>();
            lvl->image = read_image_from_tiles({l, 0, 0, d.height, d.width});
            lvl->labels = read_labels_from_tiles({l, 0, 0, d.height, d.width});
            cache_[static_cast<std::size_t>(l)] = std::move(lvl);
        }
    }

    RgbImage read_image(const PatchRef& ref) const {
        check_bounds(ref);
        if (const auto& c = cache_[static_cast<std::size_t>(ref.level)]) {
            return crop_rgb(c->image, ref.row, ref.col, ref.height, ref.width);
        }
        return read_image_from_tiles(ref);
    }

    IntMask read_labels(const PatchRef& ref) const {
        check_bounds(ref);
        if (const auto& c = cache_[static_cast<std::size_t>(ref.level)]) {
            return crop_mask(c->labels, ref.row, ref.col, ref.height, ref.width);
        }
        return read_labels_from_tiles(ref);
    }

    /// Pixel-exact window copy of image and labels.
    Patch read_patch(const PatchRef& ref) const {
        Patch p{to_tensor(read_image(ref)), read_labels(ref)};
        const auto C = static_cast<std::uint8_t>(classes());
        for (auto v : p.labels.data) {
            if (v >= C) throw ValidationError("label index " + std::to_string(v) + " out of range in " + to_string(ref));
        }
        return p;
    }

private:
    struct Level {
        RgbImage image;
        IntMask labels;
    };

    template <typename Raster, typename Loader, typename Copier>
    Raster assemble(const PatchRef& ref, Raster out, Loader load, Copier copy) const {
        const int ts = tile_size();
        for (int ty = ref.row / ts; ty * ts < ref.row + ref.height; ++ty) {
            for (int tx = ref.col / ts; tx * ts < ref.col + ref.width; ++tx) {
                const Raster tile = load(ty, tx);
                const LevelDims d = dims(ref.level);
                if (tile.height != std::min(ts, d.height - ty * ts) || tile.width != std::min(ts, d.width - tx * ts)) {
                    throw ArtifactMismatchError("tile " + std::to_string(ty) + "," + std::to_string(tx) + " of level " +
                                                std::to_string(ref.level) + " has unexpected size");
                }
                const int r0 = std::max(ref.row, ty * ts), r1 = std::min(ref.row + ref.height, ty * ts + tile.height);
                const int c0 = std::max(ref.col, tx * ts), c1 = std::min(ref.col + ref.width, tx * ts + tile.width);
                for (int r = r0; r < r1; ++r) copy(out, tile, r - ref.row, c0 - ref.col, r - ty * ts, c0 - tx * ts, c1 - c0);
            }
        }
        return out;
    }

    RgbImage read_image_from_tiles(const PatchRef& ref) const {
        return assemble(
            ref, RgbImage(ref.height, ref.width),
            [&](int ty, int tx) { return read_png_rgb(image_tile_path(root_, ref.level, ty, tx)); },
            [](RgbImage& out, const RgbImage& tile, int orow, int ocol, int trow, int tcol, int n) {
                std::copy_n(tile.pixel(trow, tcol), static_cast<std::size_t>(n) * 3, out.pixel(orow, ocol));
            });
    }

    IntMask read_labels_from_tiles(const PatchRef& ref) const {
        return assemble(
            ref, IntMask(ref.height, ref.width),
            [&](int ty, int tx) { return read_png_mask(label_tile_path(root_, ref.level, ty, tx)); },
            [](IntMask& out, const IntMask& tile, int orow, int ocol, int trow, int tcol, int n) {
                std::copy_n(&tile.data[static_cast<std::size_t>(trow) * tile.width + tcol], n,
                            &out.data[static_cast<std::size_t>(orow) * out.width + ocol]);
            });
    }

    std::filesystem::path root_;
    PyramidManifest manifest_;
    std::vector<std::shared_ptr<const Level>> cache_;
};

// ---------------------------------------------------------------------------
// geometry

/// The window at level+1 covering the same physical region as `ref`.
inline PatchRef zoom_ref(const PatchRef& ref, int rate, int levels) {
    if (ref.level + 1 >= levels) {
        throw MaxMagnificationError("cannot zoom " + to_string(ref) + ": already at the finest level");
    }
    return {ref.level + 1, ref.row * rate, ref.col * rate, ref.height * rate, ref.width * rate};
}

inline PatchRef zoom_region(const PyramidDataset& ds, const PatchRef& ref) {
    ds.check_bounds(ref);
    return zoom_ref(ref, ds.zoom_rate(), ds.levels());
}

/// Splits a window of extent (rH, rW) into rate^2 children of extent (H, W), row-major.
inline PatchGrid crop_grid(const PatchRef& ref, int rate) {
    if (rate < 1) throw ConfigError("crop_grid: rate must be >= 1");
    if (ref.height % rate || ref.width % rate) {
        throw ConfigError("crop_grid: extent " + std::to_string(ref.height) + "x" + std::to_string(ref.width) +
                          " is not divisible by " + std::to_string(rate));
    }
    PatchGrid g{ref, rate, {}};
    const int h = ref.height / rate, w = ref.width / rate;
    for (int i = 0; i < rate; ++i)
        for (int j = 0; j < rate; ++j) g.children.push_back({ref.level, ref.row + i * h, ref.col + j * w, h, w});
    return g;
}

/// Inverse of crop_grid on masks.
inline IntMask stitch(const PatchGrid& grid, const std::vector<IntMask>& children) {
    const std::size_t want = static_cast<std::size_t>(grid.rate) * grid.rate;
    if (children.size() != want || grid.children.size() != want) {
        throw ValidationError("stitch: expected " + std::to_string(want) + " child masks, got " +
                              std::to_string(children.size()));
    }
    IntMask out(grid.parent.height, grid.parent.width);
    for (std::size_t k = 0; k < want; ++k) {
        const PatchRef& c = grid.children[k];
        const IntMask& m = children[k];
        if (m.height != c.height || m.width != c.width) {
            throw ValidationError("stitch: child " + std::to_string(k) + " has extent " + std::to_string(m.height) + "x" +
                                  std::to_string(m.width) + ", expected " + std::to_string(c.height) + "x" +
                                  std::to_string(c.width));
        }
        const int r0 = c.row - grid.parent.row, c0 = c.col - grid.parent.col;
        for (int r = 0; r < m.height; ++r) {
            std::copy_n(&m.data[static_cast<std::size_t>(r) * m.width], m.width,
                        &out.data[static_cast<std::size_t>(r0 + r) * out.width + c0]);
        }
    }
    return out;
}

/// Majority vote over rate x rate blocks; ties go to the largest class index.
inline IntMask label_downsample(const IntMask& fine, int rate) {
    if (rate < 1 || fine.height % rate || fine.width % rate) {
        throw ConfigError("label_downsample: extent not divisible by " + std::to_string(rate));
    }
    IntMask out(fine.height / rate, fine.width / rate);
    std::array<int, 256> votes{};
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            int lo = 255, hi = 0;
            for (int a = 0; a < rate; ++a) {
                for (int b = 0; b < rate; ++b) {
                    const int v = fine.at(r * rate + a, c * rate + b);
                    ++votes[static_cast<std::size_t>(v)];
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            int best = lo;
            for (int k = lo; k <= hi; ++k) {
                if (votes[static_cast<std::size_t>(k)] > 0 && votes[static_cast<std::size_t>(k)] >= votes[static_cast<std::size_t>(best)]) best = k;
            }
            for (int k = lo; k <= hi; ++k) votes[static_cast<std::size_t>(k)] = 0;
            out.at(r, c) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

}  // namespace razn
