#include <gtest/gtest.h>

#include <fstream>

#include "razn/ops.hpp"
#include "razn/pyramid.hpp"
#include "razn/synth.hpp"
#include "testing.hpp"

using namespace razn;

namespace {

// One small pyramid shared by the read tests.
const PyramidDataset& shared_pyramid() {
    static const PyramidDataset ds = [] {
        const auto dir = testkit::scratch_dir("pyramid_shared");
        return generate(testkit::tiny_spec(), dir);
    }();
    return ds;
}

IntMask random_mask(int h, int w, Rng& rng) {
    IntMask m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.below(4));
    return m;
}

float pixel(const Patch& p, int ch, int r, int c) {
    return p.image[(static_cast<std::size_t>(ch) * p.image.dim(1) + r) * p.image.dim(2) + c];
}

}  // namespace

TEST(Zoom, ScalesOriginAndExtent) {
    const PatchRef z = zoom_ref({0, 10, 20, 256, 256}, 2, 3);
    EXPECT_EQ(z, (PatchRef{1, 20, 40, 512, 512}));
    EXPECT_EQ(zoom_ref({1, 3, 5, 7, 9}, 3, 3), (PatchRef{2, 9, 15, 21, 27}));
    EXPECT_THROW(zoom_ref({2, 0, 0, 8, 8}, 2, 3), MaxMagnificationError);
}

TEST(Zoom, RegionChecksBounds) {
    const auto& ds = shared_pyramid();
    EXPECT_THROW(zoom_region(ds, {0, 120, 0, 16, 16}), RangeError);
    EXPECT_EQ(zoom_region(ds, {0, 8, 16, 16, 16}), (PatchRef{1, 16, 32, 32, 32}));
    EXPECT_THROW(zoom_region(ds, {2, 0, 0, 16, 16}), MaxMagnificationError);
}

TEST(CropGrid, StitchRoundTripForSeveralRates) {
    Rng rng(1);
    for (int rate : {2, 3, 4}) {
        const PatchRef parent{1, 5, 7, 6 * rate, 4 * rate};
        const PatchGrid g = crop_grid(parent, rate);
        ASSERT_EQ(g.children.size(), static_cast<std::size_t>(rate * rate));
        EXPECT_EQ(g.children[1], (PatchRef{1, 5, 7 + 4, 6, 4}));
        EXPECT_EQ(g.children[static_cast<std::size_t>(rate)], (PatchRef{1, 5 + 6, 7, 6, 4}));
        const IntMask whole = random_mask(parent.height, parent.width, rng);
        std::vector<IntMask> parts;
        for (const auto& c : g.children) parts.push_back(crop_mask(whole, c.row - parent.row, c.col - parent.col, c.height, c.width));
        EXPECT_EQ(stitch(g, parts), whole) << "rate " << rate;
    }
}

TEST(CropGrid, RateOneIsIdentity) {
    const PatchRef p{0, 3, 4, 10, 12};
    const auto g = crop_grid(p, 1);
    ASSERT_EQ(g.children.size(), 1u);
    EXPECT_EQ(g.children[0], p);
    Rng rng(2);
    const IntMask m = random_mask(10, 12, rng);
    EXPECT_EQ(stitch(g, {m}), m);
}

TEST(CropGrid, RejectsIndivisibleExtentAndWrongChildren) {
    EXPECT_THROW(crop_grid({0, 0, 0, 5, 4}, 2), ConfigError);
    const auto g = crop_grid({0, 0, 0, 4, 4}, 2);
    EXPECT_THROW(stitch(g, {IntMask(2, 2)}), ValidationError);
    EXPECT_THROW(stitch(g, {IntMask(2, 2), IntMask(2, 2), IntMask(2, 2), IntMask(3, 2)}), ValidationError);
}

TEST(LabelDownsample, MajorityWithTiesToLargerClass) {
    IntMask a(2, 2);
    a.data = {0, 0, 0, 1};
    EXPECT_EQ(label_downsample(a, 2).data[0], 0);
    IntMask b(2, 2);
    b.data = {2, 2, 3, 3};
    EXPECT_EQ(label_downsample(b, 2).data[0], 3);
    IntMask c(3, 3);
    c.data = {1, 1, 2, 2, 2, 1, 0, 0, 3};
    EXPECT_EQ(label_downsample(c, 3).data[0], 2);
}

TEST(LabelDownsample, MatchesBruteForceVote) {
    Rng rng(3);
    for (int rate : {2, 3}) {
        const IntMask m = random_mask(6 * rate, 5 * rate, rng);
        const IntMask d = label_downsample(m, rate);
        for (int r = 0; r < d.height; ++r)
            for (int c = 0; c < d.width; ++c) {
                int votes[4] = {0, 0, 0, 0};
                for (int a = 0; a < rate; ++a)
                    for (int b = 0; b < rate; ++b) ++votes[m.at(r * rate + a, c * rate + b)];
                int best = 3;
                for (int k = 2; k >= 0; --k)
                    if (votes[k] > votes[best]) best = k;
                EXPECT_EQ(d.at(r, c), best);
            }
    }
}

TEST(Dataset, ManifestDescribesLevels) {
    const auto& ds = shared_pyramid();
    EXPECT_EQ(ds.levels(), 3);
    EXPECT_EQ(ds.zoom_rate(), 2);
    EXPECT_EQ(ds.classes(), 4);
    EXPECT_EQ(ds.dims(0), (LevelDims{128, 128}));
    EXPECT_EQ(ds.dims(2), (LevelDims{512, 512}));
    EXPECT_THROW(ds.dims(3), RangeError);
}

TEST(Dataset, OverlappingReadsAgree) {
    const auto& ds = shared_pyramid();
    // Windows straddle tile boundaries at 64.
    const Patch a = ds.read_patch({2, 40, 50, 64, 64});
    const Patch b = ds.read_patch({2, 56, 70, 64, 64});
    for (int r = 0; r < 48; ++r)
        for (int c = 0; c < 44; ++c) {
            ASSERT_EQ(a.labels.at(r + 16, c + 20), b.labels.at(r, c));
            for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(pixel(a, ch, r + 16, c + 20), pixel(b, ch, r, c));
        }
}

TEST(Dataset, PreloadedReadsEqualTileReads) {
    auto ds = PyramidDataset::open(shared_pyramid().root());
    const PatchRef ref{1, 30, 62, 40, 70};
    const auto img = ds.read_image(ref);
    const auto lab = ds.read_labels(ref);
    ds.preload({1});
    EXPECT_EQ(ds.read_image(ref), img);
    EXPECT_EQ(ds.read_labels(ref), lab);
}

TEST(Dataset, ImageTensorIsChannelMajorUnitRange) {
    const auto& ds = shared_pyramid();
    const PatchRef ref{0, 64, 64, 8, 8};
    const Patch p = ds.read_patch(ref);
    const RgbImage im = ds.read_image(ref);
    ASSERT_EQ(p.image.shape(), (Shape{3, 8, 8}));
    EXPECT_FLOAT_EQ(pixel(p, 2, 3, 5), im.pixel(3, 5)[2] / 255.0f);
}

TEST(Dataset, OutOfBoundsReadsThrow) {
    const auto& ds = shared_pyramid();
    EXPECT_THROW(ds.read_patch({0, 100, 100, 32, 32}), RangeError);
    EXPECT_THROW(ds.read_patch({0, -1, 0, 8, 8}), RangeError);
    EXPECT_THROW(ds.read_patch({5, 0, 0, 8, 8}), RangeError);
}

TEST(Dataset, ZoomThenAveragePoolMatchesCoarseLevel) {
    const auto& ds = shared_pyramid();
    for (const PatchRef ref : {PatchRef{0, 32, 48, 32, 32}, PatchRef{1, 100, 60, 64, 48}}) {
        const Patch coarse = ds.read_patch(ref);
        const Patch fine = ds.read_patch(zoom_region(ds, ref));
        const Tensor<float> pooled = ops::area_downsample(fine.image.reshaped({1, 3, fine.image.dim(1), fine.image.dim(2)}), 2);
        double mae = 0.0;
        for (std::size_t i = 0; i < pooled.numel(); ++i) mae += std::abs(pooled[i] - coarse.image[i]);
        mae /= static_cast<double>(pooled.numel());
        EXPECT_LE(mae, 1e-2) << to_string(ref);
    }
}

TEST(Dataset, MissingOrForeignManifestIsRejected) {
    const auto dir = testkit::scratch_dir("pyramid_bad_manifest");
    EXPECT_THROW(PyramidDataset::open(dir), ArtifactMismatchError);
    std::ofstream(dir / "manifest.json") << R"({"format": "something-else"})";
    EXPECT_THROW(PyramidDataset::open(dir), ArtifactMismatchError);
    std::ofstream(dir / "manifest.json") << "{not json";
    EXPECT_THROW(PyramidDataset::open(dir), ArtifactMismatchError);
}

TEST(Dataset, MissingTileIsReported) {
    const auto dir = testkit::scratch_dir("pyramid_missing_tile");
    auto spec = testkit::tiny_spec();
    spec.finest_h = spec.finest_w = 256;
    generate(spec, dir);
    std::filesystem::remove(PyramidDataset::image_tile_path(dir, 2, 1, 1));
    const auto ds = PyramidDataset::open(dir);
    EXPECT_NO_THROW(ds.read_image({2, 0, 0, 64, 64}));
    EXPECT_THROW(ds.read_image({2, 60, 60, 8, 8}), ArtifactMismatchError);
}
