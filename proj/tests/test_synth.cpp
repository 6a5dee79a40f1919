#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "razn/synth.hpp"
#include "testing.hpp"

using namespace razn;
using razn::testkit::tiny_spec;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::array<double, 4> class_shares(const IntMask& m) {
    std::array<double, 4> s{};
    for (auto v : m.data) s[v] += 1.0;
    for (auto& v : s) v /= static_cast<double>(m.size());
    return s;
}

}  // namespace

TEST(Synth, RegenerationIsByteIdentical) {
    const auto a = testkit::scratch_dir("synth_regen_a"), b = testkit::scratch_dir("synth_regen_b");
    generate(tiny_spec(), a);
    generate(tiny_spec(), b);
    std::size_t files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), a);
        ASSERT_TRUE(std::filesystem::exists(b / rel)) << rel;
        ASSERT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++files;
    }
    EXPECT_GT(files, 10u);
}

TEST(Synth, DifferentSeedsDiffer) {
    EXPECT_NE(synthesize(tiny_spec(3)).labels.back(), synthesize(tiny_spec(4)).labels.back());
}

TEST(Synth, ParallelEqualsSerial) {
    const auto serial = synthesize(tiny_spec(), 1);
    const auto parallel = synthesize(tiny_spec(), 3);
    EXPECT_EQ(serial.images, parallel.images);
    EXPECT_EQ(serial.labels, parallel.labels);
}

TEST(Synth, NoTissueMeansAllNormalAndGlass) {
    auto spec = tiny_spec();
    spec.tissue_fraction = 0.0;
    spec.class_area = {0.0, 0.0, 0.0, 0.0};
    const auto lv = synthesize(spec);
    for (const auto& m : lv.labels)
        for (auto v : m.data) ASSERT_EQ(v, 0);
    const auto& im = lv.images.back();
    for (int r = 0; r < im.height; r += 37)
        for (int c = 0; c < im.width; c += 41)
            for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(im.pixel(r, c)[ch], spec.glass[static_cast<std::size_t>(ch)], spec.noise);
}

TEST(Synth, DefaultClassSharesOnAReducedSlide) {
    SynthSpec spec;
    spec.finest_h = spec.finest_w = 1024;
    const auto s = class_shares(synthesize(spec).labels.back());
    EXPECT_GT(s[0], 0.7);
    for (int k = 1; k < 4; ++k) {
        EXPECT_GT(s[static_cast<std::size_t>(k)], 0.01) << k;
        EXPECT_LT(s[static_cast<std::size_t>(k)], 0.15) << k;
    }
}

TEST(Synth, CoarseLabelsAreDownsampledFineLabels) {
    const auto lv = synthesize(tiny_spec());
    ASSERT_EQ(lv.labels.size(), 3u);
    for (std::size_t l = 0; l + 1 < lv.labels.size(); ++l) {
        EXPECT_EQ(lv.labels[l], label_downsample(lv.labels[l + 1], 2));
        EXPECT_EQ(lv.images[l], box_downsample(lv.images[l + 1], 2));
    }
    EXPECT_EQ(lv.images[0].height, 128);
}

TEST(Synth, ManifestRecordsGenerator) {
    const auto m = manifest_for(tiny_spec());
    EXPECT_EQ(m.levels(), 3);
    EXPECT_EQ(m.level_dims[1], (LevelDims{256, 256}));
    EXPECT_EQ(m.generator.at("seed"), 3);
    EXPECT_EQ(m.classes.size(), 4u);
}

TEST(Synth, CarcinomaTexturesSeparateOnlyWhenMagnified) {
    const auto dir = testkit::scratch_dir("synth_confusability");
    auto spec = tiny_spec();
    spec.finest_h = spec.finest_w = 1024;
    spec.tile_size = 256;
    const auto ds = generate(spec, dir);
    const auto rep = confusability_report(ds);
    ASSERT_EQ(rep.size(), 3u);
    for (const auto& r : rep) ASSERT_TRUE(r.score.has_value()) << r.notice;
    EXPECT_LT(*rep[0].score, 0.1);
    EXPECT_GT(*rep[1].score, *rep[0].score + 0.1);
    EXPECT_GT(*rep[2].score, *rep[0].score + 0.1);
}

TEST(Synth, IdenticalTexturesAreInseparableAtEveryLevel) {
    const auto dir = testkit::scratch_dir("synth_identical");
    auto spec = tiny_spec();
    spec.finest_h = spec.finest_w = 1024;
    spec.tile_size = 256;
    spec.textures[3] = spec.textures[2];
    const auto ds = generate(spec, dir);
    for (const auto& r : confusability_report(ds)) {
        ASSERT_TRUE(r.score.has_value());
        EXPECT_LT(*r.score, 0.1) << "level " << r.level;
    }
}

TEST(Synth, AbsentClassGivesNoticeInsteadOfScore) {
    const auto dir = testkit::scratch_dir("synth_absent");
    auto spec = tiny_spec();
    spec.class_area = {0.49, 0.06, 0.0, 0.0};
    spec.tissue_fraction = 0.55;
    const auto rep = confusability_report(generate(spec, dir));
    for (const auto& r : rep) {
        EXPECT_FALSE(r.score.has_value());
        EXPECT_NE(r.notice.find("absent"), std::string::npos);
    }
}

TEST(Synth, ValidationNamesTheKey) {
    auto expect_key = [](SynthSpec s, const std::string& key) {
        try {
            s.validate();
            FAIL() << "expected ConfigError for " << key;
        } catch (const ConfigError& e) {
            EXPECT_EQ(std::string(e.what()).rfind(key + ":", 0), 0u) << e.what();
        }
    };
    auto s = tiny_spec();
    s.finest_h = 510;
    expect_key(s, "finest");
    s = tiny_spec();
    s.tile_size = 100;
    expect_key(s, "tile_size");
    s = tiny_spec();
    s.class_area[1] = 0.2;
    expect_key(s, "class_area");
    s = tiny_spec();
    s.textures[1].cluster_h = 3;
    expect_key(s, "textures");
    s = tiny_spec();
    s.zoom_rate = 1;
    expect_key(s, "zoom_rate");
    s = tiny_spec();
    s.lesion_radius_max = 0.01;
    expect_key(s, "lesion_radius");
}
