#include <gtest/gtest.h>

#include <set>

#include "razn/metrics.hpp"
#include "razn/random.hpp"

using namespace razn;

namespace {

IntMask mask_of(int h, int w, std::vector<std::uint8_t> v) {
    IntMask m(h, w);
    m.data = std::move(v);
    return m;
}

IntMask random_mask(int n, Rng& rng, int classes = 4) {
    IntMask m(1, n);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
    return m;
}

// IOU from pixel sets, without a confusion matrix.
std::optional<double> set_iou(const IntMask& t, const IntMask& p, const std::set<int>& cls) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const bool a = cls.count(t.data[i]) > 0, b = cls.count(p.data[i]) > 0;
        inter += a && b;
        uni += a || b;
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST(Iou, HandExample) {
    ConfusionAccumulator acc(4);
    acc.add(mask_of(2, 2, {0, 0, 1, 2}), mask_of(2, 2, {0, 1, 1, 2}));
    const auto iou = iou_per_class(acc);
    EXPECT_DOUBLE_EQ(*iou[0], 0.5);
    EXPECT_DOUBLE_EQ(*iou[1], 0.5);
    EXPECT_DOUBLE_EQ(*iou[2], 1.0);
    EXPECT_FALSE(iou[3].has_value());
    // Class 3 has zero union and is left out of the mean.
    EXPECT_DOUBLE_EQ(mean_iou(acc), 2.0 / 3.0);
}

TEST(Iou, PerfectPredictionScoresOne) {
    Rng rng(1);
    const auto t = random_mask(500, rng);
    ConfusionAccumulator acc;
    acc.add(t, t);
    EXPECT_DOUBLE_EQ(mean_iou(acc), 1.0);
    EXPECT_DOUBLE_EQ(weighted_iou(acc), 1.0);
    EXPECT_DOUBLE_EQ(*merged_iou(acc, kCarcinoma), 1.0);
}

TEST(Iou, MatchesPixelSetOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = random_mask(300, rng), p = random_mask(300, rng);
        ConfusionAccumulator acc;
        acc.add(t, p);
        const auto iou = iou_per_class(acc);
        for (int c = 0; c < 4; ++c) {
            const auto want = set_iou(t, p, {c});
            ASSERT_EQ(iou[static_cast<std::size_t>(c)].has_value(), want.has_value());
            if (want) EXPECT_NEAR(*iou[static_cast<std::size_t>(c)], *want, 1e-15);
        }
        EXPECT_NEAR(*merged_iou(acc, kNonCarcinoma), *set_iou(t, p, {0, 1}), 1e-15);
        EXPECT_NEAR(*merged_iou(acc, kCarcinoma), *set_iou(t, p, {2, 3}), 1e-15);
    }
}

TEST(Iou, AccumulationIsAdditive) {
    Rng rng(3);
    const auto t1 = random_mask(200, rng), p1 = random_mask(200, rng);
    const auto t2 = random_mask(150, rng), p2 = random_mask(150, rng);
    ConfusionAccumulator a, b, whole;
    a.add(t1, p1);
    b.add(t2, p2);
    IntMask tt(1, 350), pp(1, 350);
    std::copy(t1.data.begin(), t1.data.end(), tt.data.begin());
    std::copy(t2.data.begin(), t2.data.end(), tt.data.begin() + 200);
    std::copy(p1.data.begin(), p1.data.end(), pp.data.begin());
    std::copy(p2.data.begin(), p2.data.end(), pp.data.begin() + 200);
    whole.add(tt, pp);
    a.merge(b);
    EXPECT_EQ(a, whole);
    EXPECT_EQ(a.total(), 350u);
}

TEST(WeightedIou, InverseFrequencyHandExample) {
    // Truth: three pixels of class 0, one of class 1. Prediction gets class 0
    // right everywhere and misses class 1.
    ConfusionAccumulator acc(2);
    acc.add(mask_of(1, 4, {0, 0, 0, 1}), mask_of(1, 4, {0, 0, 0, 0}));
    // IOU0 = 3/4, IOU1 = 0; weights 1/0.75 and 1/0.25 normalized to 0.25 and 0.75.
    EXPECT_NEAR(weighted_iou(acc), 0.25 * 0.75, 1e-15);
    EXPECT_NEAR(weighted_iou(acc, {0.5, 0.5}), 0.375, 1e-15);
    EXPECT_NEAR(weighted_iou(acc, {1.0, 0.0}), 0.75, 1e-15);
    EXPECT_THROW(weighted_iou(acc, {0.5}), ValidationError);
}

TEST(Metrics, UndefinedCases) {
    ConfusionAccumulator empty;
    EXPECT_THROW(mean_iou(empty), UndefinedMetricError);
    EXPECT_THROW(weighted_iou(empty), UndefinedMetricError);
    EXPECT_FALSE(merged_iou(empty, kCarcinoma).has_value());
    EXPECT_THROW(relative_time(CostLedger{}, 0.1), UndefinedMetricError);
    EXPECT_THROW(empty.add(IntMask(2, 2), IntMask(2, 3)), ValidationError);
    EXPECT_THROW(empty.add(0, 4), ValidationError);
}

TEST(RelativeTime, BreakAndZoomUnits) {
    PatchCost brk, zoom;
    brk.add_seg(0);
    brk.policy_units = 1;
    zoom.add_seg(1, 4);
    zoom.policy_units = 1;
    EXPECT_DOUBLE_EQ(brk.relative(0.1), 1.1);
    EXPECT_DOUBLE_EQ(zoom.relative(0.1), 4.1);
    CostLedger ledger{{brk, zoom, zoom, brk}};
    const auto s = relative_time(ledger, 0.1);
    EXPECT_DOUBLE_EQ(s.mean, 2.6);
    EXPECT_DOUBLE_EQ(s.std, 1.5);
    EXPECT_EQ(s.patches, 4u);
    CostLedger same{{zoom, zoom}};
    EXPECT_DOUBLE_EQ(relative_time(same, 0.05).std, 0.0);
}

TEST(Report, JsonAndTable) {
    ConfusionAccumulator acc;
    acc.add(mask_of(1, 4, {0, 1, 2, 2}), mask_of(1, 4, {0, 1, 2, 3}));
    PatchCost c;
    c.add_seg(0);
    const auto r = make_report("razn", acc, relative_time(CostLedger{{c}}, 0.0));
    const auto j = to_json(r);
    EXPECT_EQ(j["method"], "razn");
    EXPECT_DOUBLE_EQ(j["carcinoma_iou"].get<double>(), 1.0);
    EXPECT_EQ(j["class_iou"].size(), 4u);
    EXPECT_DOUBLE_EQ(j["relative_time_mean"].get<double>(), 1.0);
    const auto table = format_table({r});
    EXPECT_NE(table.find("razn"), std::string::npos);
    EXPECT_NE(table.find("mIOU"), std::string::npos);
}
