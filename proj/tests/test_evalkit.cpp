#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace promptforge;

namespace {

// Three overlapping pixels out of seven in the union.
std::pair<LabelMask, LabelMask> three_of_seven() {
    LabelMask pred(1, 10, 1), gt(1, 10, 1);
    for (int x = 0; x < 5; ++x) pred.at(x, 0) = 1;
    for (int x = 2; x < 7; ++x) gt.at(x, 0) = 1;
    return {pred, gt};
}

std::vector<Point2> random_points(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Point2> p(n);
    for (auto& q : p) q = {u(rng), u(rng)};
    return p;
}

}  // namespace

TEST(Metrics, IdenticalMasksScoreOne) {
    std::mt19937_64 rng(1);
    LabelMask m(16, 16, 3);
    for (auto& v : m.labels) v = int(rng() % 4);
    for (const auto& r : iou_dice(m, m)) {
        EXPECT_EQ(r.iou, 1.0);
        EXPECT_EQ(r.dice, 1.0);
    }
}

TEST(Metrics, ThreeOfSevenFixture) {
    const auto [pred, gt] = three_of_seven();
    const auto r = iou_dice(pred, gt, "a", 2);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_NEAR(100 * r[0].iou, 42.857, 1e-3);
    EXPECT_NEAR(100 * r[0].dice, 60.0, 1e-12);
    EXPECT_EQ(r[0].image_id, "a");
    EXPECT_EQ(r[0].round, 2);
}

TEST(Metrics, DiceIdentityHoldsForRandomPairs) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        LabelMask a(8, 8, 2), b(8, 8, 2);
        for (auto& v : a.labels) v = int(rng() % 3);
        for (auto& v : b.labels) v = int(rng() % 3);
        for (const auto& r : iou_dice(a, b)) EXPECT_EQ(r.dice, 2 * r.iou / (1 + r.iou));
    }
}

TEST(Metrics, AbsentClassesAreSkipped) {
    LabelMask a(2, 2, 3), b(2, 2, 3);
    a.at(0, 0) = 2;
    const auto r = iou_dice(a, b);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].class_id, 2);
    EXPECT_EQ(r[0].iou, 0.0);
    EXPECT_THROW(iou_dice(LabelMask(2, 2, 1), LabelMask(2, 3, 1)), ShapeError);
}

TEST(Metrics, MeanOverRecords) {
    std::vector<MetricRecord> recs(2);
    recs[0].iou = 0.5, recs[0].dice = 2.0 / 3.0;
    recs[1].iou = 1.0, recs[1].dice = 1.0;
    const auto m = mean_metrics(recs);
    EXPECT_NEAR(m.miou, 0.75, 1e-12);
    EXPECT_NEAR(m.dice, (2.0 / 3.0 + 1.0) / 2.0, 1e-12);
    EXPECT_EQ(m.count, 2u);
}

TEST(Placement, CountsPointsOnTheRightSide) {
    BinaryMask gt(8, 8);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) gt.at(x, y) = 1;
    PromptBundle b;
    b.positives = {{1, 1}, {2, 2}, {6, 6}};
    b.negatives = {{7, 7}, {0, 0}};
    const auto r = point_placement_ratio(b, gt);
    EXPECT_NEAR(r.pos_in_gt, 200.0 / 3.0, 1e-12);
    EXPECT_EQ(r.neg_in_bg, 50.0);
    EXPECT_EQ(r.total, 60.0);
}

TEST(Hopkins, MatchesNaiveOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + int(rng() % 20);
        const auto pts = random_points(rng, n, 0, 100);
        const Domain d{0, 0, 100, 100};
        const int m = hopkins_default_samples(n);
        EXPECT_NEAR(hopkins(pts, d, m, trial), oracle::hopkins(pts, d, m, trial), 1e-12);
    }
}

TEST(Hopkins, RangeAndTranslationInvariance) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        auto pts = random_points(rng, 10, 0, 50);
        const double h = hopkins(pts, Domain{0, 0, 50, 50}, 0, 9);
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, 1.0);
        for (auto& p : pts) p.x += 300, p.y -= 20;
        EXPECT_NEAR(hopkins(pts, Domain{300, -20, 50, 50}, 0, 9), h, 1e-9);
    }
}

TEST(Hopkins, ClusteredScoresHigherThanSpread) {
    std::vector<Point2> grid, clump;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            grid.push_back({10.0 + 20 * i, 10.0 + 20 * j});
            clump.push_back({50.0 + 0.5 * i, 50.0 + 0.5 * j});
        }
    double g = 0, c = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        g += hopkins(grid, 100, 100, 0, s);
        c += hopkins(clump, 100, 100, 0, s);
    }
    EXPECT_GT(c / 20, 0.9);
    EXPECT_LT(g / 20, 0.5);
}

TEST(Hopkins, RejectsTooFewPoints) {
    const std::vector<Point2> one{{1, 1}};
    EXPECT_THROW(hopkins(one, 10, 10, 0, 0), InvalidArgument);
    const std::vector<Point2> three{{1, 1}, {2, 2}, {3, 3}};
    EXPECT_THROW(hopkins(three, 10, 10, 3, 0), InvalidArgument);
}

TEST(Phantom, DeterministicAndWellFormed) {
    PhantomSpec spec;
    spec.count = 4;
    spec.seed = 11;
    spec.noise_sigma = 0.05;
    spec.shapes = {PhantomShape::Disc, PhantomShape::Ring, PhantomShape::EllipsePair, PhantomShape::Blob};
    const auto a = phantom_generate(spec), b = phantom_generate(spec);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].mask, b[i].mask);
        EXPECT_GT(a[i].mask.class_view(1).count(), 50u);
    }
    EXPECT_EQ(a[0].id, "0000");
    // Ring interior is background.
    EXPECT_EQ(a[1].mask.at(31, 31) == 0, true);
    spec.seed = 12;
    EXPECT_NE(phantom_generate(spec)[0].image, a[0].image);
}

TEST(Phantom, SplitPairGivesTwoClasses) {
    PhantomSpec spec;
    spec.count = 1;
    spec.shapes = {PhantomShape::EllipsePair};
    spec.split_pair_classes = true;
    const auto s = phantom_generate(spec).front();
    EXPECT_EQ(s.mask.num_classes, 2);
    EXPECT_EQ(s.mask.label_set(), (std::set<int>{0, 1, 2}));
    spec.size = 16;
    EXPECT_THROW(phantom_generate(spec), InvalidArgument);
    EXPECT_THROW(phantom_shape_from_string("cube"), InvalidArgument);
}

TEST(Perturb, NoKindsIsIdentityAndGeometryMovesBoth) {
    PhantomSpec spec;
    spec.count = 1;
    const auto s = phantom_generate(spec).front();
    const auto same = perturb_sample(s.image, s.mask, {}, 1);
    EXPECT_EQ(same.first, s.image);
    const auto [img, msk] = perturb_sample(s.image, s.mask, {PerturbKind::Geometric}, 5);
    EXPECT_NE(msk, s.mask);
    // Mask and image stay aligned: the target stays bright under the moved mask.
    double in = 0, n = 0;
    for (std::size_t i = 0; i < msk.labels.size(); ++i)
        if (msk.labels[i]) in += img.values[i], ++n;
    EXPECT_GT(in / n, 0.6);
    const auto again = perturb_sample(s.image, s.mask, {PerturbKind::Geometric, PerturbKind::Noise}, 5);
    EXPECT_EQ(again, perturb_sample(s.image, s.mask, {PerturbKind::Geometric, PerturbKind::Noise}, 5));
}
