#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace promptforge;

TEST(ImageGrid, RejectsBadShapesAndValues) {
    EXPECT_THROW(ImageGrid(0, 4), ShapeError);
    EXPECT_THROW(ImageGrid(2, 2, std::vector<double>{0, 0, 0}), ShapeError);
    EXPECT_THROW(ImageGrid(1, 2, std::vector<double>{0.5, 1.5}), InvalidArgument);
    EXPECT_THROW(ImageGrid(1, 1, std::vector<double>{std::nan("")}), InvalidArgument);
    EXPECT_NO_THROW(ImageGrid(1, 2, std::vector<double>{0.0, 1.0}));
}

TEST(LabelMask, ValidateAndViews) {
    EXPECT_THROW(LabelMask(1, 3, std::vector<int>{0, 1, 3}, 2), InvalidArgument);
    LabelMask m(1, 4, std::vector<int>{0, 1, 2, 1}, 2);
    EXPECT_EQ(m.class_view(1).bits, (std::vector<std::uint8_t>{0, 1, 0, 1}));
    EXPECT_EQ(m.label_set(), (std::set<int>{0, 1, 2}));
    EXPECT_EQ(LabelMask::from_binary(m.class_view(2), 2, 2).labels, (std::vector<int>{0, 0, 2, 0}));
}

TEST(Warp, IdentityIsExact) {
    std::mt19937_64 rng(1);
    const ImageGrid img = oracle::random_image(rng, 9, 7);
    const auto t = TransformField::identity(9, 7);
    EXPECT_EQ(warp_image(img, t), img);
    LabelMask m(9, 7, 3);
    for (auto& v : m.labels) v = int(rng() % 4);
    EXPECT_EQ(warp_mask(m, t), m);
}

TEST(Warp, IntegerShiftPadsWithZero) {
    ImageGrid img(3, 3, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
    TransformField t(3, 3);
    t.affine[2] = 1.0;  // output(x) = src(x + 1)
    const ImageGrid out = warp_image(img, t);
    EXPECT_EQ(out.values, (std::vector<double>{0.2, 0.3, 0.0, 0.5, 0.6, 0.0, 0.8, 0.9, 0.0}));
}

TEST(Warp, HalfPixelShiftAveragesNeighbours) {
    ImageGrid img(1, 2, std::vector<double>{0.2, 0.6});
    TransformField t(1, 2);
    t.flow = {0.5, 0.0, 0.5, 0.0};
    const ImageGrid out = warp_image(img, t);
    EXPECT_DOUBLE_EQ(out.values[0], 0.4);
    EXPECT_DOUBLE_EQ(out.values[1], 0.3);  // half of the right pixel, half zero padding
}

TEST(Warp, MaskRoundsHalvesUpAndNeverBlends) {
    LabelMask m(1, 3, std::vector<int>{1, 2, 0}, 2);
    TransformField t(1, 3);
    for (int x = 0; x < 3; ++x) t.flow[2 * x] = 0.5;
    EXPECT_EQ(warp_mask(m, t).labels, (std::vector<int>{2, 0, 0}));
}

TEST(Warp, MatchesBruteForceOnSmallGrids) {
    std::mt19937_64 rng(7);
    for (int h = 1; h <= 16; h += 3)
        for (int w = 1; w <= 16; w += 5) {
            const ImageGrid img = oracle::random_image(rng, h, w);
            LabelMask m(h, w, 3);
            for (auto& v : m.labels) v = int(rng() % 4);
            for (int trial = 0; trial < 5; ++trial) {
                const auto t = oracle::random_transform(rng, h, w, 1.5);
                EXPECT_EQ(warp_image(img, t), oracle::warp_image(img, t));
                EXPECT_EQ(warp_mask(m, t), oracle::warp_mask(m, t));
            }
        }
}

TEST(Warp, MaskLabelsStaySubsetOfSource) {
    std::mt19937_64 rng(11);
    LabelMask m(20, 20, 4);
    for (auto& v : m.labels) v = int(rng() % 3);  // class 3 and 4 absent
    for (int trial = 0; trial < 20; ++trial) {
        const auto out = warp_mask(m, oracle::random_transform(rng, 20, 20, 2.0));
        for (int v : out.label_set()) EXPECT_TRUE(v == 0 || m.label_set().count(v));
    }
}

TEST(Warp, ShapeMismatchThrows) {
    EXPECT_THROW(warp_image(ImageGrid(4, 4), TransformField(4, 5)), ShapeError);
    EXPECT_THROW(warp_mask(LabelMask(4, 4, 1), TransformField(5, 4)), ShapeError);
}

TEST(ScaleFlow, EndpointsAndLinearity) {
    std::mt19937_64 rng(3);
    const auto t = oracle::random_transform(rng, 6, 5, 2.0);
    EXPECT_TRUE(scale_flow(t, 0.0).is_identity());
    EXPECT_EQ(scale_flow(t, 1.0), t);
    const auto half = scale_flow(t, 0.5);
    const auto p = half.map(2, 3), q = t.map(2, 3);
    EXPECT_NEAR(p[0] - 2, 0.5 * (q[0] - 2), 1e-12);
    EXPECT_NEAR(p[1] - 3, 0.5 * (q[1] - 3), 1e-12);
    EXPECT_THROW(scale_flow(t, INFINITY), InvalidArgument);
}

TEST(Resize, BilinearKeepsConstantsAndMonotoneSteps) {
    const std::vector<double> flat(16, 0.25);
    for (double v : resize_bilinear(flat, 4, 4, 13, 7)) EXPECT_DOUBLE_EQ(v, 0.25);
    const std::vector<double> step{0, 1};
    const auto up = resize_bilinear(step, 1, 2, 1, 8);
    EXPECT_TRUE(std::is_sorted(up.begin(), up.end()));
    EXPECT_DOUBLE_EQ(up.front(), 0.0);
    EXPECT_DOUBLE_EQ(up.back(), 1.0);
}

TEST(Resize, NearestUpThenMajorityDownRoundTrips) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const BinaryMask m = oracle::random_mask(rng, 16, 16, 0.4);
        EXPECT_EQ(downscale_majority(resize_nearest(m, 64, 64), 16, 16), m);
        LabelMask l(16, 16, 3);
        for (auto& v : l.labels) v = int(rng() % 4);
        EXPECT_EQ(downscale_majority(resize_nearest(l, 64, 64), 16, 16), l);
    }
}

TEST(Resize, MajorityHalfCountsAsSet) {
    BinaryMask m(2, 2);
    m.bits = {1, 1, 0, 0};
    EXPECT_EQ(downscale_majority(m, 1, 1).bits[0], 1);
    m.bits = {1, 0, 0, 0};
    EXPECT_EQ(downscale_majority(m, 1, 1).bits[0], 0);
}

TEST(Resize, LabelMajorityTiesGoToLowestLabel) {
    LabelMask m(2, 2, std::vector<int>{2, 2, 1, 1}, 2);
    EXPECT_EQ(downscale_majority(m, 1, 1).labels[0], 1);
}
