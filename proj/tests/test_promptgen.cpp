#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace promptforge;

namespace {

BinaryMask square(int n, int x0, int y0, int x1, int y1) {
    BinaryMask m(n, n);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(x, y) = 1;
    return m;
}

SimilarityMap ramp(int n) {
    SimilarityMap s;
    s.height = s.width = n;
    s.values.resize(std::size_t(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) s.values[std::size_t(y) * n + x] = double(x + y) / (2.0 * n);
    return s;
}

}  // namespace

TEST(Morphology, MatchesOracleOnEveryFourByFourMask) {
    for (int bits = 0; bits < (1 << 16); ++bits) {
        BinaryMask m(4, 4);
        for (int i = 0; i < 16; ++i) m.bits[i] = (bits >> i) & 1;
        for (int k : {1, 3, 5}) {
            ASSERT_EQ(morphology(m, k, MorphOp::Erode), oracle::morph(m, k, true)) << bits << " k=" << k;
            ASSERT_EQ(morphology(m, k, MorphOp::Dilate), oracle::morph(m, k, false)) << bits << " k=" << k;
        }
    }
}

TEST(Morphology, MatchesOracleOnRandomLargeMasks) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const auto m = oracle::random_shapes(rng, 64, 64);
        for (int k : {3, 7}) {
            EXPECT_EQ(morphology(m, k, MorphOp::Erode), oracle::morph(m, k, true));
            EXPECT_EQ(morphology(m, k, MorphOp::Dilate), oracle::morph(m, k, false));
        }
    }
    EXPECT_THROW(morphology(BinaryMask(4, 4), 4, MorphOp::Erode), InvalidArgument);
}

TEST(BoxPrompt, MatchesProjectionOracle) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = oracle::random_mask(rng, 1 + int(rng() % 16), 1 + int(rng() % 16), 0.05);
        if (m.empty()) {
            EXPECT_THROW(box_prompt(m), PromptFailure);
            continue;
        }
        EXPECT_EQ(box_prompt(m), oracle::box_prompt(m));
    }
}

TEST(CandidateRegions, ErodeAndDifference) {
    const auto m = square(32, 8, 8, 23, 23);
    PromptConfig cfg;
    cfg.erode_kernel = cfg.dilate_kernel = 5;
    const auto r = candidate_regions(m, cfg);
    EXPECT_EQ(r.erode.size(), 12u * 12u);
    EXPECT_EQ(r.diff.size(), 20u * 20u - 12u * 12u);
}

TEST(CandidateRegions, FallsBackWhenErosionEmpties) {
    const auto m = square(16, 7, 7, 8, 8);
    const auto r = candidate_regions(m, PromptConfig{});
    EXPECT_EQ(r.erode, pixel_indices(m));
    EXPECT_FALSE(r.diff.empty());
    EXPECT_THROW(candidate_regions(BinaryMask(8, 8), PromptConfig{}), PromptFailure);
}

TEST(CandidateRegions, RingFallbackWhenDifferenceEmpty) {
    // A full raster erodes to nothing, falls back to itself, and dilation adds nothing inside the border.
    BinaryMask m(6, 6);
    std::fill(m.bits.begin(), m.bits.end(), 1);
    const auto r = candidate_regions(m, PromptConfig{});
    EXPECT_EQ(r.erode.size(), 36u);
    EXPECT_TRUE(r.diff.empty());
}

TEST(Partition, SizesDifferByAtMostOne) {
    std::vector<int> region(23);
    for (int i = 0; i < 23; ++i) region[i] = 100 - 3 * i;
    const auto parts = partition_subregions(region, 5, false, 10);
    ASSERT_EQ(parts.size(), 5u);
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.size());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{5, 5, 5, 4, 4}));
    EXPECT_TRUE(std::is_sorted(parts[0].begin(), parts[0].end()));
    EXPECT_LT(parts[0].back(), parts[1].front());
    EXPECT_EQ(partition_subregions({4, 2}, 5, false, 10).size(), 2u);
    EXPECT_THROW(partition_subregions({}, 2, false, 10), PromptFailure);
}

TEST(Partition, BilateralKeepsSidesApart) {
    const auto m = square(16, 2, 2, 13, 5);
    const auto parts = partition_subregions(pixel_indices(m), 4, true, 16);
    ASSERT_EQ(parts.size(), 4u);
    for (int s = 0; s < 2; ++s)
        for (int i : parts[s]) EXPECT_LT(i % 16, 8);
    for (int s = 2; s < 4; ++s)
        for (int i : parts[s]) EXPECT_GE(i % 16, 8);
}

TEST(SelectPoints, ArgmaxAndArgminWithLowestIndexTies) {
    SimilarityMap s;
    s.height = 1;
    s.width = 6;
    s.values = {0.5, 0.9, 0.9, -0.2, -0.7, -0.7};
    const auto [pos, neg] = select_points(s, {{0, 1, 2}}, {{3, 4, 5}});
    EXPECT_EQ(pos, (std::vector<PixelPoint>{{1, 0}}));
    EXPECT_EQ(neg, (std::vector<PixelPoint>{{4, 0}}));
    EXPECT_THROW(select_points(s, {}, {{3}}), PromptFailure);
}

TEST(GlobalTopK, PicksExtremes) {
    const auto [pos, neg] = global_topk_points(ramp(8), 2);
    EXPECT_EQ(pos, (std::vector<PixelPoint>{{7, 7}, {7, 6}}));  // tie at 13 goes to the lower index
    EXPECT_EQ(neg, (std::vector<PixelPoint>{{0, 0}, {1, 0}}));
}

TEST(PromptSpace, RoundsHalfUpAndClips) {
    EXPECT_EQ(to_prompt_space(0, 256, 1024), 0);
    EXPECT_EQ(to_prompt_space(255, 256, 1024), 1020);
    EXPECT_EQ(to_prompt_space(1, 4, 2), 1);  // 0.5 rounds up
    EXPECT_EQ(to_prompt_space(3, 4, 2), 1);  // 1.5 → 2, clipped
}

TEST(BuildPrompts, DefaultBundleIsValid) {
    PromptConfig cfg;
    cfg.workspace = 64;
    cfg.prompt_space = 256;
    const auto m = square(64, 10, 12, 40, 50);
    const auto b = build_prompts(m, ramp(64), PrototypeVector({1.0}, 1), cfg);
    EXPECT_NO_THROW(b.validate());
    EXPECT_EQ(b.positives.size(), 5u);
    EXPECT_EQ(b.negatives.size(), 5u);
    EXPECT_EQ(b.box, (Box{40, 48, 160, 200}));
    EXPECT_EQ(b.mask_logits[12 * 64 + 10], 8.0);
    EXPECT_EQ(b.mask_logits[0], -8.0);
    for (const auto& p : b.positives) EXPECT_TRUE(m.at((p.x + 2) / 4, (p.y + 2) / 4));
}

TEST(BuildPrompts, TogglesDropEachPromptType) {
    PromptConfig cfg;
    cfg.workspace = 32;
    cfg.prompt_space = 128;
    cfg.use_points = cfg.use_box = cfg.use_mask = false;
    const auto b = build_prompts(square(32, 4, 4, 20, 20), ramp(32), PrototypeVector({1.0}, 1), cfg);
    EXPECT_TRUE(b.positives.empty());
    EXPECT_TRUE(b.negatives.empty());
    EXPECT_EQ(b.box, (Box{0, 0, 127, 127}));
    for (double v : b.mask_logits) EXPECT_EQ(v, 0.0);
}

TEST(BuildPrompts, CollisionTakesNextBestPixel) {
    // Downscaling to a coarser prompt space makes neighbouring pixels share coordinates.
    PromptConfig cfg;
    cfg.workspace = 16;
    cfg.prompt_space = 4;
    cfg.num_points = 1;
    cfg.erode_kernel = cfg.dilate_kernel = 3;
    SimilarityMap s = ramp(16);
    const auto m = square(16, 4, 4, 11, 11);
    // Best positive sits next to the worst negative so both land on the same coarse cell.
    for (double& v : s.values) v = 0.0;
    s.values[5 * 16 + 5] = 1.0;
    s.values[3 * 16 + 3] = -1.0;
    const auto b = build_prompts(m, s, PrototypeVector({1.0}, 1), cfg);
    EXPECT_NO_THROW(b.validate());
    ASSERT_EQ(b.negatives.size(), 1u);
    EXPECT_EQ(b.negatives[0], (PixelPoint{1, 1}));
    ASSERT_EQ(b.positives.size(), 1u);
    EXPECT_NE(b.positives[0], b.negatives[0]);
}

TEST(BuildPrompts, RejectsBadInput) {
    PromptConfig cfg;
    cfg.workspace = 16;
    EXPECT_THROW(build_prompts(BinaryMask(16, 16), ramp(16), PrototypeVector({1.0}, 1), cfg), PromptFailure);
    EXPECT_THROW(build_prompts(BinaryMask(8, 8), ramp(16), PrototypeVector({1.0}, 1), cfg), ShapeError);
    cfg.bilateral = true;
    cfg.num_points = 3;
    EXPECT_THROW(build_prompts(square(16, 2, 2, 9, 9), ramp(16), PrototypeVector({1.0}, 1), cfg), InvalidArgument);
}

TEST(PromptConfig, AnatomyPresets) {
    EXPECT_EQ(PromptConfig::lung().num_points, 10);
    EXPECT_TRUE(PromptConfig::lung().bilateral);
    EXPECT_EQ(PromptConfig::cardiac().erode_kernel, 5);
    EXPECT_EQ(PromptConfig::spine().dilate_kernel, 3);
    EXPECT_NO_THROW(PromptConfig::dental().validate());
}
