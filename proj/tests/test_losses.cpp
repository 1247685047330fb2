#include <gtest/gtest.h>

#include "oracles.hpp"
#include "promptforge/optim.hpp"

using namespace promptforge;

namespace {

ImageGrid smooth_random(std::mt19937_64& rng, int n) {
    // Values kept away from 0 and 1 so perturbations stay inside the valid range.
    ImageGrid img(n, n);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    for (double& v : img.values) v = u(rng);
    return img;
}

}  // namespace

TEST(Losses, SsimMatchesDirectWindowSums) {
    std::mt19937_64 rng(1);
    for (int k : {3, 7}) {
        const auto a = smooth_random(rng, 16), b = smooth_random(rng, 16);
        EXPECT_NEAR(ssim_loss(a, b, k).value, oracle::ssim_loss(a, b, k), 1e-12);
        EXPECT_NEAR(ssim_loss(a, a, k).value, 0.0, 1e-12);
    }
}

TEST(Losses, NccMatchesDirectWindowSums) {
    std::mt19937_64 rng(2);
    for (int k : {3, 9}) {
        const auto a = smooth_random(rng, 16), b = smooth_random(rng, 16);
        EXPECT_NEAR(ncc_loss(a, b, k).value, oracle::ncc_loss(a, b, k), 1e-12);
        EXPECT_NEAR(ncc_loss(a, a, k).value, 0.0, 1e-3);  // only the stabilizer remains
    }
}

TEST(Losses, NccIsInvariantToAffineIntensityChange) {
    std::mt19937_64 rng(3);
    const auto a = smooth_random(rng, 16);
    ImageGrid b = a;
    for (double& v : b.values) v = 0.05 + 0.5 * v;
    EXPECT_NEAR(ncc_loss(a, b, 9).value, 0.0, 1e-4);
}

TEST(Losses, WindowValidation) {
    const ImageGrid a(8, 8, 0.5);
    EXPECT_THROW(ssim_loss(a, a, 4), InvalidArgument);
    EXPECT_THROW(ncc_loss(a, a, 9), InvalidArgument);
    EXPECT_THROW(ssim_loss(a, ImageGrid(8, 9, 0.5), 3), ShapeError);
}

TEST(Losses, ImageGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const auto a = smooth_random(rng, 16), b = smooth_random(rng, 16);
        for (auto kind : {ImageLossKind::SSIM, ImageLossKind::NCC}) {
            const int k = kind == ImageLossKind::SSIM ? 7 : 9;
            const auto g = *image_loss(kind, a, b, k).gradient;
            const auto f = [&](const std::vector<double>& v) { return image_loss(kind, ImageGrid(16, 16, v), b, k, false).value; };
            EXPECT_LT(oracle::gradient_error(f, a.values, g, 1e-5), 1e-4);
        }
    }
}

TEST(Losses, FlowRegValueAndGradient) {
    // Single horizontal step of 1 in dx on a 1×2 grid: one nonzero difference over 2·(1·1 + 0·2) slots.
    EXPECT_DOUBLE_EQ(flow_reg_loss(std::vector<double>{0, 0, 1, 0}, 1, 2).value, 0.5);
    EXPECT_DOUBLE_EQ(flow_reg_loss(std::vector<double>(2 * 25, 3.0), 5, 5).value, 0.0);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2, 2);
    std::vector<double> flow(2 * 16 * 16);
    for (double& v : flow) v = u(rng);
    const auto g = *flow_reg_loss(flow, 16, 16).gradient;
    const auto f = [&](const std::vector<double>& v) { return flow_reg_loss(v, 16, 16, false).value; };
    EXPECT_LT(oracle::gradient_error(f, flow, g, 1e-4), 1e-6);
}

TEST(Losses, DiceCeValueAndGradient) {
    BinaryMask t(1, 2);
    t.bits = {1, 0};
    // Perfect prediction: what remains comes from clamping the probabilities.
    const double v = dice_ce_loss({1.0, 0.0}, t, {}).value;
    const double e = kProbClamp;
    const double dice = 1.0 - (2 * (1 - e) + 1) / ((1 - e) + e + 1 + 1);
    EXPECT_NEAR(v, dice + 0.001 * -std::log(1 - e), 1e-15);
    EXPECT_NEAR(dice_ce_loss({0.0, 1.0}, t, {}).value, 1.0 - (2 * e + 1) / 3.0 + 0.001 * -std::log(e), 1e-12);

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const BinaryMask target = oracle::random_mask(rng, 16, 16, 0.3);
    std::vector<double> p(256);
    for (double& x : p) x = u(rng);
    const auto g = *dice_ce_loss(p, target, {}).gradient;
    const auto f = [&](const std::vector<double>& q) { return dice_ce_loss(q, target, {}, false).value; };
    EXPECT_LT(oracle::gradient_error(f, p, g, 1e-6), 1e-4);
}

TEST(Losses, DiceCeGradientIsZeroWhereClamped) {
    BinaryMask t(1, 2);
    t.bits = {1, 0};
    const auto g = *dice_ce_loss({0.0, 0.5}, t, {}).gradient;
    EXPECT_EQ(g[0], 0.0);
    EXPECT_NE(g[1], 0.0);
}

TEST(LossWeights, RejectNegativeOrNonFinite) {
    LossWeights w;
    w.lambda_reg = -1;
    EXPECT_THROW(w.validate(), InvalidArgument);
    w.lambda_reg = NAN;
    EXPECT_THROW(w.validate(), InvalidArgument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Adam opt(2, {.learning_rate = 0.1});
    std::vector<double> p{1.0, -1.0};
    opt.step(p, std::vector<double>{3.0, -0.5});
    EXPECT_NEAR(p[0], 0.9, 1e-6);
    EXPECT_NEAR(p[1], -0.9, 1e-6);
}

TEST(Adam, MinimizesQuadratic) {
    Adam opt(1, {.learning_rate = 0.05});
    std::vector<double> p{4.0};
    for (int i = 0; i < 2000; ++i) opt.step(p, std::vector<double>{2 * (p[0] - 1.5)});
    EXPECT_NEAR(p[0], 1.5, 1e-3);
}

TEST(Adam, DecoupledWeightDecayShrinksWithoutGradient) {
    Adam opt(1, {.learning_rate = 0.1, .weight_decay = 0.5});
    std::vector<double> p{2.0};
    opt.step(p, std::vector<double>{0.0});
    EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}
