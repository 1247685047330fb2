#include <gtest/gtest.h>

#include <atomic>

#include "oracles.hpp"
#include "promptforge/pipeline.hpp"

using namespace promptforge;

namespace {

struct Fixture {
    std::vector<PhantomSample> samples;
    std::vector<TestImage> tests;
    OracleSegmenter seg;

    explicit Fixture(int count, double fidelity = 0.8) : seg({.fidelity = fidelity, .seed = 7}) {
        PhantomSpec spec;
        spec.count = count + 1;
        spec.seed = 1;
        spec.noise_sigma = 0.03;
        samples = phantom_generate(spec);
        for (std::size_t i = 1; i < samples.size(); ++i) {
            tests.push_back({samples[i].id, samples[i].image, samples[i].mask});
            seg.add(samples[i].image, samples[i].mask);
        }
    }
    const ImageGrid& ref() const { return samples[0].image; }
    const LabelMask& ref_mask() const { return samples[0].mask; }
};

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.retrain_rounds = 1;
    cfg.retrain_steps = 20;
    cfg.reg.steps = 120;
    cfg.aug = AugmentationConfig::none();
    cfg.workers = 1;
    cfg.retry_base_delay_ms = 0.0;
    return cfg;
}

/// Fails the first `failures` calls with the given retryability, then delegates.
class FlakySegmenter final : public Segmenter {
public:
    FlakySegmenter(Segmenter& inner, int failures, bool retryable)
        : inner_(inner), left_(failures), retryable_(retryable) {}
    SegmentationOutput segment(const ImageGrid& image, const PromptBundle& b, bool multimask) override {
        ++calls;
        if (left_-- > 0) throw BackendError("bridge unavailable", retryable_);
        return inner_.segment(image, b, multimask);
    }
    std::string name() const override { return "flaky"; }
    std::atomic<int> calls{0};

private:
    Segmenter& inner_;
    std::atomic<int> left_;
    bool retryable_;
};

class DownEmbedder final : public Embedder {
public:
    FeatureMap embed(const ImageGrid&) override { throw BackendError("connection refused", false); }
    std::string name() const override { return "down"; }
};

}  // namespace

TEST(Pipeline, ProducesOneRecordPerRound) {
    Fixture fx(2);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    cfg.retrain_rounds = 2;
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    ASSERT_EQ(rep.images.size(), 2u);
    EXPECT_EQ(rep.round_means.size(), 3u);
    EXPECT_EQ(rep.flagged_count(), 0u);
    EXPECT_FALSE(rep.aug_recovery_dice);
    for (const auto& img : rep.images) {
        ASSERT_EQ(img.rounds.size(), 3u);
        for (const auto& r : img.rounds) {
            EXPECT_FALSE(r.fallback);
            EXPECT_EQ(r.metrics.size(), 1u);
            EXPECT_EQ(r.mask_prompt_metrics.size(), 1u);
            EXPECT_EQ(r.prompts.size(), 2u);  // initial prompt plus one refinement
            EXPECT_EQ(r.prompts[0].positives.size(), 5u);
            EXPECT_TRUE(r.prompts[0].placement);
            EXPECT_TRUE(r.prompts[0].hopkins_pos);
        }
    }
    EXPECT_GT(rep.round_means.back().dice, 0.9);
}

TEST(Pipeline, FullFidelityWithoutRefinementIsNearlyExact) {
    Fixture fx(2, 1.0);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    cfg.retrain_rounds = 0;
    cfg.refine_iters = 0;
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    EXPECT_GT(rep.round_means[0].dice, 0.98);
    EXPECT_GT(rep.round_means[0].dice, rep.mask_prompt_means[0].dice);
}

TEST(Pipeline, RetriesTransientBackendFailures) {
    Fixture fx(1);
    BuiltinEmbedder emb;
    const auto cfg = small_config();
    const auto clean = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    FlakySegmenter flaky(fx.seg, 2, true);
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, flaky});
    EXPECT_EQ(rep.flagged_count(), 0u);
    EXPECT_EQ(rep.images[0].rounds.back().prediction, clean.images[0].rounds.back().prediction);
}

TEST(Pipeline, PermanentFailureFallsBackToWarpedMask) {
    Fixture fx(1);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    FlakySegmenter dead(fx.seg, 1000, false);
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, dead});
    ASSERT_EQ(rep.flagged_count(), 1u);
    const auto& img = rep.images[0];
    EXPECT_EQ(img.issues.size(), 2u);
    for (const auto& r : img.rounds) EXPECT_TRUE(r.fallback);
    // Non-retryable errors are not retried: one call per round.
    EXPECT_EQ(dead.calls.load(), 2);
    EXPECT_EQ(img.rounds[0].metrics[0].dice, img.rounds[0].mask_prompt_metrics[0].dice);
    EXPECT_GT(img.rounds[0].metrics[0].dice, 0.8);
}

TEST(Pipeline, RetriesStopAtTheConfiguredLimit) {
    Fixture fx(1);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    cfg.retrain_rounds = 0;
    cfg.retry_attempts = 3;
    FlakySegmenter down(fx.seg, 1000, true);
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, down});
    EXPECT_EQ(rep.flagged_count(), 1u);
    EXPECT_EQ(down.calls.load(), 3);
}

TEST(Pipeline, ReferenceEmbeddingOutageFlagsEveryImage) {
    Fixture fx(2);
    DownEmbedder emb;
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, small_config(), {emb, fx.seg});
    EXPECT_EQ(rep.flagged_count(), 2u);
    for (const auto& img : rep.images) {
        EXPECT_EQ(img.issues.front(), "reference embedding unavailable");
        EXPECT_TRUE(img.rounds[0].fallback);
        EXPECT_FALSE(img.rounds[0].prediction.class_view(1).empty());
    }
}

TEST(Pipeline, WorkerCountDoesNotChangeResults) {
    Fixture fx(3);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    const auto one = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    cfg.workers = 3;
    const auto many = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    for (std::size_t i = 0; i < one.images.size(); ++i)
        for (std::size_t r = 0; r < one.images[i].rounds.size(); ++r)
            EXPECT_EQ(one.images[i].rounds[r].prediction, many.images[i].rounds[r].prediction);
}

TEST(Pipeline, RejectsBadReference) {
    Fixture fx(1);
    BuiltinEmbedder emb;
    LabelMask empty_class(64, 64, 2);
    empty_class.at(10, 10) = 1;
    EXPECT_THROW(run_oneshot(fx.ref(), empty_class, fx.tests, small_config(), {emb, fx.seg}), InvalidArgument);
    auto cfg = small_config();
    cfg.retrain_steps = 0;
    EXPECT_THROW(run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg}), InvalidArgument);
}

TEST(Pipeline, AugmentationSelfCheckIsReported) {
    Fixture fx(1);
    BuiltinEmbedder emb;
    auto cfg = small_config();
    cfg.retrain_rounds = 0;
    cfg.aug = AugmentationConfig::standard();
    const auto rep = run_oneshot(fx.ref(), fx.ref_mask(), fx.tests, cfg, {emb, fx.seg});
    ASSERT_TRUE(rep.aug_recovery_dice);
    EXPECT_GT(*rep.aug_recovery_dice, 0.8);
}
