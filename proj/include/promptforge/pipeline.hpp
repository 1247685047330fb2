#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "promptforge/embedder.hpp"
#include "promptforge/evalkit.hpp"
#include "promptforge/grid.hpp"
#include "promptforge/promptgen.hpp"
#include "promptforge/registration.hpp"
#include "promptforge/segmenter.hpp"

namespace promptforge {

struct PipelineConfig {
    int refine_iters = 1;
    int retrain_rounds = 5;
    RegistrationConfig reg = RegistrationConfig::calibrated();
    /// Optimizer steps for each warm-started retraining fit.
    int retrain_steps = 100;
    PromptConfig prompt{};
    AugmentationConfig aug{};
    std::optional<double> flow_perturb_scale;
    std::uint64_t seed = 0;
    /// Start each retraining round from the previous segmenter output instead of the re-warped mask.
    bool prompt_from_last_output = false;
    /// 0 means one worker per hardware thread.
    int workers = 0;
    int retry_attempts = 3;
    double retry_base_delay_ms = 20.0;

    void validate() const {
        if (refine_iters < 0 || retrain_rounds < 0) throw InvalidArgument("refine_iters and retrain_rounds must be >= 0");
        if (retrain_steps < 1) throw InvalidArgument("retrain_steps must be >= 1");
        if (workers < 0) throw InvalidArgument("workers must be >= 0");
        if (retry_attempts < 1) throw InvalidArgument("retry_attempts must be >= 1");
        if (retry_base_delay_ms < 0.0) throw InvalidArgument("retry_base_delay_ms must be >= 0");
        if (flow_perturb_scale && !std::isfinite(*flow_perturb_scale))
            throw InvalidArgument("flow_perturb_scale must be finite");
        prompt.validate();
        aug.validate();
    }

    bool operator==(const PipelineConfig&) const = default;
};

struct TestImage {
    std::string id;
    ImageGrid image;
    /// Evaluation-only ground truth.
    std::optional<LabelMask> gt;
};

struct PromptRecord {
    int class_id = 1;
    int stage = 0;  // 0 = initial prompt, 1..R = refinements
    std::vector<PixelPoint> positives;
    std::vector<PixelPoint> negatives;
    Box box;
    std::optional<PlacementRatio> placement;
    std::optional<double> hopkins_pos;
    std::optional<double> hopkins_neg;
};

struct RoundRecord {
    int round = 0;
    LabelMask prediction;  // image resolution
    std::vector<MetricRecord> metrics;
    /// Quality of the warped reference mask that seeded this round's prompts.
    std::vector<MetricRecord> mask_prompt_metrics;
    std::vector<PromptRecord> prompts;
    bool fallback = false;
};

struct ImageReport {
    std::string id;
    std::vector<RoundRecord> rounds;
    std::vector<std::string> issues;
    bool flagged() const { return !issues.empty(); }
};

struct RunReport {
    std::vector<ImageReport> images;
    std::vector<MeanMetrics> round_means;
    std::vector<MeanMetrics> mask_prompt_means;
    /// Mean Dice of the reference self-registration under the augmentation profile.
    std::optional<double> aug_recovery_dice;
    double seconds = 0.0;

    std::size_t flagged_count() const {
        return std::size_t(std::count_if(images.begin(), images.end(), [](const auto& i) { return i.flagged(); }));
    }
};

struct Backends {
    Embedder& embedder;
    Segmenter& segmenter;
};

/// Everything prompt generation needs about one test image and one class.
struct ImageContext {
    const ImageGrid& image;
    const SimilarityMap& similarity;
    const PrototypeVector& prototype;
};

namespace detail {

/// Retries retryable backend errors with exponential backoff; everything else propagates.
template <class F>
auto with_retry(const PipelineConfig& cfg, F&& call) -> decltype(call()) {
    for (int attempt = 1;; ++attempt) {
        try {
            return call();
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= cfg.retry_attempts)
                throw BackendError(e.what(), e.retryable(), attempt);
            const double ms = cfg.retry_base_delay_ms * double(1 << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
        }
    }
}

struct StageResult {
    PromptBundle bundle;
    BinaryMask mask;             // prompt space, postprocessed
    std::vector<double> logits;  // prompt space, chosen candidate
};

inline StageResult prompt_and_segment(const BinaryMask& candidate_ws, const ImageContext& ctx, const PipelineConfig& cfg,
                                      Segmenter& seg, int stage) {
    StageResult r;
    r.bundle = build_prompts(candidate_ws, ctx.similarity, ctx.prototype, cfg.prompt);
    const bool multimask = stage > 0;
    const SegmentationOutput out = with_retry(cfg, [&] { return seg.segment(ctx.image, r.bundle, multimask); });
    const std::size_t expected = std::size_t(out.size) * out.size;
    if (out.size != r.bundle.prompt_space || out.masks.size() != (multimask ? 3u : 1u))
        throw BackendError("segmenter output has the wrong shape", false);
    for (const auto& m : out.masks) {
        if (m.logits.size() != expected || !std::isfinite(m.score))
            throw BackendError("segmenter output has malformed candidates", false);
        for (double v : m.logits)
            if (!std::isfinite(v)) throw BackendError("segmenter returned non-finite logits", false);
    }
    const std::size_t pick = candidate_index(out, stage);
    r.mask = postprocess(threshold_logits(out.masks[pick].logits, out.size));
    r.logits = out.masks[pick].logits;
    return r;
}

}  // namespace detail

/// One refinement step: prompts rebuilt from the previous output (prompt space), multimask inference,
/// highest-score candidate.
inline std::pair<PromptBundle, BinaryMask> refine_once(const BinaryMask& prev_mask, const ImageContext& ctx,
                                                       const PipelineConfig& cfg, Segmenter& seg) {
    if (prev_mask.empty()) throw PromptFailure("refine_once: previous mask is empty");
    const BinaryMask ws = downscale_majority(prev_mask, cfg.prompt.workspace, cfg.prompt.workspace);
    auto r = detail::prompt_and_segment(ws, ctx, cfg, seg, 1);
    return {std::move(r.bundle), std::move(r.mask)};
}

namespace detail {

inline PromptRecord describe(const PromptBundle& b, int stage, const std::optional<LabelMask>& gt,
                             std::uint64_t seed) {
    PromptRecord rec;
    rec.class_id = b.class_id;
    rec.stage = stage;
    rec.positives = b.positives;
    rec.negatives = b.negatives;
    rec.box = b.box;
    if (gt) rec.placement = point_placement_ratio(b, resize_nearest(gt->class_view(b.class_id), b.prompt_space, b.prompt_space));
    auto hop = [&](const std::vector<PixelPoint>& pts, std::uint64_t s) -> std::optional<double> {
        if (pts.size() < 2) return std::nullopt;
        std::vector<Point2> p;
        for (const auto& q : pts) p.push_back({double(q.x), double(q.y)});
        return hopkins(p, double(b.prompt_space), double(b.prompt_space), hopkins_default_samples(p.size()), s);
    };
    rec.hopkins_pos = hop(b.positives, seed);
    rec.hopkins_neg = hop(b.negatives, seed + 1);
    return rec;
}

/// Per-class scores whose fusion reproduces each postprocessed class mask.
inline std::vector<double> support_logits(const StageResult& r) {
    std::vector<double> s(r.logits.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = r.mask.bits[i] ? std::max(r.logits[i], 0.0) : std::min(r.logits[i], -1e-9);
    return s;
}

class ImageRunner {
public:
    ImageRunner(const ImageGrid& ref, const LabelMask& ref_mask, const std::vector<PrototypeVector>& protos,
                const TestImage& test, const PipelineConfig& cfg, Backends backends, std::uint64_t seed)
        : ref_(ref), ref_mask_(ref_mask), protos_(protos), test_(test), cfg_(cfg), be_(backends), seed_(seed) {}

    ImageReport run() {
        ImageReport rep;
        rep.id = test_.id;
        const int classes = ref_mask_.num_classes;
        std::optional<TransformField> transform;
        std::optional<LabelMask> prediction;
        std::vector<BinaryMask> last_outputs(classes);

        // Similarity maps only depend on the image, so they are computed once.
        std::vector<SimilarityMap> sims;
        if (protos_.empty()) {
            rep.issues.push_back("reference embedding unavailable");
        } else try {
            const FeatureMap f = with_retry(cfg_, [&] { return be_.embedder.embed(test_.image); });
            for (const auto& p : protos_) sims.push_back(similarity_map(f, p, cfg_.prompt.workspace));
        } catch (const Error& e) {
            rep.issues.push_back(std::string("embedding failed: ") + e.what());
        }

        for (int round = 0; round <= cfg_.retrain_rounds; ++round) {
            RoundRecord rr;
            rr.round = round;
            try {
                // (1) registration
                RegistrationConfig rc = cfg_.reg;
                rc.seed = seed_ + std::uint64_t(round);
                if (round == 0) {
                    transform = fit_transform(ref_, test_.image, rc).transform;
                    if (cfg_.flow_perturb_scale) transform = scale_flow(*transform, *cfg_.flow_perturb_scale);
                } else {
                    rc.steps = cfg_.retrain_steps;
                    transform = fit_transform(ref_, test_.image, rc, SegTarget{ref_mask_, *prediction}, &*transform).transform;
                }
                const LabelMask warped = warp_mask(ref_mask_, *transform);
                if (test_.gt) rr.mask_prompt_metrics = iou_dice(warped, *test_.gt, test_.id, round);
                if (sims.empty()) throw PromptFailure("no similarity maps");

                // (2)-(3) prompts, inference and refinement per class
                std::vector<std::vector<double>> scores;
                for (int c = 1; c <= classes; ++c) {
                    const ImageContext ctx{test_.image, sims[c - 1], protos_[c - 1]};
                    BinaryMask cand;
                    if (round > 0 && cfg_.prompt_from_last_output)
                        cand = downscale_majority(last_outputs[c - 1], cfg_.prompt.workspace, cfg_.prompt.workspace);
                    else
                        cand = resize_nearest(warped.class_view(c), cfg_.prompt.workspace, cfg_.prompt.workspace);
                    StageResult st = prompt_and_segment(cand, ctx, cfg_, be_.segmenter, 0);
                    rr.prompts.push_back(describe(st.bundle, 0, test_.gt, seed_ ^ 0x5bd1e995ULL));
                    for (int k = 1; k <= cfg_.refine_iters; ++k) {
                        if (st.mask.empty()) throw PromptFailure("segmenter output is empty");
                        const BinaryMask ws = downscale_majority(st.mask, cfg_.prompt.workspace, cfg_.prompt.workspace);
                        st = prompt_and_segment(ws, ctx, cfg_, be_.segmenter, k);
                        rr.prompts.push_back(describe(st.bundle, k, test_.gt, seed_ ^ 0x5bd1e995ULL));
                    }
                    last_outputs[c - 1] = st.mask;
                    scores.push_back(support_logits(st));
                }

                // (4) fusion and return to image resolution
                const int P = cfg_.prompt.prompt_space;
                const LabelMask fused = fuse_multiclass(scores, P, P);
                rr.prediction = downscale_majority(fused, test_.image.height, test_.image.width);
                prediction = rr.prediction;
            } catch (const Error& e) {
                rep.issues.push_back("round " + std::to_string(round) + ": " + e.what());
                rr.fallback = true;
                rr.prompts.clear();
                if (prediction) {
                    rr.prediction = *prediction;
                } else if (transform) {
                    rr.prediction = warp_mask(ref_mask_, *transform);
                    prediction = rr.prediction;
                } else {
                    rr.prediction = LabelMask(test_.image.height, test_.image.width, classes);
                }
            }
            if (test_.gt) rr.metrics = iou_dice(rr.prediction, *test_.gt, test_.id, round);
            rep.rounds.push_back(std::move(rr));
        }
        return rep;
    }

private:
    const ImageGrid& ref_;
    const LabelMask& ref_mask_;
    const std::vector<PrototypeVector>& protos_;
    const TestImage& test_;
    const PipelineConfig& cfg_;
    Backends be_;
    std::uint64_t seed_;
};

}  // namespace detail

/// Registration, prompting, refinement and pseudolabel retraining over a test set.
inline RunReport run_oneshot(const ImageGrid& ref, const LabelMask& ref_mask, const std::vector<TestImage>& tests,
                             const PipelineConfig& cfg, Backends backends) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    require_same_shape(ref.height, ref.width, ref_mask.height, ref_mask.width, "reference image/mask");
    ref_mask.validate();
    for (int c = 1; c <= ref_mask.num_classes; ++c)
        if (ref_mask.class_view(c).empty())
            throw InvalidArgument("reference mask has no pixels of class " + std::to_string(c));
    for (const auto& t : tests)
        if (t.gt) require_same_shape(t.image.height, t.image.width, t.gt->height, t.gt->width, "test image/gt");

    // A backend outage here still lets every image fall back to its warped mask; the images get flagged.
    std::vector<PrototypeVector> protos;
    try {
        const FeatureMap ref_features = detail::with_retry(cfg, [&] { return backends.embedder.embed(ref); });
        for (int c = 1; c <= ref_mask.num_classes; ++c) protos.push_back(prototype(ref_features, ref_mask, c));
    } catch (const BackendError&) {
        protos.clear();
    } catch (const ProtocolError&) {
        protos.clear();
    }

    RunReport report;
    report.images.resize(tests.size());
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_workers =
        std::min<unsigned>(cfg.workers > 0 ? unsigned(cfg.workers) : hw, std::max<std::size_t>(1, tests.size()));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tests.size();) {
            detail::ImageRunner runner(ref, ref_mask, protos, tests[i], cfg, backends,
                                       cfg.seed * 1000003ULL + i);
            report.images[i] = runner.run();
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(work);
        work();
    }

    if (!(cfg.aug == AugmentationConfig::none()))
        report.aug_recovery_dice = augmentation_recovery_check(ref, ref_mask, cfg.aug, cfg.reg, cfg.seed);

    for (int r = 0; r <= cfg.retrain_rounds; ++r) {
        std::vector<MetricRecord> recs, prompt_recs;
        for (const auto& img : report.images) {
            for (const auto& m : img.rounds[r].metrics) recs.push_back(m);
            for (const auto& m : img.rounds[r].mask_prompt_metrics) prompt_recs.push_back(m);
        }
        report.round_means.push_back(mean_metrics(recs));
        report.mask_prompt_means.push_back(mean_metrics(prompt_recs));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace promptforge
