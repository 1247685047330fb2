#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include "promptforge/grid.hpp"
#include "promptforge/losses.hpp"
#include "promptforge/optim.hpp"

namespace promptforge {

struct RegistrationConfig {
    ImageLossKind image_loss = ImageLossKind::SSIM;
    int window = 7;
    LossWeights weights{};
    int grid_size = 16;
    int steps = 300;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    bool use_affine = true;
    /// Fraction of the steps spent on the affine component alone before the flow is released.
    double affine_warmup = 0.3;
    /// Gaussian sigma (pixels) used to smooth both images at the start; annealed to 0 by the end of warmup.
    double coarse_sigma = 2.0;
    std::uint64_t seed = 0;

    /// Step size and schedule tuned for per-pair optimization on phantom-scale images.
    static RegistrationConfig calibrated() {
        RegistrationConfig c;
        c.learning_rate = 0.01;
        return c;
    }

    void validate(int h, int w) const {
        if (steps < 1) throw InvalidArgument("registration: steps must be >= 1");
        if (!(learning_rate > 0.0)) throw InvalidArgument("registration: learning_rate must be > 0");
        if (grid_size < 2 || grid_size > std::min(h, w))
            throw InvalidArgument("registration: grid_size must lie in [2, min(H,W)]");
        if (affine_warmup < 0.0 || affine_warmup > 1.0) throw InvalidArgument("registration: affine_warmup in [0,1]");
        weights.validate();
    }

    bool operator==(const RegistrationConfig&) const = default;
};

struct FitComponents {
    double image = 0.0;
    double reg = 0.0;
    double seg = 0.0;
    double total() const { return image + reg + seg; }
};

struct FitResult {
    TransformField transform;
    std::vector<double> loss_trace;
    FitComponents final_components;
    int best_step = 0;
};

/// Reference mask paired with the mask the warped reference should match.
struct SegTarget {
    const LabelMask& ref_mask;
    const LabelMask& pseudolabel;
};

inline double dice_overlap(const BinaryMask& a, const BinaryMask& b) {
    std::size_t inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] && b.bits[i];
        sa += a.bits[i];
        sb += b.bits[i];
    }
    if (sa + sb == 0) return 1.0;
    return 2.0 * double(inter) / double(sa + sb);
}

/// Mean per-class Dice over classes present in either mask.
inline double mean_class_dice(const LabelMask& a, const LabelMask& b) {
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c <= std::max(a.num_classes, b.num_classes); ++c) {
        const auto va = a.class_view(c), vb = b.class_view(c);
        if (va.empty() && vb.empty()) continue;
        sum += dice_overlap(va, vb);
        ++n;
    }
    return n == 0 ? 1.0 : sum / n;
}

inline std::vector<double> gaussian_blur(const std::vector<double>& v, int h, int w, double sigma) {
    if (sigma <= 0.0) return v;
    const int r = std::max(1, int(std::ceil(3 * sigma)));
    std::vector<double> k(2 * r + 1);
    double ks = 0.0;
    for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& x : k) x /= ks;
    std::vector<double> tmp(v.size()), out(v.size());
    // Zero padding, matching the out-of-bounds policy of the sampler.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx >= 0 && xx < w) s += k[i + r] * v[std::size_t(y) * w + xx];
            }
            tmp[std::size_t(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy >= 0 && yy < h) s += k[i + r] * tmp[std::size_t(yy) * w + x];
            }
            out[std::size_t(y) * w + x] = s;
        }
    return out;
}

namespace detail {

/// Separable bilinear interpolation from G control points onto n pixels (corners aligned).
struct AxisInterp {
    std::vector<int> lo;
    std::vector<double> frac;

    AxisInterp(int n, int g) : lo(n), frac(n) {
        for (int i = 0; i < n; ++i) {
            const double pos = n == 1 ? 0.0 : double(i) * (g - 1) / (n - 1);
            int i0 = std::min(int(std::floor(pos)), g - 2);
            lo[i] = i0;
            frac[i] = pos - i0;
        }
    }
};

/// The optimized quantities: affine residual in centred, half-extent-normalized
/// coordinates plus a coarse displacement grid in the same units.
class RegistrationProblem {
public:
    static constexpr int kAffineParams = 6;  // [M00-1, M01, M10, M11-1, t0, t1]

    RegistrationProblem(const ImageGrid& ref, const ImageGrid& target, const RegistrationConfig& cfg,
                        std::optional<SegTarget> seg, const TransformField* initial)
        : ref_(ref), target_(target), cfg_(cfg), h_(ref.height), w_(ref.width), g_(cfg.grid_size),
          ix_(w_, g_), iy_(h_, g_) {
        cx_ = (w_ - 1) / 2.0;
        cy_ = (h_ - 1) / 2.0;
        sx_ = std::max(1.0, w_ / 2.0);
        sy_ = std::max(1.0, h_ / 2.0);
        base_flow_.assign(std::size_t(h_) * w_ * 2, 0.0);
        base_affine_ = {0, 0, 0, 0, 0, 0};
        if (initial) {
            base_flow_ = initial->flow;
            base_affine_ = normalized_from_pixel(initial->affine);
        }
        if (seg) {
            for (int c = 1; c <= seg->ref_mask.num_classes; ++c) {
                auto view = seg->ref_mask.class_view(c);
                if (view.empty()) continue;
                std::vector<double> src(view.bits.begin(), view.bits.end());
                seg_sources_.push_back(std::move(src));
                seg_targets_.push_back(seg->pseudolabel.class_view(c));
            }
        }
        set_smoothing(0.0);
    }

    std::size_t num_params() const { return kAffineParams + std::size_t(g_) * g_ * 2; }

    void set_smoothing(double sigma) {
        if (sigma == sigma_ && !ref_s_.empty()) return;
        sigma_ = sigma;
        ref_s_ = gaussian_blur(ref_.values, h_, w_, sigma);
        target_s_ = ImageGrid(h_, w_);
        target_s_.values = gaussian_blur(target_.values, h_, w_, sigma);
        seg_sources_s_.clear();
        for (const auto& s : seg_sources_) seg_sources_s_.push_back(gaussian_blur(s, h_, w_, sigma));
    }

    Affine normalized_from_pixel(const Affine& a) const {
        const double m00 = a[0], m01 = a[1] * sy_ / sx_, m10 = a[3] * sx_ / sy_, m11 = a[4];
        const double t0 = (a[2] - cx_ + a[0] * cx_ + a[1] * cy_) / sx_;
        const double t1 = (a[5] - cy_ + a[3] * cx_ + a[4] * cy_) / sy_;
        return {m00 - 1.0, m01, m10, m11 - 1.0, t0, t1};
    }

    Affine pixel_affine(const std::vector<double>& p) const {
        const double m00 = 1.0 + base_affine_[0] + p[0], m01 = base_affine_[1] + p[1];
        const double m10 = base_affine_[2] + p[2], m11 = 1.0 + base_affine_[3] + p[3];
        const double t0 = base_affine_[4] + p[4], t1 = base_affine_[5] + p[5];
        const double a01 = sx_ / sy_ * m01, a10 = sy_ / sx_ * m10;
        return {m00, a01, cx_ - m00 * cx_ - a01 * cy_ + sx_ * t0,
                a10, m11, cy_ - a10 * cx_ - m11 * cy_ + sy_ * t1};
    }

    std::vector<double> dense_flow(const std::vector<double>& p) const {
        std::vector<double> flow = base_flow_;
        const double* coarse = p.data() + kAffineParams;
        for (int y = 0; y < h_; ++y) {
            const int gy = iy_.lo[y];
            const double fy = iy_.frac[y];
            for (int x = 0; x < w_; ++x) {
                const int gx = ix_.lo[x];
                const double fx = ix_.frac[x];
                for (int c = 0; c < 2; ++c) {
                    auto cp = [&](int i, int j) { return coarse[2 * (std::size_t(j) * g_ + i) + c]; };
                    const double v = (1 - fy) * ((1 - fx) * cp(gx, gy) + fx * cp(gx + 1, gy)) +
                                     fy * ((1 - fx) * cp(gx, gy + 1) + fx * cp(gx + 1, gy + 1));
                    flow[2 * (std::size_t(y) * w_ + x) + c] += v * (c == 0 ? sx_ : sy_);
                }
            }
        }
        return flow;
    }

    TransformField transform(const std::vector<double>& p) const {
        TransformField t(h_, w_);
        t.affine = pixel_affine(p);
        t.flow = dense_flow(p);
        return t;
    }

    /// Objective at `p`; accumulates the gradient into `grad` when non-null.
    FitComponents evaluate(const std::vector<double>& p, std::vector<double>* grad) const {
        const TransformField t = transform(p);
        const std::size_t n = std::size_t(h_) * w_;
        std::vector<double> px(n), py(n);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                const auto m = t.map(x, y);
                px[std::size_t(y) * w_ + x] = m[0];
                py[std::size_t(y) * w_ + x] = m[1];
            }

        // Warped reference and its spatial derivatives at the sampled locations.
        ImageGrid warped(h_, w_);
        std::vector<double> wgx(n), wgy(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = sample_bilinear_grad(ref_s_, h_, w_, px[i], py[i]);
            warped.values[i] = std::clamp(s[0], 0.0, 1.0);
            wgx[i] = s[1];
            wgy[i] = s[2];
        }

        FitComponents comp;
        const bool want = grad != nullptr;
        const auto img = image_loss(cfg_.image_loss, warped, target_s_, cfg_.window, want);
        comp.image = cfg_.weights.lambda_img * img.value;
        const auto reg = flow_reg_loss(t.flow, h_, w_, want);
        comp.reg = cfg_.weights.lambda_reg * reg.value;

        // d total / d (source coordinate) per pixel, plus direct flow gradient from the regularizer.
        std::vector<double> gpx(want ? n : 0, 0.0), gpy(want ? n : 0, 0.0);
        if (want) {
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = cfg_.weights.lambda_img * (*img.gradient)[i];
                gpx[i] = gi * wgx[i];
                gpy[i] = gi * wgy[i];
            }
        }

        if (!seg_sources_s_.empty()) {
            const double share = 1.0 / double(seg_sources_s_.size());
            for (std::size_t c = 0; c < seg_sources_s_.size(); ++c) {
                std::vector<double> prob(n), sgx(want ? n : 0), sgy(want ? n : 0);
                for (std::size_t i = 0; i < n; ++i) {
                    const auto s = sample_bilinear_grad(seg_sources_s_[c], h_, w_, px[i], py[i]);
                    prob[i] = s[0];
                    if (want) {
                        sgx[i] = s[1];
                        sgy[i] = s[2];
                    }
                }
                const auto seg = dice_ce_loss(prob, seg_targets_[c], cfg_.weights, want);
                comp.seg += share * seg.value;
                if (want)
                    for (std::size_t i = 0; i < n; ++i) {
                        const double gi = share * (*seg.gradient)[i];
                        gpx[i] += gi * sgx[i];
                        gpy[i] += gi * sgy[i];
                    }
            }
        }

        if (!want) return comp;

        std::fill(grad->begin(), grad->end(), 0.0);
        auto& g = *grad;
        if (cfg_.use_affine) {
            for (int y = 0; y < h_; ++y) {
                const double v = (y - cy_) / sy_;
                for (int x = 0; x < w_; ++x) {
                    const std::size_t i = std::size_t(y) * w_ + x;
                    const double u = (x - cx_) / sx_;
                    g[0] += gpx[i] * sx_ * u;
                    g[1] += gpx[i] * sx_ * v;
                    g[2] += gpy[i] * sy_ * u;
                    g[3] += gpy[i] * sy_ * v;
                    g[4] += gpx[i] * sx_;
                    g[5] += gpy[i] * sy_;
                }
            }
        }
        // Chain into the coarse grid (adjoint of the bilinear upsampling).
        double* gc = g.data() + kAffineParams;
        for (int y = 0; y < h_; ++y) {
            const int gy = iy_.lo[y];
            const double fy = iy_.frac[y];
            for (int x = 0; x < w_; ++x) {
                const int gx = ix_.lo[x];
                const double fx = ix_.frac[x];
                const std::size_t i = std::size_t(y) * w_ + x;
                const double dfx = (gpx[i] + cfg_.weights.lambda_reg * (*reg.gradient)[2 * i]) * sx_;
                const double dfy = (gpy[i] + cfg_.weights.lambda_reg * (*reg.gradient)[2 * i + 1]) * sy_;
                const double w00 = (1 - fy) * (1 - fx), w10 = (1 - fy) * fx, w01 = fy * (1 - fx), w11 = fy * fx;
                auto acc = [&](int ci, int cj, double wt) {
                    const std::size_t k = 2 * (std::size_t(cj) * g_ + ci);
                    gc[k] += wt * dfx;
                    gc[k + 1] += wt * dfy;
                };
                acc(gx, gy, w00);
                acc(gx + 1, gy, w10);
                acc(gx, gy + 1, w01);
                acc(gx + 1, gy + 1, w11);
            }
        }
        return comp;
    }

private:
    const ImageGrid& ref_;
    const ImageGrid& target_;
    const RegistrationConfig& cfg_;
    int h_, w_, g_;
    AxisInterp ix_, iy_;
    double cx_ = 0, cy_ = 0, sx_ = 1, sy_ = 1;
    std::vector<double> base_flow_;
    Affine base_affine_{};
    std::vector<std::vector<double>> seg_sources_;
    std::vector<BinaryMask> seg_targets_;

    double sigma_ = -1.0;
    std::vector<double> ref_s_;
    ImageGrid target_s_;
    std::vector<std::vector<double>> seg_sources_s_;
};

}  // namespace detail

/// Instance-optimizes affine + coarse flow so that warp(ref) matches `target`.
/// With `seg`, adds DiceCE between the softly warped reference mask and the pseudolabel.
/// `initial` warm-starts from an existing transform (its dense flow is kept as a fixed base).
/// Returns the best iterate under the unsmoothed objective.
inline FitResult fit_transform(const ImageGrid& ref, const ImageGrid& target, const RegistrationConfig& cfg,
                               std::optional<SegTarget> seg = std::nullopt,
                               const TransformField* initial = nullptr) {
    require_same_shape(ref.height, ref.width, target.height, target.width, "fit_transform");
    if (seg) {
        require_same_shape(ref.height, ref.width, seg->ref_mask.height, seg->ref_mask.width, "fit_transform mask");
        require_same_shape(ref.height, ref.width, seg->pseudolabel.height, seg->pseudolabel.width,
                           "fit_transform pseudolabel");
    }
    if (initial) require_same_shape(ref.height, ref.width, initial->height, initial->width, "fit_transform initial");
    cfg.validate(ref.height, ref.width);

    detail::RegistrationProblem problem(ref, target, cfg, seg, initial);
    std::vector<double> params(problem.num_params(), 0.0), grad(params.size(), 0.0);
    AdamOptions opts{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
    Adam adam(params.size(), opts);
    const int warmup = cfg.use_affine ? int(std::lround(cfg.affine_warmup * cfg.steps)) : 0;
    const bool fresh = initial == nullptr;

    FitResult result;
    result.loss_trace.reserve(cfg.steps);
    std::vector<double> best = params;
    double best_loss = std::numeric_limits<double>::infinity();

    for (int step = 0; step < cfg.steps; ++step) {
        // Score the current iterate on the true objective.
        problem.set_smoothing(0.0);
        const FitComponents truth = problem.evaluate(params, nullptr);
        const double total = truth.total();
        if (!std::isfinite(total)) throw DivergenceError(step, "non-finite registration loss");
        result.loss_trace.push_back(total);
        if (total < best_loss) {
            best_loss = total;
            best = params;
            result.final_components = truth;
            result.best_step = step;
        }
        if (step + 1 == cfg.steps) break;

        // Coarse-to-fine smoothing over the warmup, only for fresh fits.
        double sigma = 0.0;
        if (fresh && warmup > 0 && step < warmup) sigma = cfg.coarse_sigma * (1.0 - double(step) / warmup);
        problem.set_smoothing(sigma);
        problem.evaluate(params, &grad);
        for (double gv : grad)
            if (!std::isfinite(gv)) throw DivergenceError(step, "non-finite registration gradient");
        if (!cfg.use_affine)
            for (int i = 0; i < detail::RegistrationProblem::kAffineParams; ++i) grad[i] = 0.0;
        if (step < warmup)
            std::fill(grad.begin() + detail::RegistrationProblem::kAffineParams, grad.end(), 0.0);
        adam.step(params, grad);
        if (!cfg.use_affine)
            for (int i = 0; i < detail::RegistrationProblem::kAffineParams; ++i) params[i] = 0.0;
        if (step < warmup)
            std::fill(params.begin() + detail::RegistrationProblem::kAffineParams, params.end(), 0.0);
    }
    result.transform = problem.transform(best);
    return result;
}

// ---------------------------------------------------------------------------
// Augmentation

struct Range {
    double min = 0.0;
    double max = 0.0;
    bool operator==(const Range&) const = default;
};

struct AugmentationConfig {
    Range rotation_deg{-10, 10};
    Range translation_frac{0.0, 0.1};
    Range scale{0.9, 1.1};
    Range shear_deg{-10, 10};
    double brightness = 0.2;
    double contrast = 0.2;
    Range crop_scale{0.9, 1.0};
    Range crop_ratio{0.9, 1.1};
    double crop_prob = 0.5;

    /// Default profile (chest X-ray, dental, cardiac, multi-class chest settings).
    static AugmentationConfig standard() { return {}; }

    /// Broader profile used for the spine data.
    static AugmentationConfig wide() {
        AugmentationConfig c;
        c.rotation_deg = {-30, 30};
        c.translation_frac = {0.1, 0.3};
        c.scale = {0.8, 1.2};
        c.shear_deg = {-20, 20};
        c.brightness = 0.4;
        c.contrast = 0.4;
        c.crop_scale = {0.8, 1.0};
        c.crop_ratio = {0.5, 2.0};
        return c;
    }

    static AugmentationConfig none() {
        AugmentationConfig c;
        c.rotation_deg = {0, 0};
        c.translation_frac = {0, 0};
        c.scale = {1, 1};
        c.shear_deg = {0, 0};
        c.brightness = 0;
        c.contrast = 0;
        c.crop_scale = {1, 1};
        c.crop_ratio = {1, 1};
        c.crop_prob = 0;
        return c;
    }

    void validate() const {
        for (const Range& r : {rotation_deg, translation_frac, scale, shear_deg, crop_scale, crop_ratio})
            if (!(r.min <= r.max)) throw InvalidArgument("augmentation range with min > max");
        if (crop_prob < 0.0 || crop_prob > 1.0) throw InvalidArgument("crop_prob must lie in [0,1]");
        if (brightness < 0.0 || contrast < 0.0) throw InvalidArgument("jitter must be >= 0");
        if (scale.min <= 0.0 || crop_scale.min <= 0.0 || crop_ratio.min <= 0.0)
            throw InvalidArgument("scale ranges must be positive");
    }

    bool operator==(const AugmentationConfig&) const = default;
};

struct AugmentedPair {
    ImageGrid image;
    LabelMask mask;
    TransformField transform;
};

namespace detail {
inline double uniform(std::mt19937_64& rng, const Range& r) {
    const double u = double(rng() >> 11) * 0x1.0p-53;
    return r.min + (r.max - r.min) * u;
}
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

/// Forward similarity/shear transform about the image centre (maps reference coordinates
/// to augmented coordinates).
inline Affine centred_forward(double rot_deg, double tx, double ty, double scale, double shear_deg, double cx,
                              double cy) {
    const double th = rot_deg * std::numbers::pi / 180.0, sh = std::tan(shear_deg * std::numbers::pi / 180.0);
    const double c = std::cos(th), s = std::sin(th);
    // R · Shear · S
    const double l00 = scale * c, l01 = scale * (c * sh - s), l10 = scale * s, l11 = scale * (s * sh + c);
    return {l00, l01, cx + tx - l00 * cx - l01 * cy, l10, l11, cy + ty - l10 * cx - l11 * cy};
}
}  // namespace detail

/// Draws one geometric + photometric augmentation of the reference pair. The returned transform is
/// the backward map producing the augmented image from the reference.
inline AugmentedPair sample_augmentation(const ImageGrid& ref, const LabelMask& ref_mask,
                                         const AugmentationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require_same_shape(ref.height, ref.width, ref_mask.height, ref_mask.width, "sample_augmentation");
    std::mt19937_64 rng(seed);
    const int h = ref.height, w = ref.width;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

    const double rot = detail::uniform(rng, cfg.rotation_deg);
    const double txm = detail::uniform(rng, cfg.translation_frac) * w;
    const double tym = detail::uniform(rng, cfg.translation_frac) * h;
    const double txs = detail::uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double tys = detail::uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double scale = detail::uniform(rng, cfg.scale);
    const double shear = detail::uniform(rng, cfg.shear_deg);
    const double bright = 1.0 + detail::uniform(rng, {-cfg.brightness, cfg.brightness});
    const double contr = 1.0 + detail::uniform(rng, {-cfg.contrast, cfg.contrast});
    const bool crop = detail::uniform01(rng) < cfg.crop_prob;
    const double crop_area = detail::uniform(rng, cfg.crop_scale);
    const double log_ratio = detail::uniform(rng, {std::log(cfg.crop_ratio.min), std::log(cfg.crop_ratio.max)});
    const double crop_u = detail::uniform01(rng), crop_v = detail::uniform01(rng);

    Affine backward = kIdentityAffine;
    const bool geometric = rot != 0.0 || txm != 0.0 || tym != 0.0 || scale != 1.0 || shear != 0.0;
    if (geometric) backward = invert(detail::centred_forward(rot, txs * txm, tys * tym, scale, shear, cx, cy));
    if (crop) {
        const double ratio = std::exp(log_ratio);
        const double cw = std::min(double(w), std::sqrt(crop_area * ratio) * w);
        const double ch = std::min(double(h), std::sqrt(crop_area / ratio) * h);
        const double x0 = crop_u * (w - cw), y0 = crop_v * (h - ch);
        // Output pixel centre x maps to x0 + (x + 0.5)·cw/w − 0.5 inside the augmented frame.
        const Affine resize{cw / w, 0.0, x0 + 0.5 * cw / w - 0.5, 0.0, ch / h, y0 + 0.5 * ch / h - 0.5};
        if (!(cw == w && ch == h && x0 == 0.0 && y0 == 0.0)) backward = compose(backward, resize);
    }

    TransformField t(h, w);
    t.affine = backward;
    AugmentedPair out{warp_image(ref, t), warp_mask(ref_mask, t), t};

    if (bright != 1.0 || contr != 1.0) {
        double mean = 0.0;
        for (double& v : out.image.values) {
            v = std::clamp(v * bright, 0.0, 1.0);
            mean += v;
        }
        mean /= double(out.image.size());
        for (double& v : out.image.values) v = std::clamp(mean + contr * (v - mean), 0.0, 1.0);
    }
    return out;
}

/// Fits ref → augmented(ref) with the augmented mask as segmentation target and reports how well
/// the recovered transform reproduces the augmented mask (mean per-class Dice).
inline double augmentation_recovery_check(const ImageGrid& ref, const LabelMask& ref_mask,
                                          const AugmentationConfig& aug_cfg, const RegistrationConfig& reg_cfg,
                                          std::uint64_t seed) {
    const auto aug = sample_augmentation(ref, ref_mask, aug_cfg, seed);
    const auto fit = fit_transform(ref, aug.image, reg_cfg, SegTarget{ref_mask, aug.mask});
    return mean_class_dice(warp_mask(ref_mask, fit.transform), aug.mask);
}

}  // namespace promptforge
