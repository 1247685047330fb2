#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "promptforge/grid.hpp"
#include "promptforge/promptgen.hpp"
#include "promptforge/registration.hpp"

namespace promptforge {

// ---------------------------------------------------------------------------
// Overlap metrics

struct MetricRecord {
    std::string image_id;
    int class_id = 1;
    double iou = 0.0;
    double dice = 0.0;
    int round = 0;
};

/// Per-class IoU and Dice. Classes absent from both masks are skipped.
inline std::vector<MetricRecord> iou_dice(const LabelMask& pred, const LabelMask& gt, const std::string& image_id = "",
                                          int round = 0) {
    require_same_shape(pred.height, pred.width, gt.height, gt.width, "iou_dice");
    std::vector<MetricRecord> out;
    const int classes = std::max(pred.num_classes, gt.num_classes);
    for (int c = 1; c <= classes; ++c) {
        std::size_t inter = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < pred.labels.size(); ++i) {
            const bool p = pred.labels[i] == c, g = gt.labels[i] == c;
            inter += p && g;
            a += p;
            b += g;
        }
        if (a == 0 && b == 0) continue;
        const std::size_t uni = a + b - inter;
        MetricRecord r;
        r.image_id = image_id;
        r.class_id = c;
        r.round = round;
        r.iou = double(inter) / double(uni);
        // Derived from IoU so that Dice = 2·IoU/(1+IoU) holds bit-for-bit.
        r.dice = 2.0 * r.iou / (1.0 + r.iou);
        out.push_back(r);
    }
    return out;
}

struct MeanMetrics {
    double miou = 0.0;
    double dice = 0.0;
    std::size_t count = 0;
};

/// Unweighted mean over records (each record is one image/class pair).
inline MeanMetrics mean_metrics(std::span<const MetricRecord> records) {
    MeanMetrics m;
    for (const auto& r : records) {
        m.miou += r.iou;
        m.dice += r.dice;
    }
    m.count = records.size();
    if (m.count) {
        m.miou /= double(m.count);
        m.dice /= double(m.count);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Point placement

/// Percentages (0..100). A polarity with no points reports 100.
struct PlacementRatio {
    double pos_in_gt = 100.0;
    double neg_in_bg = 100.0;
    double total = 100.0;
};

/// Share of positive prompts on ground-truth foreground and negatives on background; `gt` lives in
/// prompt space.
inline PlacementRatio point_placement_ratio(const PromptBundle& bundle, const BinaryMask& gt) {
    auto on = [&](const PixelPoint& p) {
        return p.x >= 0 && p.y >= 0 && p.x < gt.width && p.y < gt.height && gt.at(p.x, p.y);
    };
    std::size_t pos = 0, neg = 0;
    for (const auto& p : bundle.positives) pos += on(p);
    for (const auto& p : bundle.negatives) neg += !on(p);
    const std::size_t np = bundle.positives.size(), nn = bundle.negatives.size();
    PlacementRatio r;
    if (np) r.pos_in_gt = 100.0 * double(pos) / double(np);
    if (nn) r.neg_in_bg = 100.0 * double(neg) / double(nn);
    if (np + nn) r.total = 100.0 * double(pos + neg) / double(np + nn);
    return r;
}

// ---------------------------------------------------------------------------
// Hopkins statistic

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

struct Domain {
    double x0 = 0.0;
    double y0 = 0.0;
    double width = 0.0;
    double height = 0.0;
};

inline int hopkins_default_samples(std::size_t n) {
    return int(std::min<std::size_t>(n - 1, std::size_t(std::ceil(0.5 * double(n)))));
}

/// H = Σu / (Σu + Σw): u from uniform probes to the nearest point, w from sampled points to their
/// nearest other point. ≈0.5 for uniform scatter, → 1 for tight clusters. `m <= 0` selects the default.
inline double hopkins(std::span<const Point2> points, const Domain& domain, int m, std::uint64_t seed) {
    const std::size_t n = points.size();
    if (n < 2) throw InvalidArgument("hopkins: need at least 2 points");
    if (m <= 0) m = hopkins_default_samples(n);
    if (std::size_t(m) > n - 1) throw InvalidArgument("hopkins: m must be <= |points| - 1");

    std::mt19937_64 rng(seed);
    auto unit = [&] { return double(rng() >> 11) * 0x1.0p-53; };

    double sum_u = 0.0;
    for (int k = 0; k < m; ++k) {
        const double px = domain.x0 + unit() * domain.width, py = domain.y0 + unit() * domain.height;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : points) best = std::min(best, std::hypot(q.x - px, q.y - py));
        sum_u += best;
    }

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    double sum_w = 0.0;
    for (int k = 0; k < m; ++k) {
        const std::size_t j = std::size_t(k) + std::size_t(unit() * double(n - k));
        std::swap(idx[k], idx[std::min(j, n - 1)]);
        const Point2& p = points[idx[k]];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i)
            if (i != idx[k]) best = std::min(best, std::hypot(points[i].x - p.x, points[i].y - p.y));
        sum_w += best;
    }
    const double den = sum_u + sum_w;
    return den > 0.0 ? sum_u / den : 0.5;
}

inline double hopkins(std::span<const Point2> points, double width, double height, int m, std::uint64_t seed) {
    return hopkins(points, Domain{0.0, 0.0, width, height}, m, seed);
}

// ---------------------------------------------------------------------------
// Phantoms

enum class PhantomShape { Disc, EllipsePair, Ring, Blob };

inline const char* to_string(PhantomShape s) {
    switch (s) {
        case PhantomShape::Disc: return "disc";
        case PhantomShape::EllipsePair: return "ellipse-pair";
        case PhantomShape::Ring: return "ring";
        case PhantomShape::Blob: return "blob";
    }
    return "disc";
}

inline PhantomShape phantom_shape_from_string(const std::string& s) {
    if (s == "disc") return PhantomShape::Disc;
    if (s == "ellipse-pair") return PhantomShape::EllipsePair;
    if (s == "ring") return PhantomShape::Ring;
    if (s == "blob") return PhantomShape::Blob;
    throw InvalidArgument("unknown phantom shape '" + s + "'");
}

struct PhantomSpec {
    int count = 20;
    int size = 64;
    std::vector<PhantomShape> shapes{PhantomShape::Blob};
    double contrast = 1.0;
    int confuser_organs = 0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    /// Label the two components of an ellipse pair as separate classes.
    bool split_pair_classes = false;
    /// Pose jitter, in the spirit of the standard augmentation ranges.
    double max_rotation_deg = 10.0;
    double max_translation_frac = 0.1;
    Range scale{0.9, 1.1};
    /// Amplitude of the per-sample non-rigid boundary deformation.
    double deformation = 0.06;

    void validate() const {
        if (size < 32) throw InvalidArgument("phantom size must be >= 32");
        if (!(contrast > 0.0)) throw InvalidArgument("phantom contrast must be > 0");
        if (count < 1) throw InvalidArgument("phantom count must be >= 1");
        if (shapes.empty()) throw InvalidArgument("phantom spec needs at least one shape");
        if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be >= 0");
    }
};

struct PhantomSample {
    std::string id;
    ImageGrid image;
    LabelMask mask;
};

namespace detail {

struct Harmonics {
    std::array<double, 4> amp{};
    std::array<double, 4> phase{};
    double at(double theta) const {
        double r = 1.0;
        for (int k = 0; k < 4; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
        return r;
    }
};

struct Pose {
    double rot = 0.0, tx = 0.0, ty = 0.0, scale = 1.0;
};

/// Signed radial distance (pixels, positive inside) of point q (shape-local, pixel units) to a
/// star-shaped outline with semi-axes (ax, ay) modulated by harmonics.
inline double star_sdf(double qx, double qy, double ax, double ay, const Harmonics& hm) {
    const double nx = qx / ax, ny = qy / ay;
    const double rn = std::hypot(nx, ny);
    const double theta = std::atan2(ny, nx);
    const double edge = hm.at(theta);
    return (edge - rn) * std::sqrt(ax * ay);
}

inline double smooth_edge(double sdf) { return 1.0 / (1.0 + std::exp(-2.5 * sdf)); }

inline double gauss(std::mt19937_64& rng) {
    // Box–Muller keeps the stream identical across standard libraries.
    const double u1 = (double(rng() >> 11) + 1.0) * 0x1.0p-53, u2 = double(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Reproducible synthetic dataset. Sample "0000" is the reference.
inline std::vector<PhantomSample> phantom_generate(const PhantomSpec& spec) {
    spec.validate();
    std::vector<PhantomSample> out;
    out.reserve(spec.count);
    const int n = spec.size;
    const double c = (n - 1) / 2.0;
    const double bg = 0.15, body = 0.3;
    const double target = std::min(0.95, body + 0.5 * spec.contrast);

    for (int s = 0; s < spec.count; ++s) {
        std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + std::uint64_t(s) * 0xBF58476D1CE4E5B9ULL + 1);
        auto unit = [&] { return double(rng() >> 11) * 0x1.0p-53; };
        auto sym = [&](double a) { return (2.0 * unit() - 1.0) * a; };
        const PhantomShape shape = spec.shapes[std::size_t(s) % spec.shapes.size()];

        detail::Pose pose;
        pose.rot = sym(spec.max_rotation_deg) * std::numbers::pi / 180.0;
        pose.tx = sym(spec.max_translation_frac) * n;
        pose.ty = sym(spec.max_translation_frac) * n;
        pose.scale = spec.scale.min + unit() * (spec.scale.max - spec.scale.min);

        detail::Harmonics hm_a, hm_b;
        const double base_amp = shape == PhantomShape::Blob ? 0.12 : 0.0;
        for (int k = 0; k < 4; ++k) {
            // Shared low-order shape (seeded by spec only) plus per-sample deformation.
            std::mt19937_64 shape_rng(spec.seed + 97 * std::uint64_t(k) + 13);
            const double shared_amp = base_amp / (k + 1) * (0.5 + 0.5 * double(shape_rng() >> 11) * 0x1.0p-53);
            const double shared_phase = double(shape_rng() >> 11) * 0x1.0p-53 * 2 * std::numbers::pi;
            hm_a.amp[k] = shared_amp + sym(spec.deformation / (k + 1));
            hm_a.phase[k] = shared_phase + sym(0.3);
            hm_b.amp[k] = shared_amp + sym(spec.deformation / (k + 1));
            hm_b.phase[k] = shared_phase + sym(0.3);
        }

        struct Confuser {
            double x, y, r, level;
        };
        std::vector<Confuser> confusers;
        for (int k = 0; k < spec.confuser_organs; ++k) {
            const double r = n * (0.06 + 0.04 * unit());
            // Corners of the field of view, away from the target region.
            const double ang = (k + unit() * 0.5) * (2 * std::numbers::pi / std::max(1, spec.confuser_organs)) + 0.6;
            const double rad = n * (0.36 + 0.04 * unit());
            const double level = target * (1.0 + sym(0.1));
            confusers.push_back({c + rad * std::cos(ang), c + rad * std::sin(ang), r, std::clamp(level, 0.0, 1.0)});
        }
        const double body_ax = n * (0.44 + sym(0.02)), body_ay = n * (0.46 + sym(0.02));

        ImageGrid img(n, n);
        const int classes = (shape == PhantomShape::EllipsePair && spec.split_pair_classes) ? 2 : 1;
        LabelMask mask(n, n, classes);
        const double cr = std::cos(pose.rot), sr = std::sin(pose.rot);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                // Shape-local coordinates: inverse pose about the image centre.
                const double dx = x - c - pose.tx, dy = y - c - pose.ty;
                const double qx = (cr * dx + sr * dy) / pose.scale, qy = (-sr * dx + cr * dy) / pose.scale;
                double sdf = -1e9;
                int label = 0;
                switch (shape) {
                    case PhantomShape::Disc:
                        sdf = detail::star_sdf(qx, qy, 0.24 * n, 0.24 * n, hm_a);
                        label = 1;
                        break;
                    case PhantomShape::Blob:
                        sdf = detail::star_sdf(qx, qy, 0.26 * n, 0.2 * n, hm_a);
                        label = 1;
                        break;
                    case PhantomShape::Ring: {
                        const double outer = detail::star_sdf(qx, qy, 0.28 * n, 0.28 * n, hm_a);
                        const double inner = detail::star_sdf(qx, qy, 0.13 * n, 0.13 * n, hm_b);
                        sdf = std::min(outer, -inner);
                        label = 1;
                        break;
                    }
                    case PhantomShape::EllipsePair: {
                        const double l = detail::star_sdf(qx + 0.2 * n, qy, 0.11 * n, 0.26 * n, hm_a);
                        const double r = detail::star_sdf(qx - 0.2 * n, qy, 0.11 * n, 0.26 * n, hm_b);
                        sdf = std::max(l, r);
                        label = (classes == 2 && r > l) ? 2 : 1;
                        break;
                    }
                }
                const double body_sdf = (1.0 - std::hypot((x - c) / body_ax, (y - c) / body_ay)) * 0.45 * n;
                double v = bg + (body - bg) * detail::smooth_edge(body_sdf);
                for (const auto& cf : confusers) {
                    const double csdf = cf.r - std::hypot(x - cf.x, y - cf.y);
                    const double wgt = detail::smooth_edge(csdf);
                    v = v * (1 - wgt) + cf.level * wgt;
                }
                const double wgt = detail::smooth_edge(sdf);
                v = v * (1 - wgt) + target * wgt;
                img.at(x, y) = v;
                if (sdf > 0.0) mask.at(x, y) = label;
            }
        if (spec.noise_sigma > 0.0)
            for (double& v : img.values) v = std::clamp(v + spec.noise_sigma * detail::gauss(rng), 0.0, 1.0);
        char id[16];
        std::snprintf(id, sizeof id, "%04d", s);
        out.push_back({id, std::move(img), std::move(mask)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Test-sample perturbations

enum class PerturbKind : unsigned { Geometric = 1, Photometric = 2, Noise = 4, Blur = 8 };

struct PerturbKinds {
    unsigned bits = 0;
    PerturbKinds() = default;
    PerturbKinds(std::initializer_list<PerturbKind> kinds) {
        for (auto k : kinds) bits |= unsigned(k);
    }
    bool has(PerturbKind k) const { return bits & unsigned(k); }
    bool empty() const { return bits == 0; }
};

/// Defaults are the test-time perturbation family (stronger than the training augmentation).
struct PerturbConfig {
    Range rotation_deg{-20, 20};
    Range translation_frac{0.0, 0.1};
    Range scale{0.8, 1.2};
    Range shear_deg{-20, 20};
    double brightness = 0.3;
    double contrast = 0.3;
    double noise_sd = 0.1;
    double noise_prob = 0.5;
    int blur_kernel = 7;
    Range blur_sd{0.1, 2.0};
    double blur_prob = 0.5;
};

inline std::pair<ImageGrid, LabelMask> perturb_sample(const ImageGrid& image, const LabelMask& mask,
                                                      PerturbKinds kinds, std::uint64_t seed,
                                                      const PerturbConfig& cfg = {}) {
    require_same_shape(image.height, image.width, mask.height, mask.width, "perturb_sample");
    if (kinds.empty()) return {image, mask};
    std::mt19937_64 rng(seed);
    auto unit = [&] { return double(rng() >> 11) * 0x1.0p-53; };
    auto draw = [&](const Range& r) { return r.min + (r.max - r.min) * unit(); };
    ImageGrid img = image;
    LabelMask msk = mask;
    const int h = image.height, w = image.width;

    if (kinds.has(PerturbKind::Geometric)) {
        const double rot = draw(cfg.rotation_deg);
        const double tx = draw(cfg.translation_frac) * w * (unit() < 0.5 ? -1 : 1);
        const double ty = draw(cfg.translation_frac) * h * (unit() < 0.5 ? -1 : 1);
        const double sc = draw(cfg.scale), sh = draw(cfg.shear_deg);
        TransformField t(h, w);
        t.affine = invert(detail::centred_forward(rot, tx, ty, sc, sh, (w - 1) / 2.0, (h - 1) / 2.0));
        img = warp_image(img, t);
        msk = warp_mask(msk, t);
    }
    if (kinds.has(PerturbKind::Photometric)) {
        const double b = 1.0 + (2 * unit() - 1) * cfg.brightness;
        const double ct = 1.0 + (2 * unit() - 1) * cfg.contrast;
        double mean = 0.0;
        for (double& v : img.values) mean += (v = std::clamp(v * b, 0.0, 1.0));
        mean /= double(img.size());
        for (double& v : img.values) v = std::clamp(mean + ct * (v - mean), 0.0, 1.0);
    }
    if (kinds.has(PerturbKind::Noise) && cfg.noise_sd > 0.0 && unit() < cfg.noise_prob)
        for (double& v : img.values) v = std::clamp(v + cfg.noise_sd * detail::gauss(rng), 0.0, 1.0);
    if (kinds.has(PerturbKind::Blur) && unit() < cfg.blur_prob) {
        const double sd = draw(cfg.blur_sd);
        const int r = cfg.blur_kernel / 2;
        std::vector<double> k(2 * r + 1);
        double ks = 0.0;
        for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sd * sd));
        for (double& v : k) v /= ks;
        std::vector<double> tmp(img.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * img.at(std::clamp(x + i, 0, w - 1), y);
                tmp[std::size_t(y) * w + x] = s;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::size_t(std::clamp(y + i, 0, h - 1)) * w + x];
                img.at(x, y) = std::clamp(s, 0.0, 1.0);
            }
    }
    return {std::move(img), std::move(msk)};
}

}  // namespace promptforge
