#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "promptforge/grid.hpp"
#include "promptforge/promptgen.hpp"
#include "promptforge/registration.hpp"

namespace promptforge {

struct MaskCandidate {
    std::vector<double> logits;  // size × size, row-major
    double score = 0.0;
};

struct SegmentationOutput {
    std::vector<MaskCandidate> masks;
    int size = 0;
    bool multimask = false;
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual SegmentationOutput segment(const ImageGrid& image, const PromptBundle& bundle, bool multimask) = 0;
    virtual std::string name() const = 0;
};

/// FNV-1a over dimensions and raw sample bytes; identifies an image to test doubles.
inline std::uint64_t image_fingerprint(const ImageGrid& image) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    mix(&image.height, sizeof image.height);
    mix(&image.width, sizeof image.width);
    mix(image.values.data(), image.values.size() * sizeof(double));
    return h;
}

// ---------------------------------------------------------------------------
// Postprocessing and fusion

namespace detail {
/// Square 3×3 erosion/dilation that ignores out-of-bounds neighbours.
inline BinaryMask morph3_inbounds(const BinaryMask& m, MorphOp op) {
    const int h = m.height, w = m.width;
    const bool erode = op == MorphOp::Erode;
    auto pass = [&](const BinaryMask& in, bool horizontal) {
        BinaryMask out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool acc = erode;
                for (int k = -1; k <= 1; ++k) {
                    const int xx = horizontal ? x + k : x, yy = horizontal ? y : y + k;
                    if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                    const bool v = in.at(xx, yy);
                    if (erode ? !v : v) {
                        acc = !erode;
                        break;
                    }
                }
                out.at(x, y) = acc ? 1 : 0;
            }
        return out;
    };
    return pass(pass(m, true), false);
}
}  // namespace detail

/// Background pixels not 4-connected to the image border become foreground.
inline BinaryMask fill_holes(const BinaryMask& m) {
    const int h = m.height, w = m.width;
    std::vector<std::uint8_t> outside(m.size(), 0);
    std::vector<int> stack;
    auto seed = [&](int x, int y) {
        const std::size_t i = std::size_t(y) * w + x;
        if (!m.bits[i] && !outside[i]) {
            outside[i] = 1;
            stack.push_back(int(i));
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(x, 0);
        seed(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        seed(0, y);
        seed(w - 1, y);
    }
    while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        const int x = i % w, y = i / w;
        if (x > 0) seed(x - 1, y);
        if (x + 1 < w) seed(x + 1, y);
        if (y > 0) seed(x, y - 1);
        if (y + 1 < h) seed(x, y + 1);
    }
    BinaryMask out = m;
    for (std::size_t i = 0; i < out.size(); ++i) out.bits[i] = outside[i] ? 0 : 1;
    return out;
}

/// 3×3 opening (zero-padded) then 3×3 closing (border-neutral), then hole filling.
inline BinaryMask postprocess(const BinaryMask& mask) {
    const BinaryMask opened =
        morphology(morphology(mask, 3, MorphOp::Erode), 3, MorphOp::Dilate);
    const BinaryMask closed =
        detail::morph3_inbounds(detail::morph3_inbounds(opened, MorphOp::Dilate), MorphOp::Erode);
    return fill_holes(closed);
}

inline BinaryMask threshold_logits(const std::vector<double>& logits, int size) {
    BinaryMask m(size, size);
    for (std::size_t i = 0; i < logits.size(); ++i) m.bits[i] = logits[i] > 0.0 ? 1 : 0;
    return m;
}

inline std::size_t candidate_index(const SegmentationOutput& out, int round) {
    if (round < 0) throw InvalidArgument("select_candidate: negative round");
    if (out.masks.empty()) throw BackendError("segmenter returned no masks", false);
    std::size_t pick = 0;
    if (round > 0)
        for (std::size_t i = 1; i < out.masks.size(); ++i)
            if (out.masks[i].score > out.masks[pick].score) pick = i;
    return pick;
}

/// Stage 0 takes the single output; later stages the highest-scoring candidate (lowest index on ties).
inline BinaryMask select_candidate(const SegmentationOutput& out, int round) {
    return postprocess(threshold_logits(out.masks[candidate_index(out, round)].logits, out.size));
}

/// Label = argmax class logit where that maximum is >= 0, else background. Ties → lowest class.
inline LabelMask fuse_multiclass(const std::vector<std::vector<double>>& per_class_logits, int height, int width) {
    if (per_class_logits.empty()) throw InvalidArgument("fuse_multiclass: no classes");
    for (const auto& l : per_class_logits)
        if (l.size() != std::size_t(height) * width) throw ShapeError("fuse_multiclass: logit grid size mismatch");
    const int classes = int(per_class_logits.size());
    LabelMask out(height, width, classes);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < classes; ++c)
            if (per_class_logits[c][i] > best_v) {
                best_v = per_class_logits[c][i];
                best = c;
            }
        out.labels[i] = best_v >= 0.0 ? best + 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle backend

/// Exact squared Euclidean distance to the nearest set pixel (Felzenszwalb–Huttenlocher).
inline std::vector<double> squared_distance_to(const BinaryMask& m) {
    const int h = m.height, w = m.width;
    const double inf = 1e20;
    std::vector<double> d(m.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.bits[i] ? 0.0 : inf;
    auto line = [&](std::vector<double>& f, int n) {
        std::vector<double> out(n), z(n + 1);
        std::vector<int> v(n);
        int k = 0;
        v[0] = 0;
        z[0] = -inf;
        z[1] = inf;
        for (int q = 1; q < n; ++q) {
            double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
            while (s <= z[k]) {
                --k;
                s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = inf;
        }
        k = 0;
        for (int q = 0; q < n; ++q) {
            while (z[k + 1] < q) ++k;
            out[q] = (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
        }
        f = std::move(out);
    };
    std::vector<double> buf;
    for (int x = 0; x < w; ++x) {
        buf.resize(h);
        for (int y = 0; y < h; ++y) buf[y] = d[std::size_t(y) * w + x];
        line(buf, h);
        for (int y = 0; y < h; ++y) d[std::size_t(y) * w + x] = buf[y];
    }
    for (int y = 0; y < h; ++y) {
        buf.assign(d.begin() + std::size_t(y) * w, d.begin() + std::size_t(y + 1) * w);
        line(buf, w);
        std::copy(buf.begin(), buf.end(), d.begin() + std::size_t(y) * w);
    }
    return d;
}

struct OracleOptions {
    double fidelity = 1.0;
    std::uint64_t seed = 0;
    /// Half-width (low-res pixels) of the uncertain band around the true boundary.
    double band_width = 8.0;
    double prompt_logit = 4.0;
    double point_radius = 8.0;  // prompt-space pixels
    double mask_weight = 0.5;
    double flipped_logit = 2.0;
    /// Correlation length (low-res pixels) of the seeded flip pattern.
    double noise_scale = 12.0;

    /// Confidence away from the boundary and the range of confidences inside the band. All rise with
    /// fidelity and meet at 13 when fidelity is 1.
    double core_logit() const { return std::clamp(10.0 + 15.0 * (fidelity - 0.8), 1.0, 13.0); }
    double band_low_logit() const { return std::clamp(1.0 + 60.0 * (fidelity - 0.8), 1.0, 13.0); }
    double band_high_logit() const { return std::clamp(11.0 + 20.0 * (fidelity - 0.8), 1.0, 13.0); }
};

/// Deterministic stand-in for a promptable segmenter. It knows the ground truth of every
/// registered image but is uncertain near boundaries; prompts resolve that uncertainty.
class OracleSegmenter final : public Segmenter {
public:
    explicit OracleSegmenter(OracleOptions opts = {}) : opts_(opts) {
        if (opts.fidelity < 0.0 || opts.fidelity > 1.0) throw InvalidArgument("oracle fidelity must lie in [0,1]");
    }

    std::string name() const override { return "oracle"; }
    const OracleOptions& options() const { return opts_; }

    void add(const ImageGrid& image, const LabelMask& gt) {
        require_same_shape(image.height, image.width, gt.height, gt.width, "oracle ground truth");
        std::lock_guard lock(mu_);
        gts_[image_fingerprint(image)] = gt;
    }

    SegmentationOutput segment(const ImageGrid& image, const PromptBundle& bundle, bool multimask) override {
        bundle.validate();
        const std::uint64_t key = image_fingerprint(image);
        const auto& prior = prepared(key, bundle.class_id, bundle.workspace);
        const int L = bundle.workspace, P = bundle.prompt_space;

        // Prompt evidence on the low-res grid.
        std::vector<double> evidence(std::size_t(L) * L, 0.0);
        const double f = double(L) / P;
        const double rad = opts_.point_radius * f;
        auto stamp = [&](const PixelPoint& p, double v) {
            const double cx = (p.x + 0.5) * f - 0.5, cy = (p.y + 0.5) * f - 0.5;
            for (int y = std::max(0, int(std::floor(cy - rad))); y <= std::min(L - 1, int(std::ceil(cy + rad))); ++y)
                for (int x = std::max(0, int(std::floor(cx - rad))); x <= std::min(L - 1, int(std::ceil(cx + rad))); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) evidence[std::size_t(y) * L + x] += v;
        };
        for (const auto& p : bundle.positives) stamp(p, opts_.prompt_logit);
        for (const auto& p : bundle.negatives) stamp(p, -opts_.prompt_logit);
        const double bx0 = bundle.box.x_min * f - 0.5, by0 = bundle.box.y_min * f - 0.5;
        const double bx1 = (bundle.box.x_max + 1) * f - 0.5, by1 = (bundle.box.y_max + 1) * f - 0.5;
        for (int y = 0; y < L; ++y)
            for (int x = 0; x < L; ++x) {
                double& e = evidence[std::size_t(y) * L + x];
                if (x < bx0 || x > bx1 || y < by0 || y > by1) e -= opts_.prompt_logit;
                e += opts_.mask_weight * bundle.mask_logits[std::size_t(y) * L + x];
            }

        SegmentationOutput out;
        out.size = P;
        out.multimask = multimask;
        const std::vector<double> widths =
            multimask ? std::vector<double>{0.5, 1.0, 1.5} : std::vector<double>{1.0};
        for (double wf : widths) {
            std::vector<double> low(evidence.size());
            for (std::size_t i = 0; i < low.size(); ++i) low[i] = base_logit(prior, i, wf) + evidence[i];
            MaskCandidate cand;
            cand.score = self_consistency(low, bundle.mask_logits);
            cand.logits = resize_bilinear(low, L, L, P, P);
            out.masks.push_back(std::move(cand));
        }
        return out;
    }

private:
    struct Prior {
        std::vector<std::int8_t> sign;   // +1 inside ground truth, −1 outside
        std::vector<double> distance;    // to the ground-truth boundary, low-res pixels
        std::vector<double> noise_rank;  // rank of the seeded flip field among band pixels, in [0,1)
    };

    double base_logit(const Prior& p, std::size_t i, double width_factor) const {
        const double band = opts_.band_width * width_factor;
        const double s = p.sign[i];
        if (p.distance[i] > band) return s * opts_.core_logit();
        const double cut = 1.0 - opts_.fidelity;
        if (p.noise_rank[i] < cut) return -s * opts_.flipped_logit;
        // Pixels ranked just above the flip threshold are the least confident.
        const double t = opts_.fidelity > 0.0 ? (p.noise_rank[i] - cut) / opts_.fidelity : 1.0;
        return s * (opts_.band_low_logit() + (opts_.band_high_logit() - opts_.band_low_logit()) * t);
    }

    /// Soft Dice between the candidate and the mask prompt; neutral prompts score every candidate alike.
    static double self_consistency(const std::vector<double>& logits, const std::vector<double>& mask_logits) {
        double inter = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            const double q = 1.0 / (1.0 + std::exp(-mask_logits[i]));
            inter += p * q;
            a += p;
            b += q;
        }
        return (2 * inter + 1) / (a + b + 1);
    }

    const Prior& prepared(std::uint64_t key, int class_id, int L) {
        std::lock_guard lock(mu_);
        const auto cache_key = std::make_tuple(key, class_id, L);
        if (auto it = priors_.find(cache_key); it != priors_.end()) return *it->second;
        const auto gt_it = gts_.find(key);
        if (gt_it == gts_.end()) throw BackendError("oracle has no ground truth for this image", false);

        const BinaryMask gt = resize_nearest(gt_it->second.class_view(class_id), L, L);
        BinaryMask inv = gt;
        for (auto& b : inv.bits) b = !b;
        const auto d_to_fg = squared_distance_to(gt), d_to_bg = squared_distance_to(inv);
        auto prior = std::make_unique<Prior>();
        prior->sign.resize(gt.size());
        prior->distance.resize(gt.size());
        for (std::size_t i = 0; i < gt.size(); ++i) {
            prior->sign[i] = gt.bits[i] ? 1 : -1;
            // Distance to the nearest pixel of the other side, shifted to the pixel boundary.
            prior->distance[i] = std::sqrt(gt.bits[i] ? d_to_bg[i] : d_to_fg[i]) - 0.5;
        }

        // Smooth seeded field: blurred white noise, ranked over the widest band so flip sets nest.
        std::mt19937_64 rng(opts_.seed ^ (key * 0x9E3779B97F4A7C15ULL) ^ std::uint64_t(class_id) * 0xD1B54A32D192ED03ULL);
        std::vector<double> white(gt.size());
        for (double& v : white) v = double(rng() >> 11) * 0x1.0p-53 - 0.5;
        const auto field = gaussian_blur(white, L, L, opts_.noise_scale);
        std::vector<std::size_t> band;
        for (std::size_t i = 0; i < gt.size(); ++i)
            if (prior->distance[i] <= 1.5 * opts_.band_width) band.push_back(i);
        std::stable_sort(band.begin(), band.end(), [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
        prior->noise_rank.assign(gt.size(), 1.0);
        for (std::size_t r = 0; r < band.size(); ++r) prior->noise_rank[band[r]] = double(r) / double(band.size());

        auto [it, _] = priors_.emplace(cache_key, std::move(prior));
        return *it->second;
    }

    OracleOptions opts_;
    std::mutex mu_;
    std::map<std::uint64_t, LabelMask> gts_;
    std::map<std::tuple<std::uint64_t, int, int>, std::unique_ptr<Prior>> priors_;
};

}  // namespace promptforge
