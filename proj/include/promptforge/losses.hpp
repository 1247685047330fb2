#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "promptforge/grid.hpp"

namespace promptforge {

struct LossValue {
    double value = 0.0;
    std::optional<std::vector<double>> gradient;
};

/// Objective coefficients. Defaults follow the chest X-ray column of the published settings.
struct LossWeights {
    double lambda_img = 1.0;
    double lambda_reg = 0.6;
    double lambda_aug = 0.1;
    double dice_coeff = 1.0;
    double ce_coeff = 0.001;

    void validate() const {
        for (double v : {lambda_img, lambda_reg, lambda_aug, dice_coeff, ce_coeff})
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("loss weights must be finite and >= 0");
    }
    bool operator==(const LossWeights&) const = default;
};

enum class ImageLossKind { SSIM, NCC };

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kNccEps = 1e-5;
inline constexpr double kProbClamp = 1e-7;

namespace detail {

/// k×k window sums at every valid top-left position; result is (h-k+1)×(w-k+1).
inline std::vector<double> box_valid(const std::vector<double>& v, int h, int w, int k) {
    const int sw = w + 1;
    std::vector<double> sat(std::size_t(h + 1) * sw, 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        for (int x = 0; x < w; ++x) {
            row += v[std::size_t(y) * w + x];
            sat[std::size_t(y + 1) * sw + x + 1] = sat[std::size_t(y) * sw + x + 1] + row;
        }
    }
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> out(std::size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out[std::size_t(y) * ow + x] = sat[std::size_t(y + k) * sw + x + k] - sat[std::size_t(y) * sw + x + k] -
                                          sat[std::size_t(y + k) * sw + x] + sat[std::size_t(y) * sw + x];
    return out;
}

/// Adjoint of box_valid: each pixel receives the sum of the window values covering it.
inline std::vector<double> box_spread(const std::vector<double>& g, int h, int w, int k) {
    const int oh = h - k + 1, ow = w - k + 1;
    const int sw = ow + 1;
    std::vector<double> sat(std::size_t(oh + 1) * sw, 0.0);
    for (int y = 0; y < oh; ++y) {
        double row = 0.0;
        for (int x = 0; x < ow; ++x) {
            row += g[std::size_t(y) * ow + x];
            sat[std::size_t(y + 1) * sw + x + 1] = sat[std::size_t(y) * sw + x + 1] + row;
        }
    }
    std::vector<double> out(std::size_t(h) * w);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - k + 1), y1 = std::min(oh - 1, y) + 1;
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - k + 1), x1 = std::min(ow - 1, x) + 1;
            out[std::size_t(y) * w + x] = sat[std::size_t(y1) * sw + x1] - sat[std::size_t(y0) * sw + x1] -
                                         sat[std::size_t(y1) * sw + x0] + sat[std::size_t(y0) * sw + x0];
        }
    }
    return out;
}

struct WindowStats {
    std::vector<double> mean_a, mean_b, var_a, var_b, cov;  // population moments per window
    int count = 0;
};

inline WindowStats window_stats(const ImageGrid& a, const ImageGrid& b, int k) {
    const int h = a.height, w = a.width;
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a.values[i] * a.values[i];
        bb[i] = b.values[i] * b.values[i];
        ab[i] = a.values[i] * b.values[i];
    }
    const double n = double(k) * k;
    WindowStats s;
    s.mean_a = box_valid(a.values, h, w, k);
    s.mean_b = box_valid(b.values, h, w, k);
    s.var_a = box_valid(aa, h, w, k);
    s.var_b = box_valid(bb, h, w, k);
    s.cov = box_valid(ab, h, w, k);
    s.count = int(s.mean_a.size());
    for (int i = 0; i < s.count; ++i) {
        s.mean_a[i] /= n;
        s.mean_b[i] /= n;
        s.var_a[i] = s.var_a[i] / n - s.mean_a[i] * s.mean_a[i];
        s.var_b[i] = s.var_b[i] / n - s.mean_b[i] * s.mean_b[i];
        s.cov[i] = s.cov[i] / n - s.mean_a[i] * s.mean_b[i];
    }
    return s;
}

inline void check_window_pair(const ImageGrid& a, const ImageGrid& b, int window, const char* what) {
    require_same_shape(a.height, a.width, b.height, b.width, what);
    if (window < 3 || window % 2 == 0)
        throw InvalidArgument(std::string(what) + ": window must be odd and >= 3");
    if (window > std::min(a.height, a.width))
        throw InvalidArgument(std::string(what) + ": window larger than image");
}

}  // namespace detail

/// 1 − mean local SSIM over all fully-contained uniform windows. Gradient is with respect to `a`.
inline LossValue ssim_loss(const ImageGrid& a, const ImageGrid& b, int window, bool with_gradient = true) {
    detail::check_window_pair(a, b, window, "ssim_loss");
    const auto s = detail::window_stats(a, b, window);
    const double c1 = kSsimC1, c2 = kSsimC2;
    double total = 0.0;
    std::vector<double> d_mu(with_gradient ? s.count : 0), d_var(d_mu.size()), d_cov(d_mu.size());
    for (int i = 0; i < s.count; ++i) {
        const double ma = s.mean_a[i], mb = s.mean_b[i];
        const double a1 = 2 * ma * mb + c1, a2 = 2 * s.cov[i] + c2;
        const double b1 = ma * ma + mb * mb + c1, b2 = s.var_a[i] + s.var_b[i] + c2;
        const double ssim = a1 * a2 / (b1 * b2);
        total += ssim;
        if (with_gradient) {
            d_mu[i] = 2 * mb * a2 / (b1 * b2) - ssim * 2 * ma / b1;
            d_var[i] = -ssim / b2;
            d_cov[i] = 2 * a1 / (b1 * b2);
        }
    }
    LossValue out;
    out.value = 1.0 - total / s.count;
    if (!with_gradient) return out;

    // d(window stat)/d a_p for p in the window: mu: 1/n, var: 2(a_p - mu_a)/n, cov: (b_p - mu_b)/n.
    const int h = a.height, w = a.width;
    std::vector<double> k0(s.count), k1(s.count), k2(s.count);
    for (int i = 0; i < s.count; ++i) {
        k0[i] = d_mu[i] - 2 * d_var[i] * s.mean_a[i] - d_cov[i] * s.mean_b[i];
        k1[i] = 2 * d_var[i];
        k2[i] = d_cov[i];
    }
    const auto s0 = detail::box_spread(k0, h, w, window);
    const auto s1 = detail::box_spread(k1, h, w, window);
    const auto s2 = detail::box_spread(k2, h, w, window);
    const double scale = -1.0 / (double(s.count) * window * window);
    std::vector<double> g(a.size());
    for (std::size_t p = 0; p < g.size(); ++p) g[p] = scale * (s0[p] + s1[p] * a.values[p] + s2[p] * b.values[p]);
    out.gradient = std::move(g);
    return out;
}

/// 1 − mean squared local normalized cross-correlation. Window moments are sums (not means)
/// so the stabilizer is negligible wherever the window has texture.
inline LossValue ncc_loss(const ImageGrid& a, const ImageGrid& b, int window, bool with_gradient = true) {
    detail::check_window_pair(a, b, window, "ncc_loss");
    const auto s = detail::window_stats(a, b, window);
    const double n = double(window) * window;
    double total = 0.0;
    std::vector<double> d_cross(with_gradient ? s.count : 0), d_va(d_cross.size());
    for (int i = 0; i < s.count; ++i) {
        const double cross = n * s.cov[i], va = n * s.var_a[i], vb = n * s.var_b[i];
        const double den = va * vb + kNccEps;
        const double cc = cross * cross / den;
        total += cc;
        if (with_gradient) {
            d_cross[i] = 2 * cross / den;
            d_va[i] = -cc * vb / den;
        }
    }
    LossValue out;
    out.value = 1.0 - total / s.count;
    if (!with_gradient) return out;

    // d cross/d a_p = b_p - mu_b ; d va/d a_p = 2 (a_p - mu_a)
    const int h = a.height, w = a.width;
    std::vector<double> k0(s.count), k1(s.count), k2(s.count);
    for (int i = 0; i < s.count; ++i) {
        k0[i] = -d_cross[i] * s.mean_b[i] - 2 * d_va[i] * s.mean_a[i];
        k1[i] = 2 * d_va[i];
        k2[i] = d_cross[i];
    }
    const auto s0 = detail::box_spread(k0, h, w, window);
    const auto s1 = detail::box_spread(k1, h, w, window);
    const auto s2 = detail::box_spread(k2, h, w, window);
    const double scale = -1.0 / s.count;
    std::vector<double> g(a.size());
    for (std::size_t p = 0; p < g.size(); ++p) g[p] = scale * (s0[p] + s1[p] * a.values[p] + s2[p] * b.values[p]);
    out.gradient = std::move(g);
    return out;
}

inline LossValue image_loss(ImageLossKind kind, const ImageGrid& a, const ImageGrid& b, int window,
                            bool with_gradient = true) {
    return kind == ImageLossKind::SSIM ? ssim_loss(a, b, window, with_gradient)
                                       : ncc_loss(a, b, window, with_gradient);
}

/// Mean of squared forward differences of both flow channels, over every valid
/// horizontal and vertical difference slot. The affine part is not penalized.
inline LossValue flow_reg_loss(const std::vector<double>& flow, int h, int w, bool with_gradient = true) {
    if (flow.size() != std::size_t(h) * w * 2) throw ShapeError("flow_reg_loss: flow size mismatch");
    const double slots = 2.0 * (double(h) * (w - 1) + double(h - 1) * w);
    LossValue out;
    if (slots <= 0) {
        if (with_gradient) out.gradient = std::vector<double>(flow.size(), 0.0);
        return out;
    }
    std::vector<double> g(with_gradient ? flow.size() : 0, 0.0);
    double total = 0.0;
    auto at = [&](int x, int y, int c) { return 2 * (std::size_t(y) * w + x) + c; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 2; ++c) {
                if (x + 1 < w) {
                    const double d = flow[at(x + 1, y, c)] - flow[at(x, y, c)];
                    total += d * d;
                    if (with_gradient) {
                        g[at(x + 1, y, c)] += 2 * d / slots;
                        g[at(x, y, c)] -= 2 * d / slots;
                    }
                }
                if (y + 1 < h) {
                    const double d = flow[at(x, y + 1, c)] - flow[at(x, y, c)];
                    total += d * d;
                    if (with_gradient) {
                        g[at(x, y + 1, c)] += 2 * d / slots;
                        g[at(x, y, c)] -= 2 * d / slots;
                    }
                }
            }
    out.value = total / slots;
    if (with_gradient) out.gradient = std::move(g);
    return out;
}

inline LossValue flow_reg_loss(const TransformField& t, bool with_gradient = true) {
    return flow_reg_loss(t.flow, t.height, t.width, with_gradient);
}

/// dice_coeff·(1 − soft Dice, smoothing 1) + ce_coeff·mean BCE. `pred` holds foreground probabilities.
inline LossValue dice_ce_loss(const std::vector<double>& pred, const BinaryMask& target, const LossWeights& w,
                              bool with_gradient = true) {
    if (pred.size() != target.size()) throw ShapeError("dice_ce_loss: prediction/target size mismatch");
    const std::size_t n = pred.size();
    double inter = 0.0, psum = 0.0, tsum = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
        const double t = target.bits[i];
        inter += p * t;
        psum += p;
        tsum += t;
        ce -= t * std::log(p) + (1 - t) * std::log(1 - p);
    }
    const double num = 2 * inter + 1.0, den = psum + tsum + 1.0;
    LossValue out;
    out.value = w.dice_coeff * (1.0 - num / den) + w.ce_coeff * ce / double(n);
    if (!with_gradient) return out;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = pred[i];
        if (raw < kProbClamp || raw > 1.0 - kProbClamp) {
            g[i] = 0.0;
            continue;
        }
        const double t = target.bits[i];
        const double d_dice = -(2 * t * den - num) / (den * den);
        const double d_ce = (-t / raw + (1 - t) / (1 - raw)) / double(n);
        g[i] = w.dice_coeff * d_dice + w.ce_coeff * d_ce;
    }
    out.gradient = std::move(g);
    return out;
}

}  // namespace promptforge
