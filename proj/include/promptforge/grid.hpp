#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "promptforge/error.hpp"

namespace promptforge {

/// H×W grayscale raster, row-major, intensities in [0,1].
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ImageGrid() = default;
    ImageGrid(int h, int w, double fill = 0.0) : height(h), width(w), values(std::size_t(h) * w, fill) {
        if (h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
    }
    ImageGrid(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
        if (h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
        if (values.size() != std::size_t(h) * w) throw ShapeError("image value count != height*width");
        validate();
    }

    std::size_t size() const noexcept { return values.size(); }
    double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
    double& at(int x, int y) { return values[std::size_t(y) * width + x]; }

    void validate() const {
        for (double v : values)
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw InvalidArgument("image value outside [0,1]");
    }

    bool operator==(const ImageGrid&) const = default;
};

/// H×W single-class mask (0/1).
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), bits(std::size_t(h) * w, fill) {}

    std::size_t size() const noexcept { return bits.size(); }
    std::uint8_t at(int x, int y) const { return bits[std::size_t(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return bits[std::size_t(y) * width + x]; }
    std::size_t count() const { return std::size_t(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
    bool empty() const { return count() == 0; }

    bool operator==(const BinaryMask&) const = default;
};

/// H×W categorical labels, 0 = background, 1..num_classes foreground.
struct LabelMask {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    int num_classes = 1;

    LabelMask() = default;
    LabelMask(int h, int w, int classes) : height(h), width(w), labels(std::size_t(h) * w, 0), num_classes(classes) {
        if (h <= 0 || w <= 0) throw ShapeError("mask dimensions must be positive");
    }
    LabelMask(int h, int w, std::vector<int> l, int classes)
        : height(h), width(w), labels(std::move(l)), num_classes(classes) {
        if (labels.size() != std::size_t(h) * w) throw ShapeError("label count != height*width");
        validate();
    }

    std::size_t size() const noexcept { return labels.size(); }
    int at(int x, int y) const { return labels[std::size_t(y) * width + x]; }
    int& at(int x, int y) { return labels[std::size_t(y) * width + x]; }

    void validate() const {
        for (int v : labels)
            if (v < 0 || v > num_classes) throw InvalidArgument("label outside 0..num_classes");
    }

    BinaryMask class_view(int class_id) const {
        BinaryMask m(height, width);
        for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] == class_id ? 1 : 0;
        return m;
    }

    std::set<int> label_set() const { return {labels.begin(), labels.end()}; }

    static LabelMask from_binary(const BinaryMask& m, int class_id = 1, int num_classes = 1) {
        LabelMask out(m.height, m.width, num_classes);
        for (std::size_t i = 0; i < m.bits.size(); ++i) out.labels[i] = m.bits[i] ? class_id : 0;
        return out;
    }

    bool operator==(const LabelMask&) const = default;
};

/// Row-major [a11, a12, tx, a21, a22, ty]; maps output pixel (x,y) to a source location.
using Affine = std::array<double, 6>;

inline constexpr Affine kIdentityAffine{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

inline Affine compose(const Affine& outer, const Affine& inner) {
    // outer(inner(p))
    return {outer[0] * inner[0] + outer[1] * inner[3],
            outer[0] * inner[1] + outer[1] * inner[4],
            outer[0] * inner[2] + outer[1] * inner[5] + outer[2],
            outer[3] * inner[0] + outer[4] * inner[3],
            outer[3] * inner[1] + outer[4] * inner[4],
            outer[3] * inner[2] + outer[4] * inner[5] + outer[5]};
}

inline Affine invert(const Affine& a) {
    const double det = a[0] * a[4] - a[1] * a[3];
    if (std::abs(det) < 1e-12) throw InvalidArgument("singular affine");
    const double i0 = a[4] / det, i1 = -a[1] / det, i3 = -a[3] / det, i4 = a[0] / det;
    return {i0, i1, -(i0 * a[2] + i1 * a[5]), i3, i4, -(i3 * a[2] + i4 * a[5])};
}

/// Backward-warp transform: output(x) = src(affine(x) + flow(x)).
struct TransformField {
    Affine affine = kIdentityAffine;
    int height = 0;
    int width = 0;
    std::vector<double> flow;  // (dx, dy) interleaved per pixel

    TransformField() = default;
    TransformField(int h, int w) : height(h), width(w), flow(std::size_t(h) * w * 2, 0.0) {}

    static TransformField identity(int h, int w) { return TransformField(h, w); }

    double dx(int x, int y) const { return flow[2 * (std::size_t(y) * width + x)]; }
    double dy(int x, int y) const { return flow[2 * (std::size_t(y) * width + x) + 1]; }

    std::array<double, 2> map(int x, int y) const {
        const std::size_t i = 2 * (std::size_t(y) * width + x);
        return {affine[0] * x + affine[1] * y + affine[2] + flow[i],
                affine[3] * x + affine[4] * y + affine[5] + flow[i + 1]};
    }

    bool is_identity() const {
        if (affine != kIdentityAffine) return false;
        return std::all_of(flow.begin(), flow.end(), [](double v) { return v == 0.0; });
    }

    bool finite() const {
        return std::all_of(affine.begin(), affine.end(), [](double v) { return std::isfinite(v); }) &&
               std::all_of(flow.begin(), flow.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const TransformField&) const = default;
};

/// Bilinear sample with zero padding outside the raster.
inline double sample_bilinear(const std::vector<double>& v, int h, int w, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = int(fx), y0 = int(fy);
    const double ax = x - fx, ay = y - fy;
    auto read = [&](int xx, int yy) -> double {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
        return v[std::size_t(yy) * w + xx];
    };
    return (1 - ax) * (1 - ay) * read(x0, y0) + ax * (1 - ay) * read(x0 + 1, y0) +
           (1 - ax) * ay * read(x0, y0 + 1) + ax * ay * read(x0 + 1, y0 + 1);
}

/// Bilinear sample plus its partial derivatives with respect to x and y.
inline std::array<double, 3> sample_bilinear_grad(const std::vector<double>& v, int h, int w, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = int(fx), y0 = int(fy);
    const double ax = x - fx, ay = y - fy;
    auto read = [&](int xx, int yy) -> double {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
        return v[std::size_t(yy) * w + xx];
    };
    const double v00 = read(x0, y0), v10 = read(x0 + 1, y0), v01 = read(x0, y0 + 1), v11 = read(x0 + 1, y0 + 1);
    const double val = (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 + (1 - ax) * ay * v01 + ax * ay * v11;
    const double gx = (1 - ay) * (v10 - v00) + ay * (v11 - v01);
    const double gy = (1 - ax) * (v01 - v00) + ax * (v11 - v10);
    return {val, gx, gy};
}

inline void require_same_shape(int h1, int w1, int h2, int w2, const char* what) {
    if (h1 != h2 || w1 != w2)
        throw ShapeError(std::string(what) + ": " + std::to_string(h1) + "x" + std::to_string(w1) + " vs " +
                         std::to_string(h2) + "x" + std::to_string(w2));
}

inline ImageGrid warp_image(const ImageGrid& src, const TransformField& t) {
    require_same_shape(src.height, src.width, t.height, t.width, "warp_image");
    ImageGrid out(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const auto p = t.map(x, y);
            out.at(x, y) = std::clamp(sample_bilinear(src.values, src.height, src.width, p[0], p[1]), 0.0, 1.0);
        }
    return out;
}

inline int round_half_up(double v) { return int(std::floor(v + 0.5)); }

/// Nearest-neighbour warp; labels are categorical so they are never blended.
inline LabelMask warp_mask(const LabelMask& src, const TransformField& t) {
    require_same_shape(src.height, src.width, t.height, t.width, "warp_mask");
    LabelMask out(src.height, src.width, src.num_classes);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const auto p = t.map(x, y);
            if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
            const int sx = round_half_up(p[0]), sy = round_half_up(p[1]);
            if (sx < 0 || sy < 0 || sx >= src.width || sy >= src.height) continue;
            out.at(x, y) = src.at(sx, sy);
        }
    return out;
}

/// Scales the displacement toward identity: flow and translation by s, linear part as I + s(A - I).
inline TransformField scale_flow(const TransformField& t, double s) {
    if (!std::isfinite(s)) throw InvalidArgument("scale_flow: non-finite scale");
    TransformField out = t;
    for (double& v : out.flow) v *= s;
    const Affine& a = t.affine;
    out.affine = {1.0 + s * (a[0] - 1.0), s * a[1], s * a[2], s * a[3], 1.0 + s * (a[4] - 1.0), s * a[5]};
    return out;
}

// ---------------------------------------------------------------------------
// Resampling between rasters of different resolution (pixel-centre aligned).

/// Source coordinate of destination pixel centre `i` when mapping n_dst samples onto n_src.
inline double centre_map(int i, int n_dst, int n_src) { return (i + 0.5) * double(n_src) / n_dst - 0.5; }

/// Bilinear resize with edge clamping.
inline std::vector<double> resize_bilinear(const std::vector<double>& v, int h, int w, int out_h, int out_w) {
    std::vector<double> out(std::size_t(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        const double sy = std::clamp(centre_map(y, out_h, h), 0.0, double(h - 1));
        const int y0 = int(std::floor(sy)), y1 = std::min(y0 + 1, h - 1);
        const double ay = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = std::clamp(centre_map(x, out_w, w), 0.0, double(w - 1));
            const int x0 = int(std::floor(sx)), x1 = std::min(x0 + 1, w - 1);
            const double ax = sx - x0;
            out[std::size_t(y) * out_w + x] =
                (1 - ay) * ((1 - ax) * v[std::size_t(y0) * w + x0] + ax * v[std::size_t(y0) * w + x1]) +
                ay * ((1 - ax) * v[std::size_t(y1) * w + x0] + ax * v[std::size_t(y1) * w + x1]);
        }
    }
    return out;
}

inline BinaryMask resize_nearest(const BinaryMask& m, int out_h, int out_w) {
    BinaryMask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::clamp(int(std::floor((y + 0.5) * m.height / out_h)), 0, m.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::clamp(int(std::floor((x + 0.5) * m.width / out_w)), 0, m.width - 1);
            out.at(x, y) = m.at(sx, sy);
        }
    }
    return out;
}

inline LabelMask resize_nearest(const LabelMask& m, int out_h, int out_w) {
    LabelMask out(out_h, out_w, m.num_classes);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::clamp(int(std::floor((y + 0.5) * m.height / out_h)), 0, m.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::clamp(int(std::floor((x + 0.5) * m.width / out_w)), 0, m.width - 1);
            out.at(x, y) = m.at(sx, sy);
        }
    }
    return out;
}

/// Area-majority downscale: a destination pixel is set when at least half of the
/// source pixels whose centres fall inside it are set. Falls back to nearest when upscaling.
inline BinaryMask downscale_majority(const BinaryMask& m, int out_h, int out_w) {
    if (out_h >= m.height && out_w >= m.width) return resize_nearest(m, out_h, out_w);
    // Summed-area table for O(1) cell counts.
    std::vector<int> sat(std::size_t(m.height + 1) * (m.width + 1), 0);
    const int sw = m.width + 1;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            sat[std::size_t(y + 1) * sw + x + 1] = m.at(x, y) + sat[std::size_t(y) * sw + x + 1] +
                                                   sat[std::size_t(y + 1) * sw + x] - sat[std::size_t(y) * sw + x];
    BinaryMask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        int y0 = int(std::ceil(double(y) * m.height / out_h - 0.5));
        int y1 = int(std::ceil(double(y + 1) * m.height / out_h - 0.5));
        y0 = std::clamp(y0, 0, m.height);
        y1 = std::clamp(std::max(y1, y0 + 1), 0, m.height);
        for (int x = 0; x < out_w; ++x) {
            int x0 = int(std::ceil(double(x) * m.width / out_w - 0.5));
            int x1 = int(std::ceil(double(x + 1) * m.width / out_w - 0.5));
            x0 = std::clamp(x0, 0, m.width);
            x1 = std::clamp(std::max(x1, x0 + 1), 0, m.width);
            const int total = (y1 - y0) * (x1 - x0);
            if (total <= 0) continue;
            const int on = sat[std::size_t(y1) * sw + x1] - sat[std::size_t(y0) * sw + x1] -
                           sat[std::size_t(y1) * sw + x0] + sat[std::size_t(y0) * sw + x0];
            out.at(x, y) = 2 * on >= total ? 1 : 0;
        }
    }
    return out;
}

/// Per-class area-majority downscale of a label mask. Ties go to the lowest label.
inline LabelMask downscale_majority(const LabelMask& m, int out_h, int out_w) {
    LabelMask out(out_h, out_w, m.num_classes);
    for (int c = 1; c <= m.num_classes; ++c) {
        const BinaryMask view = downscale_majority(m.class_view(c), out_h, out_w);
        for (std::size_t i = 0; i < view.bits.size(); ++i)
            if (view.bits[i] && out.labels[i] == 0) out.labels[i] = c;
    }
    return out;
}

}  // namespace promptforge
