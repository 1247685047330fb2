#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "promptforge/grid.hpp"

namespace promptforge {

/// Per-pixel feature vectors at reduced resolution. `scale` is image pixels per feature pixel.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    double scale = 1.0;
    std::vector<double> values;

    const double* at(int x, int y) const { return values.data() + (std::size_t(y) * width + x) * channels; }
    double* at(int x, int y) { return values.data() + (std::size_t(y) * width + x) * channels; }
};

struct PrototypeVector {
    std::vector<double> values;
    int class_id = 1;

    PrototypeVector() = default;
    PrototypeVector(std::vector<double> v, int cls) : values(std::move(v)), class_id(cls) {
        double n2 = 0.0;
        for (double x : values) {
            if (!std::isfinite(x)) throw PrototypeUndefined("prototype has non-finite entries");
            n2 += x * x;
        }
        if (!(n2 > 0.0)) throw PrototypeUndefined("prototype has zero norm");
    }

    double norm() const {
        double n2 = 0.0;
        for (double x : values) n2 += x * x;
        return std::sqrt(n2);
    }
};

/// Cosine similarity in [-1, 1] on the prompt workspace grid.
struct SimilarityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual FeatureMap embed(const ImageGrid& image) = 0;
    virtual std::string name() const = 0;
};

/// Deterministic 9-channel local descriptor: mean, std, gradient magnitude, gradient orientation
/// (sin, cos) and a 4-bin intensity histogram per stride×stride cell, each channel standardized
/// over the image.
class BuiltinEmbedder final : public Embedder {
public:
    static constexpr int kChannels = 9;

    explicit BuiltinEmbedder(int stride = 4) : stride_(stride) {
        if (stride < 1) throw InvalidArgument("embedder stride must be >= 1");
    }

    std::string name() const override { return "builtin"; }
    int stride() const { return stride_; }

    FeatureMap embed(const ImageGrid& image) override {
        const int h = image.height, w = image.width, s = stride_;
        FeatureMap f;
        f.height = (h + s - 1) / s;
        f.width = (w + s - 1) / s;
        f.channels = kChannels;
        f.scale = s;
        f.values.assign(std::size_t(f.height) * f.width * kChannels, 0.0);

        std::vector<double> gx(image.size()), gy(image.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
                const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
                gx[std::size_t(y) * w + x] = (image.at(xr, y) - image.at(xl, y)) / 2.0;
                gy[std::size_t(y) * w + x] = (image.at(x, yd) - image.at(x, yu)) / 2.0;
            }

        for (int fy = 0; fy < f.height; ++fy)
            for (int fx = 0; fx < f.width; ++fx) {
                double sum = 0, sum2 = 0, mag = 0, vx = 0, vy = 0;
                double hist[4] = {0, 0, 0, 0};
                int n = 0;
                for (int y = fy * s; y < std::min(h, (fy + 1) * s); ++y)
                    for (int x = fx * s; x < std::min(w, (fx + 1) * s); ++x) {
                        const double v = image.at(x, y);
                        const std::size_t i = std::size_t(y) * w + x;
                        sum += v;
                        sum2 += v * v;
                        mag += std::hypot(gx[i], gy[i]);
                        vx += gx[i];
                        vy += gy[i];
                        hist[std::min(3, int(v * 4.0))] += 1;
                        ++n;
                    }
                double* out = f.at(fx, fy);
                const double mean = sum / n;
                out[0] = mean;
                out[1] = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
                out[2] = mag / n;
                const double vn = std::hypot(vx, vy);
                out[3] = vn > 1e-12 ? vy / vn : 0.0;
                out[4] = vn > 1e-12 ? vx / vn : 0.0;
                for (int b = 0; b < 4; ++b) out[5 + b] = hist[b] / n;
            }

        const std::size_t cells = std::size_t(f.height) * f.width;
        for (int c = 0; c < kChannels; ++c) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < cells; ++i) mean += f.values[i * kChannels + c];
            mean /= double(cells);
            for (std::size_t i = 0; i < cells; ++i) {
                const double d = f.values[i * kChannels + c] - mean;
                var += d * d;
            }
            const double sd = std::sqrt(var / double(cells));
            for (std::size_t i = 0; i < cells; ++i) {
                double& v = f.values[i * kChannels + c];
                v = sd > 1e-12 ? (v - mean) / sd : 0.0;
            }
        }
        return f;
    }

private:
    int stride_;
};

/// Mean feature over the reference pixels of `class_id`, after majority-downsampling the mask to
/// the feature grid.
inline PrototypeVector prototype(const FeatureMap& features, const LabelMask& ref_mask, int class_id) {
    const BinaryMask small = downscale_majority(ref_mask.class_view(class_id), features.height, features.width);
    std::vector<double> acc(features.channels, 0.0);
    std::size_t n = 0;
    for (int y = 0; y < features.height; ++y)
        for (int x = 0; x < features.width; ++x) {
            if (!small.at(x, y)) continue;
            const double* v = features.at(x, y);
            for (int c = 0; c < features.channels; ++c) acc[c] += v[c];
            ++n;
        }
    if (n == 0) throw PrototypeUndefined("class " + std::to_string(class_id) + " has no foreground at feature resolution");
    for (double& v : acc) v /= double(n);
    return PrototypeVector(std::move(acc), class_id);
}

/// Per-pixel cosine similarity, bilinearly upsampled to a workspace×workspace grid.
inline SimilarityMap similarity_map(const FeatureMap& features, const PrototypeVector& proto, int workspace = 256) {
    if (int(proto.values.size()) != features.channels)
        throw ShapeError("similarity_map: prototype has " + std::to_string(proto.values.size()) +
                         " channels, features have " + std::to_string(features.channels));
    const double pn = proto.norm();
    if (!(pn > 0.0)) throw PrototypeUndefined("prototype has zero norm");
    std::vector<double> low(std::size_t(features.height) * features.width, 0.0);
    for (int y = 0; y < features.height; ++y)
        for (int x = 0; x < features.width; ++x) {
            const double* v = features.at(x, y);
            double dot = 0, n2 = 0;
            for (int c = 0; c < features.channels; ++c) {
                dot += v[c] * proto.values[c];
                n2 += v[c] * v[c];
            }
            low[std::size_t(y) * features.width + x] = n2 > 0.0 ? std::clamp(dot / (std::sqrt(n2) * pn), -1.0, 1.0) : 0.0;
        }
    SimilarityMap s;
    s.height = workspace;
    s.width = workspace;
    s.values = resize_bilinear(low, features.height, features.width, workspace, workspace);
    for (double& v : s.values) v = std::clamp(v, -1.0, 1.0);
    return s;
}

/// +1 on the mask, −1 elsewhere, resampled to the workspace. Test and diagnostic helper.
inline SimilarityMap similarity_from_mask(const BinaryMask& mask, int workspace = 256) {
    const BinaryMask ws = resize_nearest(mask, workspace, workspace);
    SimilarityMap s;
    s.height = workspace;
    s.width = workspace;
    s.values.resize(ws.size());
    for (std::size_t i = 0; i < ws.size(); ++i) s.values[i] = ws.bits[i] ? 1.0 : -1.0;
    return s;
}

}  // namespace promptforge
