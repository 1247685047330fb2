#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "promptforge/embedder.hpp"
#include "promptforge/grid.hpp"

namespace promptforge {

struct PixelPoint {
    int x = 0;
    int y = 0;
    auto operator<=>(const PixelPoint&) const = default;
};

struct Box {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    bool operator==(const Box&) const = default;
};

struct PromptConfig {
    int erode_kernel = 7;
    int dilate_kernel = 7;
    int num_points = 5;
    bool bilateral = false;
    int workspace = 256;
    int prompt_space = 1024;
    double mask_logit_magnitude = 8.0;
    // Prompt-type toggles for ablations; disabled box means the full extent, disabled mask means zero logits.
    bool use_points = true;
    bool use_box = true;
    bool use_mask = true;

    /// Kernel sizes and point counts used for the five reference anatomies.
    static PromptConfig lung() { return with(7, 10, true); }
    static PromptConfig chest_multiclass() { return with(7, 5, false); }
    static PromptConfig cardiac() { return with(5, 5, false); }
    static PromptConfig dental() { return with(3, 10, true); }
    static PromptConfig spine() { return with(3, 5, false); }

    void validate() const {
        if (erode_kernel < 1 || erode_kernel % 2 == 0 || dilate_kernel < 1 || dilate_kernel % 2 == 0)
            throw InvalidArgument("prompt kernels must be odd and >= 1");
        if (num_points < 1) throw InvalidArgument("num_points must be >= 1");
        if (bilateral && num_points % 2 != 0) throw InvalidArgument("bilateral prompting needs an even num_points");
        if (workspace < 1 || prompt_space < 1) throw InvalidArgument("workspace/prompt_space must be positive");
        if (!std::isfinite(mask_logit_magnitude)) throw InvalidArgument("mask_logit_magnitude must be finite");
    }

    bool operator==(const PromptConfig&) const = default;

private:
    static PromptConfig with(int kernel, int points, bool bilateral) {
        PromptConfig c;
        c.erode_kernel = c.dilate_kernel = kernel;
        c.num_points = points;
        c.bilateral = bilateral;
        return c;
    }
};

/// Prompts for one image and one class. Points and box are in prompt space; mask logits live on
/// the workspace grid.
struct PromptBundle {
    std::vector<PixelPoint> positives;
    std::vector<PixelPoint> negatives;
    Box box;
    std::vector<double> mask_logits;
    int workspace = 256;
    int prompt_space = 1024;
    PrototypeVector prototype;
    int class_id = 1;

    void validate() const {
        auto inside = [&](const PixelPoint& p) { return p.x >= 0 && p.y >= 0 && p.x < prompt_space && p.y < prompt_space; };
        for (const auto& p : positives)
            if (!inside(p)) throw InvalidArgument("positive point outside prompt space");
        for (const auto& p : negatives)
            if (!inside(p)) throw InvalidArgument("negative point outside prompt space");
        if (box.x_min > box.x_max || box.y_min > box.y_max) throw InvalidArgument("inverted box");
        if (!inside({box.x_min, box.y_min}) || !inside({box.x_max, box.y_max}))
            throw InvalidArgument("box outside prompt space");
        if (mask_logits.size() != std::size_t(workspace) * workspace)
            throw ShapeError("mask_logits must be workspace x workspace");
        for (double v : mask_logits)
            if (!std::isfinite(v)) throw InvalidArgument("non-finite mask logit");
        const std::set<PixelPoint> pos(positives.begin(), positives.end());
        for (const auto& n : negatives)
            if (pos.count(n)) throw InvalidArgument("positive and negative prompts coincide");
    }
};

// ---------------------------------------------------------------------------
// Morphology

enum class MorphOp { Erode, Dilate };

/// Square-kernel erosion/dilation with zero padding (pixels beyond the border read as 0).
inline BinaryMask morphology(const BinaryMask& mask, int kernel, MorphOp op) {
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("morphology kernel must be odd and >= 1");
    if (kernel == 1) return mask;
    const int r = kernel / 2, h = mask.height, w = mask.width;
    const bool erode = op == MorphOp::Erode;
    auto pass = [&](const BinaryMask& in, bool horizontal) {
        BinaryMask out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool acc = erode;
                for (int k = -r; k <= r; ++k) {
                    const int xx = horizontal ? x + k : x, yy = horizontal ? y : y + k;
                    const bool v = xx >= 0 && yy >= 0 && xx < w && yy < h && in.at(xx, yy);
                    if (erode ? !v : v) {
                        acc = !erode;
                        break;
                    }
                }
                out.at(x, y) = acc ? 1 : 0;
            }
        return out;
    };
    return pass(pass(mask, true), false);
}

inline BinaryMask mask_minus(const BinaryMask& a, const BinaryMask& b) {
    BinaryMask out = a;
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] && !b.bits[i];
    return out;
}

/// Row-major linear indices of the set pixels (ascending).
inline std::vector<int> pixel_indices(const BinaryMask& m) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < m.bits.size(); ++i)
        if (m.bits[i]) idx.push_back(int(i));
    return idx;
}

struct CandidateRegions {
    std::vector<int> erode;  ///< positive candidates E
    std::vector<int> diff;   ///< negative candidates D
};

/// E = erode(mask, K_e) (falls back to the mask itself when erosion empties it);
/// D = dilate(mask, K_d) − E (falls back to a K_d-wide ring outside the dilation when empty).
inline CandidateRegions candidate_regions(const BinaryMask& mask, const PromptConfig& cfg) {
    if (mask.empty()) throw PromptFailure("candidate_regions: empty mask");
    BinaryMask eroded = morphology(mask, cfg.erode_kernel, MorphOp::Erode);
    if (eroded.empty()) eroded = mask;
    const BinaryMask dilated = morphology(mask, cfg.dilate_kernel, MorphOp::Dilate);
    BinaryMask diff = mask_minus(dilated, eroded);
    if (diff.empty()) diff = mask_minus(morphology(mask, 2 * cfg.dilate_kernel + 1, MorphOp::Dilate), dilated);
    return {pixel_indices(eroded), pixel_indices(diff)};
}

namespace detail {
inline std::vector<std::vector<int>> split_even(const std::vector<int>& sorted, int k) {
    std::vector<std::vector<int>> out;
    const int n = int(sorted.size());
    k = std::min(k, n);
    if (k <= 0) return out;
    const int base = n / k, extra = n % k;
    int pos = 0;
    for (int s = 0; s < k; ++s) {
        const int len = base + (s < extra ? 1 : 0);
        out.emplace_back(sorted.begin() + pos, sorted.begin() + pos + len);
        pos += len;
    }
    return out;
}
}  // namespace detail

/// Splits a region into K contiguous runs of its row-major-sorted pixels; the first (n mod K) runs
/// get one extra pixel. Bilateral mode partitions each side of the vertical midline into K/2 runs.
inline std::vector<std::vector<int>> partition_subregions(std::vector<int> region, int k, bool bilateral, int width) {
    if (region.empty()) throw PromptFailure("partition_subregions: empty region");
    if (k < 1) throw InvalidArgument("partition_subregions: K must be >= 1");
    std::sort(region.begin(), region.end());
    if (!bilateral) return detail::split_even(region, k);
    std::vector<int> left, right;
    for (int i : region) ((i % width) < width / 2.0 ? left : right).push_back(i);
    auto out = detail::split_even(left, k / 2);
    auto rs = detail::split_even(right, k / 2);
    out.insert(out.end(), std::make_move_iterator(rs.begin()), std::make_move_iterator(rs.end()));
    if (out.empty()) throw PromptFailure("partition_subregions: no subregions");
    return out;
}

namespace detail {
/// Pixels of a subregion ordered best-first: descending similarity for positives, ascending for
/// negatives; ties by smallest index.
inline std::vector<int> ranked(const SimilarityMap& sim, const std::vector<int>& sub, bool highest) {
    std::vector<int> r = sub;
    std::stable_sort(r.begin(), r.end(), [&](int a, int b) {
        const double va = sim.values[a], vb = sim.values[b];
        if (va != vb) return highest ? va > vb : va < vb;
        return a < b;
    });
    return r;
}

inline int best_index(const SimilarityMap& sim, const std::vector<int>& sub, bool highest) {
    int best = sub.front();
    for (int i : sub) {
        const double v = sim.values[i], b = sim.values[best];
        if (highest ? v > b : v < b) best = i;
        else if (v == b && i < best) best = i;
    }
    return best;
}
}  // namespace detail

/// Argmax similarity per positive subregion, argmin per negative subregion (workspace coordinates).
inline std::pair<std::vector<PixelPoint>, std::vector<PixelPoint>> select_points(
    const SimilarityMap& sim, const std::vector<std::vector<int>>& e_sub, const std::vector<std::vector<int>>& d_sub) {
    if (e_sub.empty() || d_sub.empty()) throw PromptFailure("select_points: no subregions");
    std::vector<PixelPoint> pos, neg;
    for (const auto& s : e_sub) {
        if (s.empty()) throw PromptFailure("select_points: empty subregion");
        const int i = detail::best_index(sim, s, true);
        pos.push_back({i % sim.width, i / sim.width});
    }
    for (const auto& s : d_sub) {
        if (s.empty()) throw PromptFailure("select_points: empty subregion");
        const int i = detail::best_index(sim, s, false);
        neg.push_back({i % sim.width, i / sim.width});
    }
    return {pos, neg};
}

/// Naive baseline: the k highest-similarity pixels as positives and the k lowest as negatives,
/// over the whole workspace (workspace coordinates).
inline std::pair<std::vector<PixelPoint>, std::vector<PixelPoint>> global_topk_points(const SimilarityMap& sim, int k) {
    if (k < 1) throw InvalidArgument("global_topk_points: k must be >= 1");
    std::vector<int> all(sim.values.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    const auto hi = detail::ranked(sim, all, true), lo = detail::ranked(sim, all, false);
    std::vector<PixelPoint> pos, neg;
    for (int j = 0; j < std::min<int>(k, int(all.size())); ++j) {
        pos.push_back({hi[j] % sim.width, hi[j] / sim.width});
        neg.push_back({lo[j] % sim.width, lo[j] / sim.width});
    }
    return {pos, neg};
}

/// Tight bounding box of the set pixels.
inline Box box_prompt(const BinaryMask& mask) {
    Box b{mask.width, mask.height, -1, -1};
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                b.x_min = std::min(b.x_min, x);
                b.y_min = std::min(b.y_min, y);
                b.x_max = std::max(b.x_max, x);
                b.y_max = std::max(b.y_max, y);
            }
    if (b.x_max < 0) throw PromptFailure("box_prompt: empty mask");
    return b;
}

/// Workspace → prompt-space coordinate (round half up, clipped to the prompt grid).
inline int to_prompt_space(int v, int workspace, int prompt_space) {
    return std::clamp(int(std::floor(double(v) * prompt_space / workspace + 0.5)), 0, prompt_space - 1);
}

/// Full point/box/mask prompt construction for one candidate mask on the workspace grid.
inline PromptBundle build_prompts(const BinaryMask& candidate, const SimilarityMap& sim, const PrototypeVector& proto,
                                  const PromptConfig& cfg) {
    cfg.validate();
    require_same_shape(candidate.height, candidate.width, cfg.workspace, cfg.workspace, "build_prompts mask");
    require_same_shape(sim.height, sim.width, cfg.workspace, cfg.workspace, "build_prompts similarity");
    if (candidate.empty()) throw PromptFailure("build_prompts: empty candidate mask");

    PromptBundle b;
    b.workspace = cfg.workspace;
    b.prompt_space = cfg.prompt_space;
    b.prototype = proto;
    b.class_id = proto.class_id;
    auto scale = [&](int i) {
        return PixelPoint{to_prompt_space(i % cfg.workspace, cfg.workspace, cfg.prompt_space),
                          to_prompt_space(i / cfg.workspace, cfg.workspace, cfg.prompt_space)};
    };

    if (cfg.use_points) {
        const auto regions = candidate_regions(candidate, cfg);
        if (regions.diff.empty()) throw PromptFailure("build_prompts: no negative candidate pixels");
        const auto e_sub = partition_subregions(regions.erode, cfg.num_points, cfg.bilateral, cfg.workspace);
        const auto d_sub = partition_subregions(regions.diff, cfg.num_points, cfg.bilateral, cfg.workspace);
        const auto [pos_ws, neg_ws] = select_points(sim, e_sub, d_sub);
        std::set<PixelPoint> negs;
        for (const auto& p : neg_ws) {
            const PixelPoint q = scale(p.y * cfg.workspace + p.x);
            b.negatives.push_back(q);
            negs.insert(q);
        }
        for (std::size_t k = 0; k < e_sub.size(); ++k) {
            const PixelPoint first = scale(pos_ws[k].y * cfg.workspace + pos_ws[k].x);
            if (!negs.count(first)) {
                b.positives.push_back(first);
                continue;
            }
            // Collision after scaling: take the next-best pixel of the same subregion.
            bool placed = false;
            for (int i : detail::ranked(sim, e_sub[k], true)) {
                const PixelPoint p = scale(i);
                if (!negs.count(p)) {
                    b.positives.push_back(p);
                    placed = true;
                    break;
                }
            }
            if (!placed) throw PromptFailure("build_prompts: positive subregion collides with negatives");
        }
    }

    if (cfg.use_box) {
        const Box ws = box_prompt(candidate);
        b.box = {to_prompt_space(ws.x_min, cfg.workspace, cfg.prompt_space),
                 to_prompt_space(ws.y_min, cfg.workspace, cfg.prompt_space),
                 to_prompt_space(ws.x_max, cfg.workspace, cfg.prompt_space),
                 to_prompt_space(ws.y_max, cfg.workspace, cfg.prompt_space)};
    } else {
        b.box = {0, 0, cfg.prompt_space - 1, cfg.prompt_space - 1};
    }

    b.mask_logits.assign(candidate.size(), 0.0);
    if (cfg.use_mask)
        for (std::size_t i = 0; i < candidate.size(); ++i)
            b.mask_logits[i] = (2.0 * candidate.bits[i] - 1.0) * cfg.mask_logit_magnitude;
    return b;
}

}  // namespace promptforge
