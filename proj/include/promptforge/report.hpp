#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptforge/pipeline.hpp"

namespace promptforge {

using json = nlohmann::json;

inline constexpr int kReportVersion = 1;

// ---------------------------------------------------------------------------
// Flat configuration file: one object, keys named after the config fields.

namespace detail {

inline json range_json(const Range& r) { return json::array({r.min, r.max}); }

inline Range range_from(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw InvalidArgument("config key '" + key + "' must be a [min, max] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
T typed(const json& j, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!j.is_boolean()) throw InvalidArgument("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!j.is_number_integer()) throw InvalidArgument("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) throw InvalidArgument("");
        }
        return j.get<T>();
    } catch (const std::exception&) {
        throw InvalidArgument("config key '" + key + "' has the wrong type");
    }
}

}  // namespace detail

inline json config_to_json(const PipelineConfig& c) {
    const auto& r = c.reg;
    const auto& w = r.weights;
    const auto& p = c.prompt;
    const auto& a = c.aug;
    json j;
    j["refine_iters"] = c.refine_iters;
    j["retrain_rounds"] = c.retrain_rounds;
    j["retrain_steps"] = c.retrain_steps;
    j["flow_perturb_scale"] = c.flow_perturb_scale ? json(*c.flow_perturb_scale) : json(nullptr);
    j["seed"] = c.seed;
    j["prompt_from_last_output"] = c.prompt_from_last_output;
    j["workers"] = c.workers;
    j["retry_attempts"] = c.retry_attempts;
    j["retry_base_delay_ms"] = c.retry_base_delay_ms;

    j["image_loss"] = r.image_loss == ImageLossKind::SSIM ? "ssim" : "ncc";
    j["window"] = r.window;
    j["grid_size"] = r.grid_size;
    j["steps"] = r.steps;
    j["learning_rate"] = r.learning_rate;
    j["beta1"] = r.beta1;
    j["beta2"] = r.beta2;
    j["weight_decay"] = r.weight_decay;
    j["use_affine"] = r.use_affine;
    j["affine_warmup"] = r.affine_warmup;
    j["coarse_sigma"] = r.coarse_sigma;

    j["lambda_img"] = w.lambda_img;
    j["lambda_reg"] = w.lambda_reg;
    j["lambda_aug"] = w.lambda_aug;
    j["dice_coeff"] = w.dice_coeff;
    j["ce_coeff"] = w.ce_coeff;

    j["erode_kernel"] = p.erode_kernel;
    j["dilate_kernel"] = p.dilate_kernel;
    j["num_points"] = p.num_points;
    j["bilateral"] = p.bilateral;
    j["workspace"] = p.workspace;
    j["prompt_space"] = p.prompt_space;
    j["mask_logit_magnitude"] = p.mask_logit_magnitude;
    j["use_points"] = p.use_points;
    j["use_box"] = p.use_box;
    j["use_mask"] = p.use_mask;

    j["rotation_deg"] = detail::range_json(a.rotation_deg);
    j["translation_frac"] = detail::range_json(a.translation_frac);
    j["scale"] = detail::range_json(a.scale);
    j["shear_deg"] = detail::range_json(a.shear_deg);
    j["brightness"] = a.brightness;
    j["contrast"] = a.contrast;
    j["crop_scale"] = detail::range_json(a.crop_scale);
    j["crop_ratio"] = detail::range_json(a.crop_ratio);
    j["crop_prob"] = a.crop_prob;
    return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are rejected.
inline PipelineConfig config_from_json(const json& j, PipelineConfig base = {}) {
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    PipelineConfig c = base;
    auto& r = c.reg;
    auto& w = r.weights;
    auto& p = c.prompt;
    auto& a = c.aug;
    for (const auto& [key, v] : j.items()) {
        using detail::typed;
        if (key == "refine_iters") c.refine_iters = typed<int>(v, key);
        else if (key == "retrain_rounds") c.retrain_rounds = typed<int>(v, key);
        else if (key == "retrain_steps") c.retrain_steps = typed<int>(v, key);
        else if (key == "flow_perturb_scale")
            c.flow_perturb_scale = v.is_null() ? std::nullopt : std::optional<double>(typed<double>(v, key));
        else if (key == "seed") c.seed = typed<std::uint64_t>(v, key);
        else if (key == "prompt_from_last_output") c.prompt_from_last_output = typed<bool>(v, key);
        else if (key == "workers") c.workers = typed<int>(v, key);
        else if (key == "retry_attempts") c.retry_attempts = typed<int>(v, key);
        else if (key == "retry_base_delay_ms") c.retry_base_delay_ms = typed<double>(v, key);
        else if (key == "image_loss") {
            const auto s = typed<std::string>(v, key);
            if (s == "ssim") r.image_loss = ImageLossKind::SSIM;
            else if (s == "ncc") r.image_loss = ImageLossKind::NCC;
            else throw InvalidArgument("config key 'image_loss' must be \"ssim\" or \"ncc\"");
        } else if (key == "window") r.window = typed<int>(v, key);
        else if (key == "grid_size") r.grid_size = typed<int>(v, key);
        else if (key == "steps") r.steps = typed<int>(v, key);
        else if (key == "learning_rate") r.learning_rate = typed<double>(v, key);
        else if (key == "beta1") r.beta1 = typed<double>(v, key);
        else if (key == "beta2") r.beta2 = typed<double>(v, key);
        else if (key == "weight_decay") r.weight_decay = typed<double>(v, key);
        else if (key == "use_affine") r.use_affine = typed<bool>(v, key);
        else if (key == "affine_warmup") r.affine_warmup = typed<double>(v, key);
        else if (key == "coarse_sigma") r.coarse_sigma = typed<double>(v, key);
        else if (key == "lambda_img") w.lambda_img = typed<double>(v, key);
        else if (key == "lambda_reg") w.lambda_reg = typed<double>(v, key);
        else if (key == "lambda_aug") w.lambda_aug = typed<double>(v, key);
        else if (key == "dice_coeff") w.dice_coeff = typed<double>(v, key);
        else if (key == "ce_coeff") w.ce_coeff = typed<double>(v, key);
        else if (key == "erode_kernel") p.erode_kernel = typed<int>(v, key);
        else if (key == "dilate_kernel") p.dilate_kernel = typed<int>(v, key);
        else if (key == "num_points") p.num_points = typed<int>(v, key);
        else if (key == "bilateral") p.bilateral = typed<bool>(v, key);
        else if (key == "workspace") p.workspace = typed<int>(v, key);
        else if (key == "prompt_space") p.prompt_space = typed<int>(v, key);
        else if (key == "mask_logit_magnitude") p.mask_logit_magnitude = typed<double>(v, key);
        else if (key == "use_points") p.use_points = typed<bool>(v, key);
        else if (key == "use_box") p.use_box = typed<bool>(v, key);
        else if (key == "use_mask") p.use_mask = typed<bool>(v, key);
        else if (key == "rotation_deg") a.rotation_deg = detail::range_from(v, key);
        else if (key == "translation_frac") a.translation_frac = detail::range_from(v, key);
        else if (key == "scale") a.scale = detail::range_from(v, key);
        else if (key == "shear_deg") a.shear_deg = detail::range_from(v, key);
        else if (key == "brightness") a.brightness = typed<double>(v, key);
        else if (key == "contrast") a.contrast = typed<double>(v, key);
        else if (key == "crop_scale") a.crop_scale = detail::range_from(v, key);
        else if (key == "crop_ratio") a.crop_ratio = detail::range_from(v, key);
        else if (key == "crop_prob") a.crop_prob = typed<double>(v, key);
        else throw InvalidArgument("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Run report

namespace detail {

inline json metrics_json(const std::vector<MetricRecord>& recs) {
    json a = json::array();
    for (const auto& m : recs) a.push_back({{"class_id", m.class_id}, {"iou", m.iou}, {"dice", m.dice}});
    return a;
}

inline json mean_json(const MeanMetrics& m) { return {{"miou", m.miou}, {"dice", m.dice}, {"count", m.count}}; }

inline json points_json(const std::vector<PixelPoint>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({p.x, p.y});
    return a;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

struct ReportContext {
    std::string reference_id;
    std::vector<std::string> class_names;
    json backend = json::object();
};

/// Deterministic part of the report: everything except wall-clock timings.
inline json report_metrics_json(const RunReport& rep, const PipelineConfig& cfg, const ReportContext& ctx) {
    json j;
    j["report_version"] = kReportVersion;
    j["config"] = config_to_json(cfg);
    j["backend"] = ctx.backend;
    j["dataset"] = {{"reference", ctx.reference_id}, {"class_names", ctx.class_names}, {"test_images", rep.images.size()}};
    json rounds = json::array();
    for (std::size_t r = 0; r < rep.round_means.size(); ++r)
        rounds.push_back({{"round", r},
                          {"mean", detail::mean_json(rep.round_means[r])},
                          {"mask_prompt_mean", detail::mean_json(rep.mask_prompt_means[r])}});
    j["rounds"] = rounds;
    j["aug_recovery_dice"] = detail::optional_json(rep.aug_recovery_dice);
    json flagged = json::array();
    json images = json::array();
    for (const auto& img : rep.images) {
        if (img.flagged()) flagged.push_back(img.id);
        json ir = json::array();
        for (const auto& rr : img.rounds) {
            json prompts = json::array();
            for (const auto& pr : rr.prompts) {
                json pj = {{"class_id", pr.class_id},
                           {"stage", pr.stage},
                           {"positives", detail::points_json(pr.positives)},
                           {"negatives", detail::points_json(pr.negatives)},
                           {"box", {pr.box.x_min, pr.box.y_min, pr.box.x_max, pr.box.y_max}},
                           {"hopkins_pos", detail::optional_json(pr.hopkins_pos)},
                           {"hopkins_neg", detail::optional_json(pr.hopkins_neg)}};
                pj["placement"] = pr.placement ? json{{"pos_in_gt", pr.placement->pos_in_gt},
                                                      {"neg_in_bg", pr.placement->neg_in_bg},
                                                      {"total", pr.placement->total}}
                                               : json(nullptr);
                prompts.push_back(pj);
            }
            ir.push_back({{"round", rr.round},
                          {"fallback", rr.fallback},
                          {"metrics", detail::metrics_json(rr.metrics)},
                          {"mask_prompt_metrics", detail::metrics_json(rr.mask_prompt_metrics)},
                          {"prompts", prompts}});
        }
        images.push_back({{"id", img.id}, {"flagged", img.flagged()}, {"issues", img.issues}, {"rounds", ir}});
    }
    j["flagged_images"] = flagged;
    j["images"] = images;
    return j;
}

inline json report_json(const RunReport& rep, const PipelineConfig& cfg, const ReportContext& ctx) {
    json j = report_metrics_json(rep, cfg, ctx);
    j["timings"] = {{"total_seconds", rep.seconds}};
    return j;
}

}  // namespace promptforge
