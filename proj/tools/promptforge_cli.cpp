// promptforge command-line front end.
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "promptforge/cli.hpp"

namespace pf = promptforge;
namespace cli = promptforge::cli;

namespace {

std::vector<pf::PhantomShape> parse_shapes(const std::string& list) {
    std::vector<pf::PhantomShape> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(pf::phantom_shape_from_string(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot segmentation by prompt tuning of a promptable segmenter"};
    app.require_subcommand(1);

    // run
    cli::RunOptions run;
    std::optional<int> rounds, refine, workers, num_points, steps;
    std::optional<std::uint64_t> seed;
    std::optional<double> flow_perturb;
    bool bilateral = false, last_output = false, no_points = false, no_box = false, no_mask = false, no_aug = false;
    auto* run_cmd = app.add_subcommand("run", "Run the pipeline on a dataset directory");
    run_cmd->add_option("data", run.data, "Dataset root with images/ and masks/")->required()->check(CLI::ExistingDirectory);
    run_cmd->add_option("-o,--out", run.out, "Output directory")->capture_default_str();
    run_cmd->add_option("-c,--config", run.config, "Flat JSON config file")->check(CLI::ExistingFile);
    run_cmd->add_option("--backend", run.backend, "oracle or remote")->check(CLI::IsMember({"oracle", "remote"}))->capture_default_str();
    run_cmd->add_option("--fidelity", run.oracle.fidelity, "Oracle fidelity in [0,1]")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    run_cmd->add_option("--oracle-seed", run.oracle.seed, "Oracle flip-pattern seed")->capture_default_str();
    run_cmd->add_option("--bridge-url", run.bridge_url, "Bridge base URL (default: $PROMPTFORGE_BRIDGE_URL)");
    run_cmd->add_option("--max-in-flight", run.bridge.max_in_flight, "Concurrent bridge requests")->capture_default_str();
    run_cmd->add_option("--seed", seed, "Pipeline seed");
    run_cmd->add_option("--rounds", rounds, "Retraining rounds T");
    run_cmd->add_option("--refine", refine, "Refinement iterations R");
    run_cmd->add_option("--steps", steps, "Initial registration steps");
    run_cmd->add_option("--workers", workers, "Worker threads (0 = hardware)");
    run_cmd->add_option("--num-points", num_points, "Points per polarity");
    run_cmd->add_option("--flow-perturb", flow_perturb, "Scale the round-0 flow by this factor");
    run_cmd->add_flag("--bilateral", bilateral, "Balance points across left/right halves");
    run_cmd->add_flag("--prompt-from-last-output", last_output, "Seed retraining rounds with the last output");
    run_cmd->add_flag("--no-points", no_points, "Disable point prompts");
    run_cmd->add_flag("--no-box", no_box, "Disable the box prompt");
    run_cmd->add_flag("--no-mask", no_mask, "Disable the mask prompt");
    run_cmd->add_flag("--no-aug", no_aug, "Skip the augmentation self-check");
    run_cmd->add_flag("-q,--quiet", run.quiet, "Do not print per-round means");

    // phantom
    cli::PhantomOptions ph;
    std::string shapes = "blob";
    auto* ph_cmd = app.add_subcommand("phantom", "Write a synthetic dataset");
    ph_cmd->add_option("out", ph.out, "Output directory")->required();
    ph_cmd->add_option("--count", ph.spec.count, "Number of samples")->capture_default_str();
    ph_cmd->add_option("--seed", ph.spec.seed, "Generator seed")->capture_default_str();
    ph_cmd->add_option("--size", ph.spec.size, "Image side in pixels")->capture_default_str();
    ph_cmd->add_option("--shapes", shapes, "Comma list of disc, ellipse-pair, ring, blob")->capture_default_str();
    ph_cmd->add_option("--contrast", ph.spec.contrast, "Target contrast")->capture_default_str();
    ph_cmd->add_option("--confusers", ph.spec.confuser_organs, "Look-alike distractor organs")->capture_default_str();
    ph_cmd->add_option("--noise", ph.spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();
    ph_cmd->add_option("--deformation", ph.spec.deformation, "Per-sample boundary deformation")->capture_default_str();
    ph_cmd->add_flag("--split-pair-classes", ph.spec.split_pair_classes, "Label ellipse pairs as two classes");

    // eval
    std::filesystem::path pred_dir, gt_dir;
    std::optional<std::filesystem::path> eval_json;
    auto* ev_cmd = app.add_subcommand("eval", "Score predicted masks against ground truth");
    ev_cmd->add_option("pred", pred_dir, "Predicted masks")->required();
    ev_cmd->add_option("gt", gt_dir, "Ground-truth masks")->required();
    ev_cmd->add_option("--json", eval_json, "Also write the table as JSON");

    // bridge-check
    std::string check_url;
    auto* bc_cmd = app.add_subcommand("bridge-check", "Query the bridge health endpoint");
    bc_cmd->add_option("--bridge-url", check_url, "Bridge base URL (default: $PROMPTFORGE_BRIDGE_URL)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : cli::kFatal;
    }

    if (*run_cmd) {
        auto& ov = run.overrides;
        if (seed) ov["seed"] = *seed;
        if (rounds) ov["retrain_rounds"] = *rounds;
        if (refine) ov["refine_iters"] = *refine;
        if (steps) ov["steps"] = *steps;
        if (workers) ov["workers"] = *workers;
        if (num_points) ov["num_points"] = *num_points;
        if (flow_perturb) ov["flow_perturb_scale"] = *flow_perturb;
        if (bilateral) ov["bilateral"] = true;
        if (last_output) ov["prompt_from_last_output"] = true;
        if (no_points) ov["use_points"] = false;
        if (no_box) ov["use_box"] = false;
        if (no_mask) ov["use_mask"] = false;
        if (no_aug) {
            pf::PipelineConfig plain;
            plain.aug = pf::AugmentationConfig::none();
            const pf::json none = pf::config_to_json(plain);
            for (const char* k : {"rotation_deg", "translation_frac", "scale", "shear_deg", "brightness", "contrast",
                                  "crop_scale", "crop_ratio", "crop_prob"})
                ov[k] = none.at(k);
        }
        return cli::cmd_run(run);
    }
    if (*ph_cmd) {
        try {
            ph.spec.shapes = parse_shapes(shapes);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return cli::kFatal;
        }
        return cli::cmd_phantom(ph);
    }
    if (*ev_cmd) return cli::cmd_eval(pred_dir, gt_dir, eval_json);
    return cli::cmd_bridge_check(check_url);
}
