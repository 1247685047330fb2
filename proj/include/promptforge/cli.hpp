#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "promptforge/bridge_client.hpp"
#include "promptforge/io.hpp"
#include "promptforge/pipeline.hpp"
#include "promptforge/report.hpp"

namespace promptforge::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFatal = 1, kFlagged = 2 };

struct Dataset {
    std::string reference_id;
    ImageGrid reference;
    LabelMask reference_mask;
    std::vector<TestImage> tests;
    std::vector<std::string> class_names;
};

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

inline std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("missing directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

/// images/*.png with same-named masks/*.png; manifest.json may name the reference and the classes.
inline Dataset load_dataset(const fs::path& root) {
    Dataset d;
    const auto images = png_files(root / "images");
    if (images.size() < 2) throw Error(root.string() + ": need a reference and at least one test image");
    std::string ref_name = images.front().filename().string();
    if (fs::exists(root / "manifest.json")) {
        const auto m = json::parse(read_text(root / "manifest.json"));
        if (m.contains("reference")) {
            ref_name = m.at("reference").get<std::string>();
            if (fs::path(ref_name).extension() != ".png") ref_name += ".png";
        }
        if (m.contains("class_names")) d.class_names = m.at("class_names").get<std::vector<std::string>>();
    }
    const fs::path ref_mask_path = root / "masks" / ref_name;
    if (!fs::exists(root / "images" / ref_name)) throw Error("missing reference image " + (root / "images" / ref_name).string());
    if (!fs::exists(ref_mask_path)) throw Error("missing reference mask " + ref_mask_path.string());

    d.reference_id = fs::path(ref_name).stem().string();
    d.reference = read_png_gray((root / "images" / ref_name).string());
    d.reference_mask = read_png_labels(ref_mask_path.string(), int(d.class_names.size()));
    const int classes = d.reference_mask.num_classes;
    if (d.class_names.empty())
        for (int c = 1; c <= classes; ++c) d.class_names.push_back("class_" + std::to_string(c));
    else if (int(d.class_names.size()) != classes)
        throw Error(ref_mask_path.string() + ": class ids exceed the manifest's class_names");

    for (const auto& p : images) {
        if (p.filename() == ref_name) continue;
        TestImage t;
        t.id = p.stem().string();
        t.image = read_png_gray(p.string());
        const fs::path mp = root / "masks" / p.filename();
        if (fs::exists(mp)) {
            auto gt = read_png_labels(mp.string(), classes);
            if (gt.num_classes != classes) throw Error(mp.string() + ": class ids beyond those of the reference");
            t.gt = std::move(gt);
        }
        d.tests.push_back(std::move(t));
    }
    return d;
}

struct RunOptions {
    fs::path data;
    fs::path out = "promptforge_out";
    std::optional<fs::path> config;
    json overrides = json::object();  // flat keys, applied after the config file
    std::string backend = "oracle";
    OracleOptions oracle{.fidelity = 0.8, .seed = 7};
    std::string bridge_url;  // falls back to PROMPTFORGE_BRIDGE_URL
    BridgeOptions bridge{};
    bool quiet = false;
};

inline PipelineConfig resolve_config(const RunOptions& o) {
    PipelineConfig cfg;
    if (o.config) cfg = config_from_json(json::parse(read_text(*o.config)), cfg);
    return config_from_json(o.overrides, cfg);
}

inline std::string bridge_url(const std::string& explicit_url) {
    if (!explicit_url.empty()) return explicit_url;
    const char* env = std::getenv("PROMPTFORGE_BRIDGE_URL");
    if (!env || !*env) throw Error("no bridge URL: pass --bridge-url or set PROMPTFORGE_BRIDGE_URL");
    return env;
}

inline int cmd_run(const RunOptions& o, std::ostream& err = std::cerr) {
    try {
        const PipelineConfig cfg = resolve_config(o);
        const Dataset d = load_dataset(o.data);

        std::unique_ptr<Embedder> embedder;
        std::unique_ptr<Segmenter> segmenter;
        std::unique_ptr<BridgeClient> client;
        ReportContext ctx{d.reference_id, d.class_names, json::object()};
        if (o.backend == "oracle") {
            auto oracle = std::make_unique<OracleSegmenter>(o.oracle);
            oracle->add(d.reference, d.reference_mask);
            for (const auto& t : d.tests)
                if (t.gt) oracle->add(t.image, *t.gt);
            embedder = std::make_unique<BuiltinEmbedder>();
            segmenter = std::move(oracle);
            ctx.backend = {{"embedder", "builtin"},
                           {"segmenter", "oracle"},
                           {"fidelity", o.oracle.fidelity},
                           {"oracle_seed", o.oracle.seed}};
        } else if (o.backend == "remote") {
            BridgeOptions b = o.bridge;
            b.url = bridge_url(o.bridge_url);
            client = std::make_unique<BridgeClient>(b);
            embedder = std::make_unique<RemoteEmbedder>(*client);
            segmenter = std::make_unique<RemoteSegmenter>(*client);
            ctx.backend = {{"embedder", "remote"}, {"segmenter", "remote"}, {"url", b.url}};
        } else {
            throw InvalidArgument("unknown backend '" + o.backend + "'");
        }

        const RunReport rep = run_oneshot(d.reference, d.reference_mask, d.tests, cfg, {*embedder, *segmenter});

        fs::create_directories(o.out);
        write_text(o.out / "report.json", report_json(rep, cfg, ctx).dump(2) + "\n");
        for (int r = 0; r <= cfg.retrain_rounds; ++r) {
            const fs::path dir = o.out / "masks" / ("round_" + std::to_string(r));
            fs::create_directories(dir);
            for (const auto& img : rep.images)
                write_png_labels((dir / (img.id + ".png")).string(), img.rounds[std::size_t(r)].prediction);
        }

        if (!o.quiet) {
            for (std::size_t r = 0; r < rep.round_means.size(); ++r) {
                char line[128];
                std::snprintf(line, sizeof line, "round %zu  mIoU %.1f  DICE %.1f", r, 100 * rep.round_means[r].miou,
                              100 * rep.round_means[r].dice);
                err << line << '\n';
            }
        }
        if (rep.flagged_count() > 0) {
            err << "flagged images:";
            for (const auto& img : rep.images)
                if (img.flagged()) err << ' ' << img.id;
            err << '\n';
            for (const auto& img : rep.images)
                for (const auto& issue : img.issues) err << "  " << img.id << ": " << issue << '\n';
            return kFlagged;
        }
        return kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFatal;
    }
}

struct PhantomOptions {
    fs::path out;
    PhantomSpec spec{};
};

inline int cmd_phantom(const PhantomOptions& o, std::ostream& err = std::cerr) {
    try {
        const auto samples = phantom_generate(o.spec);
        fs::create_directories(o.out / "images");
        fs::create_directories(o.out / "masks");
        int classes = 1;
        for (const auto& s : samples) {
            write_png_gray((o.out / "images" / (s.id + ".png")).string(), s.image);
            write_png_labels((o.out / "masks" / (s.id + ".png")).string(), s.mask);
            classes = std::max(classes, s.mask.num_classes);
        }
        json names = json::array();
        for (int c = 1; c <= classes; ++c) names.push_back(classes == 1 ? "target" : "target_" + std::to_string(c));
        write_text(o.out / "manifest.json", json{{"reference", samples.front().id}, {"class_names", names}}.dump(2) + "\n");
        return kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFatal;
    }
}

struct EvalResult {
    std::vector<MeanMetrics> per_class;  // index c-1
    MeanMetrics mean;                    // unweighted over classes
};

inline EvalResult evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir) {
    const auto preds = png_files(pred_dir), gts = png_files(gt_dir);
    std::vector<std::string> pn, gn;
    for (const auto& p : preds) pn.push_back(p.filename().string());
    for (const auto& g : gts) gn.push_back(g.filename().string());
    if (pn != gn) {
        for (const auto& n : gn)
            if (!std::binary_search(pn.begin(), pn.end(), n)) throw Error("no prediction for " + (gt_dir / n).string());
        for (const auto& n : pn)
            if (!std::binary_search(gn.begin(), gn.end(), n)) throw Error("no ground truth for " + (pred_dir / n).string());
    }
    if (gn.empty()) throw Error(gt_dir.string() + ": no masks");
    std::vector<std::pair<LabelMask, LabelMask>> pairs;
    int classes = 1;
    for (const auto& n : gn) {
        pairs.emplace_back(read_png_labels((pred_dir / n).string()), read_png_labels((gt_dir / n).string()));
        classes = std::max({classes, pairs.back().first.num_classes, pairs.back().second.num_classes});
    }
    std::vector<std::vector<MetricRecord>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < pairs.size(); ++i)
        for (const auto& r : iou_dice(pairs[i].first, pairs[i].second, gn[i])) by_class[std::size_t(r.class_id - 1)].push_back(r);
    EvalResult res;
    std::size_t present = 0;
    for (const auto& recs : by_class) {
        res.per_class.push_back(mean_metrics(recs));
        if (recs.empty()) continue;
        res.mean.miou += res.per_class.back().miou;
        res.mean.dice += res.per_class.back().dice;
        res.mean.count += recs.size();
        ++present;
    }
    if (present) {
        res.mean.miou /= double(present);
        res.mean.dice /= double(present);
    }
    return res;
}

inline std::string format_eval(const EvalResult& r) {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %s\n", "class", "mIoU / DICE");
    os << line;
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        if (r.per_class[c].count == 0) continue;
        std::snprintf(line, sizeof line, "%-8zu %.1f / %.1f\n", c + 1, 100 * r.per_class[c].miou, 100 * r.per_class[c].dice);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-8s %.1f / %.1f\n", "mean", 100 * r.mean.miou, 100 * r.mean.dice);
    os << line;
    return os.str();
}

inline json eval_json(const EvalResult& r) {
    json per = json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
        if (r.per_class[c].count)
            per.push_back({{"class_id", c + 1}, {"miou", r.per_class[c].miou}, {"dice", r.per_class[c].dice},
                           {"count", r.per_class[c].count}});
    return {{"per_class", per}, {"mean", {{"miou", r.mean.miou}, {"dice", r.mean.dice}}}};
}

inline int cmd_eval(const fs::path& pred, const fs::path& gt, const std::optional<fs::path>& json_out,
                    std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        const EvalResult r = evaluate_dirs(pred, gt);
        out << format_eval(r);
        if (json_out) write_text(*json_out, eval_json(r).dump(2) + "\n");
        return kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFatal;
    }
}

inline int cmd_bridge_check(const std::string& url, BridgeOptions b = {}, std::ostream& out = std::cout,
                            std::ostream& err = std::cerr) {
    try {
        b.url = bridge_url(url);
        BridgeClient client(b);
        client.health();
        out << "bridge ok: " << b.url << " (protocol " << kBridgeProtocol << ")\n";
        return kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFatal;
    }
}

}  // namespace promptforge::cli
