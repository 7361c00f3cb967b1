// Command-line front end: synthetic data generation, training, evaluation,
// gradient checking, topology auditing, ablations and scan rendering.
//
// Exit codes: 0 success, 1 check failure, 2 I/O error, 3 validation error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "octseg/grad_check.hpp"
#include "octseg/io.hpp"
#include "octseg/losses.hpp"
#include "octseg/metrics.hpp"
#include "octseg/model.hpp"
#include "octseg/synthdata.hpp"
#include "octseg/topology.hpp"
#include "octseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace octseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitIoError = 2;
constexpr int kExitValidationError = 3;

struct GenOptions {
    std::string config_path, out_dir;
    int count = 10;
    std::uint64_t seed = 1;
};

int cmd_gen(const GenOptions& opt) {
    json cfg_json = json::object();
    if (!opt.config_path.empty()) cfg_json = read_json(opt.config_path);
    TopologySchema schema = cfg_json.contains("schema")
                                ? TopologySchema::from_json(cfg_json["schema"])
                                : TopologySchema::default_synthetic();
    SceneConfig scene = cfg_json.contains("scene") ? SceneConfig::from_json(cfg_json["scene"])
                                                   : SceneConfig{};
    const std::string mode = cfg_json.value("mode", "full");
    scene.validate(schema);

    Dataset ds = make_dataset(opt.seed, opt.count, scene, schema);
    for (LabeledScan& s : ds.scans) s.mode = annotation_mode_from_name(mode);
    save_dataset(opt.out_dir, ds);

    json manifest;
    manifest["schema"] = schema.to_json();
    manifest["scene"] = scene.to_json();
    manifest["mode"] = mode;
    manifest["count"] = opt.count;
    manifest["seed"] = opt.seed;
    write_manifest(opt.out_dir, "gen", manifest);
    std::cerr << "gen: wrote " << opt.count << " scans to " << opt.out_dir << "\n";
    return kExitOk;
}

struct TrainOptions {
    std::string config_path, data_dir, out_dir;
};

int cmd_train(const TrainOptions& opt) {
    ExperimentConfig cfg = opt.config_path.empty()
                               ? ExperimentConfig{}
                               : ExperimentConfig::from_json(read_json(opt.config_path));
    fs::create_directories(opt.out_dir);

    ProtocolDatasets data;
    if (!opt.data_dir.empty()) {
        data.train = load_dataset(fs::path(opt.data_dir) / "train");
        data.val = load_dataset(fs::path(opt.data_dir) / "val");
        if (fs::exists(fs::path(opt.data_dir) / "test")) {
            data.test = load_dataset(fs::path(opt.data_dir) / "test");
        }
        cfg.model.rows = data.train.config.rows;
        cfg.model.cols = data.train.config.cols;
        cfg.model.num_surfaces = data.train.schema.num_surfaces();
        cfg.model.num_lesions = data.train.schema.num_lesions();
    } else {
        data = build_protocol_datasets(cfg, TopologySchema::default_synthetic());
    }

    Model model(cfg.model, cfg.seed);
    std::cerr << "train: " << data.train.scans.size() << " scans, "
              << model.params().param_count() << " parameters\n";
    TrainResult result = train_model(model, cfg, data.train, data.val, &std::cerr);

    model.save_checkpoint(fs::path(opt.out_dir) / "checkpoint.bin", cfg.seed, result.best_step);
    write_loss_series_csv(fs::path(opt.out_dir) / "losses.csv", result.series);
    result.best_val.write_csv(fs::path(opt.out_dir) / "val_metrics.csv",
                              data.train.schema.surfaces, data.train.schema.lesion_names);
    if (!data.test.scans.empty()) {
        const MetricsReport test = evaluate(model, data.test);
        test.write_csv(fs::path(opt.out_dir) / "test_metrics.csv", data.train.schema.surfaces,
                       data.train.schema.lesion_names);
    }
    json manifest = cfg.to_json();
    manifest["data_dir"] = opt.data_dir;
    manifest["data_order_hash"] = result.data_order_hash;
    manifest["best_step"] = result.best_step;
    write_manifest(opt.out_dir, "train", manifest);
    std::cerr << "train: best val mad " << result.best_val.total_mad << " um, dice "
              << result.best_val.total_dice_smoothed << " (step " << result.best_step << ")\n";
    return kExitOk;
}

struct EvalOptions {
    std::string ckpt_path, data_dir, out_dir;
};

int cmd_eval(const EvalOptions& opt) {
    Model model = Model::load_checkpoint(opt.ckpt_path);
    Dataset ds = load_dataset(opt.data_dir);
    const MetricsReport rep = evaluate(model, ds);
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        rep.write_csv(fs::path(opt.out_dir) / "metrics.csv", ds.schema.surfaces,
                      ds.schema.lesion_names);
        json manifest;
        manifest["checkpoint"] = opt.ckpt_path;
        manifest["data_dir"] = opt.data_dir;
        write_manifest(opt.out_dir, "eval", manifest);
    } else {
        std::cout << "metric,name,value\n";
        std::cout << "mad_um,total," << rep.total_mad << "\n";
        std::cout << "dice_smoothed,total," << rep.total_dice_smoothed << "\n";
        std::cout << "violations,total,"
                  << rep.ordering_violations + rep.confinement_violations << "\n";
    }
    std::cerr << "eval: mad " << rep.total_mad << " um, dice " << rep.total_dice_smoothed
              << ", violations "
              << rep.ordering_violations + rep.confinement_violations << "\n";
    return kExitOk;
}

struct AblateOptions {
    std::string config_path, out_dir;
};

int cmd_ablate(const AblateOptions& opt) {
    ExperimentConfig cfg = opt.config_path.empty()
                               ? ExperimentConfig{}
                               : ExperimentConfig::from_json(read_json(opt.config_path));
    fs::create_directories(opt.out_dir);
    const std::vector<AblationRow> rows = run_ablation_suite(cfg, &std::cerr);
    write_ablation_csv(fs::path(opt.out_dir) / "ablation.csv", rows);
    write_manifest(opt.out_dir, "ablate", cfg.to_json());
    for (const AblationRow& row : rows) {
        std::cerr << row.arm << ": mad " << row.test_metrics.total_mad << " um, dice "
                  << row.test_metrics.total_dice_smoothed << ", violations "
                  << row.test_metrics.ordering_violations +
                         row.test_metrics.confinement_violations
                  << "\n";
    }
    return kExitOk;
}

struct GradcheckOptions {
    std::string op_filter, out_dir;
};

int cmd_gradcheck(const GradcheckOptions& opt) {
    const std::vector<OpCheckResult> results = run_gradcheck_suite(opt.op_filter);
    if (results.empty()) {
        std::cerr << "gradcheck: no op matches '" << opt.op_filter << "'\n";
        return kExitValidationError;
    }
    bool all_ok = true;
    std::ostringstream csv;
    csv << "op,max_rel_err,resamples,ok\n";
    for (const OpCheckResult& r : results) {
        all_ok = all_ok && r.ok;
        std::cout << r.name << ": max rel err " << r.max_rel_err << " (resamples "
                  << r.resamples << ") " << (r.ok ? "ok" : "FAIL") << "\n";
        csv << r.name << "," << r.max_rel_err << "," << r.resamples << "," << (r.ok ? 1 : 0)
            << "\n";
    }
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        std::ofstream os(fs::path(opt.out_dir) / "gradcheck.csv");
        os << csv.str();
        json manifest;
        manifest["op_filter"] = opt.op_filter;
        write_manifest(opt.out_dir, "gradcheck", manifest);
    }
    return all_ok ? kExitOk : kExitCheckFailure;
}

struct AuditOptions {
    std::string pred_dir, schema_path;
};

int cmd_audit(const AuditOptions& opt) {
    const TopologySchema schema = opt.schema_path.empty()
                                      ? TopologySchema::default_synthetic()
                                      : TopologySchema::load(opt.schema_path);
    std::vector<fs::path> scan_dirs;
    if (fs::exists(fs::path(opt.pred_dir) / "boundaries.csv")) {
        scan_dirs.push_back(opt.pred_dir);
    } else {
        for (const auto& entry : fs::directory_iterator(opt.pred_dir)) {
            if (entry.is_directory() && fs::exists(entry.path() / "boundaries.csv")) {
                scan_dirs.push_back(entry.path());
            }
        }
        std::sort(scan_dirs.begin(), scan_dirs.end());
    }
    if (scan_dirs.empty()) {
        std::cerr << "audit: no scans under " << opt.pred_dir << "\n";
        return kExitValidationError;
    }
    long long total = 0;
    for (const fs::path& dir : scan_dirs) {
        const LabeledScan scan = load_scan(dir, schema);
        BoundarySet set{scan.gt_boundaries};
        LesionMasks lesions{scan.gt_lesions, true, schema.lesion_names};
        const ViolationReport rep = audit_topology(set, lesions, schema);
        if (rep.total() > 0) {
            std::cout << dir.string() << ": " << rep.ordering << " ordering, "
                      << rep.confinement << " confinement violations";
            if (rep.confinement > 0) {
                std::cout << " (first at lesion " << schema.lesion_names[rep.first_lesion]
                          << ", row " << rep.first_row << ", col " << rep.first_col << ")";
            }
            std::cout << "\n";
        }
        total += rep.total();
    }
    if (total == 0) {
        std::cerr << "audit: " << scan_dirs.size() << " scans clean\n";
        return kExitOk;
    }
    std::cerr << "audit: " << total << " violations\n";
    return kExitCheckFailure;
}

struct RenderOptions {
    std::string scan_dir, out_path, schema_path;
};

// Fig-style overlay palette: white boundaries, green SRF, red IRF, orange
// for the third lesion type; magenta past that.
void lesion_color(const std::string& name, int index, std::uint8_t rgb[3]) {
    if (name == "IRF") {
        rgb[0] = 235;
        rgb[1] = 60;
        rgb[2] = 60;
    } else if (name == "SRF") {
        rgb[0] = 70;
        rgb[1] = 220;
        rgb[2] = 90;
    } else if (name == "PED" || name == "SHRM") {
        rgb[0] = 245;
        rgb[1] = 160;
        rgb[2] = 40;
    } else {
        const std::uint8_t cycle[3][3] = {{230, 70, 230}, {70, 220, 220}, {230, 230, 70}};
        const std::uint8_t* c = cycle[index % 3];
        rgb[0] = c[0];
        rgb[1] = c[1];
        rgb[2] = c[2];
    }
}

int cmd_render(const RenderOptions& opt) {
    fs::path schema_path = opt.schema_path;
    if (schema_path.empty()) {
        const fs::path guess = fs::path(opt.scan_dir).parent_path() / "schema.json";
        if (!fs::exists(guess)) {
            std::cerr << "render: no --schema given and " << guess.string() << " not found\n";
            return kExitValidationError;
        }
        schema_path = guess;
    }
    const TopologySchema schema = TopologySchema::load(schema_path);
    const LabeledScan scan = load_scan(opt.scan_dir, schema);
    const int H = scan.rows(), W = scan.cols();
    const int S = schema.num_surfaces(), K = schema.num_lesions();

    RgbImage img;
    img.rows = H;
    img.cols = W;
    img.pixels.assign(static_cast<size_t>(H) * W * 3, 0);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const auto g = static_cast<std::uint8_t>(
                std::lround(std::clamp(scan.image.data()[static_cast<size_t>(r) * W + c], 0.0,
                                       1.0) *
                            255.0));
            img.set(r, c, g, g, g);
        }
    }
    for (int k = 0; k < K; ++k) {  // tinted lesion overlays
        std::uint8_t rgb[3];
        lesion_color(schema.lesion_names[k], k, rgb);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                if (scan.gt_lesions.data()[(static_cast<size_t>(k) * H + r) * W + c] < 0.5) {
                    continue;
                }
                const size_t i = (static_cast<size_t>(r) * W + c) * 3;
                for (int ch = 0; ch < 3; ++ch) {
                    img.pixels[i + ch] =
                        static_cast<std::uint8_t>((img.pixels[i + ch] + rgb[ch]) / 2);
                }
            }
        }
    }
    for (int s = 0; s < S; ++s) {  // white boundary polylines
        for (int c = 0; c < W; ++c) {
            const double y0 = scan.gt_boundaries.data()[static_cast<size_t>(s) * W + c];
            const double y1 = scan.gt_boundaries.data()[static_cast<size_t>(s) * W +
                                                        std::min(c + 1, W - 1)];
            const int lo = static_cast<int>(std::lround(std::min(y0, y1)));
            const int hi = static_cast<int>(std::lround(std::max(y0, y1)));
            for (int r = std::max(0, lo); r <= std::min(H - 1, hi); ++r) {
                img.set(r, c, 255, 255, 255);
            }
        }
    }

    const fs::path out(opt.out_path);
    if (out.extension() == ".png") {
        write_png(out, img);
    } else if (out.extension() == ".ppm") {
        write_ppm(out, img);
    } else if (out.extension() == ".pgm") {
        GrayImage gray;
        gray.rows = H;
        gray.cols = W;
        gray.pixels.resize(static_cast<size_t>(H) * W);
        for (size_t i = 0; i < gray.pixels.size(); ++i) {
            gray.pixels[i] = (img.pixels[3 * i] * 0.299 + img.pixels[3 * i + 1] * 0.587 +
                              img.pixels[3 * i + 2] * 0.114) /
                             255.0;
        }
        write_pgm8(out, gray);
    } else {
        std::cerr << "render: unsupported extension " << out.extension() << "\n";
        return kExitValidationError;
    }
    json manifest;
    manifest["scan"] = opt.scan_dir;
    manifest["schema"] = schema_path.string();
    manifest["out"] = opt.out_path;
    write_json(out.string() + ".manifest.json",
               json{{"tool", "octseg"},
                    {"version", kToolVersion},
                    {"command", "render"},
                    {"config", manifest}});
    std::cerr << "render: wrote " << opt.out_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"octseg: topology-guaranteed OCT layer/lesion segmentation toolkit"};
    app.require_subcommand(1);

    GenOptions gen_opt;
    CLI::App* gen = app.add_subcommand("gen", "generate synthetic labeled scans");
    gen->add_option("--config", gen_opt.config_path, "scene/schema JSON");
    gen->add_option("--out", gen_opt.out_dir, "output directory")->required();
    gen->add_option("--count", gen_opt.count, "number of scans");
    gen->add_option("--seed", gen_opt.seed, "master seed");

    TrainOptions train_opt;
    CLI::App* train = app.add_subcommand("train", "train the model");
    train->add_option("--config", train_opt.config_path, "experiment JSON");
    train->add_option("--data", train_opt.data_dir, "dataset root (train/ val/ [test/])");
    train->add_option("--out", train_opt.out_dir, "output directory")->required();

    EvalOptions eval_opt;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", eval_opt.ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", eval_opt.data_dir, "dataset directory")->required();
    eval->add_option("--out", eval_opt.out_dir, "output directory");

    AblateOptions ablate_opt;
    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation arm suite");
    ablate->add_option("--config", ablate_opt.config_path, "experiment JSON");
    ablate->add_option("--out", ablate_opt.out_dir, "output directory")->required();

    GradcheckOptions grad_opt;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--op", grad_opt.op_filter, "restrict to ops containing this name");
    gradcheck->add_option("--out", grad_opt.out_dir, "optional output directory");

    AuditOptions audit_opt;
    CLI::App* audit = app.add_subcommand("audit", "check ordering/confinement violations");
    audit->add_option("--pred", audit_opt.pred_dir, "scan or dataset directory")->required();
    audit->add_option("--schema", audit_opt.schema_path, "topology schema JSON");

    RenderOptions render_opt;
    CLI::App* render = app.add_subcommand("render", "overlay boundaries and lesions");
    render->add_option("--scan", render_opt.scan_dir, "scan directory")->required();
    render->add_option("--out", render_opt.out_path, "output image (.png/.ppm/.pgm)")
        ->required();
    render->add_option("--schema", render_opt.schema_path, "topology schema JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidationError;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_opt);
        if (train->parsed()) return cmd_train(train_opt);
        if (eval->parsed()) return cmd_eval(eval_opt);
        if (ablate->parsed()) return cmd_ablate(ablate_opt);
        if (gradcheck->parsed()) return cmd_gradcheck(grad_opt);
        if (audit->parsed()) return cmd_audit(audit_opt);
        if (render->parsed()) return cmd_render(render_opt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidationError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIoError;
    } catch (const std::runtime_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIoError;
    }
    return kExitOk;
}
