#include "vlgs/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vlgs;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
    std::uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false;
};

struct TrainFlags {
    std::int64_t iters = 15000;
    double lambda = 1.2;
    std::string fusion = "self";
    std::string indicator = "learned";
    std::string blend = "full";
    std::string ratio = "beta";
    double jitter = InitOptions{}.jitter;
    double distractors = InitOptions{}.distractor_ratio;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--iters", iters, "training iterations")->capture_default_str();
        cmd->add_option("--lambda", lambda, "weight of the blended-view loss")->capture_default_str();
        cmd->add_option("--fusion", fusion, "self|cross|mlp1|none")->capture_default_str();
        cmd->add_option("--indicator", indicator, "learned|opacity|fixed:<k>")->capture_default_str();
        cmd->add_option("--blend", blend, "full|no-rot|no-trans|no-ssim|off")->capture_default_str();
        cmd->add_option("--ratio", ratio, "beta[:s]|uniform|gauss|fixed:<k>")->capture_default_str();
        cmd->add_option("--jitter", jitter, "position noise of the initial cloud")->capture_default_str();
        cmd->add_option("--distractors", distractors, "extra random Gaussians per point")->capture_default_str();
    }

    TrainConfig config(const Globals& g) const {
        TrainConfig cfg;
        cfg.iterations = iters;
        cfg.lambda = lambda;
        cfg.fusion = parse_fusion_mode(fusion);
        cfg.indicator = IndicatorMode::parse(indicator);
        cfg.blend = parse_blend_mode(blend);
        cfg.ratio = RatioSampler::parse(ratio);
        cfg.seed = g.seed;
        cfg.raster.threads = g.threads;
        cfg.validate();
        return cfg;
    }

    InitOptions init() const {
        InitOptions o;
        o.jitter = jitter;
        o.distractor_ratio = distractors;
        return o;
    }
};

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw LoadError(fmt::format("cannot write '{}'", path.string()));
}

std::pair<int, int> parse_size(const std::string& text) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream in(text);
    if (!(in >> w >> x >> h) || x != 'x' || !in.eof()) {
        throw InvalidParameter(fmt::format("--size expects WxH, got '{}'", text));
    }
    return {w, h};
}

// RFC-4180 field.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// ---- generate ----

int cmd_generate(const Globals& g, const fs::path& out, int objects, int views, const std::string& size, bool glare,
                 bool backdrop) {
    SyntheticSpec spec;
    spec.objects = objects;
    spec.views = views;
    std::tie(spec.width, spec.height) = parse_size(size);
    spec.seed = g.seed;
    spec.glare = glare;
    spec.backdrop = backdrop;
    fmt::print("{}\n", generate_synthetic(spec, out).string());
    return kOk;
}

// ---- train ----

int cmd_train(const Globals& g, const fs::path& scene_dir, const fs::path& out, const TrainFlags& flags,
              std::int64_t checkpoint_every, std::int64_t log_every) {
    const TrainConfig cfg = flags.config(g);
    const Scene scene = load_scene(scene_dir);
    TrainHooks hooks;
    hooks.warn = [](const std::string& m) { fmt::print(stderr, "warning: {}\n", m); };
    if (log_every > 0) {
        hooks.on_step = [log_every](const StepLosses& s) {
            if (s.iteration % log_every == 0) {
                fmt::print(stderr, "iter {:6d}  L1 {:.6f}  L2 {:.6f}  Lb {:.6f}  total {:.6f}\n", s.iteration, s.l1,
                           s.l2, s.lb, s.total);
            }
        };
    }
    if (checkpoint_every > 0) {
        hooks.checkpoint_every = checkpoint_every;
        hooks.on_checkpoint = [&](const TrainState& st) {
            save_checkpoint(make_checkpoint(st, cfg), out / "snapshots" / fmt::format("iter_{:06d}", st.iteration));
        };
    }
    const TrainRun run = train_scene(scene, cfg, flags.init(), hooks);
    save_checkpoint(run.checkpoint, out);
    std::ostringstream csv;
    write_loss_csv(csv, run.trace);
    write_file(out / "loss.csv", csv.str());
    fmt::print("{}\n", out.string());
    return kOk;
}

// ---- render ----

Camera resolve_camera(const std::string& spec, const std::optional<Scene>& scene) {
    if (spec.rfind("frame:", 0) == 0) {
        if (!scene) throw InvalidParameter("--camera frame:<i> needs --scene");
        std::size_t idx = 0;
        try {
            std::size_t used = 0;
            idx = std::stoul(spec.substr(6), &used);
            if (used != spec.size() - 6) throw std::invalid_argument(spec);
        } catch (const std::logic_error&) {
            throw InvalidParameter(fmt::format("bad frame index in '{}'", spec));
        }
        if (idx >= scene->frames.size()) {
            throw InvalidParameter(fmt::format("frame {} out of range (scene has {})", idx, scene->frames.size()));
        }
        return scene->frames[idx].sample.camera;
    }
    if (fs::is_regular_file(spec)) {
        std::ifstream in(spec);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_camera_json(ss.str(), spec);
    }
    return parse_camera_json(spec, "--camera");
}

int cmd_render(const Globals& g, const fs::path& ckpt_dir, const std::string& camera,
               const std::optional<fs::path>& scene_dir, const std::string& prefix) {
    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    std::optional<Scene> scene;
    if (scene_dir) scene = load_scene(*scene_dir);
    const Camera cam = resolve_camera(camera, scene);
    const RenderOutput out = render_checkpoint(ckpt, cam, g.threads);

    save_png(prefix + "_color.png", out.color);
    FeatureMap color(out.color.width(), out.color.height(), 3);
    color.values() = out.color.values();
    save_tensor(prefix + "_color.mgst", feature_map_tensor(color));
    save_tensor(prefix + "_features.mgst", feature_map_tensor(out.semantics));
    if (scene && scene->queries) {
        const RelevancyMap rel = relevancy(out.semantics, *scene->queries);
        for (int q = 0; q < rel.queries(); ++q) {
            std::vector<double> v(static_cast<std::size_t>(rel.width()) * rel.height());
            for (int y = 0; y < rel.height(); ++y) {
                for (int x = 0; x < rel.width(); ++x) {
                    v[static_cast<std::size_t>(y) * rel.width() + x] = rel.probs.at(x, y, q);
                }
            }
            save_png(fmt::format("{}_heat_{}.png", prefix, scene->queries->labels[q]),
                     heatmap(v, rel.width(), rel.height()));
        }
    }
    const auto hist = indicator_histogram(ckpt.state.cloud);
    std::string csv = "bin_lo,bin_hi,count\n";
    const double w = 2.0 / static_cast<double>(hist.size());
    for (std::size_t b = 0; b < hist.size(); ++b) {
        csv += fmt::format("{},{},{}\n", -1.0 + w * b, -1.0 + w * (b + 1), hist[b]);
    }
    write_file(prefix + "_hist.csv", csv);
    return kOk;
}

// ---- eval ----

int cmd_eval(const Globals& g, const fs::path& ckpt_dir, const fs::path& scene_dir, EvalOptions opts,
             const std::optional<fs::path>& out) {
    opts.threads = g.threads;
    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    const Scene scene = load_scene(scene_dir);
    const std::string json = evaluate(ckpt, scene, opts).to_json(opts);
    fmt::print("{}\n", json);
    if (out) write_file(*out, json + "\n");
    return kOk;
}

// ---- ablate ----

struct Axis {
    std::string name;
    std::vector<std::string> values;
};

// "preset" or "axis=v1,v2;axis=v3,..."; axes combine as a Cartesian product.
std::vector<Axis> parse_grid(const std::string& spec) {
    static const std::map<std::string, Axis> presets = {
        {"indicator", {"indicator", {"learned", "opacity", "fixed:0.5", "fixed:1.0"}}},
        {"ratio", {"ratio", {"fixed:0.5", "fixed:0.75", "fixed:1.0", "uniform", "gauss", "beta"}}},
        {"fusion", {"fusion", {"none", "mlp1", "cross", "self"}}},
        {"blend", {"blend", {"off", "no-rot", "no-trans", "no-ssim", "full"}}},
    };
    std::vector<Axis> axes;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.empty()) continue;
        const auto eq = part.find('=');
        if (eq == std::string::npos) {
            const auto it = presets.find(part);
            if (it == presets.end()) throw InvalidParameter(fmt::format("unknown grid preset '{}'", part));
            axes.push_back(it->second);
            continue;
        }
        Axis a{part.substr(0, eq), {}};
        if (a.name != "fusion" && a.name != "indicator" && a.name != "blend" && a.name != "ratio" &&
            a.name != "lambda") {
            throw InvalidParameter(fmt::format("unknown grid axis '{}'", a.name));
        }
        std::stringstream vs(part.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) {
            if (!v.empty()) a.values.push_back(v);
        }
        if (a.values.empty()) throw InvalidParameter(fmt::format("grid axis '{}' has no values", a.name));
        axes.push_back(std::move(a));
    }
    if (axes.empty()) throw InvalidParameter("empty ablation grid");
    return axes;
}

int cmd_ablate(const Globals& g, const fs::path& scene_dir, const std::string& grid, const fs::path& out,
               const TrainFlags& base, EvalOptions eval) {
    const std::vector<Axis> axes = parse_grid(grid);
    const Scene scene = load_scene(scene_dir);
    eval.threads = g.threads;

    std::vector<std::vector<std::pair<std::string, std::string>>> variants = {{}};
    for (const Axis& a : axes) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& v : variants) {
            for (const std::string& value : a.values) {
                auto w = v;
                w.emplace_back(a.name, value);
                next.push_back(std::move(w));
            }
        }
        variants = std::move(next);
    }

    std::string csv = "variant,fusion,indicator,blend,ratio,lambda,iterations,miou,accuracy,psnr,final_loss\n";
    for (const auto& v : variants) {
        TrainFlags f = base;
        std::string label;
        for (const auto& [axis, value] : v) {
            if (axis == "fusion") f.fusion = value;
            if (axis == "indicator") f.indicator = value;
            if (axis == "blend") f.blend = value;
            if (axis == "ratio") f.ratio = value;
            if (axis == "lambda") f.lambda = std::stod(value);
            label += (label.empty() ? "" : ", ") + axis + "=" + value;
        }
        const TrainConfig cfg = f.config(g);
        fmt::print(stderr, "ablate: {}\n", label);
        const TrainRun run = train_scene(scene, cfg, f.init());
        EvalOptions seg = eval;
        seg.mode = EvalMode::Segment;
        const EvalResult rs = evaluate(run.checkpoint, scene, seg);
        EvalOptions loc = eval;
        loc.mode = EvalMode::Localize;
        const EvalResult rl = evaluate(run.checkpoint, scene, loc);
        const double final_loss = run.trace.empty() ? 0.0 : run.trace.back().total;
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(label), to_string(cfg.fusion),
                           csv_field(cfg.indicator.to_string()), to_string(cfg.blend),
                           csv_field(cfg.ratio.to_string()), cfg.lambda, cfg.iterations, rs.miou, rl.accuracy,
                           rs.psnr, final_loss);
    }
    write_file(out, csv);
    fmt::print("{}", csv);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language-embedded Gaussian splatting: generate, train, render, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", g.deterministic,
                 "reproducible output bytes (reductions are always fixed-order, so this is the default behavior)");

    auto* gen = app.add_subcommand("generate", "write a synthetic scene");
    fs::path gen_out;
    int objects = 3, views = 12;
    std::string size = "64x64";
    bool glare = false, backdrop = true;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--objects", objects)->capture_default_str();
    gen->add_option("--views", views)->capture_default_str();
    gen->add_option("--size", size, "WxH")->capture_default_str();
    gen->add_flag("--glare", glare, "add translucent glare clusters");
    gen->add_flag("--backdrop,!--no-backdrop", backdrop, "textured ground under the objects (default on)");

    auto* tr = app.add_subcommand("train", "train a scene");
    fs::path tr_scene, tr_out;
    TrainFlags tflags;
    std::int64_t ckpt_every = 0, log_every = 500;
    tr->add_option("--scene", tr_scene, "scene directory or manifest")->required();
    tr->add_option("--out", tr_out, "checkpoint directory")->required();
    tflags.add_to(tr);
    tr->add_option("--checkpoint-every", ckpt_every, "snapshot interval (0: off)")->capture_default_str();
    tr->add_option("--log-every", log_every, "progress interval on stderr (0: quiet)")->capture_default_str();

    auto* rd = app.add_subcommand("render", "render a checkpoint");
    fs::path rd_ckpt;
    std::optional<fs::path> rd_scene;
    std::string rd_camera, rd_out;
    rd->add_option("--ckpt", rd_ckpt)->required();
    rd->add_option("--camera", rd_camera, "frame:<i> or camera JSON (file or inline)")->required();
    rd->add_option("--scene", rd_scene, "scene for frame cameras and query heatmaps");
    rd->add_option("--out", rd_out, "output prefix")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    fs::path ev_ckpt, ev_scene;
    std::optional<fs::path> ev_out;
    std::string ev_mode = "segment", ev_split = "test";
    EvalOptions eopts;
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--scene", ev_scene)->required();
    ev->add_option("--mode", ev_mode, "segment|localize")->capture_default_str();
    ev->add_option("--threshold", eopts.threshold, "per-query mask threshold (default: argmax)");
    ev->add_option("--min-norm", eopts.min_norm, "feature norm at or below which a pixel is background")
        ->capture_default_str();
    ev->add_option("--split", ev_split, "test|train|all")->capture_default_str();
    ev->add_option("--out", ev_out, "also write the metrics JSON here");

    auto* ab = app.add_subcommand("ablate", "train and evaluate a grid of variants");
    fs::path ab_scene, ab_out;
    std::string ab_grid, ab_split = "test";
    TrainFlags aflags;
    EvalOptions aopts;
    ab->add_option("--scene", ab_scene)->required();
    ab->add_option("--grid", ab_grid, "preset (indicator|ratio|fusion|blend) or axis=v1,v2;...")->required();
    ab->add_option("--out", ab_out, "CSV path")->required();
    aflags.add_to(ab);
    ab->add_option("--min-norm", aopts.min_norm)->capture_default_str();
    ab->add_option("--split", ab_split, "test|train|all")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_generate(g, gen_out, objects, views, size, glare, backdrop);
        if (*tr) return cmd_train(g, tr_scene, tr_out, tflags, ckpt_every, log_every);
        if (*rd) return cmd_render(g, rd_ckpt, rd_camera, rd_scene, rd_out);
        if (*ev) {
            eopts.mode = parse_eval_mode(ev_mode);
            eopts.split = parse_eval_split(ev_split);
            return cmd_eval(g, ev_ckpt, ev_scene, eopts, ev_out);
        }
        if (*ab) {
            aopts.split = parse_eval_split(ab_split);
            return cmd_ablate(g, ab_scene, ab_grid, ab_out, aflags, aopts);
        }
    } catch (const NumericFailure& e) {
        fmt::print(stderr, "numeric failure: {}\n", e.what());
        return kNumeric;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kData;
    }
    return kUsage;
}
