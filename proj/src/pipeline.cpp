#include "vlgs/pipeline.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace vlgs {

TrainRun train_scene(const Scene& scene, const TrainConfig& cfg, const InitOptions& init, const TrainHooks& hooks) {
    cfg.validate();
    if (scene.points.empty()) {
        throw InvalidParameter(fmt::format("scene '{}' has no initialization points", scene.root.string()));
    }
    const Dataset data = scene.dataset();
    if (data.train.size() < 2) {
        throw InvalidParameter("training needs at least two training frames");
    }
    InitOptions io = init;
    io.seed = cfg.seed;
    GaussianCloud cloud = initialize_cloud(scene.points, scene.feature_dim, io);
    std::mt19937_64 wrng(cfg.seed ^ 0x5bd1e995ULL);
    AttentionWeights weights = AttentionWeights::initialized(3, scene.feature_dim, kDefaultAttentionDim, wrng);
    TrainRun run;
    TrainState state = make_train_state(std::move(cloud), std::move(weights), cfg);
    run.trace = train(data, state, cfg, hooks);
    run.checkpoint = make_checkpoint(state, cfg);
    return run;
}

EvalMode parse_eval_mode(const std::string& text) {
    if (text == "segment") return EvalMode::Segment;
    if (text == "localize") return EvalMode::Localize;
    throw InvalidParameter(fmt::format("unknown eval mode '{}' (expected segment|localize)", text));
}

EvalSplit parse_eval_split(const std::string& text) {
    if (text == "test") return EvalSplit::Test;
    if (text == "train") return EvalSplit::Train;
    if (text == "all") return EvalSplit::All;
    throw InvalidParameter(fmt::format("unknown split '{}' (expected test|train|all)", text));
}

RenderOutput render_checkpoint(const Checkpoint& ckpt, const Camera& cam, int threads) {
    RasterOptions opts;
    opts.fusion = ckpt.fusion;
    opts.indicator = ckpt.indicator;
    opts.settings.tiled = true;
    opts.settings.threads = threads;
    return rasterize(ckpt.state.cloud, cam, ckpt.state.weights, opts);
}

EvalResult evaluate(const Checkpoint& ckpt, const Scene& scene, const EvalOptions& opts) {
    if (!scene.has_annotations()) {
        throw InvalidParameter(fmt::format("scene '{}' has no label annotations or queries", scene.root.string()));
    }
    const QuerySet& q = *scene.queries;
    const int classes = static_cast<int>(q.size());
    IouAccumulator iou(classes);
    LocalizationAccumulator loc;
    EvalResult r;
    double psnr = 0.0;
    for (const Frame& f : scene.frames) {
        const bool use = opts.split == EvalSplit::All || (opts.split == EvalSplit::Test) == f.held_out;
        if (!use) continue;
        const RenderOutput out = render_checkpoint(ckpt, f.sample.camera, opts.threads);
        psnr += view_error(out, f.sample).psnr;
        ++r.frames;
        const RelevancyMap rel = relevancy(out.semantics, q, opts.min_norm);
        if (opts.mode == EvalMode::Segment) {
            if (opts.threshold < 0.0) {
                iou.add(segment_argmax(rel), *f.labels);
            } else {
                for (int c = 0; c < classes; ++c) {
                    iou.add(c, segment_threshold(rel, c, opts.threshold), label_mask(*f.labels, c));
                }
            }
        } else {
            std::set<int> present;
            for (const Box& b : f.boxes) present.insert(b.label);
            for (int label : present) loc.add(localize(rel, label), label, f.boxes);
        }
    }
    if (r.frames == 0) throw InvalidParameter("the selected split has no frames");
    r.psnr = psnr / static_cast<double>(r.frames);
    r.miou = iou.mean();
    r.accuracy = loc.accuracy();
    for (int c = 0; c < classes; ++c) r.class_iou.push_back(iou.iou(c));
    return r;
}

std::string EvalResult::to_json(const EvalOptions& opts) const {
    nlohmann::ordered_json j;
    j["mode"] = opts.mode == EvalMode::Segment ? "segment" : "localize";
    j["frames"] = frames;
    j["psnr"] = psnr;
    if (opts.mode == EvalMode::Segment) {
        j["segmentation"] = opts.threshold < 0.0 ? "argmax" : fmt::format("threshold:{}", opts.threshold);
        j["miou"] = miou;
        j["class_iou"] = class_iou;
    } else {
        j["accuracy"] = accuracy;
    }
    return j.dump(2);
}

std::vector<std::size_t> indicator_histogram(const GaussianCloud& cloud, int bins) {
    if (bins < 1) throw InvalidParameter("histogram needs at least one bin");
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double d = cloud.indicator(i) - cloud.opacity(i);
        const int b = std::clamp(static_cast<int>(std::floor((d + 1.0) * 0.5 * bins)), 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
    return counts;
}

}  // namespace vlgs
