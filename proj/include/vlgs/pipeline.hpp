#pragma once

#include "vlgs/io.hpp"
#include "vlgs/synthetic.hpp"

#include <functional>
#include <string>
#include <vector>

namespace vlgs {

struct TrainRun {
    Checkpoint checkpoint;
    std::vector<StepLosses> trace;
};

/// Initializes a cloud from the scene's points (plus attention weights drawn
/// from cfg.seed) and trains it.
TrainRun train_scene(const Scene& scene, const TrainConfig& cfg, const InitOptions& init,
                     const TrainHooks& hooks = {});

enum class EvalMode { Segment, Localize };
enum class EvalSplit { Test, Train, All };
EvalMode parse_eval_mode(const std::string& text);
EvalSplit parse_eval_split(const std::string& text);

struct EvalOptions {
    EvalMode mode = EvalMode::Segment;
    /// Negative: argmax segmentation. Otherwise per-query masks at this threshold.
    double threshold = -1.0;
    double min_norm = kSyntheticMinNorm;
    EvalSplit split = EvalSplit::Test;
    int threads = 1;
};

struct EvalResult {
    double miou = 0.0;
    double accuracy = 0.0;  // localization
    double psnr = 0.0;      // mean color PSNR over the evaluated frames
    std::size_t frames = 0;
    std::vector<double> class_iou;

    std::string to_json(const EvalOptions& opts) const;
};

/// Throws InvalidParameter when the scene has no annotations or queries.
EvalResult evaluate(const Checkpoint& ckpt, const Scene& scene, const EvalOptions& opts);

RenderOutput render_checkpoint(const Checkpoint& ckpt, const Camera& cam, int threads = 1);

/// Counts of l - o over [-1, 1] in equal bins; one entry per bin.
std::vector<std::size_t> indicator_histogram(const GaussianCloud& cloud, int bins = 256);

}  // namespace vlgs
