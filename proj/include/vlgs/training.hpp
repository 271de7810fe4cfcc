#pragma once

#include "vlgs/augmentation.hpp"
#include "vlgs/fusion.hpp"
#include "vlgs/rasterizer.hpp"
#include "vlgs/scene.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vlgs {

enum class ParamGroup { Position, Scale, Rotation, Color, Opacity, Feature, Indicator, Attention };
inline constexpr std::size_t kParamGroups = 8;
inline constexpr std::array<ParamGroup, kParamGroups> kAllGroups = {
    ParamGroup::Position, ParamGroup::Scale,   ParamGroup::Rotation,  ParamGroup::Color,
    ParamGroup::Opacity,  ParamGroup::Feature, ParamGroup::Indicator, ParamGroup::Attention};

std::string to_string(ParamGroup group);

struct LearningRates {
    double position = 1.6e-4;
    double scale = 5e-3;
    double rotation = 1e-3;
    double color = 5e-3;
    double opacity = 5e-2;
    double feature = 5e-3;
    double indicator = 5e-2;
    double attention = 5e-3;

    double operator[](ParamGroup group) const;
    double& operator[](ParamGroup group);

    friend bool operator==(const LearningRates&, const LearningRates&) = default;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Camera-view blending variants: full, or with one component pinned, or off.
enum class BlendMode { Full, NoRotation, NoTranslation, NoSsim, Off };
BlendMode parse_blend_mode(const std::string& text);
std::string to_string(BlendMode mode);
BlendOptions blend_options(BlendMode mode);

struct TrainConfig {
    double lambda = 1.2;
    std::int64_t iterations = 15000;
    LearningRates lr;
    AdamConfig adam;
    std::uint64_t seed = 0;
    FusionMode fusion = FusionMode::SelfAttention;
    IndicatorMode indicator;
    BlendMode blend = BlendMode::Full;
    RatioSampler ratio;
    RasterSettings raster{1.0 / 255.0, 1e-4, true, 1};

    /// Throws InvalidParameter when a rate is not positive, lambda < 0 or iterations < 0.
    void validate() const;
    RasterOptions raster_options() const { return {indicator, fusion, raster}; }
    /// True when the blended view contributes to the objective.
    bool blending_active() const { return blend != BlendMode::Off && lambda != 0.0; }

    /// Canonical text of every field that affects the result (threads excluded).
    std::string canonical() const;
    /// FNV-1a 64 of canonical(), hex encoded.
    std::string hash() const;
};

struct Dataset {
    std::vector<TrainSample> train;
    std::vector<TrainSample> test;
    int feature_dim = kDefaultFeatureDim;
};

/// Mean over pixels of the per-channel MSE of color plus that of semantics.
double raster_loss(const RenderOutput& out, const TrainSample& sample);
/// Also writes dLoss/dC and dLoss/dF.
double raster_loss(const RenderOutput& out, const TrainSample& sample, Image& d_color, FeatureMap& d_semantics);

/// weight * mean-pixel MSE of the semantic render against the blended map.
double blend_loss(const FeatureMap& rendered, const BlendSample& blend);
double blend_loss(const FeatureMap& rendered, const BlendSample& blend, FeatureMap& d_semantics);

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

/// One bias-corrected Adam update. Returns false and leaves everything
/// untouched when the gradient has a non-finite entry.
bool adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, double lr,
               const AdamConfig& cfg);

struct OptimizerState {
    std::array<AdamMoments, kParamGroups> groups;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Flat views of one parameter group.
std::vector<std::span<double>> group_blocks(GaussianCloud& cloud, AttentionWeights& weights, ParamGroup group);
std::vector<std::span<const double>> group_blocks(const GaussianCloud& cloud, const AttentionWeights& weights,
                                                  ParamGroup group);

struct TrainState {
    GaussianCloud cloud;
    AttentionWeights weights;
    OptimizerState optimizer;
    std::int64_t iteration = 0;
    /// Separate streams so pair selection does not depend on whether blending draws ratios.
    std::mt19937_64 pair_rng;
    std::mt19937_64 ratio_rng;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Fresh optimizer state and random streams seeded from cfg.seed.
TrainState make_train_state(GaussianCloud cloud, AttentionWeights weights, const TrainConfig& cfg);

struct StepLosses {
    std::int64_t iteration = 0;
    double l1 = 0.0;
    double l2 = 0.0;
    double lb = 0.0;
    double total = 0.0;

    friend bool operator==(const StepLosses&, const StepLosses&) = default;
};

/// Loss and gradient of L = raster(s1) + raster(s2) + lambda * blend(b) for a
/// given blend sample (ignored when blending is inactive).
StepLosses objective(const GaussianCloud& cloud, const AttentionWeights& weights, const TrainSample& s1,
                     const TrainSample& s2, const BlendSample* blend, const TrainConfig& cfg,
                     SceneGradients* grads);

/// One optimization step on the pair (s1, s2). Group updates whose gradient
/// is non-finite are skipped and reported through `warn`.
StepLosses train_step(TrainState& state, const TrainSample& s1, const TrainSample& s2, const TrainConfig& cfg,
                      const std::function<void(const std::string&)>& warn = {});

struct TrainHooks {
    std::function<void(const std::string&)> warn;
    std::function<void(const StepLosses&)> on_step;
    /// Called every checkpoint_every iterations (0 disables).
    std::function<void(const TrainState&)> on_checkpoint;
    std::int64_t checkpoint_every = 0;
};

/// Runs cfg.iterations - state.iteration steps on uniformly drawn distinct
/// training pairs. Throws NumericFailure when the loss stops being finite.
std::vector<StepLosses> train(const Dataset& data, TrainState& state, const TrainConfig& cfg,
                              const TrainHooks& hooks = {});

/// "iter,L1,L2,Lb,total" rows.
void write_loss_csv(std::ostream& out, const std::vector<StepLosses>& trace);

/// Color MSE and semantic MSE of a render against a sample.
struct ViewError {
    double color_mse = 0.0;
    double semantic_mse = 0.0;
    double psnr = 0.0;
};
ViewError view_error(const RenderOutput& out, const TrainSample& sample);

}  // namespace vlgs
