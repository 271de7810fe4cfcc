#pragma once

#include "vlgs/fusion.hpp"
#include "vlgs/projection.hpp"
#include "vlgs/scene.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vlgs {

inline constexpr int kTileSize = 16;

/// Which per-Gaussian weight drives the language compositing chain.
struct IndicatorMode {
    enum class Kind { Learned, ColorOpacity, Fixed };
    Kind kind = Kind::Learned;
    double value = 0.5;  // used by Fixed

    static IndicatorMode learned() { return {}; }
    static IndicatorMode color_opacity() { return {Kind::ColorOpacity, 0.0}; }
    static IndicatorMode fixed(double v);

    /// "learned" | "opacity" | "fixed:<value>"
    static IndicatorMode parse(const std::string& text);
    std::string to_string() const;

    friend bool operator==(const IndicatorMode&, const IndicatorMode&) = default;
};

struct RasterSettings {
    double alpha_floor = 1.0 / 255.0;   // contributions with alpha*P below this are skipped
    double min_transmittance = 1e-4;    // a chain stops once its transmittance would fall below this
    bool tiled = false;                 // 16x16 tile lists instead of scanning every Gaussian per pixel
    int threads = 1;

    /// No floor and no early stop; the exact compositing sum.
    static RasterSettings exact(bool tiled = false) { return {0.0, 0.0, tiled, 1}; }

    friend bool operator==(const RasterSettings&, const RasterSettings&) = default;
};

struct RasterOptions {
    IndicatorMode indicator;
    FusionMode fusion = FusionMode::SelfAttention;
    RasterSettings settings;

    friend bool operator==(const RasterOptions&, const RasterOptions&) = default;
};

// Per projected Gaussian, depth order.
struct Splat {
    ProjectedGaussian projected;
    double opacity = 0.0;
    double indicator = 0.0;  // weight of the language chain after the mode is applied
    Eigen::VectorXd fused;   // u = fuse(c, f)
};

// Forward state kept for the backward pass.
struct RenderAux {
    Camera camera;
    RasterOptions options;
    std::size_t cloud_size = 0;
    std::vector<Splat> splats;
    std::vector<double> final_transmittance_color;     // per pixel
    std::vector<double> final_transmittance_language;  // per pixel
    std::vector<std::uint32_t> contributors_color;     // per pixel, number of blended Gaussians
    std::vector<std::uint32_t> contributors_language;
};

struct RenderOutput {
    Image color;
    FeatureMap semantics;
    RenderAux aux;
};

// Gradients with the same layout as the parameters they belong to.
struct SceneGradients {
    GaussianCloud cloud;
    AttentionWeights attention;

    static SceneGradients zeros(const GaussianCloud& like, const AttentionWeights& weights);
    SceneGradients& operator+=(const SceneGradients& other);
};

RenderOutput rasterize(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                       const RasterOptions& options = {});

/// Untiled per-pixel compositing over all projected Gaussians in extended
/// precision, without floor or early stop.
RenderOutput rasterize_reference(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                                 const RasterOptions& options = {});

/// Exact gradients of <dC, C> + <dF, F> for the render in `forward`.
/// Throws InvalidState when `forward` does not belong to this cloud/camera.
SceneGradients rasterize_backward(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                                  const RenderOutput& forward, const Image& d_color, const FeatureMap& d_semantics);

/// Same as rasterize_backward but accumulates into `grads`.
void rasterize_backward_into(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                             const RenderOutput& forward, const Image& d_color, const FeatureMap& d_semantics,
                             SceneGradients& grads);

}  // namespace vlgs
