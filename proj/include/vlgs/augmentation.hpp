#pragma once

#include "vlgs/common.hpp"
#include "vlgs/scene.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>

namespace vlgs {

/// One posed training view with its ground-truth language map.
struct TrainSample {
    Image image;
    Camera camera;
    FeatureMap gt_features;
};

/// Synthesized view between two training samples.
struct BlendSample {
    Camera pose;
    FeatureMap gt;
    double weight = 1.0;
    double k = 1.0;
};

/// Interpolates unit quaternions; k = 1 gives q1, k = 0 gives q2.
/// Falls back to a normalized lerp when |cos theta| > 0.995.
Eigen::Vector4d slerp(const Eigen::Vector4d& q1, const Eigen::Vector4d& q2, double k);

/// k t1 + (1 - k) t2.
Eigen::Vector3d lerp_translation(const Eigen::Vector3d& t1, const Eigen::Vector3d& t2, double k);

/// Beta(a, b) draw by Johnk's rejection method, evaluated in log space so
/// small shape parameters do not underflow.
double sample_beta(double a, double b, std::mt19937_64& rng);

struct RatioSampler {
    enum class Kind { Beta, Uniform, Gauss, Fixed };
    Kind kind = Kind::Beta;
    double value = 0.2;  // Beta shape (symmetric) or the fixed ratio

    static RatioSampler beta(double shape = 0.2) { return {Kind::Beta, shape}; }
    static RatioSampler uniform() { return {Kind::Uniform, 0.0}; }
    /// Standard normal clamped to [0, 1].
    static RatioSampler gauss() { return {Kind::Gauss, 0.0}; }
    static RatioSampler fixed(double k);

    /// "beta" | "beta:<shape>" | "uniform" | "gauss" | "fixed:<k>"
    static RatioSampler parse(const std::string& text);
    std::string to_string() const;

    double operator()(std::mt19937_64& rng) const;

    friend bool operator==(const RatioSampler&, const RatioSampler&) = default;
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;

/// Mean SSIM over pixels and channels with an 11x11 Gaussian window
/// (renormalized where it overlaps the border), clamped to [0, 1].
double ssim(const Image& a, const Image& b);

/// Which parts of the blended view follow the interpolation. Disabled parts
/// keep the first sample's value (weight 1 for ssim).
struct BlendOptions {
    bool rotation = true;
    bool translation = true;
    bool ssim_weight = true;

    friend bool operator==(const BlendOptions&, const BlendOptions&) = default;
};

BlendSample make_blend_sample(const TrainSample& s1, const TrainSample& s2, double k, const BlendOptions& options = {});

BlendSample make_blend_sample(const TrainSample& s1, const TrainSample& s2, const RatioSampler& sampler,
                              std::mt19937_64& rng, const BlendOptions& options = {});

}  // namespace vlgs
