#pragma once

#include "vlgs/common.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace vlgs {

inline constexpr int kColorDim = 3;
inline constexpr int kDefaultFeatureDim = 3;
inline constexpr double kInitialActivation = 0.1;

/// Logistic sigmoid. Throws InvalidParameter on non-finite input.
double activate(double logit);

/// Inverse of activate on (0,1).
double inverse_activate(double probability);

/// Rotation matrix of the normalized quaternion (w, x, y, z).
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q);

/// Unit quaternion (w, x, y, z) of a rotation matrix.
Eigen::Vector4d matrix_to_quaternion(const Eigen::Matrix3d& r);

/// Hamilton product a * b, both (w, x, y, z).
Eigen::Vector4d quaternion_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b);

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Eigen::Matrix3d build_covariance(const Eigen::Vector3d& log_scale, const Eigen::Vector4d& rotation);

// Learnable per-Gaussian parameters. Colors, opacities and indicators are
// stored pre-activation; see the accessors for the activated values.
struct GaussianCloud {
    int feature_dim = kDefaultFeatureDim;

    std::vector<double> positions;         // N x 3
    std::vector<double> log_scales;        // N x 3
    std::vector<double> rotations;         // N x 4, (w, x, y, z), unnormalized
    std::vector<double> opacity_logits;    // N
    std::vector<double> color_logits;      // N x 3
    std::vector<double> features;          // N x feature_dim
    std::vector<double> indicator_logits;  // N

    GaussianCloud() = default;
    explicit GaussianCloud(std::size_t count, int feature_dim = kDefaultFeatureDim);

    std::size_t size() const { return opacity_logits.size(); }

    Eigen::Vector3d position(std::size_t i) const;
    Eigen::Vector3d log_scale(std::size_t i) const;
    /// Normalized rotation.
    Eigen::Vector4d rotation(std::size_t i) const;
    double opacity(std::size_t i) const { return activate(opacity_logits[i]); }
    double indicator(std::size_t i) const { return activate(indicator_logits[i]); }
    Eigen::Vector3d color(std::size_t i) const;
    std::span<const double> feature(std::size_t i) const;

    /// Appends one Gaussian from activated values.
    void push_back(const Eigen::Vector3d& position, const Eigen::Vector3d& log_scale,
                   const Eigen::Vector4d& rotation, double opacity, const Eigen::Vector3d& color,
                   std::span<const double> feature, double indicator);

    /// Throws InvalidParameter when shapes disagree or any entry is non-finite.
    void validate() const;

    friend bool operator==(const GaussianCloud&, const GaussianCloud&) = default;
};

struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // world-to-camera, (w, x, y, z)
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // x_cam = R x_world + t

    Eigen::Matrix3d rotation_matrix() const { return quaternion_to_matrix(rotation); }
    /// Camera center in world coordinates, -R^T t.
    Eigen::Vector3d center() const;
    void set_center(const Eigen::Vector3d& center);

    /// Throws InvalidParameter when the intrinsics or rotation are invalid.
    void validate() const;

    bool same_intrinsics(const Camera& other) const;

    /// Camera at `eye` looking at `target`; image y axis points along -up.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fx, double fy, int width, int height);

    friend bool operator==(const Camera&, const Camera&) = default;
};

}  // namespace vlgs
