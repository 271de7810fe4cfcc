#pragma once

#include "vlgs/scene.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace vlgs {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr double kCullSigmas = 3.0;

struct ProjectedGaussian {
    std::size_t index = 0;  // position in the source cloud
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();  // cov2d^{-1}
    double depth = 0.0;
    double radius = 0.0;  // 3 sigma of the major axis, pixels
};

/// Projects every Gaussian in front of the near plane whose 3-sigma box touches
/// the image. Output is sorted by depth, ties broken by source index.
std::vector<ProjectedGaussian> project(const GaussianCloud& cloud, const Camera& cam);

/// Projection of a single Gaussian without culling. Returns false when the
/// Gaussian lies behind the near plane.
bool project_one(const GaussianCloud& cloud, const Camera& cam, std::size_t index, ProjectedGaussian& out);

/// exp(-1/2 d^T cov2d^{-1} d), d = v - mean2d.
double gaussian_weight(const Eigen::Vector2d& v, const ProjectedGaussian& pg);

struct ProjectionGradient {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    Eigen::Vector4d rotation = Eigen::Vector4d::Zero();  // w.r.t. the stored, unnormalized quaternion
};

/// Pulls gradients on mean2d and cov2d (full 2x2, symmetric) back to the 3D parameters.
ProjectionGradient project_backward(const GaussianCloud& cloud, const Camera& cam, std::size_t index,
                                    const Eigen::Vector2d& d_mean2d, const Eigen::Matrix2d& d_cov2d);

}  // namespace vlgs
