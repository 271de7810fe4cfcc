#include "vlgs/projection.hpp"

#include <algorithm>
#include <cmath>

namespace vlgs {

namespace {

struct ProjectionTerms {
    Eigen::Vector3d x_cam;
    Eigen::Matrix3d view;           // world-to-camera rotation
    Eigen::Matrix<double, 2, 3> jacobian;
    Eigen::Matrix3d rotation;       // Gaussian rotation
    Eigen::Vector3d scale;
    Eigen::Matrix3d sigma;
};

ProjectionTerms compute_terms(const GaussianCloud& cloud, const Camera& cam, std::size_t i) {
    ProjectionTerms t;
    t.view = cam.rotation_matrix();
    t.x_cam = t.view * cloud.position(i) + cam.translation;
    const double x = t.x_cam.x(), y = t.x_cam.y(), z = t.x_cam.z();
    t.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z),
        0.0, cam.fy / z, -cam.fy * y / (z * z);
    t.rotation = quaternion_to_matrix(cloud.rotation(i));
    t.scale = cloud.log_scale(i).array().exp();
    const Eigen::Matrix3d m = t.rotation * t.scale.asDiagonal();
    t.sigma = m * m.transpose();
    return t;
}

double major_eigenvalue(const Eigen::Matrix2d& c) {
    const double mid = 0.5 * (c(0, 0) + c(1, 1));
    const double half_diff = 0.5 * (c(0, 0) - c(1, 1));
    return mid + std::sqrt(half_diff * half_diff + c(0, 1) * c(1, 0));
}

// d/dq of R(q) for normalized q, contracted with dR.
Eigen::Vector4d rotation_matrix_vjp(const Eigen::Vector4d& q, const Eigen::Matrix3d& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d d;
    d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2.0 * x * g(2, 2));
    d[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2.0 * y * g(2, 2));
    d[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

}  // namespace

bool project_one(const GaussianCloud& cloud, const Camera& cam, std::size_t index, ProjectedGaussian& out) {
    const ProjectionTerms t = compute_terms(cloud, cam, index);
    const double z = t.x_cam.z();
    if (!(z > kNearPlane)) {
        return false;
    }
    const Eigen::Matrix<double, 2, 3> tw = t.jacobian * t.view;
    Eigen::Matrix2d cov = tw * t.sigma * tw.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kCovarianceDilation;
    cov(1, 1) += kCovarianceDilation;

    out.index = index;
    out.mean2d = {cam.fx * t.x_cam.x() / z + cam.cx, cam.fy * t.x_cam.y() / z + cam.cy};
    out.cov2d = cov;
    const double det = cov.determinant();
    if (!(det > 0.0)) {
        throw InvalidState("projected covariance is singular after dilation");
    }
    out.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
    out.depth = z;
    out.radius = kCullSigmas * std::sqrt(major_eigenvalue(cov));
    return true;
}

std::vector<ProjectedGaussian> project(const GaussianCloud& cloud, const Camera& cam) {
    std::vector<ProjectedGaussian> out;
    out.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        ProjectedGaussian pg;
        if (!project_one(cloud, cam, i, pg)) {
            continue;
        }
        const bool misses = pg.mean2d.x() + pg.radius < 0.0 || pg.mean2d.x() - pg.radius > cam.width ||
                            pg.mean2d.y() + pg.radius < 0.0 || pg.mean2d.y() - pg.radius > cam.height;
        if (misses) {
            continue;
        }
        out.push_back(pg);
    }
    std::stable_sort(out.begin(), out.end(), [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
        if (a.depth != b.depth) {
            return a.depth < b.depth;
        }
        return a.index < b.index;
    });
    return out;
}

double gaussian_weight(const Eigen::Vector2d& v, const ProjectedGaussian& pg) {
    const Eigen::Vector2d d = v - pg.mean2d;
    const double power = -0.5 * (pg.conic(0, 0) * d.x() * d.x() + 2.0 * pg.conic(0, 1) * d.x() * d.y() +
                                 pg.conic(1, 1) * d.y() * d.y());
    return std::exp(std::min(power, 0.0));
}

ProjectionGradient project_backward(const GaussianCloud& cloud, const Camera& cam, std::size_t index,
                                    const Eigen::Vector2d& d_mean2d, const Eigen::Matrix2d& d_cov2d) {
    const ProjectionTerms t = compute_terms(cloud, cam, index);
    const double x = t.x_cam.x(), y = t.x_cam.y(), z = t.x_cam.z();
    const Eigen::Matrix<double, 2, 3> tw = t.jacobian * t.view;

    // cov2d = T Sigma T^T (+ dilation), T = J W.
    const Eigen::Matrix3d d_sigma = tw.transpose() * d_cov2d * tw;
    const Eigen::Matrix<double, 2, 3> d_tw = d_cov2d * tw * t.sigma.transpose() + d_cov2d.transpose() * tw * t.sigma;
    const Eigen::Matrix<double, 2, 3> d_j = d_tw * t.view.transpose();

    Eigen::Vector3d d_xcam = Eigen::Vector3d::Zero();
    d_xcam.x() += d_mean2d.x() * cam.fx / z;
    d_xcam.y() += d_mean2d.y() * cam.fy / z;
    d_xcam.z() += -d_mean2d.x() * cam.fx * x / (z * z) - d_mean2d.y() * cam.fy * y / (z * z);

    const double z2 = z * z, z3 = z2 * z;
    d_xcam.x() += d_j(0, 2) * (-cam.fx / z2);
    d_xcam.y() += d_j(1, 2) * (-cam.fy / z2);
    d_xcam.z() += d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2.0 * cam.fx * x / z3) + d_j(1, 1) * (-cam.fy / z2) +
                  d_j(1, 2) * (2.0 * cam.fy * y / z3);

    ProjectionGradient g;
    g.position = t.view.transpose() * d_xcam;

    // Sigma = M M^T, M = R S.
    const Eigen::Matrix3d m = t.rotation * t.scale.asDiagonal();
    const Eigen::Matrix3d d_m = (d_sigma + d_sigma.transpose()) * m;
    const Eigen::Matrix3d d_r = d_m * t.scale.asDiagonal();
    for (int j = 0; j < 3; ++j) {
        const double d_scale = d_m.col(j).dot(t.rotation.col(j));
        g.log_scale[j] = d_scale * t.scale[j];
    }

    const Eigen::Vector4d raw(cloud.rotations[4 * index], cloud.rotations[4 * index + 1],
                              cloud.rotations[4 * index + 2], cloud.rotations[4 * index + 3]);
    const double norm = raw.norm();
    const Eigen::Vector4d q = raw / norm;
    const Eigen::Vector4d d_qn = rotation_matrix_vjp(q, d_r);
    g.rotation = (d_qn - q * q.dot(d_qn)) / norm;
    return g;
}

}  // namespace vlgs
