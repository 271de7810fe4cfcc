#include "vlgs/scene.hpp"

#include <cmath>
#include <fmt/format.h>

namespace vlgs {

double activate(double logit) {
    if (!std::isfinite(logit)) {
        throw InvalidParameter("activate: non-finite logit");
    }
    return 1.0 / (1.0 + std::exp(-logit));
}

double inverse_activate(double probability) {
    if (!(probability > 0.0 && probability < 1.0)) {
        throw InvalidParameter(fmt::format("inverse_activate: {} is outside (0,1)", probability));
    }
    return std::log(probability / (1.0 - probability));
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q_in) {
    const Eigen::Vector4d q = q_in.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Eigen::Vector4d matrix_to_quaternion(const Eigen::Matrix3d& r) {
    const Eigen::Quaterniond q(r);
    Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
    return out.normalized();
}

Eigen::Vector4d quaternion_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Eigen::Matrix3d build_covariance(const Eigen::Vector3d& log_scale, const Eigen::Vector4d& rotation) {
    const Eigen::Matrix3d m = quaternion_to_matrix(rotation) * log_scale.array().exp().matrix().asDiagonal();
    Eigen::Matrix3d sigma = m * m.transpose();
    // m m^T is symmetric in exact arithmetic; force it bitwise.
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

GaussianCloud::GaussianCloud(std::size_t count, int feature_dim_)
    : feature_dim(feature_dim_),
      positions(count * 3, 0.0),
      log_scales(count * 3, 0.0),
      rotations(count * 4, 0.0),
      opacity_logits(count, inverse_activate(kInitialActivation)),
      color_logits(count * 3, 0.0),
      features(count * static_cast<std::size_t>(feature_dim_), 0.0),
      indicator_logits(count, inverse_activate(kInitialActivation)) {
    if (feature_dim_ < 1) {
        throw InvalidParameter("feature dimension must be at least 1");
    }
    for (std::size_t i = 0; i < count; ++i) {
        rotations[4 * i] = 1.0;
    }
}

Eigen::Vector3d GaussianCloud::position(std::size_t i) const {
    return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
}

Eigen::Vector3d GaussianCloud::log_scale(std::size_t i) const {
    return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
}

Eigen::Vector4d GaussianCloud::rotation(std::size_t i) const {
    const Eigen::Vector4d q(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    return q.normalized();
}

Eigen::Vector3d GaussianCloud::color(std::size_t i) const {
    return {activate(color_logits[3 * i]), activate(color_logits[3 * i + 1]), activate(color_logits[3 * i + 2])};
}

std::span<const double> GaussianCloud::feature(std::size_t i) const {
    return std::span<const double>(features).subspan(i * static_cast<std::size_t>(feature_dim),
                                                     static_cast<std::size_t>(feature_dim));
}

void GaussianCloud::push_back(const Eigen::Vector3d& position, const Eigen::Vector3d& log_scale,
                              const Eigen::Vector4d& rotation, double opacity, const Eigen::Vector3d& color,
                              std::span<const double> feature, double indicator) {
    if (feature.size() != static_cast<std::size_t>(feature_dim)) {
        throw InvalidParameter(
            fmt::format("feature has {} entries, cloud expects {}", feature.size(), feature_dim));
    }
    for (int k = 0; k < 3; ++k) {
        positions.push_back(position[k]);
        log_scales.push_back(log_scale[k]);
        color_logits.push_back(inverse_activate(color[k]));
    }
    const Eigen::Vector4d q = rotation.normalized();
    rotations.insert(rotations.end(), q.data(), q.data() + 4);
    opacity_logits.push_back(inverse_activate(opacity));
    indicator_logits.push_back(inverse_activate(indicator));
    features.insert(features.end(), feature.begin(), feature.end());
}

void GaussianCloud::validate() const {
    const std::size_t n = size();
    const auto fd = static_cast<std::size_t>(feature_dim);
    if (feature_dim < 1 || positions.size() != 3 * n || log_scales.size() != 3 * n ||
        rotations.size() != 4 * n || color_logits.size() != 3 * n || features.size() != fd * n ||
        indicator_logits.size() != n) {
        throw InvalidParameter("GaussianCloud: inconsistent field sizes");
    }
    auto check = [](const std::vector<double>& v, const char* name) {
        for (double x : v) {
            if (!std::isfinite(x)) {
                throw InvalidParameter(fmt::format("GaussianCloud: non-finite entry in {}", name));
            }
        }
    };
    check(positions, "positions");
    check(log_scales, "log_scales");
    check(rotations, "rotations");
    check(opacity_logits, "opacity_logits");
    check(color_logits, "color_logits");
    check(features, "features");
    check(indicator_logits, "indicator_logits");
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector4d q(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
        if (q.norm() == 0.0) {
            throw InvalidParameter(fmt::format("GaussianCloud: zero quaternion at index {}", i));
        }
    }
}

Eigen::Vector3d Camera::center() const { return -(rotation_matrix().transpose() * translation); }

void Camera::set_center(const Eigen::Vector3d& c) { translation = -(rotation_matrix() * c); }

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
        throw InvalidParameter("camera focal lengths must be positive and finite");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
        throw InvalidParameter("camera principal point must be finite");
    }
    if (width < 1 || height < 1) {
        throw InvalidParameter(fmt::format("camera size {}x{} must be at least 1x1", width, height));
    }
    if (!rotation.allFinite() || std::abs(rotation.norm() - 1.0) > 1e-6) {
        throw InvalidParameter("camera rotation must be a unit quaternion");
    }
    if (!translation.allFinite()) {
        throw InvalidParameter("camera translation must be finite");
    }
}

bool Camera::same_intrinsics(const Camera& other) const {
    return fx == other.fx && fy == other.fy && cx == other.cx && cy == other.cy && width == other.width &&
           height == other.height;
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double fx, double fy, int width, int height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();

    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation = matrix_to_quaternion(r);
    cam.translation = -(quaternion_to_matrix(cam.rotation) * eye);
    return cam;
}

}  // namespace vlgs
