#pragma once

#include "vlgs/rasterizer.hpp"
#include "vlgs/scene.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace vlgs::testing {

inline Eigen::Vector4d random_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

// Camera at distance `dist` on -z looking down +z at the origin.
inline Camera front_camera(int width, int height, double focal, double dist = 4.0) {
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.translation = Eigen::Vector3d(0.0, 0.0, dist);
    return cam;
}

// Gaussians inside the view frustum of front_camera with footprints of a few pixels.
inline GaussianCloud random_cloud(std::mt19937_64& rng, int count, int feature_dim, double spread = 0.5,
                                  double min_log_scale = -2.6, double max_log_scale = -1.6) {
    std::uniform_real_distribution<double> pos(-spread, spread);
    std::uniform_real_distribution<double> ls(min_log_scale, max_log_scale);
    std::uniform_real_distribution<double> prob(0.15, 0.9);
    std::uniform_real_distribution<double> col(0.1, 0.9);
    std::normal_distribution<double> feat(0.0, 1.0);
    GaussianCloud cloud(0, feature_dim);
    for (int i = 0; i < count; ++i) {
        std::vector<double> f(static_cast<std::size_t>(feature_dim));
        for (double& x : f) x = feat(rng);
        cloud.push_back({pos(rng), pos(rng), pos(rng)}, {ls(rng), ls(rng), ls(rng)}, random_quaternion(rng),
                        prob(rng), {col(rng), col(rng), col(rng)}, f, prob(rng));
    }
    return cloud;
}

inline AttentionWeights random_weights(std::mt19937_64& rng, int feature_dim, double out_scale = 0.3) {
    AttentionWeights w = AttentionWeights::initialized(kColorDim, feature_dim, kDefaultAttentionDim, rng);
    std::uniform_real_distribution<double> u(-out_scale, out_scale);
    for (Eigen::Index i = 0; i < w.wout.size(); ++i) w.wout.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < w.bout.size(); ++i) w.bout[i] = u(rng);
    return w;
}

// |a - b| <= abs_tol or |a - b| <= rel_tol * max(|a|, |b|).
inline bool close(double a, double b, double rel_tol, double abs_tol) {
    const double diff = std::abs(a - b);
    return diff <= abs_tol || diff <= rel_tol * std::max(std::abs(a), std::abs(b));
}

}  // namespace vlgs::testing

#include "vlgs/training.hpp"

namespace vlgs::testing {

// Two-view scene with a fixed blended view, used for objective gradient checks.
struct MicroScene {
    GaussianCloud cloud;
    AttentionWeights weights;
    TrainSample s1;
    TrainSample s2;
    BlendSample blend;
};

inline MicroScene micro_scene(std::uint64_t seed, int count = 5, int size = 8, int feature_dim = 3) {
    std::mt19937_64 rng(seed);
    MicroScene m;
    m.cloud = random_cloud(rng, count, feature_dim, 0.5, -1.9, -1.2);
    m.weights = random_weights(rng, feature_dim);
    const double focal = 1.6 * size;
    m.s1.camera = front_camera(size, size, focal);
    m.s2.camera = Camera::look_at({0.9, 0.4, -3.8}, {0, 0, 0}, {0, -1, 0}, focal, focal, size, size);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 0.5);
    for (TrainSample* s : {&m.s1, &m.s2}) {
        s->image = Image(size, size);
        for (double& v : s->image.values()) v = u(rng);
        s->gt_features = FeatureMap(size, size, feature_dim);
        for (double& v : s->gt_features.values()) v = n(rng);
    }
    // Similar images so the SSIM weight is not negligible.
    m.s2.image = m.s1.image;
    for (double& v : m.s2.image.values()) v = std::clamp(v + 0.05 * n(rng), 0.0, 1.0);
    m.blend = make_blend_sample(m.s1, m.s2, std::uniform_real_distribution<double>(0.1, 0.9)(rng));
    return m;
}

}  // namespace vlgs::testing
