#include "doctest.h"
#include "test_support.hpp"

#include "vlgs/projection.hpp"

#include <cmath>

using namespace vlgs;
using vlgs::testing::close;

namespace {

GaussianCloud single(const Eigen::Vector3d& pos, double log_scale) {
    GaussianCloud cloud(0, 1);
    const std::vector<double> f{0.0};
    cloud.push_back(pos, Eigen::Vector3d::Constant(log_scale), {1, 0, 0, 0}, 0.5, {0.5, 0.5, 0.5}, f, 0.5);
    return cloud;
}

Camera axis_camera() {
    Camera cam;
    cam.fx = cam.fy = 100.0;
    cam.cx = cam.cy = 50.0;
    cam.width = cam.height = 100;
    return cam;
}

// Scalar loss L = <a, mean2d> + <B, cov2d> used to check project_backward.
double probe(const GaussianCloud& cloud, const Camera& cam, const Eigen::Vector2d& a, const Eigen::Matrix2d& b) {
    ProjectedGaussian pg;
    REQUIRE(project_one(cloud, cam, 0, pg));
    return a.dot(pg.mean2d) + (b.array() * pg.cov2d.array()).sum();
}

}  // namespace

TEST_CASE("on-axis point projects to the principal point") {
    const auto out = project(single({0, 0, 1}, std::log(0.01)), axis_camera());
    REQUIRE(out.size() == 1);
    CHECK(out[0].mean2d.x() == doctest::Approx(50.0));
    CHECK(out[0].mean2d.y() == doctest::Approx(50.0));
    CHECK(out[0].depth == doctest::Approx(1.0));
}

TEST_CASE("isotropic covariance on axis matches the explicit Jacobian product") {
    const double sigma = 0.02, z = 2.0;
    const Camera cam = axis_camera();
    const auto out = project(single({0, 0, z}, std::log(sigma)), cam);
    REQUIRE(out.size() == 1);
    // Oracle: J = [[fx/z,0,0],[0,fy/z,0]] on axis, cov = J (s^2 I) J^T + 0.3 I.
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / z, 0, 0, 0, cam.fy / z, 0;
    const Eigen::Matrix2d expected =
        j * (sigma * sigma * Eigen::Matrix3d::Identity()) * j.transpose() + 0.3 * Eigen::Matrix2d::Identity();
    CHECK((out[0].cov2d - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out[0].cov2d(0, 0) == doctest::Approx(std::pow(cam.fx * sigma / z, 2) + 0.3));
}

TEST_CASE("points behind the camera or off-image are culled") {
    CHECK(project(single({0, 0, -1}, std::log(0.01)), axis_camera()).empty());
    CHECK(project(single({0, 0, 0.005}, std::log(0.01)), axis_camera()).empty());
    CHECK(project(single({50, 0, 1}, std::log(0.01)), axis_camera()).empty());
}

TEST_CASE("projection output is depth sorted with index tie-break") {
    GaussianCloud cloud(0, 1);
    const std::vector<double> f{0.0};
    for (double z : {3.0, 1.0, 2.0, 1.0}) {
        cloud.push_back({0, 0, z}, Eigen::Vector3d::Constant(-3.0), {1, 0, 0, 0}, 0.5, {0.5, 0.5, 0.5}, f, 0.5);
    }
    const auto out = project(cloud, axis_camera());
    REQUIRE(out.size() == 4);
    CHECK(out[0].index == 1);
    CHECK(out[1].index == 3);
    CHECK(out[2].index == 2);
    CHECK(out[3].index == 0);
}

TEST_CASE("gaussian_weight examples") {
    ProjectedGaussian pg;
    pg.mean2d = {10, 20};
    pg.cov2d = Eigen::Matrix2d::Identity();
    pg.conic = Eigen::Matrix2d::Identity();
    CHECK(gaussian_weight({10, 20}, pg) == 1.0);
    CHECK(gaussian_weight({11, 20}, pg) == doctest::Approx(std::exp(-0.5)));
    pg.cov2d = Eigen::Vector2d(4, 1).asDiagonal();
    pg.conic = Eigen::Vector2d(0.25, 1).asDiagonal();
    CHECK(gaussian_weight({12, 20}, pg) == doctest::Approx(0.6065306597));
}

TEST_CASE("gaussian_weight lies in (0,1] and decreases along rays") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        ProjectedGaussian pg;
        Eigen::Matrix2d a;
        a << u(rng), u(rng), u(rng), u(rng);
        pg.cov2d = a * a.transpose() + 0.3 * Eigen::Matrix2d::Identity();
        pg.conic = pg.cov2d.inverse();
        const Eigen::Vector2d dir = Eigen::Vector2d(u(rng), u(rng)).normalized();
        double prev = gaussian_weight(pg.mean2d, pg);
        for (double t = 0.25; t < 6.0; t += 0.25) {
            const double w = gaussian_weight(pg.mean2d + t * dir, pg);
            CHECK(w > 0.0);
            CHECK(w <= 1.0);
            CHECK(w < prev);
            prev = w;
        }
    }
}

TEST_CASE("project_backward matches central finite differences") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Camera cam = testing::front_camera(64, 48, 60.0);
    for (int trial = 0; trial < 50; ++trial) {
        GaussianCloud cloud = testing::random_cloud(rng, 1, 2, 0.6, -2.5, -1.0);
        cloud.rotations = {u(rng) + 1.5, u(rng), u(rng), u(rng)};  // unnormalized on purpose
        const Eigen::Vector2d a(u(rng), u(rng));
        Eigen::Matrix2d b;
        b << u(rng), u(rng), u(rng), u(rng);
        const ProjectionGradient g = project_backward(cloud, cam, 0, a, b);

        auto check_block = [&](std::vector<double>& values, std::size_t offset, const double* analytic, int n) {
            for (int k = 0; k < n; ++k) {
                const double h = 1e-4;
                const double saved = values[offset + k];
                values[offset + k] = saved + h;
                const double up = probe(cloud, cam, a, b);
                values[offset + k] = saved - h;
                const double down = probe(cloud, cam, a, b);
                values[offset + k] = saved;
                const double fd = (up - down) / (2 * h);
                CHECK_MESSAGE(close(analytic[k], fd, 1e-4, 1e-6), "analytic " << analytic[k] << " fd " << fd);
            }
        };
        check_block(cloud.positions, 0, g.position.data(), 3);
        check_block(cloud.log_scales, 0, g.log_scale.data(), 3);
        check_block(cloud.rotations, 0, g.rotation.data(), 4);
    }
}
