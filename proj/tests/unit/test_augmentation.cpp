#include "test_support.hpp"
#include "vlgs/augmentation.hpp"

#include <boost/math/distributions/beta.hpp>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace vlgs;
using vlgs::testing::random_quaternion;

namespace {

Eigen::Vector4d axis_angle(const Eigen::Vector3d& axis, double angle) {
    const Eigen::Vector3d a = axis.normalized();
    return {std::cos(angle / 2), a.x() * std::sin(angle / 2), a.y() * std::sin(angle / 2), a.z() * std::sin(angle / 2)};
}

// Rotation angle between two quaternions, ignoring sign.
double angle_between(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    const Eigen::Matrix3d r = quaternion_to_matrix(a).transpose() * quaternion_to_matrix(b);
    return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
}

bool same_rotation(const Eigen::Vector4d& a, const Eigen::Vector4d& b, double tol) {
    return (quaternion_to_matrix(a) - quaternion_to_matrix(b)).cwiseAbs().maxCoeff() <= tol;
}

// P(K > lambda) for the Kolmogorov distribution, with the small-sample correction.
double ks_pvalue(double d, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    double sum = 0.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1 ? 1.0 : -1.0) * term;
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

Image random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h);
    for (double& v : img.values()) v = u(rng);
    return img;
}

TrainSample sample_at(const Eigen::Vector3d& eye, int w, int h, int fd, double fill) {
    TrainSample s;
    s.camera = Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1), 20.0, 20.0, w, h);
    s.image = Image(w, h, fill);
    s.gt_features = FeatureMap(w, h, fd, fill);
    return s;
}

}  // namespace

TEST_CASE("slerp identical inputs return the input") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Vector4d q = random_quaternion(rng);
        for (double k : {0.0, 0.3, 0.5, 1.0}) {
            CHECK((slerp(q, q, k) - q).norm() < 1e-12);
            CHECK((slerp(2.5 * q, q, k) - q).norm() < 1e-12);
        }
    }
}

TEST_CASE("slerp midpoint of identity and 90 degrees about z is 45 degrees") {
    const Eigen::Vector4d id(1, 0, 0, 0);
    const Eigen::Vector4d q90 = axis_angle({0, 0, 1}, std::numbers::pi / 2);
    const Eigen::Vector4d mid = slerp(id, q90, 0.5);
    const double c = std::cos(std::numbers::pi / 4);
    const double s = std::sin(std::numbers::pi / 4);
    Eigen::Matrix3d expected;
    expected << c, -s, 0, s, c, 0, 0, 0, 1;
    CHECK((quaternion_to_matrix(mid) - expected).cwiseAbs().maxCoeff() < 1e-12);
    // Composing the half rotation twice gives the full one.
    CHECK((quaternion_to_matrix(mid) * quaternion_to_matrix(mid) - quaternion_to_matrix(q90)).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("slerp endpoints: k = 1 gives q1 and k = 0 gives q2") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
        const Eigen::Vector4d a = random_quaternion(rng);
        const Eigen::Vector4d b = random_quaternion(rng);
        CHECK(same_rotation(slerp(a, b, 1.0), a, 1e-9));
        CHECK(same_rotation(slerp(a, b, 0.0), b, 1e-9));
    }
    // Near-aligned inputs take the lerp branch with the same convention.
    const Eigen::Vector4d a = axis_angle({1, 0, 0}, 0.01);
    const Eigen::Vector4d b = axis_angle({1, 0, 0}, 0.02);
    CHECK(same_rotation(slerp(a, b, 1.0), a, 1e-12));
    CHECK(same_rotation(slerp(a, b, 0.0), b, 1e-12));
}

TEST_CASE("slerp output is unit norm and angle to q2 grows with k") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 300; ++t) {
        const Eigen::Vector4d a = random_quaternion(rng) * (0.5 + t * 0.01);
        Eigen::Vector4d b = random_quaternion(rng);
        if (t % 3 == 0) b = -a + 0.05 * random_quaternion(rng);
        double previous = -1.0;
        for (int i = 0; i <= 40; ++i) {
            const double k = i / 40.0;
            const Eigen::Vector4d q = slerp(a, b, k);
            CHECK(std::abs(q.norm() - 1.0) < 1e-9);
            const double angle = angle_between(q, b);
            CHECK(angle >= previous - 1e-9);
            previous = angle;
        }
    }
}

TEST_CASE("slerp is continuous across the lerp threshold, including antipodal pairs") {
    const Eigen::Vector4d q(1, 0, 0, 0);
    const double boundary = std::acos(0.995);
    for (double sign : {1.0, -1.0}) {
        const Eigen::Vector4d inside = sign * axis_angle({0, 1, 0}, 2 * (boundary - 1e-7));
        const Eigen::Vector4d outside = sign * axis_angle({0, 1, 0}, 2 * (boundary + 1e-7));
        for (int i = 0; i <= 20; ++i) {
            const double k = i / 20.0;
            CHECK(angle_between(slerp(q, inside, k), slerp(q, outside, k)) < 1e-2);
        }
    }
}

TEST_CASE("slerp rejects zero quaternions and ratios outside [0,1]") {
    const Eigen::Vector4d q(1, 0, 0, 0);
    CHECK_THROWS_AS(slerp(Eigen::Vector4d::Zero(), q, 0.5), InvalidParameter);
    CHECK_THROWS_AS(slerp(q, Eigen::Vector4d::Zero(), 0.5), InvalidParameter);
    CHECK_THROWS_AS(slerp(q, q, 1.5), InvalidParameter);
}

TEST_CASE("lerp_translation examples") {
    const Eigen::Vector3d a(1, 2, 3), b(-4, 5, 0.5);
    CHECK(lerp_translation(a, b, 1.0) == a);
    CHECK(lerp_translation({0, 0, 0}, {2, 4, 6}, 0.5) == Eigen::Vector3d(1, 2, 3));
    CHECK(lerp_translation({4, 0, 0}, {0, 0, 0}, 0.25) == Eigen::Vector3d(1, 0, 0));
}

TEST_CASE("Beta(0.2, 0.2) moments over 1e5 draws") {
    std::mt19937_64 rng(11);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = sample_beta(0.2, 0.2, rng);
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double a = 0.2, b = 0.2;
    const double analytic_var = a * b / ((a + b) * (a + b) * (a + b + 1));
    CHECK(std::abs(analytic_var - 0.17857) < 1e-5);
    CHECK(std::abs(mean - 0.5) <= 0.01);
    CHECK(std::abs(var - analytic_var) <= 0.01);
}

TEST_CASE("Beta(0.2, 0.2) passes a KS test against the analytic CDF") {
    boost::math::beta_distribution<double> dist(0.2, 0.2);
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        std::mt19937_64 rng(seed);
        std::vector<double> xs(100000);
        for (double& x : xs) x = sample_beta(0.2, 0.2, rng);
        std::sort(xs.begin(), xs.end());
        double d = 0.0;
        const double n = static_cast<double>(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double f = boost::math::cdf(dist, xs[i]);
            d = std::max({d, (i + 1) / n - f, f - i / n});
        }
        CHECK(ks_pvalue(d, xs.size()) > 0.01);
    }
}

TEST_CASE("the KS oracle rejects a wrong distribution") {
    std::mt19937_64 rng(8);
    boost::math::beta_distribution<double> dist(0.2, 0.2);
    std::vector<double> xs(100000);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& x : xs) x = u(rng);
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = boost::math::cdf(dist, xs[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    CHECK(ks_pvalue(d, xs.size()) < 0.01);
}

TEST_CASE("ratio sampler modes") {
    std::mt19937_64 rng(9);
    const RatioSampler fixed = RatioSampler::fixed(0.5);
    for (int i = 0; i < 100; ++i) CHECK(fixed(rng) == 0.5);
    const RatioSampler gauss = RatioSampler::gauss();
    int zeros = 0;
    for (int i = 0; i < 10000; ++i) {
        const double k = gauss(rng);
        CHECK(k >= 0.0);
        CHECK(k <= 1.0);
        zeros += k == 0.0;
    }
    CHECK(zeros > 4500);
    CHECK(zeros < 5500);
    const RatioSampler uni = RatioSampler::uniform();
    for (int i = 0; i < 1000; ++i) {
        const double k = uni(rng);
        CHECK(k >= 0.0);
        CHECK(k < 1.0);
    }
    CHECK(RatioSampler::parse("beta") == RatioSampler::beta());
    CHECK(RatioSampler::parse("fixed:0.75") == RatioSampler::fixed(0.75));
    CHECK(RatioSampler::parse("uniform") == RatioSampler::uniform());
    CHECK(RatioSampler::parse("gauss") == RatioSampler::gauss());
    CHECK(RatioSampler::parse(RatioSampler::fixed(0.75).to_string()) == RatioSampler::fixed(0.75));
    CHECK_THROWS_AS(RatioSampler::parse("fixed:2"), InvalidParameter);
    CHECK_THROWS_AS(RatioSampler::parse("fixed:abc"), InvalidParameter);
    CHECK_THROWS_AS(RatioSampler::parse("poisson"), InvalidParameter);
}

TEST_CASE("ssim of an image with itself is exactly one") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 5; ++t) {
        const Image img = random_image(rng, 17 + t, 9 + 3 * t);
        CHECK(ssim(img, img) == 1.0);
    }
}

TEST_CASE("ssim of constant zero and one images matches the closed form") {
    const Image zeros(16, 12, 0.0), ones(16, 12, 1.0);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double expected = (2 * 0 * 1 + c1) * (2 * 0 + c2) / ((0 + 1 + c1) * (0 + 0 + c2));
    CHECK(std::abs(ssim(zeros, ones) - expected) < 1e-6);
    CHECK(ssim(zeros, ones) <= 0.01);
}

TEST_CASE("ssim with tiny noise stays near one and clamps to [0,1]") {
    std::mt19937_64 rng(13);
    const Image img = random_image(rng, 32, 32);
    Image noisy = img;
    std::normal_distribution<double> n(0.0, 1e-4);
    for (double& v : noisy.values()) v += n(rng);
    CHECK(ssim(img, noisy) >= 0.99);
    Image inverted = img;
    for (double& v : inverted.values()) v = 1.0 - v;
    const double s = ssim(img, inverted);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK_THROWS_AS(ssim(img, Image(31, 32)), InvalidParameter);
}

TEST_CASE("blend sample endpoint k = 1 reproduces the first view") {
    TrainSample s1 = sample_at({2, 0, 0}, 8, 6, 3, 0.2);
    TrainSample s2 = sample_at({0, 2, 0}, 8, 6, 3, 0.7);
    const BlendSample b = make_blend_sample(s1, s2, 1.0);
    CHECK(same_rotation(b.pose.rotation, s1.camera.rotation, 1e-12));
    CHECK((b.pose.center() - s1.camera.center()).norm() < 1e-12);
    CHECK(b.gt == s1.gt_features);
    CHECK(b.pose.same_intrinsics(s1.camera));
    std::mt19937_64 rng(1);
    const BlendSample f = make_blend_sample(s1, s2, RatioSampler::fixed(1.0), rng);
    CHECK(f.k == 1.0);
}

TEST_CASE("blend sample midpoint between cameras at (2,0,0) and (0,2,0)") {
    TrainSample s1 = sample_at({2, 0, 0}, 8, 6, 3, 0.2);
    TrainSample s2 = sample_at({0, 2, 0}, 8, 6, 3, 0.7);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : s1.gt_features.values()) v = u(rng);
    for (double& v : s2.gt_features.values()) v = u(rng);
    const BlendSample b = make_blend_sample(s1, s2, 0.5);
    CHECK((b.pose.center() - Eigen::Vector3d(1, 1, 0)).norm() < 1e-12);
    CHECK(std::abs(b.pose.rotation.norm() - 1.0) < 1e-12);
    // Halfway rotation: R_b equals R_2 (R_2^T R_1)^(1/2), i.e. both relative angles are half the total.
    const double total = angle_between(s1.camera.rotation, s2.camera.rotation);
    CHECK(std::abs(angle_between(b.pose.rotation, s1.camera.rotation) - total / 2) < 1e-9);
    CHECK(std::abs(angle_between(b.pose.rotation, s2.camera.rotation) - total / 2) < 1e-9);
    // Both cameras look at the origin about z, so the blend looks along -(1,1,0).
    const Eigen::Vector3d forward = b.pose.rotation_matrix().row(2).transpose();
    CHECK((forward - Eigen::Vector3d(-1, -1, 0).normalized()).norm() < 1e-9);
    double worst = 0.0;
    for (std::size_t i = 0; i < b.gt.values().size(); ++i) {
        worst = std::max(worst, std::abs(b.gt.values()[i] -
                                         (0.5 * s1.gt_features.values()[i] + 0.5 * s2.gt_features.values()[i])));
    }
    CHECK(worst == 0.0);
}

TEST_CASE("blend weight is ssim of the two images and ablations pin components") {
    TrainSample s1 = sample_at({2, 0, 0}, 12, 12, 3, 0.3);
    TrainSample s2 = sample_at({0, 2, 0}, 12, 12, 3, 0.3);
    CHECK(make_blend_sample(s1, s2, 0.4).weight == 1.0);
    std::mt19937_64 rng(4);
    s2.image = random_image(rng, 12, 12);
    const double w = ssim(s1.image, s2.image);
    CHECK(make_blend_sample(s1, s2, 0.4).weight == w);
    BlendOptions opts;
    opts.ssim_weight = false;
    CHECK(make_blend_sample(s1, s2, 0.4, opts).weight == 1.0);
    opts = {};
    opts.rotation = false;
    const BlendSample nr = make_blend_sample(s1, s2, 0.4, opts);
    CHECK(same_rotation(nr.pose.rotation, s1.camera.rotation, 1e-12));
    CHECK((nr.pose.center() - lerp_translation(s1.camera.center(), s2.camera.center(), 0.4)).norm() < 1e-12);
    opts = {};
    opts.translation = false;
    const BlendSample nt = make_blend_sample(s1, s2, 0.4, opts);
    CHECK((nt.pose.center() - s1.camera.center()).norm() < 1e-12);
}

TEST_CASE("blend sample rejects mismatched samples") {
    TrainSample s1 = sample_at({2, 0, 0}, 8, 6, 3, 0.2);
    TrainSample s2 = sample_at({0, 2, 0}, 8, 7, 3, 0.7);
    CHECK_THROWS_AS(make_blend_sample(s1, s2, 0.5), InvalidParameter);
    TrainSample s3 = sample_at({0, 2, 0}, 8, 6, 3, 0.7);
    s3.camera.fx = 30.0;
    CHECK_THROWS_AS(make_blend_sample(s1, s3, 0.5), InvalidParameter);
}
