#include "vlgs/augmentation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace vlgs {

namespace {

constexpr double kLerpThreshold = 0.995;

Eigen::Vector4d unit(const Eigen::Vector4d& q, const char* name) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw InvalidParameter(fmt::format("slerp: {} must be a finite nonzero quaternion", name));
    }
    return q / n;
}

void check_ratio(double k) {
    if (!(k >= 0.0 && k <= 1.0)) {
        throw InvalidParameter(fmt::format("interpolation ratio {} outside [0, 1]", k));
    }
}

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> w{};
    const int half = kSsimWindow / 2;
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += w[static_cast<std::size_t>(i)];
    }
    for (double& x : w) x /= total;
    return w;
}

// Separable Gaussian blur of one channel plane; the window is renormalized
// over the part that lies inside the image.
std::vector<double> blur(const std::vector<double>& plane, int width, int height) {
    static const std::array<double, kSsimWindow> kernel = ssim_kernel();
    const int half = kSsimWindow / 2;
    std::vector<double> tmp(plane.size());
    std::vector<double> out(plane.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            double norm = 0.0;
            for (int d = -half; d <= half; ++d) {
                const int xx = x + d;
                if (xx < 0 || xx >= width) continue;
                const double w = kernel[static_cast<std::size_t>(d + half)];
                acc += w * plane[static_cast<std::size_t>(y) * width + xx];
                norm += w;
            }
            tmp[static_cast<std::size_t>(y) * width + x] = acc / norm;
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            double norm = 0.0;
            for (int d = -half; d <= half; ++d) {
                const int yy = y + d;
                if (yy < 0 || yy >= height) continue;
                const double w = kernel[static_cast<std::size_t>(d + half)];
                acc += w * tmp[static_cast<std::size_t>(yy) * width + x];
                norm += w;
            }
            out[static_cast<std::size_t>(y) * width + x] = acc / norm;
        }
    }
    return out;
}

}  // namespace

Eigen::Vector4d slerp(const Eigen::Vector4d& q1, const Eigen::Vector4d& q2, double k) {
    check_ratio(k);
    const Eigen::Vector4d a = unit(q1, "q1");
    const Eigen::Vector4d b = unit(q2, "q2");
    const double cos_theta = std::clamp(a.dot(b), -1.0, 1.0);
    const double sign = cos_theta < 0.0 ? -1.0 : 1.0;
    Eigen::Vector4d q;
    if (std::abs(cos_theta) > kLerpThreshold) {
        q = k * sign * a + (1.0 - k) * b;
    } else {
        // Angle between sign*a and b, so antipodal pairs take the short arc.
        const double theta = std::acos(std::abs(cos_theta));
        const double s = std::sin(theta);
        q = sign * a * (std::sin(k * theta) / s) + b * (std::sin((1.0 - k) * theta) / s);
    }
    return q.normalized();
}

Eigen::Vector3d lerp_translation(const Eigen::Vector3d& t1, const Eigen::Vector3d& t2, double k) {
    check_ratio(k);
    return k * t1 + (1.0 - k) * t2;
}

double sample_beta(double a, double b, std::mt19937_64& rng) {
    if (!(a > 0.0) || !(b > 0.0)) {
        throw InvalidParameter("beta shape parameters must be positive");
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
        const double uu = u(rng);
        const double vv = u(rng);
        if (uu <= 0.0 || vv <= 0.0) continue;
        const double lx = std::log(uu) / a;
        const double ly = std::log(vv) / b;
        const double m = std::max(lx, ly);
        const double ls = m + std::log(std::exp(lx - m) + std::exp(ly - m));
        if (ls <= 0.0) {
            return std::exp(lx - ls);
        }
    }
}

RatioSampler RatioSampler::fixed(double k) {
    check_ratio(k);
    return {Kind::Fixed, k};
}

RatioSampler RatioSampler::parse(const std::string& text) {
    auto number = [&](std::size_t from) {
        try {
            std::size_t used = 0;
            const std::string tail = text.substr(from);
            const double v = std::stod(tail, &used);
            if (used != tail.size()) throw std::invalid_argument(tail);
            return v;
        } catch (const std::exception&) {
            throw InvalidParameter(fmt::format("bad number in ratio mode '{}'", text));
        }
    };
    if (text == "beta") return beta();
    if (text == "uniform") return uniform();
    if (text == "gauss") return gauss();
    if (text.rfind("beta:", 0) == 0) {
        const double shape = number(5);
        if (!(shape > 0.0)) throw InvalidParameter("beta shape must be positive");
        return beta(shape);
    }
    if (text.rfind("fixed:", 0) == 0) return fixed(number(6));
    throw InvalidParameter(fmt::format("unknown ratio mode '{}' (expected beta|uniform|gauss|fixed:<k>)", text));
}

std::string RatioSampler::to_string() const {
    switch (kind) {
        case Kind::Beta: return value == 0.2 ? "beta" : fmt::format("beta:{}", value);
        case Kind::Uniform: return "uniform";
        case Kind::Gauss: return "gauss";
        case Kind::Fixed: return fmt::format("fixed:{}", value);
    }
    return "beta";
}

double RatioSampler::operator()(std::mt19937_64& rng) const {
    switch (kind) {
        case Kind::Beta: return sample_beta(value, value, rng);
        case Kind::Uniform: return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        case Kind::Gauss: return std::clamp(std::normal_distribution<double>(0.0, 1.0)(rng), 0.0, 1.0);
        case Kind::Fixed: return value;
    }
    return value;
}

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) {
        throw InvalidParameter(fmt::format("ssim: image sizes differ ({}x{} vs {}x{})", a.width(), a.height(),
                                           b.width(), b.height()));
    }
    const int w = a.width();
    const int h = a.height();
    const std::size_t n = a.pixel_count();
    if (n == 0) {
        throw InvalidParameter("ssim: empty images");
    }
    double total = 0.0;
    std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a.values()[i * 3 + c];
            const double y = b.values()[i * 3 + c];
            pa[i] = x;
            pb[i] = y;
            aa[i] = x * x;
            bb[i] = y * y;
            ab[i] = x * y;
        }
        const auto mu_a = blur(pa, w, h);
        const auto mu_b = blur(pb, w, h);
        const auto e_aa = blur(aa, w, h);
        const auto e_bb = blur(bb, w, h);
        const auto e_ab = blur(ab, w, h);
        for (std::size_t i = 0; i < n; ++i) {
            const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
            const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            const double num = (2.0 * mu_a[i] * mu_b[i] + kSsimC1) * (2.0 * cov + kSsimC2);
            const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kSsimC1) * (var_a + var_b + kSsimC2);
            total += num / den;
        }
    }
    return std::clamp(total / (3.0 * static_cast<double>(n)), 0.0, 1.0);
}

BlendSample make_blend_sample(const TrainSample& s1, const TrainSample& s2, double k, const BlendOptions& options) {
    check_ratio(k);
    if (!s1.image.same_shape(s2.image) || !s1.gt_features.same_shape(s2.gt_features)) {
        throw InvalidParameter("blend: samples have different image or feature sizes");
    }
    if (!s1.camera.same_intrinsics(s2.camera)) {
        throw InvalidParameter("blend: samples have different camera intrinsics");
    }
    BlendSample out;
    out.k = k;
    out.pose = s1.camera;
    if (options.rotation) {
        out.pose.rotation = slerp(s1.camera.rotation, s2.camera.rotation, k);
    } else {
        out.pose.rotation = s1.camera.rotation.normalized();
    }
    const Eigen::Vector3d center =
        options.translation ? lerp_translation(s1.camera.center(), s2.camera.center(), k) : s1.camera.center();
    out.pose.set_center(center);

    out.gt = FeatureMap(s1.gt_features.width(), s1.gt_features.height(), s1.gt_features.channels());
    const auto& h1 = s1.gt_features.values();
    const auto& h2 = s2.gt_features.values();
    auto& g = out.gt.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = k * h1[i] + (1.0 - k) * h2[i];
    }
    out.weight = options.ssim_weight ? ssim(s1.image, s2.image) : 1.0;
    return out;
}

BlendSample make_blend_sample(const TrainSample& s1, const TrainSample& s2, const RatioSampler& sampler,
                              std::mt19937_64& rng, const BlendOptions& options) {
    return make_blend_sample(s1, s2, sampler(rng), options);
}

}  // namespace vlgs
