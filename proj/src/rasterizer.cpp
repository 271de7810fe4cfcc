#include "vlgs/rasterizer.hpp"

#include "vlgs/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace vlgs {

IndicatorMode IndicatorMode::fixed(double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidParameter(fmt::format("fixed indicator {} is outside [0,1]", v));
    }
    return {Kind::Fixed, v};
}

IndicatorMode IndicatorMode::parse(const std::string& text) {
    if (text == "learned") return learned();
    if (text == "opacity") return color_opacity();
    if (text.rfind("fixed:", 0) == 0) {
        try {
            std::size_t used = 0;
            const std::string number = text.substr(6);
            const double v = std::stod(number, &used);
            if (used == number.size()) return fixed(v);
        } catch (const std::logic_error&) {
        }
    }
    throw InvalidParameter(fmt::format("unknown indicator mode '{}' (expected learned|opacity|fixed:K)", text));
}

std::string IndicatorMode::to_string() const {
    switch (kind) {
        case Kind::Learned: return "learned";
        case Kind::ColorOpacity: return "opacity";
        case Kind::Fixed: return fmt::format("fixed:{}", value);
    }
    return "learned";
}

SceneGradients SceneGradients::zeros(const GaussianCloud& like, const AttentionWeights& weights) {
    SceneGradients g;
    g.cloud = GaussianCloud(like.size(), like.feature_dim);
    std::fill(g.cloud.rotations.begin(), g.cloud.rotations.end(), 0.0);
    std::fill(g.cloud.opacity_logits.begin(), g.cloud.opacity_logits.end(), 0.0);
    std::fill(g.cloud.indicator_logits.begin(), g.cloud.indicator_logits.end(), 0.0);
    g.attention = AttentionWeights(weights.color_dim, weights.feature_dim, weights.attention_dim);
    return g;
}

SceneGradients& SceneGradients::operator+=(const SceneGradients& other) {
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) throw InvalidParameter("gradient shapes differ");
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(cloud.positions, other.cloud.positions);
    add(cloud.log_scales, other.cloud.log_scales);
    add(cloud.rotations, other.cloud.rotations);
    add(cloud.opacity_logits, other.cloud.opacity_logits);
    add(cloud.color_logits, other.cloud.color_logits);
    add(cloud.features, other.cloud.features);
    add(cloud.indicator_logits, other.cloud.indicator_logits);
    attention.wq += other.attention.wq;
    attention.wk += other.attention.wk;
    attention.wv += other.attention.wv;
    attention.bq += other.attention.bq;
    attention.bk += other.attention.bk;
    attention.bv += other.attention.bv;
    attention.wout += other.attention.wout;
    attention.bout += other.attention.bout;
    return *this;
}

namespace {

void check_inputs(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights) {
    cam.validate();
    cloud.validate();
    weights.validate();
    if (weights.color_dim != kColorDim || weights.feature_dim != cloud.feature_dim) {
        throw InvalidParameter(fmt::format("attention weights expect {}+{} channels but the cloud has {}+{}",
                                           weights.color_dim, weights.feature_dim, kColorDim, cloud.feature_dim));
    }
}

double language_weight(const IndicatorMode& mode, double opacity, double indicator) {
    switch (mode.kind) {
        case IndicatorMode::Kind::Learned: return indicator;
        case IndicatorMode::Kind::ColorOpacity: return opacity;
        case IndicatorMode::Kind::Fixed: return mode.value;
    }
    return indicator;
}

std::vector<Splat> prepare_splats(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                                  const RasterOptions& options) {
    std::vector<ProjectedGaussian> projected = project(cloud, cam);
    std::vector<Splat> splats;
    splats.reserve(projected.size());
    for (const ProjectedGaussian& pg : projected) {
        Splat s;
        s.projected = pg;
        s.opacity = cloud.opacity(pg.index);
        s.indicator = language_weight(options.indicator, s.opacity, cloud.indicator(pg.index));
        const Eigen::Vector3d c = cloud.color(pg.index);
        s.fused = fuse(std::span<const double>(c.data(), 3), cloud.feature(pg.index), weights, options.fusion);
        splats.push_back(std::move(s));
    }
    return splats;
}

// Per-row-band lists of splat indices (depth ordered). Untiled: every splat in every band.
struct Binning {
    int bands = 0;
    int tiles_x = 1;
    std::vector<std::vector<std::uint32_t>> tiles;  // bands * tiles_x
    bool tiled = false;

    const std::vector<std::uint32_t>& list(int band, int x) const {
        return tiled ? tiles[static_cast<std::size_t>(band) * tiles_x + x / kTileSize] : tiles[band];
    }
};

Binning bin_splats(const std::vector<Splat>& splats, const Camera& cam, const RasterSettings& settings) {
    Binning b;
    b.bands = (cam.height + kTileSize - 1) / kTileSize;
    b.tiled = settings.tiled;
    if (!settings.tiled) {
        std::vector<std::uint32_t> all(splats.size());
        for (std::size_t i = 0; i < splats.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
        b.tiles.assign(static_cast<std::size_t>(b.bands), all);
        return b;
    }
    b.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    b.tiles.assign(static_cast<std::size_t>(b.bands) * b.tiles_x, {});
    // Outside m sigmas along an axis, P < cutoff; with a floor active those
    // contributions are skipped anyway, otherwise the tail is below 1e-9.
    const double cutoff = settings.alpha_floor > 0.0 ? settings.alpha_floor : 1e-9;
    const double m = std::sqrt(2.0 * std::log(1.0 / cutoff));
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const ProjectedGaussian& pg = splats[i].projected;
        const double ex = m * std::sqrt(pg.cov2d(0, 0));
        const double ey = m * std::sqrt(pg.cov2d(1, 1));
        // Pixel x covers centers x + 0.5.
        const int x0 = std::max(0, static_cast<int>(std::ceil(pg.mean2d.x() - ex - 0.5)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(pg.mean2d.x() + ex - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(pg.mean2d.y() - ey - 0.5)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(pg.mean2d.y() + ey - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
                b.tiles[static_cast<std::size_t>(ty) * b.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }
    return b;
}

// One blended Gaussian along a pixel's chains.
struct ChainEntry {
    std::uint32_t splat;
    double weight;  // P
    double alpha_color;
    double transmittance_color;  // before this Gaussian
    double alpha_language;
    double transmittance_language;
    bool in_color;
    bool in_language;
};

struct PixelResult {
    double t_color = 1.0;
    double t_language = 1.0;
    std::uint32_t n_color = 0;
    std::uint32_t n_language = 0;
};

// Front-to-back compositing of both chains at one pixel. `record` receives
// every Gaussian that entered at least one chain.
template <class Record>
PixelResult composite_pixel(const std::vector<Splat>& splats, const std::vector<std::uint32_t>& list,
                            const Eigen::Vector2d& v, const RasterSettings& settings, int color_dim,
                            double* color_out, double* feature_out, int feature_dim, Record&& record) {
    PixelResult r;
    bool color_done = false;
    bool language_done = false;
    for (std::uint32_t idx : list) {
        if (color_done && language_done) break;
        const Splat& s = splats[idx];
        const double p = gaussian_weight(v, s.projected);
        ChainEntry e{idx, p, s.opacity * p, r.t_color, s.indicator * p, r.t_language, false, false};
        if (!color_done && e.alpha_color >= settings.alpha_floor) {
            const double next = r.t_color * (1.0 - e.alpha_color);
            if (next < settings.min_transmittance) {
                color_done = true;
            } else {
                const double w = e.alpha_color * r.t_color;
                for (int c = 0; c < color_dim; ++c) color_out[c] += s.fused[c] * w;
                r.t_color = next;
                ++r.n_color;
                e.in_color = true;
            }
        }
        if (!language_done && e.alpha_language >= settings.alpha_floor) {
            const double next = r.t_language * (1.0 - e.alpha_language);
            if (next < settings.min_transmittance) {
                language_done = true;
            } else {
                const double w = e.alpha_language * r.t_language;
                for (int c = 0; c < feature_dim; ++c) feature_out[c] += s.fused[color_dim + c] * w;
                r.t_language = next;
                ++r.n_language;
                e.in_language = true;
            }
        }
        if (e.in_color || e.in_language) record(e);
    }
    return r;
}

Eigen::Vector2d pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

}  // namespace

RenderOutput rasterize(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                       const RasterOptions& options) {
    check_inputs(cloud, cam, weights);
    RenderOutput out;
    out.color = Image(cam.width, cam.height);
    out.semantics = FeatureMap(cam.width, cam.height, cloud.feature_dim);
    out.aux.camera = cam;
    out.aux.options = options;
    out.aux.cloud_size = cloud.size();
    out.aux.splats = prepare_splats(cloud, cam, weights, options);
    const std::size_t pixels = out.color.pixel_count();
    out.aux.final_transmittance_color.assign(pixels, 1.0);
    out.aux.final_transmittance_language.assign(pixels, 1.0);
    out.aux.contributors_color.assign(pixels, 0);
    out.aux.contributors_language.assign(pixels, 0);

    const Binning bins = bin_splats(out.aux.splats, cam, options.settings);
    const int fd = cloud.feature_dim;
    parallel_for(static_cast<std::size_t>(bins.bands), options.settings.threads, [&](std::size_t band) {
        const int y_begin = static_cast<int>(band) * kTileSize;
        const int y_end = std::min(cam.height, y_begin + kTileSize);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const PixelResult r =
                    composite_pixel(out.aux.splats, bins.list(static_cast<int>(band), x), pixel_center(x, y),
                                    options.settings, kColorDim, out.color.pixel(x, y), out.semantics.pixel(x, y),
                                    fd, [](const ChainEntry&) {});
                const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
                out.aux.final_transmittance_color[p] = r.t_color;
                out.aux.final_transmittance_language[p] = r.t_language;
                out.aux.contributors_color[p] = r.n_color;
                out.aux.contributors_language[p] = r.n_language;
            }
        }
    });
    return out;
}

RenderOutput rasterize_reference(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                                 const RasterOptions& options) {
    check_inputs(cloud, cam, weights);
    RenderOutput out;
    out.color = Image(cam.width, cam.height);
    out.semantics = FeatureMap(cam.width, cam.height, cloud.feature_dim);
    out.aux.camera = cam;
    out.aux.options = options;
    out.aux.options.settings = RasterSettings::exact();
    out.aux.cloud_size = cloud.size();
    out.aux.splats = prepare_splats(cloud, cam, weights, options);
    const std::size_t pixels = out.color.pixel_count();
    out.aux.final_transmittance_color.assign(pixels, 1.0);
    out.aux.final_transmittance_language.assign(pixels, 1.0);
    out.aux.contributors_color.assign(pixels, 0);
    out.aux.contributors_language.assign(pixels, 0);

    const int fd = cloud.feature_dim;
    std::vector<long double> acc(static_cast<std::size_t>(kColorDim + fd));
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            std::fill(acc.begin(), acc.end(), 0.0L);
            long double t_color = 1.0L;
            long double t_language = 1.0L;
            const long double vx = x + 0.5L, vy = y + 0.5L;
            for (const Splat& s : out.aux.splats) {
                const ProjectedGaussian& pg = s.projected;
                const long double dx = vx - pg.mean2d.x();
                const long double dy = vy - pg.mean2d.y();
                const long double q = pg.conic(0, 0) * dx * dx + 2.0L * pg.conic(0, 1) * dx * dy +
                                      pg.conic(1, 1) * dy * dy;
                const long double p = std::exp(-0.5L * q);
                const long double ac = s.opacity * p;
                const long double al = s.indicator * p;
                for (int c = 0; c < kColorDim; ++c) acc[c] += s.fused[c] * ac * t_color;
                for (int c = 0; c < fd; ++c) acc[kColorDim + c] += s.fused[kColorDim + c] * al * t_language;
                t_color *= 1.0L - ac;
                t_language *= 1.0L - al;
            }
            for (int c = 0; c < kColorDim; ++c) out.color.at(x, y, c) = static_cast<double>(acc[c]);
            for (int c = 0; c < fd; ++c) out.semantics.at(x, y, c) = static_cast<double>(acc[kColorDim + c]);
            const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
            out.aux.final_transmittance_color[pix] = static_cast<double>(t_color);
            out.aux.final_transmittance_language[pix] = static_cast<double>(t_language);
            out.aux.contributors_color[pix] = static_cast<std::uint32_t>(out.aux.splats.size());
            out.aux.contributors_language[pix] = static_cast<std::uint32_t>(out.aux.splats.size());
        }
    }
    return out;
}

namespace {

// Per-splat 2D gradients gathered over pixels.
struct SplatGradients {
    int stride = 0;
    std::vector<double> values;  // per splat: mean(2) cov(4) opacity indicator fused(D)

    SplatGradients(std::size_t count, int channels) : stride(8 + channels), values(count * (8 + channels), 0.0) {}
    double* at(std::size_t splat) { return values.data() + splat * stride; }
    const double* at(std::size_t splat) const { return values.data() + splat * stride; }
};

}  // namespace

SceneGradients rasterize_backward(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                                  const RenderOutput& forward, const Image& d_color, const FeatureMap& d_semantics) {
    SceneGradients grads = SceneGradients::zeros(cloud, weights);
    rasterize_backward_into(cloud, cam, weights, forward, d_color, d_semantics, grads);
    return grads;
}

void rasterize_backward_into(const GaussianCloud& cloud, const Camera& cam, const AttentionWeights& weights,
                             const RenderOutput& forward, const Image& d_color, const FeatureMap& d_semantics,
                             SceneGradients& grads) {
    const RenderAux& aux = forward.aux;
    if (!(aux.camera == cam) || aux.cloud_size != cloud.size() || forward.color.width() != cam.width ||
        forward.color.height() != cam.height) {
        throw InvalidState("rasterize_backward: forward state does not match this cloud and camera");
    }
    if (!d_color.same_shape(forward.color) || !d_semantics.same_shape(forward.semantics)) {
        throw InvalidState("rasterize_backward: output gradients do not match the render");
    }
    if (grads.cloud.size() != cloud.size() || grads.cloud.feature_dim != cloud.feature_dim) {
        throw InvalidState("rasterize_backward: gradient buffer does not match the cloud");
    }
    const RasterSettings& settings = aux.options.settings;
    const int fd = cloud.feature_dim;
    const int channels = kColorDim + fd;
    const Binning bins = bin_splats(aux.splats, cam, settings);

    std::vector<SplatGradients> band_grads(static_cast<std::size_t>(bins.bands),
                                           SplatGradients(aux.splats.size(), channels));
    parallel_for(static_cast<std::size_t>(bins.bands), settings.threads, [&](std::size_t band) {
        SplatGradients& sg = band_grads[band];
        std::vector<ChainEntry> chain;
        std::vector<double> scratch(static_cast<std::size_t>(channels));
        const int y_begin = static_cast<int>(band) * kTileSize;
        const int y_end = std::min(cam.height, y_begin + kTileSize);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                chain.clear();
                std::fill(scratch.begin(), scratch.end(), 0.0);
                const Eigen::Vector2d v = pixel_center(x, y);
                composite_pixel(aux.splats, bins.list(static_cast<int>(band), x), v, settings, kColorDim,
                                scratch.data(), scratch.data() + kColorDim, fd,
                                [&](const ChainEntry& e) { chain.push_back(e); });
                const double* gc = d_color.pixel(x, y);
                const double* gf = d_semantics.pixel(x, y);
                double rest_color = 0.0;     // contribution behind, normalized by transmittance after
                double rest_language = 0.0;
                for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
                    const Splat& s = aux.splats[it->splat];
                    double* g = sg.at(it->splat);
                    double d_weight = 0.0;
                    if (it->in_color) {
                        double gu = 0.0;
                        for (int c = 0; c < kColorDim; ++c) gu += gc[c] * s.fused[c];
                        const double d_alpha = it->transmittance_color * (gu - rest_color);
                        const double w = it->alpha_color * it->transmittance_color;
                        for (int c = 0; c < kColorDim; ++c) g[8 + c] += gc[c] * w;
                        rest_color = gu * it->alpha_color + (1.0 - it->alpha_color) * rest_color;
                        g[6] += d_alpha * it->weight;
                        d_weight += d_alpha * s.opacity;
                    }
                    if (it->in_language) {
                        double gu = 0.0;
                        for (int c = 0; c < fd; ++c) gu += gf[c] * s.fused[kColorDim + c];
                        const double d_alpha = it->transmittance_language * (gu - rest_language);
                        const double w = it->alpha_language * it->transmittance_language;
                        for (int c = 0; c < fd; ++c) g[8 + kColorDim + c] += gf[c] * w;
                        rest_language = gu * it->alpha_language + (1.0 - it->alpha_language) * rest_language;
                        g[7] += d_alpha * it->weight;
                        d_weight += d_alpha * s.indicator;
                    }
                    if (d_weight != 0.0) {
                        const ProjectedGaussian& pg = s.projected;
                        const Eigen::Vector2d a = pg.conic * (v - pg.mean2d);
                        const double dp = d_weight * it->weight;
                        g[0] += dp * a.x();
                        g[1] += dp * a.y();
                        g[2] += 0.5 * dp * a.x() * a.x();
                        g[3] += 0.5 * dp * a.x() * a.y();
                        g[4] += 0.5 * dp * a.y() * a.x();
                        g[5] += 0.5 * dp * a.y() * a.y();
                    }
                }
            }
        }
    });

    SplatGradients total(aux.splats.size(), channels);
    for (const SplatGradients& sg : band_grads) {
        for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i] += sg.values[i];
    }

    const IndicatorMode& mode = aux.options.indicator;
    Eigen::VectorXd du(channels);
    for (std::size_t si = 0; si < aux.splats.size(); ++si) {
        const Splat& s = aux.splats[si];
        const std::size_t gi = s.projected.index;
        const double* g = total.at(si);

        double d_opacity = g[6];
        if (mode.kind == IndicatorMode::Kind::Learned) {
            grads.cloud.indicator_logits[gi] += g[7] * s.indicator * (1.0 - s.indicator);
        } else if (mode.kind == IndicatorMode::Kind::ColorOpacity) {
            d_opacity += g[7];
        }
        grads.cloud.opacity_logits[gi] += d_opacity * s.opacity * (1.0 - s.opacity);

        for (int c = 0; c < channels; ++c) du[c] = g[8 + c];
        const Eigen::Vector3d color = cloud.color(gi);
        const FusionGradient fg = fuse_backward(std::span<const double>(color.data(), 3), cloud.feature(gi), weights,
                                                du, grads.attention, aux.options.fusion);
        for (int c = 0; c < kColorDim; ++c) {
            grads.cloud.color_logits[3 * gi + c] += fg.color[c] * color[c] * (1.0 - color[c]);
        }
        for (int c = 0; c < fd; ++c) {
            grads.cloud.features[gi * static_cast<std::size_t>(fd) + c] += fg.feature[c];
        }

        const Eigen::Vector2d d_mean(g[0], g[1]);
        Eigen::Matrix2d d_cov;
        d_cov << g[2], g[3], g[4], g[5];
        const ProjectionGradient pg = project_backward(cloud, cam, gi, d_mean, d_cov);
        for (int k = 0; k < 3; ++k) {
            grads.cloud.positions[3 * gi + k] += pg.position[k];
            grads.cloud.log_scales[3 * gi + k] += pg.log_scale[k];
        }
        for (int k = 0; k < 4; ++k) grads.cloud.rotations[4 * gi + k] += pg.rotation[k];
    }
}

}  // namespace vlgs
