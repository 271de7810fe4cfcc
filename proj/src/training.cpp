#include "vlgs/training.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <ostream>

namespace vlgs {

namespace {

void check_same(const PixelGrid<ImageTag>& a, const PixelGrid<ImageTag>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidParameter(fmt::format("{}: image is {}x{}, expected {}x{}", what, a.width(), a.height(),
                                           b.width(), b.height()));
    }
}

void check_same(const FeatureMap& a, const FeatureMap& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidParameter(fmt::format("{}: feature map is {}x{}x{}, expected {}x{}x{}", what, a.width(),
                                           a.height(), a.channels(), b.width(), b.height(), b.channels()));
    }
}

// sum (a - b)^2 / n, optionally writing 2 scale (a - b) / n.
double mse(const std::vector<double>& a, const std::vector<double>& b, double scale, std::vector<double>* grad) {
    if (a.empty()) return 0.0;
    const double n = static_cast<double>(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
        if (grad) (*grad)[i] = 2.0 * scale * d / n;
    }
    return sum / n;
}

std::span<double> as_span(std::vector<double>& v) { return {v.data(), v.size()}; }

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::Position: return "position";
        case ParamGroup::Scale: return "scale";
        case ParamGroup::Rotation: return "rotation";
        case ParamGroup::Color: return "color";
        case ParamGroup::Opacity: return "opacity";
        case ParamGroup::Feature: return "feature";
        case ParamGroup::Indicator: return "indicator";
        case ParamGroup::Attention: return "attention";
    }
    return "?";
}

double LearningRates::operator[](ParamGroup group) const { return const_cast<LearningRates&>(*this)[group]; }

double& LearningRates::operator[](ParamGroup group) {
    switch (group) {
        case ParamGroup::Position: return position;
        case ParamGroup::Scale: return scale;
        case ParamGroup::Rotation: return rotation;
        case ParamGroup::Color: return color;
        case ParamGroup::Opacity: return opacity;
        case ParamGroup::Feature: return feature;
        case ParamGroup::Indicator: return indicator;
        case ParamGroup::Attention: return attention;
    }
    return attention;
}

BlendMode parse_blend_mode(const std::string& text) {
    if (text == "full") return BlendMode::Full;
    if (text == "no-rot") return BlendMode::NoRotation;
    if (text == "no-trans") return BlendMode::NoTranslation;
    if (text == "no-ssim") return BlendMode::NoSsim;
    if (text == "off") return BlendMode::Off;
    throw InvalidParameter(fmt::format("unknown blend mode '{}' (expected full|no-rot|no-trans|no-ssim|off)", text));
}

std::string to_string(BlendMode mode) {
    switch (mode) {
        case BlendMode::Full: return "full";
        case BlendMode::NoRotation: return "no-rot";
        case BlendMode::NoTranslation: return "no-trans";
        case BlendMode::NoSsim: return "no-ssim";
        case BlendMode::Off: return "off";
    }
    return "full";
}

BlendOptions blend_options(BlendMode mode) {
    BlendOptions o;
    o.rotation = mode != BlendMode::NoRotation;
    o.translation = mode != BlendMode::NoTranslation;
    o.ssim_weight = mode != BlendMode::NoSsim;
    return o;
}

void TrainConfig::validate() const {
    for (ParamGroup g : kAllGroups) {
        if (!(lr[g] > 0.0) || !std::isfinite(lr[g])) {
            throw InvalidParameter(fmt::format("learning rate for {} must be positive", to_string(g)));
        }
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidParameter("lambda must be non-negative");
    if (iterations < 0) throw InvalidParameter("iterations must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
        !(adam.epsilon > 0.0)) {
        throw InvalidParameter("Adam needs 0 <= beta < 1 and epsilon > 0");
    }
    if (raster.threads < 1) throw InvalidParameter("threads must be at least 1");
}

std::string TrainConfig::canonical() const {
    std::string s = fmt::format("lambda={};iterations={};seed={};fusion={};indicator={};blend={};ratio={};", lambda,
                                iterations, seed, to_string(fusion), indicator.to_string(), to_string(blend),
                                ratio.to_string());
    for (ParamGroup g : kAllGroups) s += fmt::format("lr.{}={};", to_string(g), lr[g]);
    s += fmt::format("adam={},{},{};raster={},{},{}", adam.beta1, adam.beta2, adam.epsilon, raster.alpha_floor,
                     raster.min_transmittance, raster.tiled ? 1 : 0);
    return s;
}

std::string TrainConfig::hash() const { return fmt::format("{:016x}", fnv1a(canonical())); }

double raster_loss(const RenderOutput& out, const TrainSample& sample) {
    check_same(out.color, sample.image, "raster_loss");
    check_same(out.semantics, sample.gt_features, "raster_loss");
    return mse(out.color.values(), sample.image.values(), 1.0, nullptr) +
           mse(out.semantics.values(), sample.gt_features.values(), 1.0, nullptr);
}

double raster_loss(const RenderOutput& out, const TrainSample& sample, Image& d_color, FeatureMap& d_semantics) {
    check_same(out.color, sample.image, "raster_loss");
    check_same(out.semantics, sample.gt_features, "raster_loss");
    d_color = Image(out.color.width(), out.color.height());
    d_semantics = FeatureMap(out.semantics.width(), out.semantics.height(), out.semantics.channels());
    return mse(out.color.values(), sample.image.values(), 1.0, &d_color.values()) +
           mse(out.semantics.values(), sample.gt_features.values(), 1.0, &d_semantics.values());
}

double blend_loss(const FeatureMap& rendered, const BlendSample& blend) {
    check_same(rendered, blend.gt, "blend_loss");
    return blend.weight * mse(rendered.values(), blend.gt.values(), 1.0, nullptr);
}

double blend_loss(const FeatureMap& rendered, const BlendSample& blend, FeatureMap& d_semantics) {
    check_same(rendered, blend.gt, "blend_loss");
    d_semantics = FeatureMap(rendered.width(), rendered.height(), rendered.channels());
    return blend.weight * mse(rendered.values(), blend.gt.values(), blend.weight, &d_semantics.values());
}

bool adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, double lr,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw InvalidParameter("adam_step: parameter and gradient sizes differ");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) return false;
    }
    if (state.m.size() != params.size()) {
        if (state.step != 0 || !state.m.empty()) throw InvalidState("adam_step: optimizer state has the wrong size");
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    state.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    return true;
}

std::vector<std::span<double>> group_blocks(GaussianCloud& cloud, AttentionWeights& weights, ParamGroup group) {
    switch (group) {
        case ParamGroup::Position: return {as_span(cloud.positions)};
        case ParamGroup::Scale: return {as_span(cloud.log_scales)};
        case ParamGroup::Rotation: return {as_span(cloud.rotations)};
        case ParamGroup::Color: return {as_span(cloud.color_logits)};
        case ParamGroup::Opacity: return {as_span(cloud.opacity_logits)};
        case ParamGroup::Feature: return {as_span(cloud.features)};
        case ParamGroup::Indicator: return {as_span(cloud.indicator_logits)};
        case ParamGroup::Attention: {
            std::vector<std::span<double>> blocks;
            weights.for_each_block([&](const char*, std::span<double> s) { blocks.push_back(s); });
            return blocks;
        }
    }
    return {};
}

std::vector<std::span<const double>> group_blocks(const GaussianCloud& cloud, const AttentionWeights& weights,
                                                  ParamGroup group) {
    auto blocks = group_blocks(const_cast<GaussianCloud&>(cloud), const_cast<AttentionWeights&>(weights), group);
    return {blocks.begin(), blocks.end()};
}

TrainState make_train_state(GaussianCloud cloud, AttentionWeights weights, const TrainConfig& cfg) {
    TrainState s;
    s.cloud = std::move(cloud);
    s.weights = std::move(weights);
    std::seed_seq pair_seed{cfg.seed, std::uint64_t{1}};
    std::seed_seq ratio_seed{cfg.seed, std::uint64_t{2}};
    s.pair_rng.seed(pair_seed);
    s.ratio_rng.seed(ratio_seed);
    return s;
}

StepLosses objective(const GaussianCloud& cloud, const AttentionWeights& weights, const TrainSample& s1,
                     const TrainSample& s2, const BlendSample* blend, const TrainConfig& cfg,
                     SceneGradients* grads) {
    const RasterOptions options = cfg.raster_options();
    StepLosses l;
    Image dc;
    FeatureMap df;
    const TrainSample* views[2] = {&s1, &s2};
    double* losses[2] = {&l.l1, &l.l2};
    for (int v = 0; v < 2; ++v) {
        const RenderOutput out = rasterize(cloud, views[v]->camera, weights, options);
        if (grads) {
            *losses[v] = raster_loss(out, *views[v], dc, df);
            rasterize_backward_into(cloud, views[v]->camera, weights, out, dc, df, *grads);
        } else {
            *losses[v] = raster_loss(out, *views[v]);
        }
    }
    if (cfg.blending_active() && blend) {
        const RenderOutput out = rasterize(cloud, blend->pose, weights, options);
        if (grads) {
            l.lb = blend_loss(out.semantics, *blend, df);
            for (double& g : df.values()) g *= cfg.lambda;
            rasterize_backward_into(cloud, blend->pose, weights, out, Image(out.color.width(), out.color.height()),
                                    df, *grads);
        } else {
            l.lb = blend_loss(out.semantics, *blend);
        }
    }
    l.total = l.l1 + l.l2 + cfg.lambda * l.lb;
    return l;
}

StepLosses train_step(TrainState& state, const TrainSample& s1, const TrainSample& s2, const TrainConfig& cfg,
                      const std::function<void(const std::string&)>& warn) {
    BlendSample blend;
    const bool blending = cfg.blending_active();
    if (blending) {
        blend = make_blend_sample(s1, s2, cfg.ratio, state.ratio_rng, blend_options(cfg.blend));
    }
    SceneGradients grads = SceneGradients::zeros(state.cloud, state.weights);
    StepLosses l = objective(state.cloud, state.weights, s1, s2, blending ? &blend : nullptr, cfg, &grads);
    l.iteration = state.iteration + 1;
    if (!std::isfinite(l.total)) {
        throw NumericFailure(fmt::format("non-finite loss at iteration {}: L1={} L2={} Lb={}", l.iteration, l.l1,
                                         l.l2, l.lb));
    }
    for (std::size_t gi = 0; gi < kParamGroups; ++gi) {
        const ParamGroup group = kAllGroups[gi];
        auto params = group_blocks(state.cloud, state.weights, group);
        auto g = group_blocks(grads.cloud, grads.attention, group);
        // Flatten the group so Adam sees one vector.
        std::vector<double> flat_p, flat_g;
        for (std::size_t b = 0; b < params.size(); ++b) {
            flat_p.insert(flat_p.end(), params[b].begin(), params[b].end());
            flat_g.insert(flat_g.end(), g[b].begin(), g[b].end());
        }
        if (!adam_step(flat_p, flat_g, state.optimizer.groups[gi], cfg.lr[group], cfg.adam)) {
            if (warn) {
                warn(fmt::format("iteration {}: non-finite gradient in group {}, update skipped", l.iteration,
                                 to_string(group)));
            }
            continue;
        }
        std::size_t offset = 0;
        for (auto& block : params) {
            std::copy(flat_p.begin() + static_cast<std::ptrdiff_t>(offset),
                      flat_p.begin() + static_cast<std::ptrdiff_t>(offset + block.size()), block.begin());
            offset += block.size();
        }
    }
    state.iteration += 1;
    return l;
}

std::vector<StepLosses> train(const Dataset& data, TrainState& state, const TrainConfig& cfg,
                              const TrainHooks& hooks) {
    cfg.validate();
    if (cfg.iterations > state.iteration && data.train.size() < 2) {
        throw InvalidParameter("training needs at least two training views");
    }
    std::vector<StepLosses> trace;
    const int n = static_cast<int>(data.train.size());
    while (state.iteration < cfg.iterations) {
        const int i = std::uniform_int_distribution<int>(0, n - 1)(state.pair_rng);
        int j = std::uniform_int_distribution<int>(0, n - 2)(state.pair_rng);
        if (j >= i) ++j;
        const StepLosses l = train_step(state, data.train[static_cast<std::size_t>(i)],
                                        data.train[static_cast<std::size_t>(j)], cfg, hooks.warn);
        trace.push_back(l);
        if (hooks.on_step) hooks.on_step(l);
        if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && state.iteration % hooks.checkpoint_every == 0) {
            hooks.on_checkpoint(state);
        }
    }
    return trace;
}

void write_loss_csv(std::ostream& out, const std::vector<StepLosses>& trace) {
    out << "iter,L1,L2,Lb,total\n";
    for (const StepLosses& l : trace) {
        out << fmt::format("{},{},{},{},{}\n", l.iteration, l.l1, l.l2, l.lb, l.total);
    }
}

ViewError view_error(const RenderOutput& out, const TrainSample& sample) {
    check_same(out.color, sample.image, "view_error");
    check_same(out.semantics, sample.gt_features, "view_error");
    ViewError e;
    e.color_mse = mse(out.color.values(), sample.image.values(), 1.0, nullptr);
    e.semantic_mse = mse(out.semantics.values(), sample.gt_features.values(), 1.0, nullptr);
    e.psnr = e.color_mse > 0.0 ? -10.0 * std::log10(e.color_mse) : std::numeric_limits<double>::infinity();
    return e;
}

}  // namespace vlgs
