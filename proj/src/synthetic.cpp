#include "vlgs/synthetic.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace vlgs {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kDefaultLabels = {"apple", "book", "cup", "lamp", "mug", "plant", "clock", "shoe"};

const std::vector<Eigen::Vector3d> kPalette = {{0.85, 0.2, 0.15}, {0.2, 0.65, 0.25}, {0.2, 0.35, 0.85},
                                               {0.9, 0.75, 0.2},  {0.6, 0.3, 0.7},   {0.2, 0.7, 0.75},
                                               {0.75, 0.45, 0.2}, {0.55, 0.55, 0.55}};

constexpr double kOrbitRadius = 3.5;
constexpr double kOrbitHeight = 1.5;
constexpr double kObjectRing = 0.55;
constexpr double kGroundSpacing = 0.3;
constexpr int kGroundRings = 7;
constexpr double kGroundHeight = -0.45;

Eigen::Vector4d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

}  // namespace

void SyntheticSpec::validate() const {
    const auto names = resolved_labels();
    if (objects < 0) throw InvalidParameter("object count must be non-negative");
    if (static_cast<std::size_t>(objects) > names.size()) {
        throw InvalidParameter(fmt::format("{} objects need at least as many labels (have {})", objects, names.size()));
    }
    if (static_cast<std::size_t>(objects) > kPalette.size()) {
        throw InvalidParameter(fmt::format("at most {} objects are supported", kPalette.size()));
    }
    if (width < 1 || height < 1) throw InvalidParameter("image size must be positive");
    if (views < 2) throw InvalidParameter("a scene needs at least two views");
    if (held_out_every < 0) throw InvalidParameter("held_out_every must be non-negative");
    const int held = held_out_every > 0 ? views / held_out_every : 0;
    if (views - held < 2) throw InvalidParameter("the split leaves fewer than two training views");
    if (gaussians_per_object < 1 || gaussians_per_glare < 1) throw InvalidParameter("cluster sizes must be positive");
}

std::vector<std::string> SyntheticSpec::resolved_labels() const {
    if (!labels.empty()) return labels;
    const std::size_t n = std::min(kDefaultLabels.size(), static_cast<std::size_t>(std::max(3, objects)));
    return {kDefaultLabels.begin(), kDefaultLabels.begin() + static_cast<std::ptrdiff_t>(n)};
}

SyntheticScene build_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto names = spec.resolved_labels();
    const int fd = static_cast<int>(names.size());
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);

    SyntheticScene s;
    s.cloud = GaussianCloud(0, fd);
    s.queries.labels = names;
    for (int i = 0; i < fd; ++i) s.queries.embeddings.push_back(Eigen::VectorXd::Unit(fd, i));

    const double phase = 2.0 * std::numbers::pi * u(rng);
    for (int obj = 0; obj < spec.objects; ++obj) {
        const double angle = phase + 2.0 * std::numbers::pi * obj / spec.objects + 0.3 * (u(rng) - 0.5);
        const double ring = spec.objects == 1 ? 0.0 : kObjectRing;
        const Eigen::Vector3d center(ring * std::cos(angle), ring * std::sin(angle), 0.1 * (u(rng) - 0.5));
        const Eigen::Vector3d radii(0.22 + 0.1 * u(rng), 0.22 + 0.1 * u(rng), 0.25 + 0.15 * u(rng));
        const Eigen::Vector3d base = kPalette[static_cast<std::size_t>(obj)];
        const std::vector<double> embedding(s.queries.embeddings[obj].data(),
                                            s.queries.embeddings[obj].data() + fd);
        for (int g = 0; g < spec.gaussians_per_object; ++g) {
            Eigen::Vector3d p;
            do {
                p = Eigen::Vector3d(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
            } while (p.squaredNorm() > 1.0);
            const Eigen::Vector3d pos = center + p.cwiseProduct(radii) * 0.8;
            const Eigen::Vector3d ls(std::log(0.06 + 0.04 * u(rng)), std::log(0.06 + 0.04 * u(rng)),
                                     std::log(0.06 + 0.04 * u(rng)));
            Eigen::Vector3d color = base + 0.04 * Eigen::Vector3d(n(rng), n(rng), n(rng));
            color = color.cwiseMax(0.05).cwiseMin(0.95);
            s.cloud.push_back(pos, ls, random_rotation(rng), 0.85 + 0.13 * u(rng), color, embedding, 0.999);
            s.gaussian_label.push_back(obj);
            s.is_glare.push_back(false);
        }
        if (spec.glare && obj % 2 == 0) {
            // A bright translucent patch hanging just outside the object, toward the camera orbit.
            const double side = angle + (u(rng) - 0.5);
            const Eigen::Vector3d out(std::cos(side), std::sin(side), 0.0);
            const Eigen::Vector3d glare_center = center + out * (radii.head<2>().maxCoeff() * 0.95) +
                                                 Eigen::Vector3d(0, 0, 0.1 * (u(rng) - 0.5));
            for (int g = 0; g < spec.gaussians_per_glare; ++g) {
                const Eigen::Vector3d pos = glare_center + 0.08 * Eigen::Vector3d(n(rng), n(rng), n(rng));
                const Eigen::Vector3d ls(std::log(0.07 + 0.04 * u(rng)), std::log(0.07 + 0.04 * u(rng)),
                                         std::log(0.07 + 0.04 * u(rng)));
                const Eigen::Vector3d color(0.95, 0.95, 0.9);
                s.cloud.push_back(pos, ls, random_rotation(rng), 0.45 + 0.25 * u(rng), color, embedding, 0.001);
                s.gaussian_label.push_back(obj);
                s.is_glare.push_back(true);
            }
        }
    }

    if (spec.backdrop) {
        // Flat ground disk under the objects, tinted by azimuth with a ring checker so
        // that distant views do not look alike. It carries no language feature.
        const std::vector<double> none(static_cast<std::size_t>(fd), 0.0);
        for (int ring = 0; ring <= kGroundRings; ++ring) {
            const double r = kGroundSpacing * ring;
            const int count = std::max(1, static_cast<int>(std::lround(2.0 * std::numbers::pi * r / kGroundSpacing)));
            for (int k = 0; k < count; ++k) {
                const double a = 2.0 * std::numbers::pi * (k + 0.5 * (ring % 2)) / count;
                const Eigen::Vector3d pos(r * std::cos(a), r * std::sin(a), kGroundHeight);
                const double shade = (ring + k) % 2 == 0 ? 1.0 : 0.7;
                Eigen::Vector3d color(0.4 + 0.25 * std::cos(a), 0.4 + 0.25 * std::cos(a - 2.1), 0.4 + 0.25 * std::cos(a + 2.1));
                color *= shade;
                const double ls = std::log(0.55 * kGroundSpacing);
                s.cloud.push_back(pos, Eigen::Vector3d(ls, ls, std::log(0.02)), Eigen::Vector4d(1, 0, 0, 0), 0.95,
                                  color, none, 0.999);
                s.gaussian_label.push_back(kBackground);
                s.is_glare.push_back(false);
            }
        }
    }

    const double focal = 1.3 * spec.width;
    const double view_phase = 2.0 * std::numbers::pi * u(rng);
    for (int v = 0; v < spec.views; ++v) {
        const double a = view_phase + 2.0 * std::numbers::pi * v / spec.views;
        const double h = kOrbitHeight * (0.8 + 0.4 * u(rng));
        const Eigen::Vector3d eye(kOrbitRadius * std::cos(a), kOrbitRadius * std::sin(a), h);
        Camera cam = Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), focal, focal,
                                     spec.width, spec.height);
        cam.cx = 0.5 * spec.width;
        cam.cy = 0.5 * spec.height;
        s.cameras.push_back(cam);
    }
    s.cloud.validate();
    return s;
}

RasterOptions ground_truth_options() {
    RasterOptions o;
    o.indicator = IndicatorMode::learned();
    o.fusion = FusionMode::None;
    return o;
}

LabelMap decode_labels(const FeatureMap& semantics, const QuerySet& queries, double min_norm) {
    return segment_argmax(relevancy(semantics, queries, min_norm));
}

std::vector<Box> label_boxes(const LabelMap& labels) {
    std::vector<Box> boxes;
    int max_label = -1;
    for (int l : labels.labels) max_label = std::max(max_label, l);
    for (int l = 0; l <= max_label; ++l) {
        Box b{l, labels.width, labels.height, 0, 0};
        bool any = false;
        for (int y = 0; y < labels.height; ++y) {
            for (int x = 0; x < labels.width; ++x) {
                if (labels.at(x, y) != l) continue;
                any = true;
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
        }
        if (any) boxes.push_back(b);
    }
    return boxes;
}

fs::path generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
    const SyntheticScene s = build_synthetic(spec);
    const int fd = static_cast<int>(s.queries.size());
    fs::create_directories(out / "images");
    fs::create_directories(out / "features");
    fs::create_directories(out / "labels");

    const AttentionWeights no_attention(kColorDim, fd);
    const RasterOptions gt_opts = ground_truth_options();
    nlohmann::json frames = nlohmann::json::array();
    std::vector<int> glare_hits(s.cloud.size(), 0);
    for (int v = 0; v < spec.views; ++v) {
        const Camera& cam = s.cameras[static_cast<std::size_t>(v)];
        const std::string name = fmt::format("{:03}", v);
        const RenderOutput image = rasterize_reference(s.cloud, cam, no_attention, gt_opts);
        const RenderOutput semantic = rasterize(s.cloud, cam, no_attention, gt_opts);
        const LabelMap labels = decode_labels(semantic.semantics, s.queries);

        FeatureMap features(cam.width, cam.height, fd);
        std::vector<double> label_values(labels.labels.size());
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const int l = labels.at(x, y);
                label_values[static_cast<std::size_t>(y) * cam.width + x] = l;
                if (l == kBackground) continue;
                for (int c = 0; c < fd; ++c) features.at(x, y, c) = s.queries.embeddings[l][c];
            }
        }
        for (std::size_t i = 0; i < s.cloud.size(); ++i) {
            if (!s.is_glare[i]) continue;
            ProjectedGaussian pg;
            if (!project_one(s.cloud, cam, i, pg)) continue;
            const int px = static_cast<int>(std::floor(pg.mean2d.x()));
            const int py = static_cast<int>(std::floor(pg.mean2d.y()));
            if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) continue;
            glare_hits[i] += labels.at(px, py) == s.gaussian_label[i];
        }

        save_png(out / "images" / (name + ".png"), image.color);
        save_tensor(out / "features" / (name + ".mgst"), feature_map_tensor(features));
        save_tensor(out / "labels" / (name + ".mgst"),
                    Tensor({static_cast<std::uint32_t>(cam.height), static_cast<std::uint32_t>(cam.width)},
                           DType::Float32, label_values));
        nlohmann::json boxes = nlohmann::json::array();
        for (const Box& b : label_boxes(labels)) boxes.push_back({b.label, b.x0, b.y0, b.x1, b.y1});
        const bool held_out = spec.held_out_every > 0 && v % spec.held_out_every == spec.held_out_every - 1;
        frames.push_back({{"name", name},
                          {"image", "images/" + name + ".png"},
                          {"features", "features/" + name + ".mgst"},
                          {"labels", "labels/" + name + ".mgst"},
                          {"split", held_out ? "test" : "train"},
                          {"boxes", boxes},
                          {"camera", nlohmann::json::parse(camera_json(cam))}});
    }
    if (spec.glare && spec.objects > 0) {
        bool ok = false;
        for (std::size_t i = 0; i < s.cloud.size(); ++i) {
            ok = ok || (s.is_glare[i] && s.cloud.opacity(i) < 0.75 && glare_hits[i] > 0);
        }
        if (!ok) throw InvalidState("generator: no glare Gaussian projects onto its own object's label region");
    }

    std::vector<double> emb;
    for (const auto& e : s.queries.embeddings) emb.insert(emb.end(), e.data(), e.data() + e.size());
    save_tensor(out / "queries.mgst",
                Tensor({static_cast<std::uint32_t>(fd), static_cast<std::uint32_t>(fd)}, DType::Float32, emb));
    std::vector<double> points;
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        const Eigen::Vector3d p = s.cloud.position(i);
        const Eigen::Vector3d c = s.cloud.color(i);
        points.insert(points.end(), {p.x(), p.y(), p.z(), c.x(), c.y(), c.z()});
    }
    save_tensor(out / "points.mgst",
                Tensor({static_cast<std::uint32_t>(s.cloud.size()), 6}, DType::Float32, points));

    TrainConfig gt_cfg;
    gt_cfg.fusion = gt_opts.fusion;
    gt_cfg.indicator = gt_opts.indicator;
    gt_cfg.iterations = 0;
    gt_cfg.seed = spec.seed;
    save_checkpoint(make_checkpoint(make_train_state(s.cloud, no_attention, gt_cfg), gt_cfg), out / "ground_truth");

    nlohmann::json manifest;
    manifest["feature_dim"] = fd;
    manifest["frames"] = frames;
    manifest["queries"] = {{"labels", s.queries.labels}, {"embeddings", "queries.mgst"}};
    manifest["points"] = "points.mgst";
    manifest["ground_truth"] = "ground_truth";
    manifest["generator"] = {{"objects", spec.objects}, {"views", spec.views}, {"width", spec.width},
                             {"height", spec.height}, {"seed", spec.seed}, {"glare", spec.glare}, {"backdrop", spec.backdrop},
                             {"held_out_every", spec.held_out_every}};
    const fs::path path = out / "scene.json";
    write_text(path, manifest.dump(2) + "\n");
    return path;
}

GaussianCloud initialize_cloud(const std::vector<double>& points, int feature_dim, const InitOptions& options) {
    if (points.size() % 6 != 0) throw InvalidParameter("points must be N x 6");
    if (options.jitter < 0.0 || options.distractor_ratio < 0.0) {
        throw InvalidParameter("jitter and distractor ratio must be non-negative");
    }
    const std::size_t n = points.size() / 6;
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto pos = [&](std::size_t i) { return Eigen::Vector3d(points[6 * i], points[6 * i + 1], points[6 * i + 2]); };

    std::vector<double> scales(n, 0.05);
    for (std::size_t i = 0; i < n && n > 1; ++i) {
        std::vector<double> d2;
        d2.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) d2.push_back((pos(i) - pos(j)).squaredNorm());
        }
        const std::size_t k = std::min<std::size_t>(3, d2.size());
        std::partial_sort(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k), d2.end());
        double mean = 0.0;
        for (std::size_t j = 0; j < k; ++j) mean += d2[j];
        scales[i] = std::max(1e-3, std::sqrt(mean / static_cast<double>(k)));
    }

    GaussianCloud cloud(0, feature_dim);
    const std::vector<double> zero_feature(static_cast<std::size_t>(feature_dim), 0.0);
    const Eigen::Vector4d identity(1, 0, 0, 0);
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0), hi = Eigen::Vector3d::Constant(1.0);
    if (n > 0) {
        lo = hi = pos(0);
        for (std::size_t i = 0; i < n; ++i) {
            lo = lo.cwiseMin(pos(i));
            hi = hi.cwiseMax(pos(i));
        }
        const Eigen::Vector3d pad = 0.1 * (hi - lo) + Eigen::Vector3d::Constant(1e-3);
        lo -= pad;
        hi += pad;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p = pos(i) + options.jitter * Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
        Eigen::Vector3d c(points[6 * i + 3], points[6 * i + 4], points[6 * i + 5]);
        c = c.cwiseMax(0.01).cwiseMin(0.99);
        cloud.push_back(p, Eigen::Vector3d::Constant(std::log(scales[i])), identity, kInitialActivation, c,
                        zero_feature, kInitialActivation);
    }
    std::vector<double> sorted = scales;
    std::sort(sorted.begin(), sorted.end());
    const double typical = sorted.empty() ? 0.05 : sorted[sorted.size() / 2];
    const auto extra = static_cast<std::size_t>(std::llround(options.distractor_ratio * static_cast<double>(n)));
    for (std::size_t i = 0; i < extra; ++i) {
        const Eigen::Vector3d p(lo.x() + (hi.x() - lo.x()) * u(rng), lo.y() + (hi.y() - lo.y()) * u(rng),
                                lo.z() + (hi.z() - lo.z()) * u(rng));
        const Eigen::Vector3d c(0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng));
        cloud.push_back(p, Eigen::Vector3d::Constant(std::log(typical)), identity, kInitialActivation, c,
                        zero_feature, kInitialActivation);
    }
    return cloud;
}

}  // namespace vlgs
