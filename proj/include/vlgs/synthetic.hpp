#pragma once

#include "vlgs/io.hpp"
#include "vlgs/query.hpp"
#include "vlgs/rasterizer.hpp"
#include "vlgs/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vlgs {

inline constexpr double kSyntheticMinNorm = 0.5;

struct SyntheticSpec {
    int objects = 3;
    std::vector<std::string> labels;  // empty: default names, at least max(3, objects)
    int width = 64;
    int height = 64;
    int views = 12;
    std::uint64_t seed = 7;
    bool glare = false;
    bool backdrop = true;  // textured ground disk with no language feature
    int held_out_every = 4;  // every n-th view (n-1, 2n-1, ...) is held out; 0 disables
    int gaussians_per_object = 40;
    int gaussians_per_glare = 12;

    void validate() const;
    std::vector<std::string> resolved_labels() const;
};

struct SyntheticScene {
    GaussianCloud cloud;
    std::vector<int> gaussian_label;  // per Gaussian, the object it belongs to (kBackground for the ground)
    std::vector<bool> is_glare;
    std::vector<Camera> cameras;
    QuerySet queries;
};

/// Ground-truth parameters and cameras; a pure function of the spec.
SyntheticScene build_synthetic(const SyntheticSpec& spec);

/// How ground-truth clouds are rendered and decoded into label maps.
RasterOptions ground_truth_options();

/// Per-pixel labels of a semantic render: argmax relevancy, background below min_norm.
LabelMap decode_labels(const FeatureMap& semantics, const QuerySet& queries, double min_norm = kSyntheticMinNorm);

/// Half-open bounding box of every label present in the map.
std::vector<Box> label_boxes(const LabelMap& labels);

/// Writes scene.json, images, feature maps, label maps, boxes, query
/// embeddings, initialization points and the ground-truth checkpoint.
/// Returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

struct InitOptions {
    double jitter = 0.02;            // std-dev of the position perturbation
    double distractor_ratio = 0.1;   // extra uniformly placed Gaussians per point
    std::uint64_t seed = 0;
};

/// Training cloud from N x 6 points (position, color): perturbed positions,
/// isotropic scales from the 3 nearest neighbours, identity rotations,
/// opacity and indicator at the initial activation, zero features.
GaussianCloud initialize_cloud(const std::vector<double>& points, int feature_dim, const InitOptions& options);

}  // namespace vlgs
