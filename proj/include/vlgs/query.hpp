#pragma once

#include "vlgs/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace vlgs {

/// Text queries with precomputed embeddings.
struct QuerySet {
    std::vector<std::string> labels;
    std::vector<Eigen::VectorXd> embeddings;

    std::size_t size() const { return labels.size(); }
    int dim() const { return embeddings.empty() ? 0 : static_cast<int>(embeddings.front().size()); }
    /// Throws InvalidParameter when empty, ragged, non-finite or zero.
    void validate() const;
};

struct RelevancyTag {};

// Per-pixel probabilities over the query set, plus which pixels carry a
// feature strong enough to be decoded (the rest count as background).
struct RelevancyMap {
    PixelGrid<RelevancyTag> probs;
    std::vector<std::uint8_t> foreground;

    int width() const { return probs.width(); }
    int height() const { return probs.height(); }
    int queries() const { return probs.channels(); }
    bool is_foreground(int x, int y) const {
        return foreground[static_cast<std::size_t>(y) * probs.width() + x] != 0;
    }
};

/// Softmax over the query set of cos(F(v), phi(t)). Pixels whose feature
/// norm is <= min_norm use cosine 0 for every query and are background.
RelevancyMap relevancy(const FeatureMap& features, const QuerySet& queries, double min_norm = 0.0);

inline constexpr int kBackground = -1;

struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<int> labels;  // row-major, kBackground for unlabeled pixels

    LabelMap() = default;
    LabelMap(int w, int h, int fill = kBackground)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}
    int& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
    int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;

    bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
    friend bool operator==(const Mask&, const Mask&) = default;
};

/// Highest-probability query per foreground pixel, ties to the lowest index.
LabelMap segment_argmax(const RelevancyMap& rel);

inline constexpr double kDefaultThreshold = 0.5;

/// Foreground pixels with probs[q] >= threshold.
Mask segment_threshold(const RelevancyMap& rel, int query, double threshold = kDefaultThreshold);

struct PixelCoord {
    int x = 0;
    int y = 0;
    friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Pixel with the largest probability for the query; ties go to the first in row-major order.
PixelCoord localize(const RelevancyMap& rel, int query);

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
    int label = 0;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool contains(const PixelCoord& p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
    friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection and union counts per class, summed over images. The class set
/// is every label seen in either the prediction or the ground truth, so the
/// mean is symmetric in its arguments. Background pixels belong to no class.
class IouAccumulator {
public:
    explicit IouAccumulator(int classes);

    void add(const LabelMap& pred, const LabelMap& gt);
    /// Binary masks for one class.
    void add(int label, const Mask& pred, const Mask& gt);

    /// Mean IoU over classes with a non-empty union; 1 when there are none.
    double mean() const;
    double iou(int label) const;
    int classes() const { return static_cast<int>(intersection_.size()); }

private:
    std::vector<std::uint64_t> intersection_;
    std::vector<std::uint64_t> union_;
};

double mean_iou(const LabelMap& pred, const LabelMap& gt, int classes);

/// Fraction of localized points that fall inside some box of their label.
class LocalizationAccumulator {
public:
    void add(const PixelCoord& point, int label, const std::vector<Box>& boxes);
    double accuracy() const { return total_ == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(total_); }
    std::size_t total() const { return total_; }
    std::size_t hits() const { return hits_; }

private:
    std::size_t hits_ = 0;
    std::size_t total_ = 0;
};

/// GT mask of one label.
Mask label_mask(const LabelMap& labels, int label);

}  // namespace vlgs
