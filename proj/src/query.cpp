#include "vlgs/query.hpp"

#include <fmt/format.h>

#include <cmath>

namespace vlgs {

void QuerySet::validate() const {
    if (labels.empty()) throw InvalidParameter("query set is empty");
    if (labels.size() != embeddings.size()) {
        throw InvalidParameter(fmt::format("query set has {} labels but {} embeddings", labels.size(),
                                           embeddings.size()));
    }
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const Eigen::VectorXd& e = embeddings[i];
        if (e.size() != embeddings.front().size() || e.size() == 0) {
            throw InvalidParameter(fmt::format("query '{}' has embedding width {}, expected {}", labels[i], e.size(),
                                               embeddings.front().size()));
        }
        if (!e.allFinite() || e.norm() == 0.0) {
            throw InvalidParameter(fmt::format("query '{}' has a zero or non-finite embedding", labels[i]));
        }
    }
}

RelevancyMap relevancy(const FeatureMap& features, const QuerySet& queries, double min_norm) {
    queries.validate();
    if (features.channels() != queries.dim()) {
        throw InvalidParameter(fmt::format("relevancy: features have {} channels, queries have width {}",
                                           features.channels(), queries.dim()));
    }
    const int nq = static_cast<int>(queries.size());
    const int fd = features.channels();
    std::vector<Eigen::VectorXd> unit;
    for (const auto& e : queries.embeddings) unit.push_back(e / e.norm());

    RelevancyMap rel;
    rel.probs = PixelGrid<RelevancyTag>(features.width(), features.height(), nq);
    rel.foreground.assign(features.pixel_count(), 0);
    std::vector<double> logits(static_cast<std::size_t>(nq));
    for (int y = 0; y < features.height(); ++y) {
        for (int x = 0; x < features.width(); ++x) {
            const Eigen::Map<const Eigen::VectorXd> f(features.pixel(x, y), fd);
            const double norm = f.norm();
            const bool fg = norm > min_norm && norm > 0.0;
            rel.foreground[static_cast<std::size_t>(y) * features.width() + x] = fg ? 1 : 0;
            double max_logit = -INFINITY;
            for (int q = 0; q < nq; ++q) {
                logits[q] = fg ? f.dot(unit[q]) / norm : 0.0;
                max_logit = std::max(max_logit, logits[q]);
            }
            double total = 0.0;
            for (int q = 0; q < nq; ++q) {
                logits[q] = std::exp(logits[q] - max_logit);
                total += logits[q];
            }
            double* p = rel.probs.pixel(x, y);
            for (int q = 0; q < nq; ++q) p[q] = logits[q] / total;
        }
    }
    return rel;
}

LabelMap segment_argmax(const RelevancyMap& rel) {
    LabelMap out(rel.width(), rel.height());
    for (int y = 0; y < rel.height(); ++y) {
        for (int x = 0; x < rel.width(); ++x) {
            if (!rel.is_foreground(x, y)) continue;
            const double* p = rel.probs.pixel(x, y);
            int best = 0;
            for (int q = 1; q < rel.queries(); ++q) {
                if (p[q] > p[best]) best = q;
            }
            out.at(x, y) = best;
        }
    }
    return out;
}

Mask segment_threshold(const RelevancyMap& rel, int query, double threshold) {
    if (query < 0 || query >= rel.queries()) {
        throw InvalidParameter(fmt::format("query index {} out of range [0, {})", query, rel.queries()));
    }
    Mask m{rel.width(), rel.height(), std::vector<std::uint8_t>(rel.probs.pixel_count(), 0)};
    for (int y = 0; y < rel.height(); ++y) {
        for (int x = 0; x < rel.width(); ++x) {
            m.values[static_cast<std::size_t>(y) * rel.width() + x] =
                rel.is_foreground(x, y) && rel.probs.at(x, y, query) >= threshold ? 1 : 0;
        }
    }
    return m;
}

PixelCoord localize(const RelevancyMap& rel, int query) {
    if (query < 0 || query >= rel.queries()) {
        throw InvalidParameter(fmt::format("query index {} out of range [0, {})", query, rel.queries()));
    }
    PixelCoord best;
    double best_p = -1.0;
    for (int y = 0; y < rel.height(); ++y) {
        for (int x = 0; x < rel.width(); ++x) {
            const double p = rel.probs.at(x, y, query);
            if (p > best_p) {
                best_p = p;
                best = {x, y};
            }
        }
    }
    return best;
}

IouAccumulator::IouAccumulator(int classes)
    : intersection_(static_cast<std::size_t>(std::max(0, classes)), 0),
      union_(static_cast<std::size_t>(std::max(0, classes)), 0) {
    if (classes < 1) throw InvalidParameter("IoU needs at least one class");
}

void IouAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
        throw InvalidParameter(fmt::format("label maps differ in size ({}x{} vs {}x{})", pred.width, pred.height,
                                           gt.width, gt.height));
    }
    const int k = classes();
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const int p = pred.labels[i];
        const int g = gt.labels[i];
        for (int l : {p, g}) {
            if (l != kBackground && (l < 0 || l >= k)) {
                throw InvalidParameter(fmt::format("label {} outside [0, {})", l, k));
            }
        }
        if (p == g) {
            if (p != kBackground) {
                ++intersection_[p];
                ++union_[p];
            }
        } else {
            if (p != kBackground) ++union_[p];
            if (g != kBackground) ++union_[g];
        }
    }
}

void IouAccumulator::add(int label, const Mask& pred, const Mask& gt) {
    if (label < 0 || label >= classes()) throw InvalidParameter(fmt::format("label {} out of range", label));
    if (pred.width != gt.width || pred.height != gt.height) {
        throw InvalidParameter("masks differ in size");
    }
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const bool p = pred.values[i] != 0;
        const bool g = gt.values[i] != 0;
        intersection_[label] += p && g;
        union_[label] += p || g;
    }
}

double IouAccumulator::iou(int label) const {
    const auto u = union_.at(static_cast<std::size_t>(label));
    return u == 0 ? 0.0 : static_cast<double>(intersection_[label]) / static_cast<double>(u);
}

double IouAccumulator::mean() const {
    double sum = 0.0;
    int n = 0;
    for (int l = 0; l < classes(); ++l) {
        if (union_[l] == 0) continue;
        sum += iou(l);
        ++n;
    }
    return n == 0 ? 1.0 : sum / n;
}

double mean_iou(const LabelMap& pred, const LabelMap& gt, int classes) {
    IouAccumulator acc(classes);
    acc.add(pred, gt);
    return acc.mean();
}

void LocalizationAccumulator::add(const PixelCoord& point, int label, const std::vector<Box>& boxes) {
    ++total_;
    for (const Box& b : boxes) {
        if (b.label == label && b.contains(point)) {
            ++hits_;
            return;
        }
    }
}

Mask label_mask(const LabelMap& labels, int label) {
    Mask m{labels.width, labels.height, std::vector<std::uint8_t>(labels.labels.size(), 0)};
    for (std::size_t i = 0; i < labels.labels.size(); ++i) m.values[i] = labels.labels[i] == label ? 1 : 0;
    return m;
}

}  // namespace vlgs
