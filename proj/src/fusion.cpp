#include "vlgs/fusion.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace vlgs {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Forward intermediates of one fusion evaluation.
struct AttentionPass {
    Eigen::VectorXd x;
    RowMajor q, k, v;  // D x d_h
    RowMajor a;        // D x D attention
    Eigen::VectorXd o;  // flattened A V, row-major
};

bool same_modality(int a, int b, int color_dim) { return (a < color_dim) == (b < color_dim); }

Eigen::VectorXd concat(std::span<const double> color, std::span<const double> feature, const AttentionWeights& w) {
    if (color.size() != static_cast<std::size_t>(w.color_dim) ||
        feature.size() != static_cast<std::size_t>(w.feature_dim)) {
        throw InvalidParameter(fmt::format("fusion expects {}+{} channels, got {}+{}", w.color_dim, w.feature_dim,
                                           color.size(), feature.size()));
    }
    Eigen::VectorXd x(w.channels());
    for (std::size_t i = 0; i < color.size(); ++i) {
        x[static_cast<Eigen::Index>(i)] = color[i];
    }
    for (std::size_t i = 0; i < feature.size(); ++i) {
        x[static_cast<Eigen::Index>(color.size() + i)] = feature[i];
    }
    return x;
}

RowMajor reshape(const Eigen::VectorXd& flat, int rows, int cols) {
    return Eigen::Map<const RowMajor>(flat.data(), rows, cols);
}

AttentionPass forward_pass(const Eigen::VectorXd& x, const AttentionWeights& w, FusionMode mode) {
    const int d = w.channels();
    const int h = w.attention_dim;
    AttentionPass p;
    p.x = x;
    p.v = reshape(w.wv * x + w.bv, d, h);
    if (mode == FusionMode::Linear) {
        p.a = RowMajor::Identity(d, d);
    } else {
        p.q = reshape(w.wq * x + w.bq, d, h);
        p.k = reshape(w.wk * x + w.bk, d, h);
        const double scale = 1.0 / std::sqrt(static_cast<double>(h));
        RowMajor s = (p.q * p.k.transpose()) * scale;
        p.a.resize(d, d);
        for (int r = 0; r < d; ++r) {
            double row_max = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < d; ++c) {
                if (mode == FusionMode::CrossAttention && same_modality(r, c, w.color_dim)) {
                    continue;
                }
                row_max = std::max(row_max, s(r, c));
            }
            double total = 0.0;
            for (int c = 0; c < d; ++c) {
                const bool masked = mode == FusionMode::CrossAttention && same_modality(r, c, w.color_dim);
                p.a(r, c) = masked ? 0.0 : std::exp(s(r, c) - row_max);
                total += p.a(r, c);
            }
            p.a.row(r) /= total;
        }
    }
    const RowMajor av = p.a * p.v;
    p.o = Eigen::Map<const Eigen::VectorXd>(av.data(), av.size());
    return p;
}

}  // namespace

FusionMode parse_fusion_mode(const std::string& text) {
    if (text == "self") return FusionMode::SelfAttention;
    if (text == "cross") return FusionMode::CrossAttention;
    if (text == "mlp1") return FusionMode::Linear;
    if (text == "none") return FusionMode::None;
    throw InvalidParameter(fmt::format("unknown fusion mode '{}' (expected self|cross|mlp1|none)", text));
}

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::SelfAttention: return "self";
        case FusionMode::CrossAttention: return "cross";
        case FusionMode::Linear: return "mlp1";
        case FusionMode::None: return "none";
    }
    return "self";
}

AttentionWeights::AttentionWeights(int color_dim_, int feature_dim_, int attention_dim_)
    : color_dim(color_dim_), feature_dim(feature_dim_), attention_dim(attention_dim_) {
    if (color_dim < 1 || feature_dim < 1 || attention_dim < 1) {
        throw InvalidParameter("attention weights need positive color, feature and attention sizes");
    }
    const int d = channels();
    const int dh = d * attention_dim;
    wq = Eigen::MatrixXd::Zero(dh, d);
    wk = Eigen::MatrixXd::Zero(dh, d);
    wv = Eigen::MatrixXd::Zero(dh, d);
    bq = Eigen::VectorXd::Zero(dh);
    bk = Eigen::VectorXd::Zero(dh);
    bv = Eigen::VectorXd::Zero(dh);
    wout = Eigen::MatrixXd::Zero(d, dh);
    bout = Eigen::VectorXd::Zero(d);
}

std::size_t AttentionWeights::parameter_count() const {
    std::size_t n = 0;
    for_each_block([&](const char*, std::span<const double> s) { n += s.size(); });
    return n;
}

AttentionWeights AttentionWeights::initialized(int color_dim, int feature_dim, int attention_dim,
                                               std::mt19937_64& rng) {
    AttentionWeights w(color_dim, feature_dim, attention_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.channels()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::MatrixXd* m : {&w.wq, &w.wk, &w.wv}) {
        for (Eigen::Index i = 0; i < m->size(); ++i) {
            m->data()[i] = dist(rng);
        }
    }
    for (Eigen::VectorXd* b : {&w.bq, &w.bk, &w.bv}) {
        for (Eigen::Index i = 0; i < b->size(); ++i) {
            (*b)[i] = dist(rng);
        }
    }
    return w;
}

void AttentionWeights::validate() const {
    const Eigen::Index d = channels();
    const Eigen::Index dh = d * attention_dim;
    const bool shapes = wq.rows() == dh && wq.cols() == d && wk.rows() == dh && wk.cols() == d && wv.rows() == dh &&
                        wv.cols() == d && bq.size() == dh && bk.size() == dh && bv.size() == dh &&
                        wout.rows() == d && wout.cols() == dh && bout.size() == d;
    if (!shapes) {
        throw InvalidParameter("attention weights have inconsistent shapes");
    }
    bool finite = true;
    for_each_block([&](const char*, std::span<const double> s) {
        for (double x : s) finite = finite && std::isfinite(x);
    });
    if (!finite) {
        throw InvalidParameter("attention weights contain non-finite entries");
    }
}

void AttentionWeights::set_zero() {
    for_each_block([](const char*, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
}

bool operator==(const AttentionWeights& a, const AttentionWeights& b) {
    if (a.color_dim != b.color_dim || a.feature_dim != b.feature_dim || a.attention_dim != b.attention_dim) {
        return false;
    }
    auto same = [](const auto& x, const auto& y) { return x.size() == y.size() && (x.size() == 0 || x == y); };
    return same(a.wq, b.wq) && same(a.wk, b.wk) && same(a.wv, b.wv) && same(a.bq, b.bq) && same(a.bk, b.bk) &&
           same(a.bv, b.bv) && same(a.wout, b.wout) && same(a.bout, b.bout);
}

Eigen::VectorXd fuse(std::span<const double> color, std::span<const double> feature, const AttentionWeights& w,
                     FusionMode mode) {
    const Eigen::VectorXd x = concat(color, feature, w);
    if (mode == FusionMode::None) {
        return x;
    }
    const AttentionPass p = forward_pass(x, w, mode);
    return x + w.wout * p.o + w.bout;
}

Eigen::MatrixXd attention_map(std::span<const double> color, std::span<const double> feature,
                              const AttentionWeights& w, FusionMode mode) {
    const Eigen::VectorXd x = concat(color, feature, w);
    if (mode == FusionMode::None) {
        return Eigen::MatrixXd::Identity(w.channels(), w.channels());
    }
    return forward_pass(x, w, mode).a;
}

FusionGradient fuse_backward(std::span<const double> color, std::span<const double> feature,
                             const AttentionWeights& w, const Eigen::VectorXd& du, AttentionWeights& dw,
                             FusionMode mode) {
    const Eigen::VectorXd x = concat(color, feature, w);
    const int d = w.channels();
    const int h = w.attention_dim;
    if (du.size() != d) {
        throw InvalidParameter("fuse_backward: gradient has the wrong size");
    }
    Eigen::VectorXd dx = du;
    if (mode != FusionMode::None) {
        const AttentionPass p = forward_pass(x, w, mode);
        dw.wout.noalias() += du * p.o.transpose();
        dw.bout += du;
        const Eigen::VectorXd d_o = w.wout.transpose() * du;
        const RowMajor d_av = reshape(d_o, d, h);

        const RowMajor d_v = p.a.transpose() * d_av;
        const Eigen::VectorXd d_vflat = Eigen::Map<const Eigen::VectorXd>(d_v.data(), d_v.size());
        dw.wv.noalias() += d_vflat * x.transpose();
        dw.bv += d_vflat;
        dx.noalias() += w.wv.transpose() * d_vflat;

        if (mode != FusionMode::Linear) {
            const RowMajor d_a = d_av * p.v.transpose();
            RowMajor d_s(d, d);
            for (int r = 0; r < d; ++r) {
                const double inner = d_a.row(r).dot(p.a.row(r));
                for (int c = 0; c < d; ++c) {
                    d_s(r, c) = p.a(r, c) * (d_a(r, c) - inner);
                }
            }
            const double scale = 1.0 / std::sqrt(static_cast<double>(h));
            const RowMajor d_q = (d_s * p.k) * scale;
            const RowMajor d_k = (d_s.transpose() * p.q) * scale;
            const Eigen::VectorXd d_qflat = Eigen::Map<const Eigen::VectorXd>(d_q.data(), d_q.size());
            const Eigen::VectorXd d_kflat = Eigen::Map<const Eigen::VectorXd>(d_k.data(), d_k.size());
            dw.wq.noalias() += d_qflat * x.transpose();
            dw.bq += d_qflat;
            dw.wk.noalias() += d_kflat * x.transpose();
            dw.bk += d_kflat;
            dx.noalias() += w.wq.transpose() * d_qflat + w.wk.transpose() * d_kflat;
        }
    }
    FusionGradient g;
    g.color = dx.head(w.color_dim);
    g.feature = dx.tail(w.feature_dim);
    return g;
}

}  // namespace vlgs
