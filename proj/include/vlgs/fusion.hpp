#pragma once

#include "vlgs/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace vlgs {

inline constexpr int kDefaultAttentionDim = 4;

/// How color and language channels are mixed before rasterization.
///  - SelfAttention: every channel token attends to every other channel.
///  - CrossAttention: color tokens attend only to language tokens and vice versa.
///  - Linear: attention replaced by the identity, leaving a one-hidden-layer
///    linear residual map x + W_out(W_v x).
///  - None: u = x.
enum class FusionMode { SelfAttention, CrossAttention, Linear, None };

FusionMode parse_fusion_mode(const std::string& text);
std::string to_string(FusionMode mode);

// Shared across all Gaussians. Channel tokens: the D = d_c + d_f scalar channels
// are the token axis, each embedded into attention_dim values.
struct AttentionWeights {
    int color_dim = 3;
    int feature_dim = 3;
    int attention_dim = kDefaultAttentionDim;

    Eigen::MatrixXd wq, wk, wv;  // (D*d_h) x D
    Eigen::VectorXd bq, bk, bv;  // D*d_h
    Eigen::MatrixXd wout;        // D x (D*d_h)
    Eigen::VectorXd bout;        // D

    AttentionWeights() = default;
    /// All-zero weights of the given shape.
    AttentionWeights(int color_dim, int feature_dim, int attention_dim = kDefaultAttentionDim);

    int channels() const { return color_dim + feature_dim; }
    std::size_t parameter_count() const;

    /// Q, K, V uniform in (-1/sqrt(D), 1/sqrt(D)); output projection zero.
    static AttentionWeights initialized(int color_dim, int feature_dim, int attention_dim, std::mt19937_64& rng);

    void validate() const;
    void set_zero();
    /// Calls fn(name, span) for each parameter block in a fixed order.
    template <class Fn>
    void for_each_block(Fn&& fn);
    template <class Fn>
    void for_each_block(Fn&& fn) const;

    friend bool operator==(const AttentionWeights& a, const AttentionWeights& b);
};

/// u = x + psi_out(softmax(Q K^T / sqrt(d_h)) V), x = c (+) f.
Eigen::VectorXd fuse(std::span<const double> color, std::span<const double> feature, const AttentionWeights& w,
                     FusionMode mode = FusionMode::SelfAttention);

/// Row-stochastic D x D attention matrix used by fuse (identity for Linear and None).
Eigen::MatrixXd attention_map(std::span<const double> color, std::span<const double> feature,
                              const AttentionWeights& w, FusionMode mode = FusionMode::SelfAttention);

struct FusionGradient {
    Eigen::VectorXd color;
    Eigen::VectorXd feature;
};

/// Gradients of <du, fuse(c, f, w)>. Weight gradients are added into dw.
FusionGradient fuse_backward(std::span<const double> color, std::span<const double> feature,
                             const AttentionWeights& w, const Eigen::VectorXd& du, AttentionWeights& dw,
                             FusionMode mode = FusionMode::SelfAttention);

template <class Fn>
void AttentionWeights::for_each_block(Fn&& fn) {
    fn("wq", std::span<double>(wq.data(), static_cast<std::size_t>(wq.size())));
    fn("bq", std::span<double>(bq.data(), static_cast<std::size_t>(bq.size())));
    fn("wk", std::span<double>(wk.data(), static_cast<std::size_t>(wk.size())));
    fn("bk", std::span<double>(bk.data(), static_cast<std::size_t>(bk.size())));
    fn("wv", std::span<double>(wv.data(), static_cast<std::size_t>(wv.size())));
    fn("bv", std::span<double>(bv.data(), static_cast<std::size_t>(bv.size())));
    fn("wout", std::span<double>(wout.data(), static_cast<std::size_t>(wout.size())));
    fn("bout", std::span<double>(bout.data(), static_cast<std::size_t>(bout.size())));
}

template <class Fn>
void AttentionWeights::for_each_block(Fn&& fn) const {
    fn("wq", std::span<const double>(wq.data(), static_cast<std::size_t>(wq.size())));
    fn("bq", std::span<const double>(bq.data(), static_cast<std::size_t>(bq.size())));
    fn("wk", std::span<const double>(wk.data(), static_cast<std::size_t>(wk.size())));
    fn("bk", std::span<const double>(bk.data(), static_cast<std::size_t>(bk.size())));
    fn("wv", std::span<const double>(wv.data(), static_cast<std::size_t>(wv.size())));
    fn("bv", std::span<const double>(bv.data(), static_cast<std::size_t>(bv.size())));
    fn("wout", std::span<const double>(wout.data(), static_cast<std::size_t>(wout.size())));
    fn("bout", std::span<const double>(bout.data(), static_cast<std::size_t>(bout.size())));
}

}  // namespace vlgs
