#include "doctest.h"
#include "test_support.hpp"

#include "vlgs/fusion.hpp"

#include <random>

using namespace vlgs;
using vlgs::testing::close;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = d(rng);
    return v;
}

double objective(const std::vector<double>& c, const std::vector<double>& f, const AttentionWeights& w,
                 const Eigen::VectorXd& du, FusionMode mode) {
    return du.dot(fuse(c, f, w, mode));
}

// Central differences (h = 1e-5) of <du, fuse> against fuse_backward for every input.
void check_gradients(std::mt19937_64& rng, FusionMode mode, double rel_tol) {
    std::vector<double> c = random_vector(rng, 3);
    std::vector<double> f = random_vector(rng, 3);
    AttentionWeights w = testing::random_weights(rng, 3, 0.5);
    Eigen::VectorXd du = Eigen::Map<const Eigen::VectorXd>(random_vector(rng, 6).data(), 6);

    AttentionWeights dw(3, 3, 4);
    const FusionGradient g = fuse_backward(c, f, w, du, dw, mode);
    const double h = 1e-5;
    auto fd = [&](double& slot) {
        const double saved = slot;
        slot = saved + h;
        const double up = objective(c, f, w, du, mode);
        slot = saved - h;
        const double down = objective(c, f, w, du, mode);
        slot = saved;
        return (up - down) / (2 * h);
    };
    for (int i = 0; i < 3; ++i) CHECK(close(g.color[i], fd(c[i]), rel_tol, 1e-8));
    for (int i = 0; i < 3; ++i) CHECK(close(g.feature[i], fd(f[i]), rel_tol, 1e-8));

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> grads;
    w.for_each_block([&](const char*, std::span<double> s) { params.push_back(s); });
    std::as_const(dw).for_each_block([&](const char*, std::span<const double> s) { grads.push_back(s); });
    for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double numeric = fd(params[b][i]);
            CHECK_MESSAGE(close(grads[b][i], numeric, rel_tol, 1e-8),
                          "block " << b << " entry " << i << ": " << grads[b][i] << " vs " << numeric);
        }
    }
}

}  // namespace

TEST_CASE("zero output projection makes fusion the identity") {
    std::mt19937_64 rng(1);
    AttentionWeights w = AttentionWeights::initialized(3, 3, 4, rng);
    const std::vector<double> c{0.1, 0.5, 0.9}, f{-1.0, 2.0, 0.25};
    const Eigen::VectorXd u = fuse(c, f, w);
    REQUIRE(u.size() == 6);
    for (int i = 0; i < 3; ++i) {
        CHECK(u[i] == c[static_cast<std::size_t>(i)]);
        CHECK(u[3 + i] == f[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("uniform attention with a column-0 value embedding adds the channel mean") {
    // Wq = Wk = 0 gives uniform rows 1/D. V[a][0] = x[a]. psi_out picks O[b][0].
    AttentionWeights w(3, 3, 4);
    const int d = 6, h = 4;
    for (int a = 0; a < d; ++a) {
        w.wv(a * h + 0, a) = 1.0;
        w.wout(a, a * h + 0) = 1.0;
    }
    const std::vector<double> c{0.2, 0.4, 0.6}, f{1.0, -2.0, 3.0};
    const Eigen::VectorXd u = fuse(c, f, w);
    // Brute force: mean of x = (0.2+0.4+0.6+1-2+3)/6.
    const double mean = (0.2 + 0.4 + 0.6 + 1.0 - 2.0 + 3.0) / 6.0;
    const std::vector<double> x{0.2, 0.4, 0.6, 1.0, -2.0, 3.0};
    for (int i = 0; i < d; ++i) CHECK(u[i] == doctest::Approx(x[static_cast<std::size_t>(i)] + mean).epsilon(1e-14));
}

TEST_CASE("backward with zero output projection only passes the residual") {
    std::mt19937_64 rng(2);
    AttentionWeights w = AttentionWeights::initialized(3, 3, 4, rng);
    const std::vector<double> c{0.1, 0.5, 0.9}, f{-1.0, 2.0, 0.25};
    Eigen::VectorXd du = Eigen::VectorXd::Zero(6);
    du[0] = 1.0;
    AttentionWeights dw(3, 3, 4);
    const FusionGradient g = fuse_backward(c, f, w, du, dw);
    CHECK(g.color[0] == 1.0);
    CHECK(g.color[1] == 0.0);
    CHECK(g.color[2] == 0.0);
    CHECK(g.feature.cwiseAbs().maxCoeff() == 0.0);
    CHECK(dw.wout.row(0).cwiseAbs().maxCoeff() > 0.0);
    CHECK(dw.wout.bottomRows(5).cwiseAbs().maxCoeff() == 0.0);
    CHECK(dw.bout[0] == 1.0);
    CHECK(dw.wq.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
    std::mt19937_64 rng(4);
    AttentionWeights w = testing::random_weights(rng, 3);
    const std::vector<double> c{0.1, 0.5, 0.9}, f{-1.0, 2.0, 0.25};
    AttentionWeights dw(3, 3, 4);
    const FusionGradient g = fuse_backward(c, f, w, Eigen::VectorXd::Zero(6), dw);
    CHECK(g.color.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.feature.cwiseAbs().maxCoeff() == 0.0);
    bool all_zero = true;
    std::as_const(dw).for_each_block([&](const char*, std::span<const double> s) {
        for (double x : s) all_zero = all_zero && x == 0.0;
    });
    CHECK(all_zero);
}

TEST_CASE("self-attention gradients match finite differences over 100 seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        check_gradients(rng, FusionMode::SelfAttention, 1e-4);
    }
}

TEST_CASE("ablation fusion modes have consistent gradients") {
    std::mt19937_64 rng(77);
    for (int i = 0; i < 10; ++i) {
        check_gradients(rng, FusionMode::CrossAttention, 1e-4);
        check_gradients(rng, FusionMode::Linear, 1e-4);
        check_gradients(rng, FusionMode::None, 1e-4);
    }
}

TEST_CASE("fusion mode names round trip and shape errors are reported") {
    for (FusionMode m : {FusionMode::SelfAttention, FusionMode::CrossAttention, FusionMode::Linear, FusionMode::None}) {
        CHECK(parse_fusion_mode(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_fusion_mode("mlp2"), InvalidParameter);
    AttentionWeights w(3, 3, 4);
    const std::vector<double> c{0.1, 0.2}, f{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(fuse(c, f, w), InvalidParameter);
}

TEST_CASE("fusion is applied independently per Gaussian") {
    std::mt19937_64 rng(9);
    const AttentionWeights w = testing::random_weights(rng, 3);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(random_vector(rng, 6));
    std::vector<Eigen::VectorXd> forward, reversed;
    for (const auto& x : xs) forward.push_back(fuse({x.data(), 3}, {x.data() + 3, 3}, w));
    for (auto it = xs.rbegin(); it != xs.rend(); ++it) reversed.push_back(fuse({it->data(), 3}, {it->data() + 3, 3}, w));
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(forward[i] == reversed[xs.size() - 1 - i]);
}

TEST_CASE("softmax rows sum to one even for large logits") {
    std::mt19937_64 rng(31);
    AttentionWeights w = testing::random_weights(rng, 3);
    w.wq *= 200.0;
    w.wk *= 200.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_vector(rng, 6);
        for (FusionMode m : {FusionMode::SelfAttention, FusionMode::CrossAttention}) {
            const Eigen::MatrixXd a = attention_map({x.data(), 3}, {x.data() + 3, 3}, w, m);
            CHECK(a.allFinite());
            for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-9);
        }
    }
    // Cross attention never mixes within a modality.
    const auto x = random_vector(rng, 6);
    const Eigen::MatrixXd a = attention_map({x.data(), 3}, {x.data() + 3, 3}, w, FusionMode::CrossAttention);
    CHECK(a.topLeftCorner(3, 3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.bottomRightCorner(3, 3).cwiseAbs().maxCoeff() == 0.0);
}
