#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chunkrl/nn.hpp"

#include <cmath>

using namespace chunkrl;
using namespace chunkrl::nn;

namespace {

// Directional derivative of L(theta) = sum(R .* f(x)) along a random
// parameter direction, by central finite differences.
double fd_directional(DenseNet net, const Mat& x, const Mat& R, const Grads& dir, double step) {
    DenseNet plus = net, minus = net;
    for (int l = 0; l < net.layer_count(); ++l) {
        plus.W[l] += step * dir.W[l];
        plus.b[l] += step * dir.b[l];
        minus.W[l] -= step * dir.W[l];
        minus.b[l] -= step * dir.b[l];
    }
    const double lp = (forward(plus, x).array() * R.array()).sum();
    const double lm = (forward(minus, x).array() * R.array()).sum();
    return (lp - lm) / (2.0 * step);
}

double analytic_directional(const DenseNet& net, const Mat& x, const Mat& R, const Grads& dir) {
    Trace trace;
    forward(net, x, &trace);
    Grads g = Grads::zeros_like(net);
    backward(net, trace, R, g);
    double dot = 0.0;
    for (int l = 0; l < net.layer_count(); ++l) {
        dot += (g.W[l].array() * dir.W[l].array()).sum();
        dot += (g.b[l].array() * dir.b[l].array()).sum();
    }
    return dot;
}

Grads random_direction(const DenseNet& net, Rng& rng) {
    Grads d = Grads::zeros_like(net);
    for (int l = 0; l < net.layer_count(); ++l) {
        for (int i = 0; i < d.W[l].rows(); ++i)
            for (int j = 0; j < d.W[l].cols(); ++j) d.W[l](i, j) = normal01(rng);
        for (int i = 0; i < d.b[l].size(); ++i) d.b[l](i) = normal01(rng);
    }
    return d;
}

}  // namespace

TEST_CASE("zero-weight net broadcasts its bias") {
    Rng rng = make_rng(1);
    DenseNet net = DenseNet::make({3, 2}, rng);
    net.W[0].setZero();
    net.b[0] << 0.5, -0.25;
    Mat x(4, 3);
    x.setRandom();
    Mat y = forward(net, x);
    for (int i = 0; i < 4; ++i) {
        CHECK(y(i, 0) == 0.5);
        CHECK(y(i, 1) == -0.25);
    }
}

TEST_CASE("linear layer gradient of squared error is the closed form") {
    Rng rng = make_rng(2);
    DenseNet net = DenseNet::make({3, 2}, rng);
    Mat x(1, 3);
    x << 0.3, -1.2, 0.7;
    Mat y(1, 2);
    y << 0.1, -0.4;

    Trace trace;
    Mat out = forward(net, x, &trace);
    Mat resid = out - y;  // d/d out of (1/2)||out - y||^2
    Grads g = Grads::zeros_like(net);
    backward(net, trace, resid, g);

    const Mat expected = x.transpose() * resid;  // (Wx - y) x^T, laid out d_in x d_out
    CHECK((g.W[0] - expected).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g.b[0].transpose() - resid.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradients match central finite differences on random shapes") {
    Rng rng = make_rng(3);
    const std::vector<std::vector<int>> shapes = {
        {4, 8, 1}, {6, 16, 16, 2}, {3, 5, 5, 5, 1}, {2, 1}, {7, 32, 1}};
    for (const auto& widths : shapes) {
        DenseNet net = DenseNet::make(widths, rng);
        Mat x(5, widths.front());
        x.setRandom();
        Mat R(5, widths.back());
        R.setRandom();
        for (int probe = 0; probe < 17; ++probe) {
            Grads dir = random_direction(net, rng);
            const double analytic = analytic_directional(net, x, R, dir);
            const double fd = fd_directional(net, x, R, dir, 1e-5);
            const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
            CHECK(std::abs(analytic - fd) / denom < 1e-4);
        }
    }
}

TEST_CASE("adamw fixed points and decoupled decay") {
    Rng rng = make_rng(4);
    DenseNet net = DenseNet::make({2, 2}, rng);
    const Mat w_before = net.W[0];

    AdamWState opt = AdamWState::make(net, 0.1, 0.0);
    Grads zero = Grads::zeros_like(net);
    adamw_step(opt, net, zero);
    CHECK((net.W[0] - w_before).cwiseAbs().maxCoeff() == 0.0);  // zero grad, zero decay
    CHECK(opt.step_count == 1);

    AdamWState opt_wd = AdamWState::make(net, 0.1, 0.1);
    const Mat w2 = net.W[0];
    adamw_step(opt_wd, net, zero);
    CHECK((net.W[0] - w2 * (1.0 - 0.1 * 0.1)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adamw single step matches the hand-computed update") {
    // Scalar problem f(w) = w^2/2 at w = 1, lr = 0.1: g = 1, m-hat = 1,
    // v-hat = 1, so w' = 1 - 0.1 / (1 + eps).
    Rng rng = make_rng(5);
    DenseNet net = DenseNet::make({1, 1}, rng, 1.0, false);
    net.W[0](0, 0) = 1.0;
    AdamWState opt = AdamWState::make(net, 0.1, 0.0);
    Grads g = Grads::zeros_like(net);
    g.W[0](0, 0) = 1.0;
    adamw_step(opt, net, g);
    const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    CHECK(std::abs(net.W[0](0, 0) - expected) < 1e-12);
}

TEST_CASE("adamw rejects non-finite gradients with the layer index") {
    Rng rng = make_rng(6);
    DenseNet net = DenseNet::make({2, 3, 1}, rng);
    AdamWState opt = AdamWState::make(net, 1e-3);
    Grads g = Grads::zeros_like(net);
    g.W[1](0, 0) = std::nan("");
    CHECK_THROWS_WITH_AS(adamw_step(opt, net, g),
                         doctest::Contains("layer 1"), std::runtime_error);
}

TEST_CASE("ema updates follow the geometric closed form") {
    Rng rng = make_rng(7);
    DenseNet src = DenseNet::make({2, 2}, rng);
    for (auto& w : src.W) w.setOnes();
    for (auto& b : src.b) b.setOnes();

    DenseNet zero = src;
    for (auto& w : zero.W) w.setZero();
    for (auto& b : zero.b) b.setZero();

    EmaTarget full = EmaTarget::make(zero, 1.0);
    ema_update(full, src);
    CHECK((full.shadow.W[0] - src.W[0]).cwiseAbs().maxCoeff() == 0.0);  // tau = 1 copies

    EmaTarget slow = EmaTarget::make(zero, 0.005);
    ema_update(slow, src);
    CHECK(slow.shadow.W[0](0, 0) == doctest::Approx(0.005));

    EmaTarget t = EmaTarget::make(zero, 0.005);
    const int n = 400;
    for (int i = 0; i < n; ++i) ema_update(t, src);
    const double expected = 1.0 - std::pow(1.0 - 0.005, n);
    CHECK(std::abs(t.shadow.W[0](0, 0) - expected) < 1e-12);

    CHECK_THROWS(EmaTarget::make(src, 0.0));
}

TEST_CASE("same seed and inputs give bit-identical parameters after updates") {
    auto run = [](std::uint64_t seed) {
        Rng rng = make_rng(seed);
        DenseNet net = DenseNet::make({3, 8, 1}, rng);
        AdamWState opt = AdamWState::make(net, 3e-4);
        Mat x(4, 3);
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j) x(i, j) = normal01(rng);
        for (int step = 0; step < 50; ++step) {
            Trace trace;
            Mat out = forward(net, x, &trace);
            Grads g = Grads::zeros_like(net);
            backward(net, trace, out, g);  // L = 0.5 sum out^2
            adamw_step(opt, net, g);
        }
        return net;
    };
    DenseNet a = run(123);
    DenseNet b = run(123);
    for (int l = 0; l < a.layer_count(); ++l) {
        CHECK((a.W[l] - b.W[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.b[l] - b.b[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("gelu derivative matches finite differences") {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        CHECK(std::abs(gelu_grad(x) - fd) < 1e-8);
    }
}
