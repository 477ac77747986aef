#include "chunkrl/nn.hpp"

#include <cmath>

namespace chunkrl::nn {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

DenseNet DenseNet::make(const std::vector<int>& widths, Rng& rng,
                        double final_weight_scale, bool use_bias) {
    require(widths.size() >= 2, "DenseNet: need at least input and output widths");
    DenseNet net;
    net.use_bias = use_bias;
    const int L = static_cast<int>(widths.size()) - 1;
    for (int l = 0; l < L; ++l) {
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        require(fan_in > 0 && fan_out > 0, "DenseNet: widths must be positive");
        // Kaiming-uniform, fan-in mode.
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Mat w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = dist(rng);
        if (l == L - 1) w *= final_weight_scale;
        net.W.push_back(std::move(w));
        net.b.push_back(Vec::Zero(fan_out));
    }
    return net;
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) {
        n += static_cast<std::size_t>(W[l].size());
        if (use_bias) n += static_cast<std::size_t>(b[l].size());
    }
    return n;
}

bool DenseNet::finite() const {
    for (const auto& w : W)
        if (!w.allFinite()) return false;
    for (const auto& v : b)
        if (!v.allFinite()) return false;
    return true;
}

Grads Grads::zeros_like(const DenseNet& net) {
    Grads g;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        g.W.emplace_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
        g.b.emplace_back(Vec::Zero(net.b[l].size()));
    }
    return g;
}

void Grads::zero() {
    for (auto& w : W) w.setZero();
    for (auto& v : b) v.setZero();
}

void Grads::scale(double c) {
    for (auto& w : W) w *= c;
    for (auto& v : b) v *= c;
}

Mat forward(const DenseNet& net, const Mat& x, Trace* trace) {
    require(x.cols() == net.input_dim(), "forward: input width mismatch");
    require(x.rows() >= 1, "forward: empty batch");
    const int L = net.layer_count();
    if (trace) {
        trace->input = x;
        trace->pre.assign(L, Mat());
        trace->post.assign(L, Mat());
    }
    Mat h = x;
    for (int l = 0; l < L; ++l) {
        Mat z = h * net.W[l];
        if (net.use_bias) z.rowwise() += net.b[l].transpose();
        if (trace) trace->pre[l] = z;
        if (l + 1 < L) {
            h = z.unaryExpr([](double v) { return gelu(v); });
        } else {
            h = std::move(z);
        }
        if (trace) trace->post[l] = h;
    }
    return h;
}

Mat backward(const DenseNet& net, const Trace& trace, const Mat& d_out, Grads& grads) {
    const int L = net.layer_count();
    require(static_cast<int>(trace.pre.size()) == L, "backward: trace/net mismatch");
    require(d_out.rows() == trace.post.back().rows() &&
                d_out.cols() == trace.post.back().cols(),
            "backward: upstream gradient shape mismatch");

    Mat delta = d_out;  // dL/d pre-activation of layer l (output layer is linear)
    for (int l = L - 1; l >= 0; --l) {
        const Mat& layer_in = (l == 0) ? trace.input : trace.post[l - 1];
        grads.W[l].noalias() += layer_in.transpose() * delta;
        if (net.use_bias) grads.b[l] += delta.colwise().sum().transpose();
        if (l == 0) {
            return delta * net.W[0].transpose();
        }
        Mat d_in = delta * net.W[l].transpose();
        delta = d_in.cwiseProduct(
            trace.pre[l - 1].unaryExpr([](double v) { return gelu_grad(v); }));
    }
    return {};
}

AdamWState AdamWState::make(const DenseNet& net, double lr, double weight_decay) {
    AdamWState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        s.mW.emplace_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
        s.vW.emplace_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
        s.mb.emplace_back(Vec::Zero(net.b[l].size()));
        s.vb.emplace_back(Vec::Zero(net.b[l].size()));
    }
    return s;
}

void adamw_step(AdamWState& state, DenseNet& net, const Grads& grads) {
    const int L = net.layer_count();
    require(static_cast<int>(grads.W.size()) == L, "adamw_step: grads/net mismatch");
    for (int l = 0; l < L; ++l) {
        require(grads.W[l].allFinite() && grads.b[l].allFinite(),
                "adamw_step: non-finite gradient at layer " + std::to_string(l));
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

    for (int l = 0; l < L; ++l) {
        auto& m = state.mW[l];
        auto& v = state.vW[l];
        m = state.beta1 * m + (1.0 - state.beta1) * grads.W[l];
        v = state.beta2 * v + (1.0 - state.beta2) * grads.W[l].cwiseAbs2();
        const Mat mhat = m / bc1;
        const Mat vhat = v / bc2;
        net.W[l] -= state.lr * (mhat.array() / (vhat.array().sqrt() + state.eps)).matrix();
        if (state.weight_decay != 0.0) net.W[l] *= (1.0 - state.lr * state.weight_decay);

        if (net.use_bias) {
            auto& mB = state.mb[l];
            auto& vB = state.vb[l];
            mB = state.beta1 * mB + (1.0 - state.beta1) * grads.b[l];
            vB = state.beta2 * vB + (1.0 - state.beta2) * grads.b[l].cwiseAbs2();
            const Vec mhB = mB / bc1;
            const Vec vhB = vB / bc2;
            net.b[l] -= state.lr * (mhB.array() / (vhB.array().sqrt() + state.eps)).matrix();
            // Decay is decoupled and applied to weights only.
        }
        require(net.W[l].allFinite() && net.b[l].allFinite(),
                "adamw_step: parameters became non-finite at layer " + std::to_string(l));
    }
}

EmaTarget EmaTarget::make(const DenseNet& source, double tau) {
    require(tau > 0.0 && tau <= 1.0, "EmaTarget: tau must be in (0,1]");
    EmaTarget t;
    t.shadow = source;
    t.tau = tau;
    return t;
}

void ema_update(EmaTarget& target, const DenseNet& source) {
    require(target.shadow.layer_count() == source.layer_count(),
            "ema_update: shape mismatch");
    for (int l = 0; l < source.layer_count(); ++l) {
        require(target.shadow.W[l].rows() == source.W[l].rows() &&
                    target.shadow.W[l].cols() == source.W[l].cols(),
                "ema_update: shape mismatch");
        target.shadow.W[l] = (1.0 - target.tau) * target.shadow.W[l] + target.tau * source.W[l];
        target.shadow.b[l] = (1.0 - target.tau) * target.shadow.b[l] + target.tau * source.b[l];
    }
}

}  // namespace chunkrl::nn
