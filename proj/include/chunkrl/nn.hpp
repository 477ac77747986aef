#pragma once

// Minimal dense-network engine: MLP forward/backward, AdamW, EMA shadows.
// Enough for the critics, baselines, and the flow velocity field; no
// convolutions, no GPU, no graph compilation.

#include "chunkrl/common.hpp"

#include <vector>

namespace chunkrl::nn {

double gelu(double x);
double gelu_grad(double x);

// Fully connected net. Hidden layers use GELU, the output layer is linear.
// widths = {input, hidden..., output}; zero hidden layers is allowed and
// gives a plain linear map.
struct DenseNet {
    std::vector<Mat> W;  // W[l] is d_in x d_out
    std::vector<Vec> b;
    bool use_bias = true;

    static DenseNet make(const std::vector<int>& widths, Rng& rng,
                         double final_weight_scale = 1.0, bool use_bias = true);

    int layer_count() const { return static_cast<int>(W.size()); }
    int input_dim() const { return static_cast<int>(W.front().rows()); }
    int output_dim() const { return static_cast<int>(W.back().cols()); }
    std::size_t param_count() const;
    bool finite() const;
};

// Recorded forward pass; holds what backward() needs.
struct Trace {
    Mat input;
    std::vector<Mat> pre;   // pre-activation per layer
    std::vector<Mat> post;  // post-activation per layer (post.back() = output)
};

struct Grads {
    std::vector<Mat> W;
    std::vector<Vec> b;

    static Grads zeros_like(const DenseNet& net);
    void zero();
    void scale(double c);
};

// x has one sample per row. When trace is non-null the pass is recorded.
Mat forward(const DenseNet& net, const Mat& x, Trace* trace = nullptr);

// Exact reverse-mode gradients of the recorded pass. Accumulates parameter
// gradients into `grads` and returns dL/d input.
Mat backward(const DenseNet& net, const Trace& trace, const Mat& d_out, Grads& grads);

struct AdamWState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long step_count = 0;
    std::vector<Mat> mW, vW;
    std::vector<Vec> mb, vb;

    static AdamWState make(const DenseNet& net, double lr, double weight_decay = 0.0);
};

// Decoupled weight decay update; throws (naming the layer) on non-finite
// gradients and verifies parameters stay finite.
void adamw_step(AdamWState& state, DenseNet& net, const Grads& grads);

struct EmaTarget {
    DenseNet shadow;
    double tau = 0.005;

    static EmaTarget make(const DenseNet& source, double tau);
};

// shadow <- (1 - tau) * shadow + tau * source, elementwise.
void ema_update(EmaTarget& target, const DenseNet& source);

}  // namespace chunkrl::nn
