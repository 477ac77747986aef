#pragma once

// Behavior policy: flow-matching BC over h-step chunks on the continuous
// tier, and an empirical chunk sampler on the discrete tier. Both produce
// the N candidate chunks used for EMAQ targets and for inference.

#include "chunkrl/core.hpp"
#include "chunkrl/envs.hpp"
#include "chunkrl/nn.hpp"

#include <map>
#include <vector>

namespace chunkrl::policy {

struct FlowConfig {
    int d_s = 0;
    int d_a = 0;
    int h = 1;
    int steps = 10;  // Euler integration steps
    int width = 64;
    int depth = 2;
    double lr = 3e-4;
    double clip_lo = -1.0;
    double clip_hi = 1.0;
};

// Velocity-field network v(s, x_tau, tau) over noised chunks; sampling
// integrates the flow ODE from standard normal noise with M Euler steps
// and clips to the action box afterwards.
class FlowPolicy {
public:
    FlowPolicy(const FlowConfig& cfg, Rng& rng);

    // Monte-Carlo flow-matching loss on a batch of (state, h-chunk) rows;
    // x0 ~ N(0, I) and tau ~ U[0,1] are drawn per row from `rng`. Applies
    // one AdamW step and returns the loss.
    double bc_step(const Mat& states, const Mat& chunks_flat, Rng& rng);

    // Deterministic loss given the noise draws; exposes gradients for the
    // finite-difference harness.
    double bc_loss(const Mat& states, const Mat& chunks_flat, const Mat& x0, const Vec& tau,
                   nn::Grads* grads) const;

    // N chunks of length h, rows of shape h*d_a. Deterministic given rng
    // state; errors if the ODE state leaves the finite range.
    Mat sample_chunks(const Vec& state, int n, Rng& rng) const;

    core::ActionChunk to_chunk(const Eigen::Ref<const Vec>& flat) const;

    const FlowConfig& config() const { return cfg_; }
    nn::DenseNet& net() { return net_; }
    const nn::DenseNet& net() const { return net_; }

private:
    FlowConfig cfg_;
    nn::DenseNet net_;
    nn::AdamWState opt_;
};

// Per-state table of observed full-length chunks with counts. Sampling
// draws i.i.d. from the empirical frequencies; unseen states fall back to
// the nearest observed state under the environment's native metric.
class EmpiricalChunkSampler {
public:
    EmpiricalChunkSampler(int n_states, int h);

    void add(int state, const std::vector<int>& chunk);
    // Ingests every window of a trajectory: full h-windows plus, for
    // episodes that end at the goal, repeat-last padded tail windows. The
    // padded tails are what make goal-reaching chunks available as
    // candidates near terminal states.
    void add_trajectory(const core::Trajectory& traj);
    void add_dataset(const core::Dataset& data);

    bool has(int state) const;
    std::size_t total_windows() const { return total_; }
    int horizon() const { return h_; }

    // N i.i.d. draws (with replacement). `metric` resolves the nearest
    // observed state for unseen queries; ties break toward the smaller id.
    std::vector<core::ActionChunk> sample(int state, int n, Rng& rng,
                                          const envs::DiscreteEnvModel& metric) const;

    const std::vector<std::pair<std::vector<int>, long>>& support(int state) const;

private:
    int resolve_state(int state, const envs::DiscreteEnvModel& metric) const;

    int n_states_;
    int h_;
    std::size_t total_ = 0;
    std::vector<std::vector<std::pair<std::vector<int>, long>>> table_;
    std::vector<long> state_totals_;
};

}  // namespace chunkrl::policy
