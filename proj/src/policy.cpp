#include "chunkrl/policy.hpp"

#include <algorithm>
#include <cmath>

namespace chunkrl::policy {

namespace {

std::vector<int> flow_widths(const FlowConfig& cfg) {
    std::vector<int> w;
    w.push_back(cfg.d_s + cfg.h * cfg.d_a + 1);  // tau appended as a raw scalar
    for (int d = 0; d < cfg.depth; ++d) w.push_back(cfg.width);
    w.push_back(cfg.h * cfg.d_a);
    return w;
}

}  // namespace

FlowPolicy::FlowPolicy(const FlowConfig& cfg, Rng& rng)
    : cfg_(cfg),
      net_(nn::DenseNet::make(flow_widths(cfg), rng, 1.0, true)),
      opt_(nn::AdamWState::make(net_, cfg.lr)) {
    require(cfg_.h >= 1 && cfg_.d_a >= 1, "FlowPolicy: bad chunk dimensions");
    require(cfg_.steps >= 1, "FlowPolicy: need at least one integration step");
}

double FlowPolicy::bc_loss(const Mat& states, const Mat& chunks_flat, const Mat& x0,
                           const Vec& tau, nn::Grads* grads) const {
    const int n = static_cast<int>(states.rows());
    const int dim = cfg_.h * cfg_.d_a;
    require(chunks_flat.rows() == n && chunks_flat.cols() == dim, "bc_loss: chunk shape");
    require(x0.rows() == n && x0.cols() == dim, "bc_loss: noise shape");

    Mat input(n, cfg_.d_s + dim + 1);
    for (int i = 0; i < n; ++i) {
        input.block(i, 0, 1, cfg_.d_s) = states.row(i);
        // x_tau = (1 - tau) x0 + tau * a, linear interpolation on the path.
        input.block(i, cfg_.d_s, 1, dim) =
            (1.0 - tau(i)) * x0.row(i) + tau(i) * chunks_flat.row(i);
        input(i, cfg_.d_s + dim) = tau(i);
    }
    const Mat target = chunks_flat - x0;  // velocity target a - x0

    nn::Trace trace;
    Mat pred = nn::forward(net_, input, grads ? &trace : nullptr);
    Mat resid = pred - target;
    const double loss = resid.squaredNorm() / n;
    if (grads) {
        Mat d = (2.0 / n) * resid;
        nn::backward(net_, trace, d, *grads);
    }
    return loss;
}

double FlowPolicy::bc_step(const Mat& states, const Mat& chunks_flat, Rng& rng) {
    const int n = static_cast<int>(states.rows());
    const int dim = cfg_.h * cfg_.d_a;
    Mat x0(n, dim);
    Vec tau(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) x0(i, j) = normal01(rng);
        tau(i) = uniform01(rng);
    }
    nn::Grads g = nn::Grads::zeros_like(net_);
    const double loss = bc_loss(states, chunks_flat, x0, tau, &g);
    nn::adamw_step(opt_, net_, g);
    return loss;
}

Mat FlowPolicy::sample_chunks(const Vec& state, int n, Rng& rng) const {
    require(n >= 1, "sample_chunks: need n >= 1");
    const int dim = cfg_.h * cfg_.d_a;
    Mat x(n, dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) x(i, j) = normal01(rng);

    Mat input(n, cfg_.d_s + dim + 1);
    for (int i = 0; i < n; ++i) input.block(i, 0, 1, cfg_.d_s) = state.transpose();

    const double dt = 1.0 / cfg_.steps;
    for (int m = 0; m < cfg_.steps; ++m) {
        input.block(0, cfg_.d_s, n, dim) = x;
        input.col(cfg_.d_s + dim).setConstant(m * dt);
        x += dt * nn::forward(net_, input);
        require(x.allFinite(), "sample_chunks: flow state became non-finite");
    }
    return x.cwiseMax(cfg_.clip_lo).cwiseMin(cfg_.clip_hi);
}

core::ActionChunk FlowPolicy::to_chunk(const Eigen::Ref<const Vec>& flat) const {
    core::ActionChunk c;
    c.tier = core::Tier::Continuous;
    c.cont.resize(cfg_.h, cfg_.d_a);
    for (int j = 0; j < cfg_.h; ++j)
        c.cont.row(j) = flat.segment(j * cfg_.d_a, cfg_.d_a).transpose();
    return c;
}

// ---------------------------------------------------------------------------
// EmpiricalChunkSampler

EmpiricalChunkSampler::EmpiricalChunkSampler(int n_states, int h)
    : n_states_(n_states), h_(h), table_(n_states), state_totals_(n_states, 0) {
    require(n_states >= 1 && h >= 1, "EmpiricalChunkSampler: bad dimensions");
}

void EmpiricalChunkSampler::add(int state, const std::vector<int>& chunk) {
    require(state >= 0 && state < n_states_, "EmpiricalChunkSampler: state out of range");
    require(static_cast<int>(chunk.size()) == h_, "EmpiricalChunkSampler: wrong chunk length");
    auto& rows = table_[state];
    for (auto& [c, count] : rows) {
        if (c == chunk) {
            count += 1;
            state_totals_[state] += 1;
            total_ += 1;
            return;
        }
    }
    rows.emplace_back(chunk, 1);
    state_totals_[state] += 1;
    total_ += 1;
}

void EmpiricalChunkSampler::add_trajectory(const core::Trajectory& traj) {
    const int T = traj.length();
    for (int t = 0; t < T; ++t) {
        const bool full = t + h_ <= T;
        if (!full && !traj.terminal) continue;
        const int take = std::min(h_, T - t);
        std::vector<int> chunk(traj.action_ids.begin() + t, traj.action_ids.begin() + t + take);
        chunk.resize(h_, chunk.back());
        add(traj.states[t].index, chunk);
    }
}

void EmpiricalChunkSampler::add_dataset(const core::Dataset& data) {
    for (const auto& traj : data.trajectories) add_trajectory(traj);
}

bool EmpiricalChunkSampler::has(int state) const {
    return state_totals_[state] > 0;
}

int EmpiricalChunkSampler::resolve_state(int state, const envs::DiscreteEnvModel& metric) const {
    if (has(state)) return state;
    int best = -1, best_d = 0;
    for (int s = 0; s < n_states_; ++s) {
        if (!has(s)) continue;
        const int d = metric.distance(state, s);
        if (best < 0 || d < best_d) {
            best = s;
            best_d = d;
        }
    }
    require(best >= 0, "EmpiricalChunkSampler: empty table");
    return best;
}

std::vector<core::ActionChunk> EmpiricalChunkSampler::sample(
    int state, int n, Rng& rng, const envs::DiscreteEnvModel& metric) const {
    require(n >= 1, "EmpiricalChunkSampler: need n >= 1");
    const int src = resolve_state(state, metric);
    const auto& rows = table_[src];
    const double total = static_cast<double>(state_totals_[src]);

    std::vector<core::ActionChunk> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        double u = uniform01(rng) * total;
        const std::vector<int>* pick = &rows.back().first;
        for (const auto& [c, count] : rows) {
            if (u <= static_cast<double>(count)) {
                pick = &c;
                break;
            }
            u -= static_cast<double>(count);
        }
        core::ActionChunk chunk;
        chunk.tier = core::Tier::Discrete;
        chunk.ids = *pick;
        out.push_back(std::move(chunk));
    }
    return out;
}

const std::vector<std::pair<std::vector<int>, long>>& EmpiricalChunkSampler::support(
    int state) const {
    return table_[state];
}

}  // namespace chunkrl::policy
