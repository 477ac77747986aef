#pragma once

// End-to-end training: offline pretraining over the five losses, online
// fine-tuning with adaptive open-loop execution, replay with mixed
// offline-online batches, and the n-step TD baseline arm.

#include "chunkrl/core.hpp"
#include "chunkrl/critics.hpp"
#include "chunkrl/envs.hpp"
#include "chunkrl/policy.hpp"
#include "chunkrl/selector.hpp"

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace chunkrl::trainer {

struct TrainConfig {
    double gamma = 0.99;
    std::vector<int> k_univ = {1, 5, 10, 25};
    int h = 5;
    double kappa_v = 0.9;
    int n_candidates = 8;
    int batch_size = 256;
    double lr = 3e-4;
    double ema_tau = 0.005;
    int utd_ratio = 1;
    int flow_steps = 10;
    long offline_steps = 20000;
    long online_env_steps = 10000;
    long warmup_steps = 500;
    std::uint64_t seed = 0;
    double mix_ratio = 0.5;  // offline fraction in online-phase batches
    int stride = 1;
    int n_q = 2;
    long buffer_capacity = 200000;  // online windows, FIFO
    int log_interval = 500;
    int eval_interval = 2500;
    int eval_episodes = 50;
    int width = 64;
    int depth = 2;
    // Discrete tier: one-hot MLP heads by default (the learned tier).
    // Table heads are the exact-setting parameterization; they need dense
    // cell coverage, which desk-scale data only provides on small chains.
    bool table_heads = false;
    std::string selector = "aqc";  // aqc | raw_q | discount_corrected | random | fixed:<k>
    bool zscore = true;
    double eps_z = 1e-6;
    std::string bootstrap_source = "vh";  // vh | v1 | qh_direct

    core::ScaleSet scales() const { return core::ScaleSet::from_universe(k_univ, h); }
};

// One h-window with its per-scale slices precomputed. Scale slices are
// indexed against the trainer's slice list (the scale set plus scale 1).
struct TrainSample {
    core::StateRepr s;
    core::ActionChunk chunk;  // length h, repeat-last padded when truncated
    int real_len = 0;
    std::vector<double> ret_k;
    std::vector<core::StateRepr> next_k;
    std::vector<double> mask_k;
    bool offline = true;
};

// Offline transitions are never evicted; online data is a FIFO ring.
class ReplayBuffer {
public:
    explicit ReplayBuffer(long online_capacity) : capacity_(online_capacity) {}

    void add_offline(TrainSample sample);
    void add_online(TrainSample sample);
    std::size_t offline_size() const { return offline_.size(); }
    std::size_t online_size() const { return online_.size(); }

    // offline_fraction rounds to the nearest whole row; falls back to
    // offline rows while the online side is still empty.
    std::vector<const TrainSample*> sample_batch(int batch, double offline_fraction,
                                                 Rng& rng) const;

private:
    long capacity_;
    std::vector<TrainSample> offline_;
    std::deque<TrainSample> online_;
};

// Slices one trajectory into h-windows (stride configurable). Windows that
// would cross a horizon-capped ending are dropped; terminal tails are
// truncated with mask 0.
void append_windows(const core::Trajectory& traj, const std::vector<int>& slice_scales, int h,
                    double gamma, int stride, bool offline, std::vector<TrainSample>& out);

struct Artifacts {
    core::Tier tier = core::Tier::Discrete;
    std::vector<int> slice_scales;  // scale set plus scale 1
    critics::FeatureCodec codec = critics::FeatureCodec::discrete_table(1, 1);
    critics::CriticBundle bundle;
    std::unique_ptr<policy::FlowPolicy> flow;               // continuous tier
    std::unique_ptr<policy::EmpiricalChunkSampler> sampler;  // discrete tier
    // Auxiliary 1-step pair for the v1 bootstrap arm.
    std::unique_ptr<critics::Ensemble> q1_aux;
    std::unique_ptr<critics::Head> v1_aux;

    int slice_index(int k) const;
};

Artifacts make_artifacts(const TrainConfig& cfg, envs::Env& env);

struct MetricRow {
    long step = 0;
    std::string phase;  // offline | online
    double loss_qh = 0.0, loss_vh = 0.0, loss_bc = 0.0;
    std::map<int, double> loss_qk, loss_vk;
    std::optional<double> success_rate;
    std::optional<double> mean_kstar;
    std::map<int, double> k_freq;
};
using MetricsSink = std::function<void(const MetricRow&)>;

// One row per decision when a sink is given: phase, state, chosen scale,
// and the per-scale best scores (raw advantage units for the aqc selector,
// selector-specific otherwise; empty for score-free variants).
struct SelectionTrace {
    std::string phase;
    core::StateRepr state;
    int k_star = 1;
    std::map<int, double> best_score;
};
using TraceSink = std::function<void(const SelectionTrace&)>;

struct EvalStats {
    double success_rate = 0.0;
    double mean_kstar = 0.0;
    std::map<int, double> k_freq;
    // Discrete tier: per-state selection counts from the eval rollouts.
    std::map<int, std::pair<double, long>> per_state_k;  // state -> (sum k*, count)
};

// Greedy evaluation on a frozen snapshot; never mutates training state.
EvalStats evaluate_policy(const TrainConfig& cfg, envs::Env& env, const Artifacts& art,
                          int episodes, std::uint64_t seed_base);

void offline_train(const TrainConfig& cfg, const core::Dataset& data, envs::Env& env,
                   Artifacts& art, ReplayBuffer& buffer, const MetricsSink& sink = {});

struct OnlineResult {
    long env_steps = 0;
    EvalStats final_eval;
};

OnlineResult online_finetune(const TrainConfig& cfg, envs::Env& env, Artifacts& art,
                             ReplayBuffer& buffer, const MetricsSink& sink = {},
                             const TraceSink& trace = {});

// n-step TD baseline (FQL-n arm): a single-action critic trained with the
// biased n-step backup, candidates drawn from the behavior policy.
struct NStepArtifacts {
    critics::FeatureCodec codec = critics::FeatureCodec::discrete_table(1, 1);
    std::unique_ptr<critics::Ensemble> q;
    std::unique_ptr<policy::EmpiricalChunkSampler> sampler;
    int n = 1;
};

NStepArtifacts nstep_baseline_train(const TrainConfig& cfg, int n, const core::Dataset& data,
                                    envs::Env& env, const MetricsSink& sink = {});

}  // namespace chunkrl::trainer
