#pragma once

// Exact dynamic programming on discrete environments: optimal values at
// every horizon, behavior chunk distributions and expectile baselines,
// advantage gaps, the oracle selector, and exact policy evaluation of
// fixed-k and adaptive chunk policies.
//
// Chunk values price real open-loop execution: inside a chunk, transition
// rows are queried with t_open = 0..k-1, which is where contact-noise
// accumulation enters. Behavior chunk distributions use t_open = 0
// throughout because the data is collected closed-loop.

#include "chunkrl/core.hpp"
#include "chunkrl/envs.hpp"

#include <functional>
#include <map>
#include <vector>

namespace chunkrl::oracle {

struct ValueIteration {
    Vec v_star;      // optimal closed-loop values, terminal states pinned to 0
    Mat q_star;      // n_states x n_actions
    int iterations = 0;
    double residual = 0.0;  // final sup-norm Bellman residual
};

ValueIteration value_iteration(const envs::DiscreteEnvModel& model, double gamma,
                               double tol = 1e-10, int max_iter = 1000000);

// All length-k commanded action sequences with positive probability under
// the (Markov) behavior policy at one state, with their exact
// probabilities and open-loop chunk values
//   Q^{k,*}(s, c) = E[ sum_j gamma^j r_j + gamma^k V*(s_k) | c open-loop ].
struct ChunkSupport {
    std::vector<std::vector<int>> chunks;
    Vec prob;  // sums to 1
    Vec q;     // Q^{k,*} per chunk
};

struct ChunkTable {
    int k = 1;
    std::vector<ChunkSupport> per_state;
};

// Guard against enumeration blow-up: errors when states * |A|^k exceeds
// the node budget.
ChunkTable k_step_chunk_values(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                               const Vec& v_star, int k, double gamma,
                               std::size_t node_budget = 4'000'000);

// Exact kappa-expectile of a discrete distribution {x_i with weight w_i},
// solved by bisection on kappa*E[(x-v)_+] = (1-kappa)*E[(v-x)_+].
double expectile_of_discrete(const Vec& values, const Vec& weights, double kappa,
                             double tol = 1e-10);

struct OracleTables {
    core::ScaleSet scale_set{};
    double gamma = 0.99;
    double kappa = 0.9;
    Vec v_star;
    Mat q1_star;
    std::map<int, ChunkTable> chunk_tables;  // one per k in the scale set
    Mat v_beta;                 // n_states x |K|: kappa-expectile baselines
    Mat a_bar;                  // n_states x |K|: best restricted advantage
    Vec delta;                  // separability gap; +inf sentinel when |K| < 2
    std::vector<int> k_dagger;  // oracle selection per state (ties -> largest k)
};

OracleTables build_tables(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                          const core::ScaleSet& scales, double gamma, double kappa,
                          double vi_tol = 1e-10);

// Chunk policy evaluated exactly: either a fixed scale everywhere or the
// adaptive oracle rule, with the chunk at each state chosen as the argmax
// of Q^{k,*} over behavior-support chunks.
struct MetaPolicySpec {
    bool adaptive = false;
    int fixed_k = 1;
};

// Solves the linear fixed point of the k-step open-loop meta-MDP. Errors
// if the evaluation operator is not a contraction (row mass >= 1).
Vec evaluate_meta_policy(const envs::DiscreteEnvModel& model, const OracleTables& tables,
                         const MetaPolicySpec& spec);

using ScaleFn = std::function<int(int state)>;

struct TvReport {
    std::vector<double> tv;        // -1 where skipped
    std::vector<bool> skipped;     // insufficient data
    double max_tv = 0.0;
    double mean_tv = 0.0;
    int states_checked = 0;
};

// Adaptive open-loop consistency check on data: TV distance between the
// empirical P_D(s_{t+k(s)} | s_t) and the distribution induced by
// open-loop replay of the empirical chunk policy.
TvReport aolc_tv_check(const envs::DiscreteEnvModel& model, const core::Dataset& data,
                       const ScaleFn& scale_fn, int min_count = 10);

// Same check with both distributions enumerated exactly under a Markov
// behavior policy (no dataset, no sampling error).
TvReport aolc_tv_exact(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                       const ScaleFn& scale_fn);

}  // namespace chunkrl::oracle
