#include "chunkrl/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace chunkrl::oracle {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

ValueIteration value_iteration(const envs::DiscreteEnvModel& model, double gamma,
                               double tol, int max_iter) {
    require(gamma > 0.0 && gamma < 1.0, "value_iteration: gamma must be in (0,1)");
    const int S = model.n_states();
    const int A = model.n_actions();

    ValueIteration out;
    out.v_star = Vec::Zero(S);
    out.q_star = Mat::Zero(S, A);
    std::vector<std::pair<int, double>> row;

    for (int it = 0; it < max_iter; ++it) {
        double delta = 0.0;
        Vec v_new = Vec::Zero(S);
        for (int s = 0; s < S; ++s) {
            if (model.terminal(s)) continue;
            double best = -kInf;
            for (int a = 0; a < A; ++a) {
                model.transition_row(s, a, 0, row);
                double q = 0.0;
                for (const auto& [s2, p] : row)
                    q += p * (model.reward(s, a, s2) + gamma * out.v_star(s2));
                out.q_star(s, a) = q;
                best = std::max(best, q);
            }
            v_new(s) = best;
            delta = std::max(delta, std::abs(v_new(s) - out.v_star(s)));
        }
        out.v_star = v_new;
        out.iterations = it + 1;
        out.residual = delta;
        if (delta <= tol) break;
    }
    require(out.residual <= tol, "value_iteration: did not converge");
    // One more Q refresh against the converged V.
    for (int s = 0; s < S; ++s) {
        if (model.terminal(s)) continue;
        for (int a = 0; a < A; ++a) {
            model.transition_row(s, a, 0, row);
            double q = 0.0;
            for (const auto& [s2, p] : row)
                q += p * (model.reward(s, a, s2) + gamma * out.v_star(s2));
            out.q_star(s, a) = q;
        }
    }
    return out;
}

namespace {

struct ChunkEnumerator {
    const envs::DiscreteEnvModel& m;
    const Mat& pi;
    const Vec& v_star;
    double gamma;
    int k;
    int S, A;
    std::vector<std::pair<int, double>> row_open;
    std::vector<std::pair<int, double>> row_data;

    std::vector<std::vector<int>> chunks;
    std::vector<double> probs;  // window measure, unnormalized
    std::vector<double> qs;

    // live_w: data-measure over states for paths that have not terminated
    //         early (closed-loop dynamics, behavior-weighted).
    // done_w: data-measure of early-terminated windows, by final real
    //         action; it follows only the repeat-last padded suffix, the
    //         same convention the chunk extractor and the sampler use.
    // live_d: open-loop execution measure of the commanded prefix.
    // acc:    expected discounted reward of the commanded prefix.
    void dfs(int depth, const Vec& live_w, const Vec& done_w, const Vec& live_d, double acc,
             std::vector<int>& chunk) {
        if (depth == k) {
            const double p = live_w.sum() + done_w.sum();
            if (p <= 0.0) return;
            double q = acc;
            const double gk = std::pow(gamma, k);
            for (int s = 0; s < S; ++s)
                if (live_d(s) != 0.0) q += gk * live_d(s) * v_star(s);
            chunks.push_back(chunk);
            probs.push_back(p);
            qs.push_back(q);
            return;
        }
        const bool last_step = (depth + 1 == k);
        const double g = std::pow(gamma, depth);
        for (int a = 0; a < A; ++a) {
            Vec w2 = Vec::Zero(S);
            Vec done2 = Vec::Zero(A);
            done2(a) = done_w(a);  // padded mass continues on its own letter only
            Vec d2 = Vec::Zero(S);
            double racc = 0.0;
            for (int s = 0; s < S; ++s) {
                const double ws = live_w(s);
                const double dsm = live_d(s);
                if (ws == 0.0 && dsm == 0.0) continue;
                if (dsm != 0.0) {
                    // Commanded execution is open-loop: t_open = depth.
                    m.transition_row(s, a, depth, row_open);
                    for (const auto& [s2, p] : row_open) {
                        racc += dsm * p * m.reward(s, a, s2);
                        if (!m.terminal(s2)) d2(s2) += dsm * p;
                    }
                }
                if (ws != 0.0 && pi(s, a) > 0.0) {
                    // Data was collected closed-loop: t_open = 0. Terminal
                    // arrivals end the window: on the final step they count
                    // as real full windows, earlier they join the padded
                    // measure with this action as the padding letter.
                    m.transition_row(s, a, 0, row_data);
                    const double wa = ws * pi(s, a);
                    for (const auto& [s2, p] : row_data) {
                        if (!m.terminal(s2) || last_step)
                            w2(s2) += wa * p;
                        else
                            done2(a) += wa * p;
                    }
                }
            }
            if (w2.isZero(0.0) && done2.isZero(0.0)) continue;
            chunk.push_back(a);
            dfs(depth + 1, w2, done2, d2, acc + g * racc, chunk);
            chunk.pop_back();
        }
    }
};

}  // namespace

ChunkTable k_step_chunk_values(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                               const Vec& v_star, int k, double gamma,
                               std::size_t node_budget) {
    require(k >= 1, "k_step_chunk_values: k must be >= 1");
    const int S = model.n_states();
    const int A = model.n_actions();
    double nodes = static_cast<double>(S) * std::pow(static_cast<double>(A), k);
    require(nodes <= static_cast<double>(node_budget),
            "k_step_chunk_values: enumeration exceeds node budget");

    ChunkTable table;
    table.k = k;
    table.per_state.resize(S);
    for (int s = 0; s < S; ++s) {
        if (model.terminal(s)) continue;
        ChunkEnumerator en{model, behavior_pi, v_star, gamma, k, S, A, {}, {}, {}, {}};
        Vec w0 = Vec::Zero(S);
        Vec d0 = Vec::Zero(S);
        w0(s) = 1.0;
        d0(s) = 1.0;
        std::vector<int> chunk;
        en.dfs(0, w0, Vec::Zero(A), d0, 0.0, chunk);
        auto& sup = table.per_state[s];
        const int n = static_cast<int>(en.chunks.size());
        if (n == 0) continue;  // no full-length behavior window survives here
        sup.chunks = std::move(en.chunks);
        sup.prob = Eigen::Map<Vec>(en.probs.data(), n);
        sup.q = Eigen::Map<Vec>(en.qs.data(), n);
        sup.prob /= sup.prob.sum();
    }
    return table;
}

double expectile_of_discrete(const Vec& values, const Vec& weights, double kappa, double tol) {
    require(values.size() > 0 && values.size() == weights.size(),
            "expectile_of_discrete: empty or mismatched support");
    require(kappa > 0.0 && kappa < 1.0, "expectile_of_discrete: kappa must be in (0,1)");
    double lo = values.minCoeff();
    double hi = values.maxCoeff();
    if (hi - lo < tol) return lo;  // point mass

    auto foc = [&](double v) {
        // kappa * E[(x - v)_+] - (1 - kappa) * E[(v - x)_+], decreasing in v.
        double pos = 0.0, neg = 0.0;
        for (int i = 0; i < values.size(); ++i) {
            const double d = values(i) - v;
            if (d > 0)
                pos += weights(i) * d;
            else
                neg += weights(i) * (-d);
        }
        return kappa * pos - (1.0 - kappa) * neg;
    };

    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (foc(mid) > 0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

OracleTables build_tables(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                          const core::ScaleSet& scales, double gamma, double kappa,
                          double vi_tol) {
    const int S = model.n_states();
    const int nk = scales.size();

    OracleTables t;
    t.scale_set = scales;
    t.gamma = gamma;
    t.kappa = kappa;

    ValueIteration vi = value_iteration(model, gamma, vi_tol);
    t.v_star = vi.v_star;
    t.q1_star = vi.q_star;

    for (int k : scales)
        t.chunk_tables.emplace(k, k_step_chunk_values(model, behavior_pi, t.v_star, k, gamma));

    t.v_beta = Mat::Constant(S, nk, std::numeric_limits<double>::quiet_NaN());
    t.a_bar = Mat::Constant(S, nk, -kInf);
    t.delta = Vec::Zero(S);
    t.k_dagger.assign(S, scales.horizon());

    // Two baselines live here. v_beta is the kappa-expectile of Q^{k,*}
    // under the behavior chunk distribution: the quantity the trained V^k
    // heads estimate, and what trained-head tests compare against. The
    // selector maps (a_bar, k_dagger, delta) use the common optimal
    // baseline V*, so a_bar^k is the (nonpositive) regret of the best
    // k-step commitment and k_dagger is the longest zero-regret scale.
    // A behavior-relative baseline cannot serve here: its max-to-expectile
    // gap grows with scale for any full-support behavior, which drives the
    // argmax to the horizon at every state of every instance.
    constexpr double kTieTol = 1e-9;
    for (int s = 0; s < S; ++s) {
        if (model.terminal(s)) {
            t.delta(s) = kInf;
            continue;
        }
        int available = 0;
        for (int ki = 0; ki < nk; ++ki) {
            const int k = scales.scales[ki];
            const auto& sup = t.chunk_tables.at(k).per_state[s];
            if (sup.chunks.empty()) continue;
            available += 1;
            t.v_beta(s, ki) = expectile_of_discrete(sup.q, sup.prob, kappa);
            t.a_bar(s, ki) = (sup.q.maxCoeff() - t.v_star(s)) / std::pow(gamma, k);
        }
        double best = -kInf;
        for (int ki = 0; ki < nk; ++ki)
            if (std::isfinite(t.a_bar(s, ki))) best = std::max(best, t.a_bar(s, ki));
        require(best > -kInf, "build_tables: no available scale at a non-terminal state");
        int best_ki = -1;
        for (int ki = 0; ki < nk; ++ki) {
            if (!std::isfinite(t.a_bar(s, ki))) continue;
            if (t.a_bar(s, ki) >= best - kTieTol) best_ki = ki;  // ties toward larger k
        }
        t.k_dagger[s] = scales.scales[best_ki];
        if (available < 2) {
            t.delta(s) = kInf;  // no competitor scale
        } else {
            double runner = -kInf;
            for (int ki = 0; ki < nk; ++ki) {
                if (ki == best_ki || !std::isfinite(t.a_bar(s, ki))) continue;
                runner = std::max(runner, t.a_bar(s, ki));
            }
            t.delta(s) = t.a_bar(s, best_ki) - runner;
        }
    }
    return t;
}

namespace {

struct OpenLoopOutcome {
    double reward_acc = 0.0;
    Vec live_end;  // mass still alive after the chunk, discounted factor excluded
};

OpenLoopOutcome open_loop_rollout(const envs::DiscreteEnvModel& model, int s0,
                                  const std::vector<int>& chunk, double gamma) {
    const int S = model.n_states();
    OpenLoopOutcome out;
    out.live_end = Vec::Zero(S);
    out.live_end(s0) = 1.0;
    std::vector<std::pair<int, double>> row;
    double g = 1.0;
    for (int j = 0; j < static_cast<int>(chunk.size()); ++j) {
        Vec d2 = Vec::Zero(S);
        double racc = 0.0;
        for (int s = 0; s < S; ++s) {
            const double dm = out.live_end(s);
            if (dm == 0.0) continue;
            model.transition_row(s, chunk[j], j, row);
            for (const auto& [s2, p] : row) {
                racc += dm * p * model.reward(s, chunk[j], s2);
                if (!model.terminal(s2)) d2(s2) += dm * p;
            }
        }
        out.reward_acc += g * racc;
        g *= gamma;
        out.live_end = d2;
    }
    return out;
}

}  // namespace

Vec evaluate_meta_policy(const envs::DiscreteEnvModel& model, const OracleTables& tables,
                         const MetaPolicySpec& spec) {
    const int S = model.n_states();
    const double gamma = tables.gamma;
    Mat M = Mat::Zero(S, S);
    Vec rho = Vec::Zero(S);

    for (int s = 0; s < S; ++s) {
        if (model.terminal(s)) continue;
        int k = spec.adaptive ? tables.k_dagger[s] : spec.fixed_k;
        // A fixed scale without any surviving behavior window at s falls
        // back to the largest available scale not exceeding it.
        const ChunkSupport* sup = nullptr;
        while (true) {
            auto it = tables.chunk_tables.find(k);
            require(it != tables.chunk_tables.end(), "evaluate_meta_policy: scale not tabulated");
            if (!it->second.per_state[s].chunks.empty()) {
                sup = &it->second.per_state[s];
                break;
            }
            int smaller = -1;
            for (int cand : tables.scale_set)
                if (cand < k) smaller = std::max(smaller, cand);
            require(smaller > 0, "evaluate_meta_policy: no available scale at state");
            k = smaller;
        }
        int best = 0;
        sup->q.maxCoeff(&best);
        OpenLoopOutcome roll = open_loop_rollout(model, s, sup->chunks[best], gamma);
        rho(s) = roll.reward_acc;
        const double gk = std::pow(gamma, k);
        for (int s2 = 0; s2 < S; ++s2)
            if (roll.live_end(s2) != 0.0) M(s, s2) = gk * roll.live_end(s2);
    }

    // Contraction guard on the evaluation operator.
    for (int s = 0; s < S; ++s)
        require(M.row(s).sum() < 1.0 - 1e-9, "evaluate_meta_policy: operator is not a contraction");

    Mat A = Mat::Identity(S, S) - M;
    Vec v = A.partialPivLu().solve(rho);
    for (int s = 0; s < S; ++s)
        if (model.terminal(s)) v(s) = 0.0;
    return v;
}

namespace {

// Closed-loop j-step state distribution under the behavior policy, with
// terminal states absorbing.
Vec closed_loop_dist(const envs::DiscreteEnvModel& model, const Mat& pi, int s0, int steps) {
    const int S = model.n_states();
    Vec p = Vec::Zero(S);
    p(s0) = 1.0;
    std::vector<std::pair<int, double>> row;
    for (int j = 0; j < steps; ++j) {
        Vec p2 = Vec::Zero(S);
        for (int s = 0; s < S; ++s) {
            if (p(s) == 0.0) continue;
            if (model.terminal(s)) {
                p2(s) += p(s);
                continue;
            }
            for (int a = 0; a < model.n_actions(); ++a) {
                if (pi(s, a) == 0.0) continue;
                model.transition_row(s, a, 0, row);
                for (const auto& [s2, pp] : row) p2(s2) += p(s) * pi(s, a) * pp;
            }
        }
        p = p2;
    }
    return p;
}

// Open-loop end distribution of a commanded (possibly padded) chunk, with
// terminal states absorbing.
Vec open_loop_dist(const envs::DiscreteEnvModel& model, int s0, const std::vector<int>& chunk) {
    const int S = model.n_states();
    Vec d = Vec::Zero(S);
    d(s0) = 1.0;
    std::vector<std::pair<int, double>> row;
    for (int j = 0; j < static_cast<int>(chunk.size()); ++j) {
        Vec d2 = Vec::Zero(S);
        for (int s = 0; s < S; ++s) {
            if (d(s) == 0.0) continue;
            if (model.terminal(s)) {
                d2(s) += d(s);
                continue;
            }
            model.transition_row(s, chunk[j], j, row);
            for (const auto& [s2, p] : row) d2(s2) += d(s) * p;
        }
        d = d2;
    }
    return d;
}

double tv_distance(const Vec& p, const Vec& q) {
    return 0.5 * (p - q).cwiseAbs().sum();
}

}  // namespace

TvReport aolc_tv_exact(const envs::DiscreteEnvModel& model, const Mat& behavior_pi,
                       const ScaleFn& scale_fn) {
    const int S = model.n_states();
    const int A = model.n_actions();
    TvReport rep;
    rep.tv.assign(S, -1.0);
    rep.skipped.assign(S, true);

    std::vector<std::pair<int, double>> row;
    for (int s0 = 0; s0 < S; ++s0) {
        if (model.terminal(s0)) continue;
        const int k = scale_fn(s0);
        require(k >= 1, "aolc_tv_exact: scale function must return k >= 1");

        const Vec data_side = closed_loop_dist(model, behavior_pi, s0, k);

        // Recursive enumeration of commanded windows. live_w is the measure
        // of data paths still running; done_by_letter[a] holds mass that
        // terminated early with last real action a and therefore pads with
        // a from here on.
        Vec mixture = Vec::Zero(S);
        double total = 0.0;
        std::vector<int> chunk;
        std::function<void(int, const Vec&, const Vec&)> dfs =
            [&](int depth, const Vec& live_w, const Vec& done_by_letter) {
                if (depth == k) {
                    const double p = live_w.sum() + done_by_letter.sum();
                    if (p <= 0.0) return;
                    mixture += p * open_loop_dist(model, s0, chunk);
                    total += p;
                    return;
                }
                for (int a = 0; a < A; ++a) {
                    Vec w2 = Vec::Zero(S);
                    Vec done2 = Vec::Zero(A);
                    done2(a) = done_by_letter(a);
                    for (int s = 0; s < S; ++s) {
                        const double ws = live_w(s);
                        if (ws == 0.0 || behavior_pi(s, a) == 0.0) continue;
                        model.transition_row(s, a, 0, row);
                        const double wa = ws * behavior_pi(s, a);
                        for (const auto& [s2, p] : row) {
                            if (model.terminal(s2))
                                done2(a) += wa * p;
                            else
                                w2(s2) += wa * p;
                        }
                    }
                    if (w2.isZero(0.0) && done2.isZero(0.0)) continue;
                    chunk.push_back(a);
                    dfs(depth + 1, w2, done2);
                    chunk.pop_back();
                }
            };
        Vec w0 = Vec::Zero(S);
        w0(s0) = 1.0;
        dfs(0, w0, Vec::Zero(A));
        require(total > 1e-12, "aolc_tv_exact: no admissible windows");
        mixture /= total;

        rep.tv[s0] = tv_distance(data_side, mixture);
        rep.skipped[s0] = false;
    }

    double sum = 0.0;
    for (int s = 0; s < S; ++s) {
        if (rep.skipped[s]) continue;
        rep.states_checked += 1;
        rep.max_tv = std::max(rep.max_tv, rep.tv[s]);
        sum += rep.tv[s];
    }
    rep.mean_tv = rep.states_checked ? sum / rep.states_checked : 0.0;
    return rep;
}

TvReport aolc_tv_check(const envs::DiscreteEnvModel& model, const core::Dataset& data,
                       const ScaleFn& scale_fn, int min_count) {
    const int S = model.n_states();
    TvReport rep;
    rep.tv.assign(S, -1.0);
    rep.skipped.assign(S, true);

    // Per start state: empirical end-state counts and observed windows.
    std::vector<std::map<int, long>> end_counts(S);
    std::vector<std::map<std::vector<int>, long>> window_counts(S);
    std::vector<long> totals(S, 0);

    for (const auto& traj : data.trajectories) {
        const int T = traj.length();
        for (int t = 0; t < T; ++t) {
            const int s = traj.states[t].index;
            if (model.terminal(s)) continue;
            const int k = scale_fn(s);
            const bool ends_inside = t + k > T;
            if (ends_inside && !traj.terminal) continue;  // capped: end state unknown
            // End state with goal absorbing.
            const int end_state = traj.states[std::min(t + k, T)].index;
            // Commanded window, repeat-last padded past termination.
            std::vector<int> window(traj.action_ids.begin() + t,
                                    traj.action_ids.begin() + std::min(t + k, T));
            while (static_cast<int>(window.size()) < k) window.push_back(window.back());
            end_counts[s][end_state] += 1;
            window_counts[s][window] += 1;
            totals[s] += 1;
        }
    }

    double sum = 0.0;
    for (int s = 0; s < S; ++s) {
        if (model.terminal(s) || totals[s] < min_count) continue;
        Vec p = Vec::Zero(S);
        for (const auto& [s2, c] : end_counts[s]) p(s2) = static_cast<double>(c) / totals[s];
        Vec q = Vec::Zero(S);
        for (const auto& [window, c] : window_counts[s]) {
            q += (static_cast<double>(c) / totals[s]) * open_loop_dist(model, s, window);
        }
        rep.tv[s] = tv_distance(p, q);
        rep.skipped[s] = false;
        rep.states_checked += 1;
        rep.max_tv = std::max(rep.max_tv, rep.tv[s]);
        sum += rep.tv[s];
    }
    rep.mean_tv = rep.states_checked ? sum / rep.states_checked : 0.0;
    return rep;
}

}  // namespace chunkrl::oracle
