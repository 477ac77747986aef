#include "chunkrl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace chunkrl::theory {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

TheoryCheck make_check(const std::string& name, const std::string& instance, double bound,
                       double measured, bool leq) {
    TheoryCheck c;
    c.name = name;
    c.instance = instance;
    c.bound = bound;
    c.measured = measured;
    c.pass = leq ? (measured <= bound) : (measured >= bound);
    c.margin = leq ? (bound - measured) : (measured - bound);
    return c;
}

}  // namespace

bool TheoryReport::all_pass() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string Instance::hash_key() const {
    std::ostringstream ss;
    ss << model->name() << "|g=" << format_double(gamma) << "|kappa=" << format_double(kappa)
       << "|K=";
    for (int k : scales) ss << k << ",";
    std::uint64_t h = fnv1a(ss.str(), 0xcbf29ce484222325ULL);
    return hex64(h);
}

std::vector<Instance> standard_instances() {
    std::vector<Instance> out;
    envs::BehaviorPolicySpec beh;
    beh.epsilon = 0.3;
    beh.persistence = 0.0;

    {
        Instance inst;
        inst.name = "chain5-slip";
        inst.model = std::make_shared<envs::ChainEnv>(5, 0.1);
        inst.behavior_pi = envs::behavior_action_matrix(*inst.model, beh);
        inst.scales = core::ScaleSet::of({1, 2});
        out.push_back(std::move(inst));
    }
    {
        Instance inst;
        inst.name = "chain9";
        inst.model = std::make_shared<envs::ChainEnv>(9, 0.0);
        inst.behavior_pi = envs::behavior_action_matrix(*inst.model, beh);
        inst.scales = core::ScaleSet::of({1, 3});
        out.push_back(std::move(inst));
    }
    {
        Instance inst;
        inst.name = "grid5x5";
        envs::GridParams gp;
        gp.width = 5;
        gp.height = 5;
        gp.contact_cols = 2;
        gp.p_contact = 0.35;
        gp.tau_acc = 1.0;
        inst.model = std::make_shared<envs::TwoPhaseGridEnv>(gp);
        inst.behavior_pi = envs::behavior_action_matrix(*inst.model, beh);
        inst.scales = core::ScaleSet::of({1, 5});
        out.push_back(std::move(inst));
    }
    {
        Instance inst;
        inst.name = "grid9x5";
        envs::GridParams gp;  // defaults
        inst.model = std::make_shared<envs::TwoPhaseGridEnv>(gp);
        inst.behavior_pi = envs::behavior_action_matrix(*inst.model, beh);
        inst.scales = core::ScaleSet::of({1, 5});
        out.push_back(std::move(inst));
    }
    {
        Instance inst;
        inst.name = "grid7x3";
        envs::GridParams gp;
        gp.width = 7;
        gp.height = 3;
        gp.contact_cols = 2;
        gp.p_contact = 0.25;
        inst.model = std::make_shared<envs::TwoPhaseGridEnv>(gp);
        inst.behavior_pi = envs::behavior_action_matrix(*inst.model, beh);
        inst.scales = core::ScaleSet::of({1, 3});
        out.push_back(std::move(inst));
    }
    return out;
}

Instance continuing_conveyor_instance() {
    // No terminal states: the value-flow relation between measured errors
    // only holds without absorption (absorbed mass sheds bootstrap error
    // faster at long scales, which can invert the measured ordering).
    const int n = 12;
    auto m = std::make_shared<envs::GenericTabularModel>(n, 2);
    for (int s = 0; s < n; ++s) {
        const int s1 = (s + 1) % n;
        const int s2 = (s + 2) % n;
        m->set_transition(s, 0, {{s1, 1.0}});
        m->set_transition(s, 1, {{s2, 1.0}});
        m->set_reward(s, 0, s1, s % 3 == 0 ? -1.0 : -0.2);
        m->set_reward(s, 1, s2, -0.6);
        m->set_expert(s, 0);
    }
    Instance inst;
    inst.name = "conveyor-ring";
    inst.model = m;
    inst.behavior_pi = Mat::Constant(n, 2, 0.5);
    inst.scales = core::ScaleSet::of({1, 3});
    return inst;
}

bool has_separable_state(const envs::DiscreteEnvModel& model, const oracle::OracleTables& t) {
    for (int s = 0; s < model.n_states(); ++s) {
        if (model.terminal(s)) continue;
        if (std::isfinite(t.delta(s)) && t.delta(s) > 0.0) return true;
    }
    return false;
}

Instance low_value_region_instance(double eps, int length) {
    // Conveyor chain: action 0 advances one cell, action 1 advances two.
    // All in-region rewards are zero; arriving at the right boundary pays
    // -eps and terminates, so V* in the region is -eps * gamma^{d(s)}.
    auto m = std::make_shared<envs::GenericTabularModel>(length, 2);
    const int goal = length - 1;
    for (int s = 0; s < length; ++s) {
        if (s == goal) {
            m->set_terminal(s, true);
            continue;
        }
        const int s1 = std::min(s + 1, goal);
        const int s2 = std::min(s + 2, goal);
        m->set_transition(s, 0, {{s1, 1.0}});
        m->set_transition(s, 1, {{s2, 1.0}});
        m->set_reward(s, 0, s1, s1 == goal ? -eps : 0.0);
        m->set_reward(s, 1, s2, s2 == goal ? -eps : 0.0);
        m->set_expert(s, 0);
    }
    Instance inst;
    inst.name = "low-value-region";
    inst.model = m;
    inst.behavior_pi = Mat::Constant(length, 2, 0.5);
    inst.scales = core::ScaleSet::of({1, 5});
    return inst;
}

TheoryCheck check_selector_soundness(const Instance& inst, const oracle::OracleTables& tables,
                                     int random_draws, Rng& rng) {
    const auto& m = *inst.model;
    const int nk = inst.scales.size();
    // The sound noise budget normalizes by gamma^{k_max}: per-scale score
    // error is (eps_k + delta_k)/gamma^k, which is LARGEST at the longest
    // scale. (The gamma^{k_min} prefactor in the source statement cannot
    // be right; an adversarial draw at that budget flips the argmax.)
    // gamma^{k_max} < gamma^{k_min}, so draws under this budget also
    // satisfy the looser stated constraint.
    const double g_kmax = std::pow(inst.gamma, inst.scales.horizon());
    long trials = 0, agreements = 0;

    for (int s = 0; s < m.n_states(); ++s) {
        if (m.terminal(s)) continue;
        if (!std::isfinite(tables.delta(s)) || tables.delta(s) <= 0.0) continue;
        const double eps_bar = 0.999 * tables.delta(s) * g_kmax / 2.0;
        const int k_dag = tables.k_dagger[s];

        auto run_draw = [&](bool adversarial, Rng& draw_rng) {
            // Per-scale noise: |q noise| + |v noise| <= eps_bar per table.
            // The per-scale value estimates target the common baseline V*.
            int best_ki = -1;
            double best = -kInf;
            for (int ki = 0; ki < nk; ++ki) {
                const int k = inst.scales.scales[ki];
                const auto& sup = tables.chunk_tables.at(k).per_state[s];
                if (sup.chunks.empty()) continue;
                const double gk = std::pow(inst.gamma, k);
                double vn, fbest = -kInf;
                if (adversarial) {
                    // Push rivals up and the oracle scale down.
                    const double sign = (k == k_dag) ? -1.0 : 1.0;
                    vn = -sign * eps_bar / 2.0;
                    for (int i = 0; i < sup.q.size(); ++i) {
                        const double qn = sign * eps_bar / 2.0;
                        fbest = std::max(fbest,
                                         (sup.q(i) + qn - (tables.v_star(s) + vn)) / gk);
                    }
                } else {
                    vn = (uniform01(draw_rng) * 2.0 - 1.0) * eps_bar / 2.0;
                    for (int i = 0; i < sup.q.size(); ++i) {
                        const double qn = (uniform01(draw_rng) * 2.0 - 1.0) * eps_bar / 2.0;
                        fbest = std::max(fbest,
                                         (sup.q(i) + qn - (tables.v_star(s) + vn)) / gk);
                    }
                }
                // Ties toward the larger scale, mirroring the selector.
                if (best_ki < 0 || fbest > best || (fbest == best && k > inst.scales.scales[best_ki])) {
                    best = fbest;
                    best_ki = ki;
                }
            }
            trials += 1;
            if (best_ki >= 0 && inst.scales.scales[best_ki] == k_dag) agreements += 1;
        };

        run_draw(true, rng);
        for (int d = 0; d < random_draws; ++d) run_draw(false, rng);
    }

    TheoryCheck c = make_check("selector_soundness", inst.hash_key(), 1.0,
                               trials ? static_cast<double>(agreements) / trials : 1.0, false);
    if (trials == 0) c.pass = false;  // instance has no separable states; not a valid test
    return c;
}

TheoryCheck check_noise_immunity(const Instance& region, const oracle::OracleTables& tables,
                                 double eps, double sigma, int draws, Rng& rng) {
    const auto& m = *region.model;
    const int nk = region.scales.size();
    const int h = region.scales.horizon();
    double worst = 0.0;

    for (int d = 0; d < draws; ++d) {
        for (int s = 0; s < m.n_states(); ++s) {
            if (m.terminal(s)) continue;
            // Restrict to states whose chunks cannot touch the boundary:
            // inside the region every in-chunk reward is exactly zero.
            bool interior = true;
            for (int ki = 0; ki < nk; ++ki) {
                const int k = region.scales.scales[ki];
                if (s + 2 * k >= m.n_states() - 1) interior = false;
            }
            if (!interior) continue;
            for (int ki = 0; ki < nk; ++ki) {
                const int k = region.scales.scales[ki];
                const auto& sup = tables.chunk_tables.at(k).per_state[s];
                if (sup.chunks.empty()) continue;
                const double gk = std::pow(region.gamma, k);
                const double v_noise = (uniform01(rng) * 2.0 - 1.0) * sigma;
                const double v_norm = tables.v_beta(s, ki) / gk + v_noise;
                for (int i = 0; i < sup.q.size(); ++i) {
                    const double q_noise = (uniform01(rng) * 2.0 - 1.0) * sigma;
                    const double q_norm = sup.q(i) / gk + q_noise;
                    worst = std::max(worst, std::abs(q_norm - v_norm));
                }
            }
        }
        (void)h;
    }
    return make_check("noise_immunity", region.hash_key(), eps + 2.0 * sigma, worst, true);
}

TheoryCheck check_dominance(const Instance& inst, const oracle::OracleTables& tables) {
    oracle::MetaPolicySpec adaptive;
    adaptive.adaptive = true;
    const Vec v_adaptive = oracle::evaluate_meta_policy(*inst.model, tables, adaptive);

    double min_gap = kInf;
    for (int k : inst.scales) {
        oracle::MetaPolicySpec fixed;
        fixed.fixed_k = k;
        const Vec v_fixed = oracle::evaluate_meta_policy(*inst.model, tables, fixed);
        for (int s = 0; s < inst.model->n_states(); ++s) {
            if (inst.model->terminal(s)) continue;
            min_gap = std::min(min_gap, v_adaptive(s) - v_fixed(s));
        }
    }
    return make_check("dominance", inst.hash_key(), -1e-9, min_gap, false);
}

TheoryCheck check_strict_dominance(const Instance& inst, const oracle::OracleTables& tables) {
    oracle::MetaPolicySpec adaptive;
    adaptive.adaptive = true;
    const Vec v_adaptive = oracle::evaluate_meta_policy(*inst.model, tables, adaptive);

    double max_gap = -kInf;
    for (int k : inst.scales) {
        oracle::MetaPolicySpec fixed;
        fixed.fixed_k = k;
        const Vec v_fixed = oracle::evaluate_meta_policy(*inst.model, tables, fixed);
        for (int s = 0; s < inst.model->n_states(); ++s) {
            if (inst.model->terminal(s)) continue;
            max_gap = std::max(max_gap, v_adaptive(s) - v_fixed(s));
        }
    }
    return make_check("strict_dominance", inst.hash_key(), 1e-9, max_gap, false);
}

double chunk_value_exact(const envs::DiscreteEnvModel& model, int s0,
                         const std::vector<int>& chunk, double gamma, const Vec& boot_values,
                         int t_open_offset) {
    const int S = model.n_states();
    Vec d = Vec::Zero(S);
    d(s0) = 1.0;
    std::vector<std::pair<int, double>> row;
    double acc = 0.0;
    double g = 1.0;
    for (int j = 0; j < static_cast<int>(chunk.size()); ++j) {
        Vec d2 = Vec::Zero(S);
        for (int s = 0; s < S; ++s) {
            if (d(s) == 0.0) continue;
            model.transition_row(s, chunk[j], t_open_offset + j, row);
            for (const auto& [s2, p] : row) {
                acc += g * d(s) * p * model.reward(s, chunk[j], s2);
                if (!model.terminal(s2)) d2(s2) += d(s) * p;
            }
        }
        g *= gamma;
        d = d2;
    }
    for (int s = 0; s < S; ++s)
        if (d(s) != 0.0) acc += g * d(s) * boot_values(s);
    return acc;
}

namespace {

// Exact fixed point of the k-step operator with a perturbed bootstrap.
double max_fp_error(const Instance& inst, const oracle::OracleTables& tables, int k,
                    const Vec& boot) {
    double worst = 0.0;
    const auto& table = tables.chunk_tables.at(k);
    for (int s = 0; s < inst.model->n_states(); ++s) {
        const auto& sup = table.per_state[s];
        for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
            const double fp =
                chunk_value_exact(*inst.model, s, sup.chunks[i], inst.gamma, boot);
            worst = std::max(worst, std::abs(fp - sup.q(static_cast<int>(i))));
        }
    }
    return worst;
}

}  // namespace

TheoryCheck check_bootstrap_bound(const Instance& inst, const oracle::OracleTables& tables,
                                  double eps_h) {
    const Vec boot = tables.v_star.array() + eps_h;
    double worst_slack = kInf;
    bool ok = true;
    for (int k : inst.scales) {
        const double gk = std::pow(inst.gamma, k);
        const double bound = gk / (1.0 - gk) * eps_h;
        const double measured = max_fp_error(inst, tables, k, boot);
        ok = ok && measured <= bound + 1e-12;
        worst_slack = std::min(worst_slack, bound - measured);
    }
    TheoryCheck c = make_check("bootstrap_bound", inst.hash_key(), 0.0, -worst_slack, true);
    c.bound = 0.0;
    c.measured = -worst_slack;  // max over scales of (error - bound); pass iff <= 0
    c.pass = ok;
    c.margin = worst_slack;
    return c;
}

TheoryCheck check_value_flow(const Instance& inst, const oracle::OracleTables& tables,
                             double eps_h, double eps_fit, Rng& rng) {
    const Vec boot = tables.v_star.array() + eps_h;
    // err_k = || Qhat^k - Q^{k,*} || with Qhat the perturbed-bootstrap fixed
    // point plus an injected fitting residual bounded by eps_fit.
    std::map<int, double> err, fit;
    for (int k : inst.scales) {
        double worst = 0.0, worst_fit = 0.0;
        const auto& table = tables.chunk_tables.at(k);
        for (int s = 0; s < inst.model->n_states(); ++s) {
            const auto& sup = table.per_state[s];
            for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
                const double fp =
                    chunk_value_exact(*inst.model, s, sup.chunks[i], inst.gamma, boot);
                const double jitter = (uniform01(rng) * 2.0 - 1.0) * eps_fit;
                worst = std::max(worst, std::abs(fp + jitter - sup.q(static_cast<int>(i))));
                worst_fit = std::max(worst_fit, std::abs(jitter));
            }
        }
        err[k] = worst;
        fit[k] = worst_fit;
    }

    double worst_violation = -kInf;
    for (std::size_t a = 0; a < inst.scales.scales.size(); ++a) {
        for (std::size_t b = a + 1; b < inst.scales.scales.size(); ++b) {
            const int k1 = inst.scales.scales[a];
            const int k2 = inst.scales.scales[b];
            const double ratio = std::pow(inst.gamma, k1) / std::pow(inst.gamma, k2);
            // Measured-error form of the slack: both realized fitting
            // residuals can push the gap in the adverse direction, so they
            // add. (The source derivation subtracts them, which is valid
            // for the per-scale upper bounds but not for measured errors.)
            const double slack =
                (fit[k1] + ratio * fit[k2]) / (1.0 - std::pow(inst.gamma, k1));
            const double bound = ratio * err[k2] + slack;
            worst_violation = std::max(worst_violation, err[k1] - bound);
        }
    }
    return make_check("value_flow_monotonicity", inst.hash_key(), 1e-12, worst_violation, true);
}

TheoryCheck check_suboptimality_zero(const Instance& inst, const oracle::OracleTables& tables) {
    double worst = 0.0;
    for (int k : inst.scales) worst = std::max(worst, max_fp_error(inst, tables, k, tables.v_star));
    return make_check("suboptimality_eps_zero", inst.hash_key(), 1e-9, worst, true);
}

TheoryCheck check_aolc_reduction(const Instance& inst, int k) {
    const auto rep = oracle::aolc_tv_exact(*inst.model, inst.behavior_pi, [k](int) { return k; });

    // Independent straight-line fixed-k OLC computation for one scale:
    // enumerate windows by brute force over action sequences.
    const auto& m = *inst.model;
    const int S = m.n_states();
    const int A = m.n_actions();
    long n_seq = 1;
    for (int j = 0; j < k; ++j) n_seq *= A;

    double worst = 0.0;
    std::vector<std::pair<int, double>> row;
    for (int s0 = 0; s0 < S; ++s0) {
        if (m.terminal(s0) || rep.skipped[s0]) continue;

        Vec data_side = Vec::Zero(S);
        Vec replay = Vec::Zero(S);
        double total = 0.0;
        for (long code = 0; code < n_seq; ++code) {
            std::vector<int> seq(k);
            long c = code;
            for (int j = 0; j < k; ++j) {
                seq[j] = static_cast<int>(c % A);
                c /= A;
            }
            // Probability of observing this commanded window in data,
            // walking the closed-loop chain; early-terminated paths match
            // the window only if the padding letters agree.
            // weight[s] for live paths; done accumulates matched-padding mass.
            Vec w = Vec::Zero(S);
            w(s0) = 1.0;
            double done = 0.0;
            for (int j = 0; j < k; ++j) {
                Vec w2 = Vec::Zero(S);
                double newly_done = 0.0;
                for (int s = 0; s < S; ++s) {
                    if (w(s) == 0.0) continue;
                    const double pa = inst.behavior_pi(s, seq[j]);
                    if (pa == 0.0) continue;
                    m.transition_row(s, seq[j], 0, row);
                    for (const auto& [s2, p] : row) {
                        if (m.terminal(s2))
                            newly_done += w(s) * pa * p;
                        else
                            w2(s2) += w(s) * pa * p;
                    }
                }
                // Done mass keeps matching this window only when every
                // remaining letter equals the final real action seq[j].
                bool suffix_constant = true;
                for (int r = j + 1; r < k; ++r)
                    if (seq[r] != seq[j]) suffix_constant = false;
                if (suffix_constant) done += newly_done;
                w = w2;
            }
            const double p_window = w.sum() + done;
            if (p_window <= 0.0) continue;
            total += p_window;

            // End-state distribution of open-loop replay of the window.
            Vec d = Vec::Zero(S);
            d(s0) = 1.0;
            for (int j = 0; j < k; ++j) {
                Vec d2 = Vec::Zero(S);
                for (int s = 0; s < S; ++s) {
                    if (d(s) == 0.0) continue;
                    if (m.terminal(s)) {
                        d2(s) += d(s);
                        continue;
                    }
                    m.transition_row(s, seq[j], j, row);
                    for (const auto& [s2, p] : row) d2(s2) += d(s) * p;
                }
                d = d2;
            }
            replay += p_window * d;
        }
        replay /= total;

        // Closed-loop data distribution, absorbing at terminals.
        Vec p = Vec::Zero(S);
        p(s0) = 1.0;
        for (int j = 0; j < k; ++j) {
            Vec p2 = Vec::Zero(S);
            for (int s = 0; s < S; ++s) {
                if (p(s) == 0.0) continue;
                if (m.terminal(s)) {
                    p2(s) += p(s);
                    continue;
                }
                for (int a = 0; a < A; ++a) {
                    if (inst.behavior_pi(s, a) == 0.0) continue;
                    m.transition_row(s, a, 0, row);
                    for (const auto& [s2, pp] : row)
                        p2(s2) += p(s) * inst.behavior_pi(s, a) * pp;
                }
            }
            p = p2;
        }
        data_side = p;

        const double tv = 0.5 * (data_side - replay).cwiseAbs().sum();
        worst = std::max(worst, std::abs(tv - rep.tv[s0]));
    }
    return make_check("aolc_constant_k_reduction", inst.hash_key(), 1e-10, worst, true);
}

TheoryCheck check_telescoping(const Instance& inst, const oracle::OracleTables& tables) {
    const int h = inst.scales.horizon();
    const auto& table_h = tables.chunk_tables.at(h);
    double worst = 0.0;

    for (int s = 0; s < inst.model->n_states(); ++s) {
        const auto& sup = table_h.per_state[s];
        for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
            const auto& chunk = sup.chunks[i];
            for (int k : inst.scales) {
                if (k >= h) continue;
                // Split route: roll the k-prefix, then value the suffix
                // from every reachable split state with continued t_open.
                const int S = inst.model->n_states();
                Vec d = Vec::Zero(S);
                d(s) = 1.0;
                std::vector<std::pair<int, double>> row;
                double acc = 0.0;
                double g = 1.0;
                for (int j = 0; j < k; ++j) {
                    Vec d2 = Vec::Zero(S);
                    for (int st = 0; st < S; ++st) {
                        if (d(st) == 0.0) continue;
                        inst.model->transition_row(st, chunk[j], j, row);
                        for (const auto& [s2, p] : row) {
                            acc += g * d(st) * p * inst.model->reward(st, chunk[j], s2);
                            if (!inst.model->terminal(s2)) d2(s2) += d(st) * p;
                        }
                    }
                    g *= inst.gamma;
                    d = d2;
                }
                const std::vector<int> suffix(chunk.begin() + k, chunk.end());
                double split_value = acc;
                for (int st = 0; st < S; ++st) {
                    if (d(st) == 0.0) continue;
                    split_value += g * d(st) *
                                   chunk_value_exact(*inst.model, st, suffix, inst.gamma,
                                                     tables.v_star, k);
                }
                worst = std::max(worst, std::abs(split_value - sup.q(static_cast<int>(i))));
            }
        }
    }
    return make_check("telescoping", inst.hash_key(), 1e-9, worst, true);
}

std::vector<TheoryCheck> run_instance_checks(const Instance& inst, Rng& rng) {
    std::vector<TheoryCheck> out;
    auto tables = oracle::build_tables(*inst.model, inst.behavior_pi, inst.scales, inst.gamma,
                                       inst.kappa);
    // Soundness and strict dominance quantify over states with a positive
    // separability gap; instances without any (the chains: every scale is
    // lossless there) cannot exercise them.
    if (has_separable_state(*inst.model, tables)) {
        out.push_back(check_selector_soundness(inst, tables, 1000, rng));
        out.push_back(check_strict_dominance(inst, tables));
    }
    out.push_back(check_dominance(inst, tables));
    out.push_back(check_bootstrap_bound(inst, tables, 0.5));
    out.push_back(check_suboptimality_zero(inst, tables));
    out.push_back(check_aolc_reduction(inst, std::min(2, inst.scales.horizon())));
    out.push_back(check_telescoping(inst, tables));
    return out;
}

TheoryReport verify_theory(const std::vector<Instance>& instances, std::uint64_t seed) {
    TheoryReport report;
    Rng rng = make_rng(derive_seed(seed, 0x7E0));

    for (const auto& inst : instances) {
        auto checks = run_instance_checks(inst, rng);
        for (auto& c : checks) {
            c.name = c.name + "/" + inst.name;
            report.checks.push_back(std::move(c));
        }
    }

    // Noise immunity runs on its dedicated low-value construction.
    Instance region = low_value_region_instance(0.01);
    auto region_tables = oracle::build_tables(*region.model, region.behavior_pi, region.scales,
                                              region.gamma, region.kappa);
    for (double sigma : {0.05, 0.1}) {
        auto c = check_noise_immunity(region, region_tables, 0.01, sigma, 100, rng);
        c.name += "/sigma=" + format_double(sigma);
        report.checks.push_back(std::move(c));
    }

    // Value flow monotonicity needs a terminal-free instance.
    {
        Instance ring = continuing_conveyor_instance();
        auto ring_tables = oracle::build_tables(*ring.model, ring.behavior_pi, ring.scales,
                                                ring.gamma, ring.kappa);
        auto zero_fit = check_value_flow(ring, ring_tables, 0.5, 0.0, rng);
        zero_fit.name += "/exact-fit";
        report.checks.push_back(std::move(zero_fit));
        auto with_fit = check_value_flow(ring, ring_tables, 0.5, 1e-3, rng);
        with_fit.name += "/jittered-fit";
        report.checks.push_back(std::move(with_fit));
    }

    report.notes["v_kstar_baseline"] =
        "The optimal per-scale baseline V^{k,*} is ambiguous: reading it as the max over "
        "chunks of Q^{k,*} makes every best advantage zero and the separability gap vanish "
        "identically, so the selector theory would be vacuous. Implemented reading: the "
        "kappa-expectile of Q^{k,*} under the behavior chunk distribution, which is what the "
        "trained per-scale baseline estimates. The max-baseline reading is rejected for the "
        "trivialization above.";
    report.notes["value_flow_scope"] =
        "The value-flow monotonicity statement compares per-scale error BOUNDS; as a relation "
        "between measured errors it fails on absorbing instances (early termination sheds "
        "bootstrap error faster at long scales, so short-scale measured error can exceed the "
        "scaled long-scale error), and the fitting-residual slack must add the two residuals "
        "rather than subtract them. Asserted on a terminal-free instance with the corrected "
        "slack; the absorbing-instance inversion is documented, not asserted.";
    report.notes["selector_soundness_constant"] =
        "The soundness theorem's noise budget must normalize by gamma^{k_max}, not "
        "gamma^{k_min}: per-scale score error is (eps_k + delta_k)/gamma^k, largest at the "
        "longest scale. At the gamma^{k_min} budget an adversarial draw flips the argmax. "
        "The check draws noise at 0.999 * Delta * gamma^{k_max} / 2.";
    report.notes["strict_dominance_scope"] =
        "With full behavior support the fixed-1 policy is greedy with respect to the exact "
        "Q* and already optimal, so no policy can strictly dominate it pointwise. Strict "
        "improvement is therefore asserted against at least one fixed scale (the long-chunk "
        "arms), not against every scale simultaneously.";
    return report;
}

}  // namespace chunkrl::theory
