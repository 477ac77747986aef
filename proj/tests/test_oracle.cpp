#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chunkrl/oracle.hpp"
#include "chunkrl/theory.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace chunkrl;
using namespace chunkrl::envs;
using namespace chunkrl::oracle;

namespace {

Mat uniform_behavior(const DiscreteEnvModel& m) {
    return Mat::Constant(m.n_states(), m.n_actions(), 1.0 / m.n_actions());
}

Mat eps_behavior(const DiscreteEnvModel& m, double eps) {
    BehaviorPolicySpec spec;
    spec.epsilon = eps;
    return behavior_action_matrix(m, spec);
}

}  // namespace

TEST_CASE("value iteration on a hand-built two-state absorbing MDP") {
    // Reward 0 at the goal, -1 elsewhere (assessed on the departing state),
    // deterministic step to goal.
    GenericTabularModel m(2, 1);
    m.set_terminal(1, true);
    m.set_transition(0, 0, {{1, 1.0}});
    m.set_reward(0, 0, 1, -1.0);
    auto vi = value_iteration(m, 0.99);
    CHECK(vi.v_star(0) == doctest::Approx(-1.0));
    CHECK(vi.v_star(1) == 0.0);
}

TEST_CASE("value iteration on the deterministic chain") {
    // Arrival at the goal pays 0, so the optimal two-step path from s0 on
    // the L=3 chain costs a single -1.
    ChainEnv env(3, 0.0);
    auto vi = value_iteration(env, 0.99);
    CHECK(vi.v_star(0) == doctest::Approx(-1.0));
    CHECK(vi.v_star(1) == doctest::Approx(0.0));
    CHECK(vi.v_star(2) == 0.0);

    ChainEnv env5(5, 0.0);
    auto vi5 = value_iteration(env5, 0.99);
    // d steps to goal pay -(1 - gamma^{d-1}) / (1 - gamma).
    CHECK(vi5.v_star(0) ==
          doctest::Approx(-(1.0 - std::pow(0.99, 3)) / 0.01).epsilon(1e-9));
    CHECK(vi.residual <= 1e-10);
}

TEST_CASE("value iteration matches Monte-Carlo greedy rollouts on a slippery chain") {
    ChainEnv env(7, 0.1);
    const double gamma = 0.99;
    auto vi = value_iteration(env, gamma);

    // Greedy policy simulation from the start state.
    Rng rng = make_rng(99);
    const long episodes = 1000000;
    double total = 0.0;
    std::vector<std::pair<int, double>> row;
    for (long ep = 0; ep < episodes; ++ep) {
        int s = 0;
        double ret = 0.0, g = 1.0;
        while (!env.terminal(s)) {
            int a = 0;
            vi.q_star.row(s).maxCoeff(&a);
            env.transition_row(s, a, 0, row);
            double u = uniform01(rng);
            int next = row.back().first;
            for (const auto& [s2, p] : row) {
                if (u <= p) {
                    next = s2;
                    break;
                }
                u -= p;
            }
            ret += g * env.reward(s, a, next);
            g *= gamma;
            s = next;
        }
        total += ret;
    }
    CHECK(std::abs(total / episodes - vi.v_star(0)) < 0.01);
}

TEST_CASE("k=1 chunk values coincide with Q*") {
    ChainEnv env(6, 0.15);
    auto vi = value_iteration(env, 0.99);
    auto table = k_step_chunk_values(env, eps_behavior(env, 0.3), vi.v_star, 1, 0.99);
    for (int s = 0; s < env.n_states() - 1; ++s) {
        const auto& sup = table.per_state[s];
        REQUIRE(sup.chunks.size() == 2);
        for (std::size_t i = 0; i < sup.chunks.size(); ++i)
            CHECK(sup.q(static_cast<int>(i)) ==
                  doctest::Approx(vi.q_star(s, sup.chunks[i][0])).epsilon(1e-12));
    }
}

TEST_CASE("deterministic chunk values equal replayed rewards plus bootstrap") {
    ChainEnv env(7, 0.0);
    const double gamma = 0.99;
    auto vi = value_iteration(env, gamma);
    auto table = k_step_chunk_values(env, eps_behavior(env, 0.4), vi.v_star, 3, gamma);

    for (int s = 0; s < 3; ++s) {
        const auto& sup = table.per_state[s];
        for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
            // Straight-line replay of the deterministic dynamics.
            int cur = s;
            double acc = 0.0, g = 1.0;
            bool absorbed = false;
            for (int a : sup.chunks[i]) {
                const int next = std::clamp(cur + (a == 1 ? 1 : -1), 0, 6);
                acc += g * env.reward(cur, a, next);
                g *= gamma;
                cur = next;
                if (env.terminal(cur)) {
                    absorbed = true;
                    break;
                }
            }
            if (!absorbed) acc += g * vi.v_star(cur);
            CHECK(sup.q(static_cast<int>(i)) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("stochastic chunk values match a Monte-Carlo replay oracle") {
    ChainEnv env(7, 0.1);
    const double gamma = 0.99;
    auto vi = value_iteration(env, gamma);
    auto table = k_step_chunk_values(env, eps_behavior(env, 0.3), vi.v_star, 3, gamma);

    Rng rng = make_rng(5);
    std::vector<std::pair<int, double>> row;
    const int s = 1;
    const auto& sup = table.per_state[s];
    for (int pick : {0, static_cast<int>(sup.chunks.size()) - 1}) {
        const auto& chunk = sup.chunks[pick];
        double total = 0.0;
        const int samples = 100000;
        for (int it = 0; it < samples; ++it) {
            int cur = s;
            double acc = 0.0, g = 1.0;
            bool absorbed = false;
            for (std::size_t j = 0; j < chunk.size(); ++j) {
                env.transition_row(cur, chunk[j], static_cast<int>(j), row);
                double u = uniform01(rng);
                int next = row.back().first;
                for (const auto& [s2, p] : row) {
                    if (u <= p) {
                        next = s2;
                        break;
                    }
                    u -= p;
                }
                acc += g * env.reward(cur, chunk[j], next);
                g *= gamma;
                cur = next;
                if (env.terminal(cur)) {
                    absorbed = true;
                    break;
                }
            }
            if (!absorbed) acc += g * vi.v_star(cur);
            total += acc;
        }
        CHECK(std::abs(total / samples - sup.q(pick)) < 0.01);
    }
}

TEST_CASE("chunk enumeration respects the node budget guard") {
    ChainEnv env(5, 0.0);
    auto vi = value_iteration(env, 0.99);
    CHECK_THROWS(k_step_chunk_values(env, eps_behavior(env, 0.3), vi.v_star, 5, 0.99, 100));
}

TEST_CASE("discrete expectiles: mean, point mass, two-point root, grid-search oracle") {
    Vec v2(2), w2(2);
    v2 << -1.0, 0.0;
    w2 << 0.5, 0.5;
    CHECK(expectile_of_discrete(v2, w2, 0.5) == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(expectile_of_discrete(v2, w2, 0.9) == doctest::Approx(-0.1).epsilon(1e-8));

    Vec v1(1), w1(1);
    v1 << 0.37;
    w1 << 1.0;
    for (double kappa : {0.1, 0.5, 0.93})
        CHECK(expectile_of_discrete(v1, w1, kappa) == doctest::Approx(0.37));

    // Dense grid search on the asymmetric-squared objective.
    Rng rng = make_rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + uniform_int(rng, 6);
        Vec v(n), w(n);
        double tw = 0.0;
        for (int i = 0; i < n; ++i) {
            v(i) = normal01(rng);
            w(i) = 0.05 + uniform01(rng);
            tw += w(i);
        }
        w /= tw;
        const double kappa = 0.05 + 0.9 * uniform01(rng);
        auto objective = [&](double x) {
            double obj = 0.0;
            for (int i = 0; i < n; ++i) {
                const double u = v(i) - x;
                obj += w(i) * std::abs(kappa - (u < 0 ? 1.0 : 0.0)) * u * u;
            }
            return obj;
        };
        double best_x = v.minCoeff(), best = objective(best_x);
        const double lo = v.minCoeff(), hi = v.maxCoeff();
        for (int g = 0; g <= 2000000; ++g) {
            const double x = lo + (hi - lo) * g / 2000000.0;
            const double o = objective(x);
            if (o < best) {
                best = o;
                best_x = x;
            }
        }
        CHECK(std::abs(expectile_of_discrete(v, w, kappa) - best_x) < 1e-6);
    }

    CHECK_THROWS(expectile_of_discrete(Vec(), Vec(), 0.9));
}

TEST_CASE("advantage tables: singleton scale set yields the +inf sentinel") {
    ChainEnv env(5, 0.0);
    auto t = build_tables(env, eps_behavior(env, 0.3), core::ScaleSet::of({2}), 0.99, 0.9);
    for (int s = 0; s < env.n_states(); ++s) {
        CHECK(std::isinf(t.delta(s)));
        CHECK(t.k_dagger[s] == 2);
    }
}

TEST_CASE("fully symmetric state gives a zero gap and the tie breaks long") {
    // Two actions with identical outcomes everywhere: every chunk ties, all
    // scales tie, and the oracle defaults to the longest scale.
    GenericTabularModel m(3, 2);
    m.set_terminal(2, true);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a) {
            m.set_transition(s, a, {{s + 1, 1.0}});
            m.set_reward(s, a, s + 1, s + 1 == 2 ? 0.0 : -1.0);
        }
    auto t = build_tables(m, uniform_behavior(m), core::ScaleSet::of({1, 2}), 0.99, 0.9);
    CHECK(t.delta(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.k_dagger[0] == 2);
    CHECK(t.a_bar(0, 0) == doctest::Approx(t.a_bar(0, 1)).epsilon(1e-12));
}

TEST_CASE("grid oracle maps match the pinned golden file and a straight-line argmax") {
    GridParams gp;
    gp.width = 5;
    gp.height = 5;
    gp.contact_cols = 2;
    gp.p_contact = 0.35;
    gp.tau_acc = 1.0;
    TwoPhaseGridEnv env(gp);
    auto tables =
        build_tables(env, eps_behavior(env, 0.3), core::ScaleSet::of({1, 5}), 0.99, 0.9);

    // Independent straight-line reimplementation of the selection and gap.
    for (int s = 0; s < env.n_states(); ++s) {
        if (env.terminal(s)) continue;
        double best = -1e300, runner = -1e300;
        int best_k = 0;
        int available = 0;
        for (int ki = 0; ki < 2; ++ki) {
            const double a = tables.a_bar(s, ki);
            if (!std::isfinite(a)) continue;
            available += 1;
            const int k = tables.scale_set.scales[ki];
            if (a > best || (a == best && k > best_k)) {
                if (best > -1e300) runner = std::max(runner, best);
                best = a;
                best_k = k;
            } else {
                runner = std::max(runner, a);
            }
        }
        CHECK(best_k == tables.k_dagger[s]);
        if (available >= 2)
            CHECK(tables.delta(s) == doctest::Approx(best - runner).epsilon(1e-12));
        else
            CHECK(std::isinf(tables.delta(s)));
    }

    // Golden comparison, frozen after the first exact derivation.
    const std::string golden_path =
        std::string(CHUNKRL_SOURCE_DIR) + "/tests/golden/grid5x5_oracle.json";
    REQUIRE(std::filesystem::exists(golden_path));
    std::ifstream in(golden_path);
    nlohmann::json golden = nlohmann::json::parse(in);
    const auto& kd = golden.at("k_dagger");
    const auto& delta = golden.at("delta");
    REQUIRE(static_cast<int>(kd.size()) == env.n_states());
    for (int s = 0; s < env.n_states(); ++s) {
        CHECK(tables.k_dagger[s] == kd[s].get<int>());
        if (delta[s].is_string())
            CHECK(std::isinf(tables.delta(s)));
        else
            CHECK(tables.delta(s) == doctest::Approx(delta[s].get<double>()).epsilon(1e-9));
    }
}

TEST_CASE("oracle selector separates corridor from contact on the grid") {
    GridParams gp;  // defaults: 9x5, two contact columns
    TwoPhaseGridEnv env(gp);
    auto tables =
        build_tables(env, eps_behavior(env, 0.3), core::ScaleSet::of({1, 5}), 0.99, 0.9);

    double corridor_sum = 0.0, contact_sum = 0.0;
    int corridor_n = 0, contact_n = 0;
    for (int s = 0; s < env.n_states(); ++s) {
        if (env.terminal(s)) continue;
        if (env.in_contact(s)) {
            contact_sum += tables.k_dagger[s];
            contact_n += 1;
        } else {
            corridor_sum += tables.k_dagger[s];
            corridor_n += 1;
        }
    }
    CHECK(corridor_sum / corridor_n > contact_sum / contact_n);
}

TEST_CASE("meta-policy evaluation: fixed k=1 greedy equals V* on the deterministic chain") {
    ChainEnv env(6, 0.0);
    auto tables =
        build_tables(env, eps_behavior(env, 0.3), core::ScaleSet::of({1, 3}), 0.99, 0.9);
    MetaPolicySpec fixed1;
    fixed1.fixed_k = 1;
    Vec v = evaluate_meta_policy(env, tables, fixed1);
    for (int s = 0; s < env.n_states(); ++s)
        CHECK(v(s) == doctest::Approx(tables.v_star(s)).epsilon(1e-10));
}

TEST_CASE("adaptive meta-policy dominates fixed scales on the grid") {
    theory::Instance inst;
    GridParams gp;
    inst.model = std::make_shared<TwoPhaseGridEnv>(gp);
    inst.behavior_pi = eps_behavior(*inst.model, 0.3);
    inst.scales = core::ScaleSet::of({1, 5});
    inst.name = "grid9x5";
    auto tables = build_tables(*inst.model, inst.behavior_pi, inst.scales, 0.99, 0.9);

    auto dom = theory::check_dominance(inst, tables);
    CHECK(dom.pass);
    auto strict = theory::check_strict_dominance(inst, tables);
    CHECK(strict.pass);
}

TEST_CASE("AOLC: deterministic dynamics and behavior give zero TV everywhere") {
    ChainEnv env(6, 0.0);
    BehaviorPolicySpec det;
    det.epsilon = 0.0;
    Mat pi = behavior_action_matrix(env, det);
    auto rep = aolc_tv_exact(env, pi, [](int) { return 2; });
    for (int s = 0; s < env.n_states(); ++s) {
        if (env.terminal(s)) continue;
        CHECK(rep.tv[s] == doctest::Approx(0.0).epsilon(1e-12));
    }

    auto data = generate_dataset(env, det, 50, 3);
    auto emp = aolc_tv_check(env, data, [](int) { return 2; }, 5);
    CHECK(emp.max_tv == doctest::Approx(0.0));
}

TEST_CASE("AOLC: empirical TV approaches the exact enumeration on the slippery chain") {
    ChainEnv env(5, 0.1);
    BehaviorPolicySpec spec;
    spec.epsilon = 0.3;
    Mat pi = behavior_action_matrix(env, spec);
    auto exact = aolc_tv_exact(env, pi, [](int) { return 2; });

    auto data = generate_dataset(env, spec, 100000, 17);
    auto emp = aolc_tv_check(env, data, [](int) { return 2; }, 50);
    for (int s = 0; s < env.n_states(); ++s) {
        if (emp.skipped[s] || exact.skipped[s]) continue;
        CHECK(std::abs(emp.tv[s] - exact.tv[s]) < 0.02);
    }
    CHECK(emp.states_checked >= 3);
}

TEST_CASE("AOLC skips underrepresented states with a flag") {
    ChainEnv env(5, 0.0);
    BehaviorPolicySpec spec;
    spec.epsilon = 0.2;
    auto data = generate_dataset(env, spec, 3, 8);
    auto rep = aolc_tv_check(env, data, [](int) { return 2; }, 1000);
    for (int s = 0; s < env.n_states(); ++s) CHECK(rep.skipped[s]);
    CHECK(rep.states_checked == 0);
}

TEST_CASE("low-value region construction keeps all values within [-eps, 0]") {
    auto inst = theory::low_value_region_instance(0.01);
    auto vi = value_iteration(*inst.model, inst.gamma);
    for (int s = 0; s < inst.model->n_states(); ++s) {
        CHECK(vi.v_star(s) <= 1e-15);
        CHECK(vi.v_star(s) >= -0.01 - 1e-15);
    }
}
