#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chunkrl/critics.hpp"
#include "chunkrl/envs.hpp"
#include "chunkrl/oracle.hpp"

#include <cmath>

using namespace chunkrl;
using namespace chunkrl::critics;

namespace {

// Loads exact oracle chunk values into a table critic and the expectile
// baselines into a table value head.
void load_q_table(Head& head, const FeatureCodec& codec, const envs::DiscreteEnvModel& model,
                  const oracle::ChunkTable& table) {
    for (int s = 0; s < model.n_states(); ++s) {
        const auto& sup = table.per_state[s];
        for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
            core::ActionChunk c;
            c.tier = core::Tier::Discrete;
            c.ids = sup.chunks[i];
            const Batch b = codec.q_input({core::StateRepr::discrete(s)}, {&c}, table.k);
            head.net().W[0](static_cast<int>(b.cells[0]), 0) = sup.q(static_cast<int>(i));
        }
    }
    head.sync_shadow();
}

void load_v_table(Head& head, const Vec& values) {
    head.net().W[0].col(0) = values;
    head.sync_shadow();
}

struct TabularSetup {
    envs::ChainEnv env;
    FeatureCodec codec;
    oracle::OracleTables tables;
    Mat pi;

    TabularSetup(int length, double p_slip, const core::ScaleSet& scales, double kappa)
        : env(length, p_slip),
          codec(FeatureCodec::discrete_table(length, 2)),
          tables(),
          pi() {
        envs::BehaviorPolicySpec spec;
        spec.epsilon = 0.3;
        pi = envs::behavior_action_matrix(env, spec);
        tables = oracle::build_tables(env, pi, scales, 0.99, kappa);
    }
};

}  // namespace

TEST_CASE("expectile loss values and gradients") {
    CHECK(expectile_loss(2.0, 0.5).first == doctest::Approx(2.0));
    CHECK(expectile_loss(-1.0, 0.9).first == doctest::Approx(0.1));
    CHECK(expectile_loss(2.0, 0.9).first == doctest::Approx(3.6));
    CHECK(expectile_loss(0.0, 0.7).second == 0.0);
    // Gradient is 2|kappa - 1[u<0]| u.
    CHECK(expectile_loss(2.0, 0.9).second == doctest::Approx(3.6));
    CHECK(expectile_loss(-1.0, 0.9).second == doctest::Approx(-0.2));
}

TEST_CASE("emaq target: singleton and degenerate candidate sets") {
    Rng rng = make_rng(3);
    HeadConfig hc;
    hc.kind = HeadKind::Table;
    hc.cells = 8;
    Ensemble ens(hc, 2, rng);
    ens.members()[0].net().W[0].col(0) << 1, 2, 3, 4, 5, 6, 7, 8;
    ens.members()[1].net().W[0].col(0) << 8, 7, 6, 5, 4, 3, 2, 1;
    for (auto& m : ens.members()) m.sync_shadow();

    Batch one;
    one.cells = {2};  // min(3, 6) = 3
    CHECK(emaq_target(ens, one, 1, 1)(0) == doctest::Approx(3.0));

    Batch same;
    same.cells = {2, 2, 2};
    CHECK(emaq_target(ens, same, 1, 3)(0) == doctest::Approx(3.0));

    Batch spread;
    spread.cells = {0, 3, 6};  // mins: 1, 4, 2 -> max 4
    CHECK(emaq_target(ens, spread, 1, 3)(0) == doctest::Approx(4.0));

    CHECK_THROWS(emaq_target(ens, one, 1, 0));
}

TEST_CASE("emaq over the full behavior support equals the exact max") {
    TabularSetup tb(5, 0.0, core::ScaleSet::of({1, 2}), 0.9);
    const int h = 2;
    HeadConfig hc;
    hc.kind = HeadKind::Table;
    hc.cells = tb.codec.q_cells(h);
    Rng rng = make_rng(4);
    Ensemble qh(hc, 2, rng);
    load_q_table(qh.members()[0], tb.codec, tb.env, tb.tables.chunk_tables.at(h));
    load_q_table(qh.members()[1], tb.codec, tb.env, tb.tables.chunk_tables.at(h));

    for (int s = 0; s < 4; ++s) {
        const auto& sup = tb.tables.chunk_tables.at(h).per_state[s];
        if (sup.chunks.empty()) continue;
        std::vector<core::StateRepr> states;
        std::vector<core::ActionChunk> chunks;
        for (const auto& ids : sup.chunks) {
            states.push_back(core::StateRepr::discrete(s));
            core::ActionChunk c;
            c.tier = core::Tier::Discrete;
            c.ids = ids;
            chunks.push_back(std::move(c));
        }
        std::vector<const core::ActionChunk*> ptrs;
        for (const auto& c : chunks) ptrs.push_back(&c);
        const Batch cand = tb.codec.q_input(states, ptrs, h);
        const double got = emaq_target(qh, cand, 1, static_cast<int>(chunks.size()))(0);
        CHECK(got == doctest::Approx(sup.q.maxCoeff()).epsilon(1e-12));
    }
}

TEST_CASE("qh loss: masked rows bootstrap nothing and the fixed point has zero loss") {
    TabularSetup tb(7, 0.0, core::ScaleSet::of({1, 2}), 0.9);
    const int h = 2;
    Rng rng = make_rng(5);
    BundleConfig bc;
    bc.scales = core::ScaleSet::of({1, 2});
    bc.n_q = 2;
    CriticBundle bundle = CriticBundle::make(bc, tb.codec, rng);

    // Constant-zero critic, all rewards -1, gamma 0.99, h-step window with
    // mask 1 and zero bootstrap: per-row squared error is R^2.
    const double R2 = core::discounted_partial_return({-1, -1}, 0.99);
    {
        core::ActionChunk c;
        c.tier = core::Tier::Discrete;
        c.ids = {1, 1};
        const Batch q_in = tb.codec.q_input({core::StateRepr::discrete(0)}, {&c}, h);
        Vec ret(1), mask(1), boot(1);
        ret << R2;
        mask << 1.0;
        boot << 0.0;
        const double loss = qh_loss_step(bundle, q_in, ret, mask, boot, 0.99);
        CHECK(loss == doctest::Approx(R2 * R2));
    }
    // Masked row: the target is the raw partial return even with a huge
    // bootstrap value supplied.
    {
        core::ActionChunk c;
        c.tier = core::Tier::Discrete;
        c.ids = {1, 1};
        const Batch q_in = tb.codec.q_input({core::StateRepr::discrete(3)}, {&c}, h);
        Vec ret(1), mask(1), boot(1);
        ret << -1.0;
        mask << 0.0;
        boot << 1e6;
        Rng rng2 = make_rng(6);
        CriticBundle fresh = CriticBundle::make(bc, tb.codec, rng2);
        const double loss = qh_loss_step(fresh, q_in, ret, mask, boot, 0.99);
        CHECK(loss == doctest::Approx(1.0));
    }

    // Critic initialized at the exact Q^{h,*} with exhaustive candidates:
    // the EMAQ target reproduces the fixed point and the loss vanishes.
    Rng rng3 = make_rng(7);
    CriticBundle exact = CriticBundle::make(bc, tb.codec, rng3);
    load_q_table(exact.qh->members()[0], tb.codec, tb.env, tb.tables.chunk_tables.at(h));
    load_q_table(exact.qh->members()[1], tb.codec, tb.env, tb.tables.chunk_tables.at(h));

    double worst = 0.0;
    for (int s = 0; s < 3; ++s) {
        const auto& sup = tb.tables.chunk_tables.at(h).per_state[s];
        for (std::size_t i = 0; i < sup.chunks.size(); ++i) {
            // One transition per (s, chunk): expected partial return and the
            // exact max over next-state support as the EMAQ value.
            // Deterministic chain: replay gives the next state directly.
            int cur = s;
            double ret_acc = 0.0, g = 1.0;
            bool absorbed = false;
            for (int a : sup.chunks[i]) {
                const int next = std::clamp(cur + (a == 1 ? 1 : -1), 0, 6);
                ret_acc += g * tb.env.reward(cur, a, next);
                g *= 0.99;
                cur = next;
                if (tb.env.terminal(cur)) {
                    absorbed = true;
                    break;
                }
            }
            const auto& next_sup = tb.tables.chunk_tables.at(h).per_state[cur];
            const double boot_v = absorbed || next_sup.chunks.empty()
                                      ? 0.0
                                      : next_sup.q.maxCoeff();
            core::ActionChunk c;
            c.tier = core::Tier::Discrete;
            c.ids = sup.chunks[i];
            const Batch q_in = tb.codec.q_input({core::StateRepr::discrete(s)}, {&c}, h);
            const double mask = absorbed ? 0.0 : 1.0;
            const double target = ret_acc + std::pow(0.99, h) * mask * boot_v;
            const double pred = exact.qh->min_value(q_in)(0);
            worst = std::max(worst, std::abs(pred - target) * std::abs(pred - target));
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("vh loss: exact expectile is a stationary point; single sample regresses to it") {
    TabularSetup tb(5, 0.0, core::ScaleSet::of({1, 2}), 0.9);
    Rng rng = make_rng(8);
    BundleConfig bc;
    bc.scales = core::ScaleSet::of({1, 2});
    CriticBundle bundle = CriticBundle::make(bc, tb.codec, rng);
    load_q_table(bundle.qh->members()[0], tb.codec, tb.env, tb.tables.chunk_tables.at(2));
    load_q_table(bundle.qh->members()[1], tb.codec, tb.env, tb.tables.chunk_tables.at(2));

    // V initialized at the exact kappa-expectile: expectile gradient ~ 0.
    Vec v_exact(5);
    for (int s = 0; s < 5; ++s) {
        const double v = tb.tables.v_beta(s, 1);
        v_exact(s) = std::isfinite(v) ? v : 0.0;
    }
    load_v_table(*bundle.vh, v_exact);

    // Gradient of the expectile loss at the exact expectile, computed over
    // the exact support with probability weights: should vanish.
    for (int s = 0; s < 3; ++s) {
        const auto& sup = tb.tables.chunk_tables.at(2).per_state[s];
        if (sup.chunks.empty()) continue;
        double grad = 0.0;
        for (int i = 0; i < sup.q.size(); ++i) {
            const auto [l, dl] = expectile_loss(sup.q(i) - v_exact(s), 0.9);
            grad += sup.prob(i) * (-dl);
        }
        CHECK(std::abs(grad) <= 1e-8);
    }

    // Single-sample batch: V converges to that sample for any kappa.
    Rng rng2 = make_rng(9);
    CriticBundle single = CriticBundle::make(bc, tb.codec, rng2);
    single.qh->members()[0].net().W[0].setConstant(-1.7);
    single.qh->members()[1].net().W[0].setConstant(-1.7);
    for (auto& m : single.qh->members()) m.sync_shadow();
    core::ActionChunk c;
    c.tier = core::Tier::Discrete;
    c.ids = {1, 1};
    const Batch v_in = tb.codec.v_input({core::StateRepr::discrete(1)});
    const Batch q_in = tb.codec.q_input({core::StateRepr::discrete(1)}, {&c}, 2);
    single.vh->set_lr(1e-2);
    for (int it = 0; it < 4000; ++it) vh_loss_step(single, v_in, q_in, 0.7);
    single.vh->set_lr(1e-5);
    for (int it = 0; it < 2000; ++it) vh_loss_step(single, v_in, q_in, 0.7);
    CHECK(single.vh->value(v_in)(0) == doctest::Approx(-1.7).epsilon(1e-4));
}

TEST_CASE("qk loss converges to Q^{k,*} when bootstrapped from exact V*") {
    // Prop. suboptimality with eps_h = 0 on the deterministic chain.
    TabularSetup tb(5, 0.0, core::ScaleSet::of({1, 2}), 0.9);
    Rng rng = make_rng(10);
    BundleConfig bc;
    bc.scales = core::ScaleSet::of({1, 2});
    CriticBundle bundle = CriticBundle::make(bc, tb.codec, rng);
    load_v_table(*bundle.vh, tb.tables.v_star);

    // All (state, 1-chunk) rows of the behavior support, with exact
    // deterministic transitions.
    std::vector<core::StateRepr> states;
    std::vector<core::ActionChunk> chunks;
    std::vector<double> rets, masks;
    std::vector<core::StateRepr> nexts;
    for (int s = 0; s < 4; ++s) {
        for (int a = 0; a < 2; ++a) {
            const int next = std::clamp(s + (a == 1 ? 1 : -1), 0, 4);
            states.push_back(core::StateRepr::discrete(s));
            core::ActionChunk c;
            c.tier = core::Tier::Discrete;
            c.ids = {a};
            chunks.push_back(std::move(c));
            rets.push_back(tb.env.reward(s, a, next));
            masks.push_back(tb.env.terminal(next) ? 0.0 : 1.0);
            nexts.push_back(core::StateRepr::discrete(next));
        }
    }
    std::vector<const core::ActionChunk*> ptrs;
    for (const auto& c : chunks) ptrs.push_back(&c);
    const Batch q_in = tb.codec.q_input(states, ptrs, 1);
    const Batch next_in = tb.codec.v_input(nexts);
    const Vec ret = Eigen::Map<const Vec>(rets.data(), static_cast<int>(rets.size()));
    const Vec mask = Eigen::Map<const Vec>(masks.data(), static_cast<int>(masks.size()));

    auto train_phase = [&](double lr, int iters) {
        bundle.q_at(1).set_lr(lr);
        for (int it = 0; it < iters; ++it) {
            const Vec boot = bundle.vh->ema_value(next_in);
            qk_loss_step(bundle, 1, q_in, ret, mask, boot, 0.99);
        }
    };
    train_phase(1e-2, 4000);
    train_phase(1e-4, 3000);
    train_phase(1e-6, 3000);

    const Vec q = bundle.q_at(1).min_value(q_in);
    double worst = 0.0;
    for (int i = 0; i < q.size(); ++i) {
        const double q_star = tb.tables.q1_star(states[i].index, chunks[i].ids[0]);
        worst = std::max(worst, std::abs(q(i) - q_star));
    }
    CHECK(worst <= 1e-6);

    // Uniform +eps_h perturbation of the bootstrap: converged error is at
    // most gamma^k * eps_h (+ fitting tolerance).
    const double eps_h = 0.5;
    load_v_table(*bundle.vh, Vec(tb.tables.v_star.array() + eps_h));
    train_phase(1e-2, 4000);
    train_phase(1e-4, 3000);
    train_phase(1e-6, 3000);
    const Vec q2 = bundle.q_at(1).min_value(q_in);
    double worst2 = 0.0;
    for (int i = 0; i < q2.size(); ++i) {
        const double q_star = tb.tables.q1_star(states[i].index, chunks[i].ids[0]);
        worst2 = std::max(worst2, std::abs(q2(i) - q_star));
    }
    CHECK(worst2 <= 0.99 * eps_h + 1e-6);
}

TEST_CASE("loss gradients flow only into the trained head") {
    TabularSetup tb(5, 0.0, core::ScaleSet::of({1, 2}), 0.9);
    Rng rng = make_rng(11);
    BundleConfig bc;
    bc.scales = core::ScaleSet::of({1, 2});
    CriticBundle bundle = CriticBundle::make(bc, tb.codec, rng);

    core::ActionChunk c;
    c.tier = core::Tier::Discrete;
    c.ids = {1, 1};
    const Batch q_in = tb.codec.q_input({core::StateRepr::discrete(0)}, {&c}, 2);
    const Batch v_in = tb.codec.v_input({core::StateRepr::discrete(0)});
    Vec ret(1), mask(1), boot(1);
    ret << -1.99;
    mask << 1.0;
    boot << -0.5;

    const Mat vh_before = bundle.vh->net().W[0];
    const Mat q1_before = bundle.qk.at(1)->members()[0].net().W[0];
    qh_loss_step(bundle, q_in, ret, mask, boot, 0.99);
    CHECK((bundle.vh->net().W[0] - vh_before).cwiseAbs().maxCoeff() == 0.0);
    CHECK((bundle.qk.at(1)->members()[0].net().W[0] - q1_before).cwiseAbs().maxCoeff() == 0.0);

    const Mat qh_before = bundle.qh->members()[0].net().W[0];
    vh_loss_step(bundle, v_in, q_in, 0.9);
    CHECK((bundle.qh->members()[0].net().W[0] - qh_before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("onehot codec and mlp heads run the same loss path") {
    envs::ChainEnv env(4, 0.0);
    FeatureCodec codec = FeatureCodec::discrete_onehot(4, 2);
    Rng rng = make_rng(12);
    BundleConfig bc;
    bc.scales = core::ScaleSet::of({1, 2});
    bc.width = 16;
    bc.depth = 1;
    CriticBundle bundle = CriticBundle::make(bc, codec, rng);

    core::ActionChunk c;
    c.tier = core::Tier::Discrete;
    c.ids = {1, 0};
    const Batch q_in = codec.q_input({core::StateRepr::discrete(1)}, {&c}, 2);
    CHECK(q_in.feats.cols() == 4 + 2 * 2);
    Vec ret(1), mask(1), boot(1);
    ret << -1.0;
    mask << 1.0;
    boot << -2.0;
    const double l0 = qh_loss_step(bundle, q_in, ret, mask, boot, 0.99);
    CHECK(std::isfinite(l0));
    const Batch v_in = codec.v_input({core::StateRepr::discrete(1)});
    CHECK(std::isfinite(vh_loss_step(bundle, v_in, q_in, 0.9)));
}

TEST_CASE("continuous codec lays out state and chunk features") {
    FeatureCodec codec = FeatureCodec::continuous(3, 2);
    core::StateRepr s = core::StateRepr::continuous((Vec(3) << 1, 2, 3).finished());
    core::ActionChunk c;
    c.tier = core::Tier::Continuous;
    c.cont = (Mat(2, 2) << 0.1, 0.2, 0.3, 0.4).finished();
    const Batch b = codec.q_input({s}, {&c}, 2);
    REQUIRE(b.feats.cols() == 7);
    CHECK(b.feats(0, 0) == 1.0);
    CHECK(b.feats(0, 3) == doctest::Approx(0.1));
    CHECK(b.feats(0, 6) == doctest::Approx(0.4));

    // Prefix rows reuse the leading actions only.
    const Batch b1 = codec.q_input({s}, {&c}, 1);
    CHECK(b1.feats.cols() == 5);
    CHECK(b1.feats(0, 4) == doctest::Approx(0.2));
}
