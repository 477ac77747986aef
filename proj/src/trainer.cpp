#include "chunkrl/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace chunkrl::trainer {

namespace {

std::vector<int> make_slice_scales(const core::ScaleSet& scales) {
    std::vector<int> s = scales.scales;
    if (std::find(s.begin(), s.end(), 1) == s.end()) s.insert(s.begin(), 1);
    return s;
}

}  // namespace

void ReplayBuffer::add_offline(TrainSample sample) {
    sample.offline = true;
    offline_.push_back(std::move(sample));
}

void ReplayBuffer::add_online(TrainSample sample) {
    sample.offline = false;
    online_.push_back(std::move(sample));
    while (static_cast<long>(online_.size()) > capacity_) online_.pop_front();
}

std::vector<const TrainSample*> ReplayBuffer::sample_batch(int batch, double offline_fraction,
                                                           Rng& rng) const {
    require(!offline_.empty() || !online_.empty(), "ReplayBuffer: empty");
    std::vector<const TrainSample*> rows;
    rows.reserve(batch);
    long n_off = std::lround(batch * offline_fraction);
    if (online_.empty()) n_off = batch;
    if (offline_.empty()) n_off = 0;
    for (long i = 0; i < n_off; ++i)
        rows.push_back(&offline_[uniform_int(rng, static_cast<int>(offline_.size()))]);
    for (long i = n_off; i < batch; ++i)
        rows.push_back(&online_[uniform_int(rng, static_cast<int>(online_.size()))]);
    return rows;
}

void append_windows(const core::Trajectory& traj, const std::vector<int>& slice_scales, int h,
                    double gamma, int stride, bool offline, std::vector<TrainSample>& out) {
    const int T = traj.length();
    for (int t = 0; t < T; t += stride) {
        const bool full = t + h <= T;
        if (!full && !traj.terminal) continue;
        TrainSample w;
        w.offline = offline;
        w.s = traj.states[t];
        w.real_len = std::min(h, T - t);
        w.chunk = traj.chunk_at(t, w.real_len);
        if (w.real_len < h) {
            if (traj.tier == core::Tier::Discrete) {
                w.chunk.ids.resize(h, w.chunk.ids.back());
            } else {
                Mat padded(h, w.chunk.cont.cols());
                padded.topRows(w.real_len) = w.chunk.cont;
                for (int r = w.real_len; r < h; ++r)
                    padded.row(r) = w.chunk.cont.row(w.real_len - 1);
                w.chunk.cont = std::move(padded);
            }
        }
        for (int k : slice_scales) {
            const int reach = std::min(k, w.real_len);
            std::vector<double> rs(traj.rewards.begin() + t, traj.rewards.begin() + t + reach);
            w.ret_k.push_back(core::discounted_partial_return(rs, gamma));
            w.next_k.push_back(traj.states[t + reach]);
            w.mask_k.push_back((traj.terminal && t + k >= T) ? 0.0 : 1.0);
        }
        out.push_back(std::move(w));
    }
}

int Artifacts::slice_index(int k) const {
    auto it = std::find(slice_scales.begin(), slice_scales.end(), k);
    require(it != slice_scales.end(), "Artifacts: scale not sliced");
    return static_cast<int>(it - slice_scales.begin());
}

Artifacts make_artifacts(const TrainConfig& cfg, envs::Env& env) {
    Artifacts art;
    art.tier = env.tier();
    const core::ScaleSet scales = cfg.scales();
    art.slice_scales = make_slice_scales(scales);
    Rng rng = make_rng(derive_seed(cfg.seed, 0xA11));

    if (env.tier() == core::Tier::Discrete) {
        const auto* model = dynamic_cast<const envs::DiscreteEnvModel*>(&env);
        require(model != nullptr, "make_artifacts: discrete env without a model view");
        art.codec = cfg.table_heads
                        ? critics::FeatureCodec::discrete_table(model->n_states(),
                                                                model->n_actions())
                        : critics::FeatureCodec::discrete_onehot(model->n_states(),
                                                                 model->n_actions());
        art.sampler =
            std::make_unique<policy::EmpiricalChunkSampler>(model->n_states(), cfg.h);
    } else {
        art.codec = critics::FeatureCodec::continuous(env.state_dim(), env.action_dim());
        policy::FlowConfig fc;
        fc.d_s = env.state_dim();
        fc.d_a = env.action_dim();
        fc.h = cfg.h;
        fc.steps = cfg.flow_steps;
        fc.width = cfg.width;
        fc.depth = cfg.depth;
        fc.lr = cfg.lr;
        art.flow = std::make_unique<policy::FlowPolicy>(fc, rng);
    }

    critics::BundleConfig bc;
    bc.scales = scales;
    bc.n_q = cfg.n_q;
    bc.lr = cfg.lr;
    bc.tau = cfg.ema_tau;
    bc.width = cfg.width;
    bc.depth = cfg.depth;
    art.bundle = critics::CriticBundle::make(bc, art.codec, rng);

    if (cfg.bootstrap_source == "v1") {
        critics::HeadConfig qh;
        critics::HeadConfig vh;
        if (art.codec.head_kind() == critics::HeadKind::Table) {
            qh.kind = vh.kind = critics::HeadKind::Table;
            qh.cells = art.codec.q_cells(1);
            vh.cells = art.codec.v_cells();
        } else {
            qh.kind = vh.kind = critics::HeadKind::Mlp;
            qh.widths = {art.codec.q_feat_dim(1)};
            vh.widths = {art.codec.v_feat_dim()};
            for (int d = 0; d < cfg.depth; ++d) {
                qh.widths.push_back(cfg.width);
                vh.widths.push_back(cfg.width);
            }
            qh.widths.push_back(1);
            vh.widths.push_back(1);
        }
        qh.lr = vh.lr = cfg.lr;
        qh.tau = vh.tau = cfg.ema_tau;
        art.q1_aux = std::make_unique<critics::Ensemble>(qh, cfg.n_q, rng);
        art.v1_aux = std::make_unique<critics::Head>(vh, rng);
    }
    return art;
}

namespace {

const envs::DiscreteEnvModel* model_of(envs::Env& env) {
    return dynamic_cast<const envs::DiscreteEnvModel*>(&env);
}

std::vector<core::ActionChunk> gen_candidates(const Artifacts& art,
                                              const envs::DiscreteEnvModel* model,
                                              const core::StateRepr& s, int n, Rng& rng) {
    if (art.tier == core::Tier::Discrete) {
        require(model != nullptr, "gen_candidates: missing discrete model");
        return art.sampler->sample(s.index, n, rng, *model);
    }
    const Mat flat = art.flow->sample_chunks(s.vec, n, rng);
    std::vector<core::ActionChunk> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(art.flow->to_chunk(flat.row(i).transpose()));
    return out;
}

struct SliceRefs {
    std::vector<core::StateRepr> states;
    std::vector<const core::ActionChunk*> chunks;
    Vec ret;
    Vec mask;
    std::vector<core::StateRepr> next_states;
};

SliceRefs make_slice(const std::vector<const TrainSample*>& rows, int slice_idx) {
    SliceRefs s;
    const int n = static_cast<int>(rows.size());
    s.ret.resize(n);
    s.mask.resize(n);
    s.states.reserve(n);
    s.chunks.reserve(n);
    s.next_states.reserve(n);
    for (int i = 0; i < n; ++i) {
        const TrainSample& w = *rows[i];
        s.states.push_back(w.s);
        s.chunks.push_back(&w.chunk);
        s.ret(i) = w.ret_k[slice_idx];
        s.mask(i) = w.mask_k[slice_idx];
        s.next_states.push_back(w.next_k[slice_idx]);
    }
    return s;
}

// Rows whose recorded window truly spans at least k actions (no padding in
// the first k slots); value heads train on these only.
std::vector<const TrainSample*> rows_with_real_len(const std::vector<const TrainSample*>& rows,
                                                   int k) {
    std::vector<const TrainSample*> out;
    out.reserve(rows.size());
    for (const auto* w : rows)
        if (w->real_len >= k) out.push_back(w);
    return out;
}

Vec emaq_bootstrap(const TrainConfig& cfg, const Artifacts& art,
                   const envs::DiscreteEnvModel* model, const critics::Ensemble& qh,
                   const std::vector<core::StateRepr>& next_states, Rng& rng) {
    const int n = static_cast<int>(next_states.size());
    const int N = cfg.n_candidates;
    std::vector<core::StateRepr> cand_states;
    std::vector<core::ActionChunk> cands;
    cand_states.reserve(static_cast<std::size_t>(n) * N);
    cands.reserve(static_cast<std::size_t>(n) * N);
    for (int i = 0; i < n; ++i) {
        auto cs = gen_candidates(art, model, next_states[i], N, rng);
        for (auto& c : cs) {
            cand_states.push_back(next_states[i]);
            cands.push_back(std::move(c));
        }
    }
    std::vector<const core::ActionChunk*> ptrs;
    ptrs.reserve(cands.size());
    for (const auto& c : cands) ptrs.push_back(&c);
    const critics::Batch cand_in = art.codec.q_input(cand_states, ptrs, cfg.h);
    return critics::emaq_target(qh, cand_in, n, N);
}

struct StepLosses {
    double qh = 0.0, vh = 0.0, bc = 0.0;
    std::map<int, double> qk, vk;
};

StepLosses train_step(const TrainConfig& cfg, Artifacts& art,
                      const envs::DiscreteEnvModel* model,
                      const std::vector<const TrainSample*>& rows, Rng& rng) {
    StepLosses losses;
    const core::ScaleSet scales = cfg.scales();
    const int h = scales.horizon();
    auto& bundle = art.bundle;

    // Auxiliary 1-step pair first (it feeds the v1 bootstrap arm).
    if (cfg.bootstrap_source == "v1") {
        const int i1 = art.slice_index(1);
        SliceRefs s1 = make_slice(rows, i1);
        const critics::Batch q_in = art.codec.q_input(s1.states, s1.chunks, 1);
        const critics::Batch next_v = art.codec.v_input(s1.next_states);
        const Vec boot = art.v1_aux->ema_value(next_v);
        const Vec target = s1.ret + cfg.gamma * s1.mask.cwiseProduct(boot);
        art.q1_aux->step_mse(q_in, target);
        const critics::Batch v_in = art.codec.v_input(s1.states);
        const Vec v_target = art.q1_aux->min_ema(q_in);
        const Vec pred = art.v1_aux->value(v_in);
        Vec d_out(pred.size());
        for (int i = 0; i < pred.size(); ++i) {
            const auto [l, dl] = critics::expectile_loss(v_target(i) - pred(i), cfg.kappa_v);
            d_out(i) = -dl / pred.size();
        }
        art.v1_aux->step(v_in, d_out);
    }

    // Q^h: EMAQ h-step TD.
    {
        const int ih = art.slice_index(h);
        SliceRefs sh = make_slice(rows, ih);
        const critics::Batch q_in = art.codec.q_input(sh.states, sh.chunks, h);
        const Vec boot = emaq_bootstrap(cfg, art, model, *bundle.qh, sh.next_states, rng);
        losses.qh = critics::qh_loss_step(bundle, q_in, sh.ret, sh.mask, boot, cfg.gamma);
    }

    // V^h: expectile regression on the EMA critic at the data chunk. All
    // windows participate, padded terminal tails included; their critic
    // values carry the goal-reaching returns near terminal states.
    {
        SliceRefs sh = make_slice(rows, art.slice_index(h));
        const critics::Batch v_in = art.codec.v_input(sh.states);
        const critics::Batch q_in = art.codec.q_input(sh.states, sh.chunks, h);
        losses.vh = critics::vh_loss_step(bundle, v_in, q_in, cfg.kappa_v);
    }

    // Partial critics and per-scale baselines.
    for (int k : scales) {
        if (k == h) continue;
        const int ik = art.slice_index(k);
        SliceRefs sk = make_slice(rows, ik);
        const critics::Batch q_in = art.codec.q_input(sk.states, sk.chunks, k);
        Vec boot;
        if (cfg.bootstrap_source == "v1") {
            boot = art.v1_aux->ema_value(art.codec.v_input(sk.next_states));
        } else if (cfg.bootstrap_source == "qh_direct") {
            boot = emaq_bootstrap(cfg, art, model, *bundle.qh, sk.next_states, rng);
        } else {
            boot = bundle.vh->ema_value(art.codec.v_input(sk.next_states));
        }
        losses.qk[k] = critics::qk_loss_step(bundle, k, q_in, sk.ret, sk.mask, boot, cfg.gamma);

        const critics::Batch v_in = art.codec.v_input(sk.states);
        losses.vk[k] = critics::vk_loss_step(bundle, k, v_in, q_in, cfg.kappa_v);
    }

    // Behavior policy. The discrete-tier empirical table needs no gradient
    // step; it was built from the data directly.
    if (art.tier == core::Tier::Continuous) {
        auto brows = rows_with_real_len(rows, h);
        if (!brows.empty()) {
            const int n = static_cast<int>(brows.size());
            const int dim = cfg.h * art.flow->config().d_a;
            Mat states(n, art.flow->config().d_s);
            Mat chunks(n, dim);
            for (int i = 0; i < n; ++i) {
                states.row(i) = brows[i]->s.vec.transpose();
                for (int j = 0; j < cfg.h; ++j)
                    chunks.block(i, j * art.flow->config().d_a, 1, art.flow->config().d_a) =
                        brows[i]->chunk.cont.row(j);
            }
            losses.bc = art.flow->bc_step(states, chunks, rng);
        }
    }
    return losses;
}

selector::SelectionResult select_chunk(const TrainConfig& cfg, const Artifacts& art,
                                       const core::StateRepr& s,
                                       const std::vector<core::ActionChunk>& cands, Rng& rng) {
    const auto& bundle = art.bundle;
    if (cfg.selector == "aqc") {
        auto scores = selector::advantage_scores(bundle, art.codec, s, cands, cfg.gamma);
        return selector::zscore_and_select(scores, cands, cfg.zscore, cfg.eps_z);
    }
    if (cfg.selector == "raw_q") return selector::raw_q_select(bundle, art.codec, s, cands);
    if (cfg.selector == "discount_corrected")
        return selector::discount_corrected_select(bundle, art.codec, s, cands, cfg.gamma);
    if (cfg.selector == "random")
        return selector::random_select(bundle.scales, cands, rng);
    if (cfg.selector.rfind("fixed:", 0) == 0) {
        const int k = std::stoi(cfg.selector.substr(6));
        return selector::fixed_k_select(bundle, art.codec, s, cands, k);
    }
    throw std::runtime_error("select_chunk: unknown selector '" + cfg.selector + "'");
}

void emit_metrics(const MetricsSink& sink, MetricRow row) {
    if (sink) sink(row);
}

// Deep copies of every trainable net, for the abort-with-last-good-state
// contract. Optimizer moments are not part of the snapshot.
struct ParamSnapshot {
    std::vector<nn::DenseNet> nets;
};

template <typename Fn>
void for_each_net(Artifacts& art, Fn&& fn) {
    for (auto& m : art.bundle.qh->members()) {
        fn(m.net());
        fn(m.shadow());
    }
    fn(art.bundle.vh->net());
    fn(art.bundle.vh->shadow());
    for (auto& [k, ens] : art.bundle.qk)
        for (auto& m : ens->members()) {
            fn(m.net());
            fn(m.shadow());
        }
    for (auto& [k, head] : art.bundle.vk) {
        fn(head->net());
        fn(head->shadow());
    }
    if (art.flow) fn(art.flow->net());
    if (art.q1_aux)
        for (auto& m : art.q1_aux->members()) {
            fn(m.net());
            fn(m.shadow());
        }
    if (art.v1_aux) {
        fn(art.v1_aux->net());
        fn(art.v1_aux->shadow());
    }
}

ParamSnapshot take_snapshot(Artifacts& art) {
    ParamSnapshot snap;
    for_each_net(art, [&](nn::DenseNet& net) { snap.nets.push_back(net); });
    return snap;
}

void restore_snapshot(Artifacts& art, const ParamSnapshot& snap) {
    std::size_t i = 0;
    for_each_net(art, [&](nn::DenseNet& net) { net = snap.nets.at(i++); });
}

}  // namespace

EvalStats evaluate_policy(const TrainConfig& cfg, envs::Env& env, const Artifacts& art,
                          int episodes, std::uint64_t seed_base) {
    const auto* model = model_of(env);
    EvalStats stats;
    long decisions = 0;
    double ksum = 0.0;
    int successes = 0;
    std::map<int, long> k_counts;

    for (int ep = 0; ep < episodes; ++ep) {
        Rng rng = make_rng(derive_seed(seed_base, 2 * ep));
        core::StateRepr s = env.reset(derive_seed(seed_base, 2 * ep + 1));
        bool success = false;
        bool done = false;
        while (!done) {
            env.mark_query();
            auto cands = gen_candidates(art, model, s, cfg.n_candidates, rng);
            auto sel = select_chunk(cfg, art, s, cands, rng);
            decisions += 1;
            ksum += sel.k_star;
            k_counts[sel.k_star] += 1;
            if (art.tier == core::Tier::Discrete) {
                auto& entry = stats.per_state_k[s.index];
                entry.first += sel.k_star;
                entry.second += 1;
            }
            for (int j = 0; j < sel.k_star; ++j) {
                envs::StepResult r = (art.tier == core::Tier::Discrete)
                                         ? env.step_discrete(sel.chunk.ids[j])
                                         : env.step_continuous(sel.chunk.cont.row(j).transpose());
                s = r.state;
                if (r.terminated) {
                    success = r.goal;
                    done = true;
                    break;
                }
            }
        }
        if (success) successes += 1;
    }
    stats.success_rate = episodes > 0 ? static_cast<double>(successes) / episodes : 0.0;
    stats.mean_kstar = decisions > 0 ? ksum / decisions : 0.0;
    for (const auto& [k, c] : k_counts)
        stats.k_freq[k] = static_cast<double>(c) / static_cast<double>(decisions);
    return stats;
}

void offline_train(const TrainConfig& cfg, const core::Dataset& data, envs::Env& env,
                   Artifacts& art, ReplayBuffer& buffer, const MetricsSink& sink) {
    require(!data.empty() || cfg.offline_steps == 0, "offline_train: empty dataset");
    const auto* model = model_of(env);

    std::vector<TrainSample> windows;
    for (const auto& traj : data.trajectories)
        append_windows(traj, art.slice_scales, cfg.h, cfg.gamma, cfg.stride, true, windows);
    for (auto& w : windows) buffer.add_offline(std::move(w));
    if (art.sampler && art.sampler->total_windows() == 0) art.sampler->add_dataset(data);

    Rng rng = make_rng(derive_seed(cfg.seed, 0x0FF1));
    ParamSnapshot last_good = take_snapshot(art);
    for (long step = 1; step <= cfg.offline_steps; ++step) {
        auto rows = buffer.sample_batch(cfg.batch_size, 1.0, rng);
        StepLosses losses;
        try {
            losses = train_step(cfg, art, model, rows, rng);
        } catch (const std::exception& e) {
            // Non-finite loss or gradient: roll the artifacts back to the
            // last logged state and abort.
            restore_snapshot(art, last_good);
            throw std::runtime_error("offline_train aborted at step " + std::to_string(step) +
                                     " (" + e.what() + "); artifacts restored to step " +
                                     std::to_string((step - 1) / cfg.log_interval *
                                                    cfg.log_interval));
        }
        if (step % cfg.log_interval == 0) last_good = take_snapshot(art);
        if (sink && (step % cfg.log_interval == 0 || step == cfg.offline_steps)) {
            MetricRow row;
            row.step = step;
            row.phase = "offline";
            row.loss_qh = losses.qh;
            row.loss_vh = losses.vh;
            row.loss_bc = losses.bc;
            row.loss_qk = losses.qk;
            row.loss_vk = losses.vk;
            emit_metrics(sink, row);
        }
    }
}

OnlineResult online_finetune(const TrainConfig& cfg, envs::Env& env, Artifacts& art,
                             ReplayBuffer& buffer, const MetricsSink& sink,
                             const TraceSink& trace) {
    const auto* model = model_of(env);
    Rng rng = make_rng(derive_seed(cfg.seed, 0x0271));

    OnlineResult result;
    long consumed = 0;
    long episode = 0;
    long next_eval = cfg.eval_interval;
    StepLosses last_losses;

    auto run_eval = [&](long at_step) {
        EvalStats stats = evaluate_policy(cfg, env, art, cfg.eval_episodes,
                                          derive_seed(cfg.seed, 0xE7A1));
        MetricRow row;
        row.step = at_step;
        row.phase = "online";
        row.loss_qh = last_losses.qh;
        row.loss_vh = last_losses.vh;
        row.loss_bc = last_losses.bc;
        row.loss_qk = last_losses.qk;
        row.loss_vk = last_losses.vk;
        row.success_rate = stats.success_rate;
        row.mean_kstar = stats.mean_kstar;
        row.k_freq = stats.k_freq;
        emit_metrics(sink, row);
        return stats;
    };

    while (consumed < cfg.online_env_steps) {
        const std::uint64_t ep_seed = derive_seed(cfg.seed, 0x10000 + episode);
        episode += 1;
        core::Trajectory traj;
        traj.tier = env.tier();
        core::StateRepr s = env.reset(ep_seed);
        traj.states.push_back(s);
        std::vector<Vec> cont_actions;
        bool done = false;

        while (!done && consumed < cfg.online_env_steps) {
            env.mark_query();
            auto cands = gen_candidates(art, model, s, cfg.n_candidates, rng);
            auto sel = select_chunk(cfg, art, s, cands, rng);
            if (trace) {
                SelectionTrace t{"online", s, sel.k_star, {}};
                const auto& m = sel.scores;
                for (std::size_t ki = 0; ki < m.scales.size(); ++ki)
                    if (m.raw.rows() == static_cast<long>(m.scales.size()) && m.raw.cols() > 0)
                        t.best_score[m.scales[ki]] = m.raw.row(static_cast<int>(ki)).maxCoeff();
                trace(t);
            }

            long steps_taken = 0;
            for (int j = 0; j < sel.k_star; ++j) {
                envs::StepResult r = (art.tier == core::Tier::Discrete)
                                         ? env.step_discrete(sel.chunk.ids[j])
                                         : env.step_continuous(sel.chunk.cont.row(j).transpose());
                if (art.tier == core::Tier::Discrete)
                    traj.action_ids.push_back(sel.chunk.ids[j]);
                else
                    cont_actions.push_back(sel.chunk.cont.row(j).transpose());
                traj.rewards.push_back(r.reward);
                traj.states.push_back(r.state);
                s = r.state;
                consumed += 1;
                steps_taken += 1;
                if (r.terminated) {
                    traj.terminal = r.goal;
                    done = true;
                    break;
                }
                if (consumed >= cfg.online_env_steps) break;
            }

            // UTD updates per environment step once past warmup.
            if (consumed > cfg.warmup_steps &&
                (buffer.offline_size() + buffer.online_size()) > 0) {
                for (long u = 0; u < steps_taken * cfg.utd_ratio; ++u) {
                    auto rows = buffer.sample_batch(cfg.batch_size, cfg.mix_ratio, rng);
                    last_losses = train_step(cfg, art, model, rows, rng);
                }
            }
        }

        if (env.tier() == core::Tier::Continuous) {
            traj.actions_cont.resize(static_cast<int>(cont_actions.size()), env.action_dim());
            for (int i = 0; i < static_cast<int>(cont_actions.size()); ++i)
                traj.actions_cont.row(i) = cont_actions[i].transpose();
        }
        if (traj.length() > 0) {
            std::vector<TrainSample> windows;
            append_windows(traj, art.slice_scales, cfg.h, cfg.gamma, cfg.stride, false, windows);
            for (auto& w : windows) buffer.add_online(std::move(w));
            if (art.sampler) art.sampler->add_trajectory(traj);
        }

        while (next_eval <= consumed) {
            run_eval(next_eval);
            next_eval += cfg.eval_interval;
        }
    }

    result.env_steps = consumed;
    result.final_eval = run_eval(consumed);
    return result;
}

NStepArtifacts nstep_baseline_train(const TrainConfig& cfg, int n, const core::Dataset& data,
                                    envs::Env& env, const MetricsSink& sink) {
    require(n >= 1 && n <= cfg.h, "nstep_baseline_train: need 1 <= n <= h");
    const auto* model = model_of(env);
    require(model != nullptr, "nstep_baseline_train: discrete tier only");

    NStepArtifacts art;
    art.n = n;
    art.codec = critics::FeatureCodec::discrete_table(model->n_states(), model->n_actions());
    art.sampler = std::make_unique<policy::EmpiricalChunkSampler>(model->n_states(), cfg.h);
    art.sampler->add_dataset(data);

    Rng rng = make_rng(derive_seed(cfg.seed, 0x57E9));
    critics::HeadConfig hc;
    hc.kind = critics::HeadKind::Table;
    hc.cells = art.codec.q_cells(1);
    hc.lr = cfg.lr;
    hc.tau = cfg.ema_tau;
    art.q = std::make_unique<critics::Ensemble>(hc, cfg.n_q, rng);

    std::vector<int> slice_scales = {1, n};
    std::sort(slice_scales.begin(), slice_scales.end());
    slice_scales.erase(std::unique(slice_scales.begin(), slice_scales.end()),
                       slice_scales.end());
    const int i_n = static_cast<int>(
        std::find(slice_scales.begin(), slice_scales.end(), n) - slice_scales.begin());

    std::vector<TrainSample> windows;
    for (const auto& traj : data.trajectories)
        append_windows(traj, slice_scales, cfg.h, cfg.gamma, cfg.stride, true, windows);
    require(!windows.empty(), "nstep_baseline_train: no training windows");

    const double gn = std::pow(cfg.gamma, n);
    for (long step = 1; step <= cfg.offline_steps; ++step) {
        std::vector<const TrainSample*> rows;
        rows.reserve(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i)
            rows.push_back(&windows[uniform_int(rng, static_cast<int>(windows.size()))]);

        SliceRefs sn = make_slice(rows, i_n);
        // Candidate single actions at s_{t+n}: first actions of behavior
        // chunks, max over the ensemble-min EMA critic.
        const int N = cfg.n_candidates;
        std::vector<core::StateRepr> cand_states;
        std::vector<core::ActionChunk> cands;
        for (const auto& ns : sn.next_states) {
            auto cs = art.sampler->sample(ns.index, N, rng, *model);
            for (auto& c : cs) {
                cand_states.push_back(ns);
                core::ActionChunk a1;
                a1.tier = core::Tier::Discrete;
                a1.ids = {c.ids[0]};
                cands.push_back(std::move(a1));
            }
        }
        std::vector<const core::ActionChunk*> ptrs;
        ptrs.reserve(cands.size());
        for (const auto& c : cands) ptrs.push_back(&c);
        const critics::Batch cand_in = art.codec.q_input(cand_states, ptrs, 1);
        const Vec boot = critics::emaq_target(*art.q, cand_in,
                                              static_cast<int>(rows.size()), N);
        const Vec target = sn.ret + gn * sn.mask.cwiseProduct(boot);

        std::vector<core::ActionChunk> first_actions;
        first_actions.reserve(rows.size());
        for (const auto* w : rows) {
            core::ActionChunk a1;
            a1.tier = core::Tier::Discrete;
            a1.ids = {w->chunk.ids[0]};
            first_actions.push_back(std::move(a1));
        }
        std::vector<const core::ActionChunk*> fptrs;
        for (const auto& c : first_actions) fptrs.push_back(&c);
        std::vector<core::StateRepr> states;
        for (const auto* w : rows) states.push_back(w->s);
        const critics::Batch q_in = art.codec.q_input(states, fptrs, 1);
        const double loss = art.q->step_mse(q_in, target);

        if (sink && step % cfg.log_interval == 0) {
            MetricRow row;
            row.step = step;
            row.phase = "offline";
            row.loss_qh = loss;
            emit_metrics(sink, row);
        }
    }
    return art;
}

}  // namespace chunkrl::trainer
