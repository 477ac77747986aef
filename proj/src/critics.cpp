#include "chunkrl/critics.hpp"

#include <cmath>

namespace chunkrl::critics {

std::pair<double, double> expectile_loss(double u, double kappa) {
    const double w = std::abs(kappa - (u < 0.0 ? 1.0 : 0.0));
    return {w * u * u, 2.0 * w * u};
}

// ---------------------------------------------------------------------------
// Head

Head::Head(const HeadConfig& cfg, Rng& rng)
    : cfg_(cfg),
      net_(cfg.kind == HeadKind::Mlp
               ? nn::DenseNet::make(cfg.widths, rng, cfg.final_scale, true)
               : nn::DenseNet::make({static_cast<int>(cfg.cells), 1}, rng, 0.0, false)),
      opt_(nn::AdamWState::make(net_, cfg.lr, cfg.weight_decay)),
      ema_(nn::EmaTarget::make(net_, cfg.tau)) {
    if (cfg.kind == HeadKind::Table)
        require(cfg.cells >= 1, "Head: table needs at least one cell");
    else
        require(!cfg.widths.empty() && cfg.widths.back() == 1,
                "Head: mlp head must end in a scalar output");
}

Vec Head::eval(const nn::DenseNet& net, const Batch& in) const {
    if (cfg_.kind == HeadKind::Table) {
        Vec out(static_cast<int>(in.cells.size()));
        for (int i = 0; i < out.size(); ++i) {
            require(in.cells[i] >= 0 && in.cells[i] < cfg_.cells, "Head: cell out of range");
            out(i) = net.W[0](static_cast<int>(in.cells[i]), 0);
        }
        return out;
    }
    return nn::forward(net, in.feats);
}

Vec Head::value(const Batch& in) const { return eval(net_, in); }
Vec Head::ema_value(const Batch& in) const { return eval(ema_.shadow, in); }

nn::Grads Head::grads(const Batch& in, const Vec& d_out) const {
    nn::Grads g = nn::Grads::zeros_like(net_);
    if (cfg_.kind == HeadKind::Table) {
        for (int i = 0; i < d_out.size(); ++i)
            g.W[0](static_cast<int>(in.cells[i]), 0) += d_out(i);
        return g;
    }
    nn::Trace trace;
    nn::forward(net_, in.feats, &trace);
    const Mat d = d_out;  // n x 1
    nn::backward(net_, trace, d, g);
    return g;
}

void Head::step(const Batch& in, const Vec& d_out) {
    nn::Grads g = grads(in, d_out);
    nn::adamw_step(opt_, net_, g);
    nn::ema_update(ema_, net_);
}

// ---------------------------------------------------------------------------
// Ensemble

Ensemble::Ensemble(const HeadConfig& cfg, int members, Rng& rng) {
    require(members >= 1, "Ensemble: needs at least one member");
    for (int i = 0; i < members; ++i) members_.emplace_back(cfg, rng);
}

Vec Ensemble::min_value(const Batch& in) const {
    Vec out = members_[0].value(in);
    for (std::size_t i = 1; i < members_.size(); ++i)
        out = out.cwiseMin(members_[i].value(in));
    return out;
}

Vec Ensemble::min_ema(const Batch& in) const {
    Vec out = members_[0].ema_value(in);
    for (std::size_t i = 1; i < members_.size(); ++i)
        out = out.cwiseMin(members_[i].ema_value(in));
    return out;
}

double Ensemble::step_mse(const Batch& in, const Vec& target) {
    double logged = 0.0;
    const double inv_n = 1.0 / target.size();
    for (std::size_t i = 0; i < members_.size(); ++i) {
        Vec pred = members_[i].value(in);
        Vec resid = pred - target;
        if (i == 0) logged = resid.squaredNorm() * inv_n;
        members_[i].step(in, 2.0 * inv_n * resid);
    }
    return logged;
}

// ---------------------------------------------------------------------------
// FeatureCodec

FeatureCodec FeatureCodec::continuous(int d_s, int d_a) {
    FeatureCodec c;
    c.mode_ = Mode::Continuous;
    c.d_s_ = d_s;
    c.d_a_ = d_a;
    return c;
}

FeatureCodec FeatureCodec::discrete_table(int n_states, int n_actions) {
    FeatureCodec c;
    c.mode_ = Mode::DiscreteTable;
    c.n_states_ = n_states;
    c.n_actions_ = n_actions;
    return c;
}

FeatureCodec FeatureCodec::discrete_onehot(int n_states, int n_actions) {
    FeatureCodec c;
    c.mode_ = Mode::DiscreteOneHot;
    c.n_states_ = n_states;
    c.n_actions_ = n_actions;
    return c;
}

int FeatureCodec::q_feat_dim(int k) const {
    switch (mode_) {
        case Mode::Continuous: return d_s_ + k * d_a_;
        case Mode::DiscreteOneHot: return n_states_ + k * n_actions_;
        default: return 0;
    }
}

long FeatureCodec::q_cells(int k) const {
    if (mode_ != Mode::DiscreteTable) return 0;
    long cells = n_states_;
    for (int j = 0; j < k; ++j) {
        cells *= n_actions_;
        require(cells > 0 && cells < (1L << 40), "FeatureCodec: table too large");
    }
    return cells;
}

int FeatureCodec::v_feat_dim() const {
    return mode_ == Mode::Continuous ? d_s_ : n_states_;
}

long FeatureCodec::v_cells() const {
    return mode_ == Mode::DiscreteTable ? n_states_ : 0;
}

Batch FeatureCodec::v_input(const std::vector<core::StateRepr>& states) const {
    Batch b;
    const int n = static_cast<int>(states.size());
    if (mode_ == Mode::DiscreteTable) {
        b.cells.reserve(n);
        for (const auto& s : states) b.cells.push_back(s.index);
        return b;
    }
    if (mode_ == Mode::Continuous) {
        b.feats.resize(n, d_s_);
        for (int i = 0; i < n; ++i) b.feats.row(i) = states[i].vec.transpose();
        return b;
    }
    b.feats = Mat::Zero(n, n_states_);
    for (int i = 0; i < n; ++i) b.feats(i, states[i].index) = 1.0;
    return b;
}

Batch FeatureCodec::q_input(const std::vector<core::StateRepr>& states,
                            const std::vector<const core::ActionChunk*>& chunks, int k) const {
    require(states.size() == chunks.size(), "FeatureCodec: state/chunk count mismatch");
    Batch b;
    const int n = static_cast<int>(states.size());
    if (mode_ == Mode::DiscreteTable) {
        b.cells.reserve(n);
        for (int i = 0; i < n; ++i) {
            long cell = states[i].index;
            for (int j = 0; j < k; ++j) cell = cell * n_actions_ + chunks[i]->ids[j];
            b.cells.push_back(cell);
        }
        return b;
    }
    if (mode_ == Mode::Continuous) {
        b.feats.resize(n, d_s_ + k * d_a_);
        for (int i = 0; i < n; ++i) {
            b.feats.block(i, 0, 1, d_s_) = states[i].vec.transpose();
            for (int j = 0; j < k; ++j)
                b.feats.block(i, d_s_ + j * d_a_, 1, d_a_) = chunks[i]->cont.row(j);
        }
        return b;
    }
    b.feats = Mat::Zero(n, n_states_ + k * n_actions_);
    for (int i = 0; i < n; ++i) {
        b.feats(i, states[i].index) = 1.0;
        for (int j = 0; j < k; ++j)
            b.feats(i, n_states_ + j * n_actions_ + chunks[i]->ids[j]) = 1.0;
    }
    return b;
}

// ---------------------------------------------------------------------------
// CriticBundle

namespace {

HeadConfig head_config(const BundleConfig& cfg, const FeatureCodec& codec, int k, bool value) {
    HeadConfig h;
    h.kind = codec.head_kind();
    h.lr = cfg.lr;
    h.tau = cfg.tau;
    h.final_scale = cfg.final_scale;
    if (h.kind == HeadKind::Table) {
        h.cells = value ? codec.v_cells() : codec.q_cells(k);
        return h;
    }
    const int in_dim = value ? codec.v_feat_dim() : codec.q_feat_dim(k);
    h.widths.push_back(in_dim);
    for (int d = 0; d < cfg.depth; ++d) h.widths.push_back(cfg.width);
    h.widths.push_back(1);
    return h;
}

}  // namespace

CriticBundle CriticBundle::make(const BundleConfig& cfg, const FeatureCodec& codec, Rng& rng) {
    CriticBundle b;
    b.scales = cfg.scales;
    const int h = cfg.scales.horizon();
    b.qh = std::make_unique<Ensemble>(head_config(cfg, codec, h, false), cfg.n_q, rng);
    b.vh = std::make_unique<Head>(head_config(cfg, codec, h, true), rng);
    for (int k : cfg.scales) {
        if (k == h) continue;
        b.qk.emplace(k, std::make_unique<Ensemble>(head_config(cfg, codec, k, false), cfg.n_q, rng));
        b.vk.emplace(k, std::make_unique<Head>(head_config(cfg, codec, k, true), rng));
    }
    return b;
}

Ensemble& CriticBundle::q_at(int k) {
    if (k == scales.horizon()) return *qh;
    auto it = qk.find(k);
    require(it != qk.end(), "CriticBundle: no critic head for scale " + std::to_string(k));
    return *it->second;
}

const Ensemble& CriticBundle::q_at(int k) const {
    return const_cast<CriticBundle*>(this)->q_at(k);
}

Head& CriticBundle::v_at(int k) {
    if (k == scales.horizon()) return *vh;
    auto it = vk.find(k);
    require(it != vk.end(), "CriticBundle: no value head for scale " + std::to_string(k));
    return *it->second;
}

const Head& CriticBundle::v_at(int k) const {
    return const_cast<CriticBundle*>(this)->v_at(k);
}

// ---------------------------------------------------------------------------
// Targets and loss steps

Vec emaq_target(const Ensemble& qh, const Batch& cand_in, int n, int n_candidates) {
    require(n_candidates >= 1, "emaq_target: empty candidate set");
    require(cand_in.rows() == n * n_candidates, "emaq_target: candidate batch shape mismatch");
    const Vec values = qh.min_ema(cand_in);
    Vec out(n);
    for (int i = 0; i < n; ++i)
        out(i) = values.segment(static_cast<long>(i) * n_candidates, n_candidates).maxCoeff();
    return out;
}

double qh_loss_step(CriticBundle& b, const Batch& q_in, const Vec& partial_return,
                    const Vec& mask, const Vec& boot_value, double gamma) {
    const int h = b.scales.horizon();
    const double gh = std::pow(gamma, h);
    const Vec target = partial_return + gh * mask.cwiseProduct(boot_value);
    return b.qh->step_mse(q_in, target);
}

double qk_loss_step(CriticBundle& b, int k, const Batch& q_in, const Vec& partial_return,
                    const Vec& mask, const Vec& boot_value, double gamma) {
    require(k != b.scales.horizon(), "qk_loss_step: use qh_loss_step for the horizon scale");
    const double gk = std::pow(gamma, k);
    const Vec target = partial_return + gk * mask.cwiseProduct(boot_value);
    return b.q_at(k).step_mse(q_in, target);
}

namespace {

double expectile_step(Head& v_head, const Batch& v_in, const Vec& target, double kappa) {
    const Vec pred = v_head.value(v_in);
    const int n = target.size();
    Vec d_out(n);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto [l, dl_du] = expectile_loss(target(i) - pred(i), kappa);
        loss += l;
        d_out(i) = -dl_du;  // d/dpred = -d/du
    }
    loss /= n;
    d_out /= n;
    v_head.step(v_in, d_out);
    return loss;
}

}  // namespace

double vh_loss_step(CriticBundle& b, const Batch& v_in, const Batch& q_in, double kappa) {
    const Vec target = b.qh->min_ema(q_in);
    return expectile_step(*b.vh, v_in, target, kappa);
}

double vk_loss_step(CriticBundle& b, int k, const Batch& v_in, const Batch& q_in, double kappa) {
    require(k != b.scales.horizon(), "vk_loss_step: use vh_loss_step for the horizon scale");
    const Vec target = b.q_at(k).min_ema(q_in);
    return expectile_step(b.v_at(k), v_in, target, kappa);
}

double mse_loss_eval(const Head& head, const Batch& in, const Vec& target, Vec* d_out) {
    const Vec pred = head.value(in);
    const Vec resid = pred - target;
    const double n = static_cast<double>(target.size());
    if (d_out) *d_out = 2.0 / n * resid;
    return resid.squaredNorm() / n;
}

double expectile_loss_eval(const Head& head, const Batch& in, const Vec& target, double kappa,
                           Vec* d_out) {
    const Vec pred = head.value(in);
    const int n = target.size();
    if (d_out) d_out->resize(n);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto [l, dl_du] = expectile_loss(target(i) - pred(i), kappa);
        loss += l;
        if (d_out) (*d_out)(i) = -dl_du / n;
    }
    return loss / n;
}

}  // namespace chunkrl::critics
