#pragma once

// The four training losses and their targets: long-horizon EMAQ critic,
// expectile value heads, and partial critics bootstrapped from the EMA
// shadow of V^h. Heads come in two parameterizations behind one interface:
// MLPs over feature vectors (continuous tier, or one-hot encodings) and
// flat tables indexed by (state, chunk) cells for exact-setting
// experiments on discrete environments.

#include "chunkrl/core.hpp"
#include "chunkrl/nn.hpp"

#include <map>
#include <memory>
#include <vector>

namespace chunkrl::critics {

// f_exp(u) = |kappa - 1[u<0]| u^2, with its derivative in u.
std::pair<double, double> expectile_loss(double u, double kappa);

enum class HeadKind { Mlp, Table };

struct HeadConfig {
    HeadKind kind = HeadKind::Mlp;
    std::vector<int> widths;  // mlp, ends with output width 1
    long cells = 0;           // table
    double lr = 3e-4;
    double weight_decay = 0.0;
    double tau = 0.005;
    double final_scale = 0.01;
};

// One batch of head inputs; the active member depends on the head kind.
struct Batch {
    Mat feats;
    std::vector<long> cells;

    int rows() const {
        return cells.empty() ? static_cast<int>(feats.rows())
                             : static_cast<int>(cells.size());
    }
};

// A scalar-output function approximator with its optimizer state and EMA
// shadow. Tables reuse the DenseNet parameter/optimizer machinery (a table
// is a bias-free single linear layer) but gather/scatter by cell index
// instead of doing one-hot matmuls.
class Head {
public:
    Head(const HeadConfig& cfg, Rng& rng);

    Vec value(const Batch& in) const;
    Vec ema_value(const Batch& in) const;

    // Backprops d loss / d output, applies one AdamW step, then updates
    // the EMA shadow.
    void step(const Batch& in, const Vec& d_out);

    // Gradients only, no update; used by the finite-difference checks.
    nn::Grads grads(const Batch& in, const Vec& d_out) const;

    nn::DenseNet& net() { return net_; }
    const nn::DenseNet& net() const { return net_; }
    nn::DenseNet& shadow() { return ema_.shadow; }
    const nn::DenseNet& shadow() const { return ema_.shadow; }
    void sync_shadow() { ema_.shadow = net_; }
    void set_lr(double lr) { opt_.lr = lr; }
    HeadKind kind() const { return cfg_.kind; }

private:
    Vec eval(const nn::DenseNet& net, const Batch& in) const;

    HeadConfig cfg_;
    nn::DenseNet net_;
    nn::AdamWState opt_;
    nn::EmaTarget ema_;
};

// Small critic ensemble; targets aggregate with an elementwise min.
class Ensemble {
public:
    Ensemble(const HeadConfig& cfg, int members, Rng& rng);

    Vec min_value(const Batch& in) const;
    Vec min_ema(const Batch& in) const;
    // MSE toward a shared target; returns the mean squared error of the
    // first member (the logged quantity).
    double step_mse(const Batch& in, const Vec& target);

    std::vector<Head>& members() { return members_; }
    const std::vector<Head>& members() const { return members_; }
    void set_lr(double lr) {
        for (auto& m : members_) m.set_lr(lr);
    }

private:
    std::vector<Head> members_;
};

// Builds head inputs from states and chunk prefixes for each tier.
class FeatureCodec {
public:
    enum class Mode { Continuous, DiscreteTable, DiscreteOneHot };

    static FeatureCodec continuous(int d_s, int d_a);
    static FeatureCodec discrete_table(int n_states, int n_actions);
    static FeatureCodec discrete_onehot(int n_states, int n_actions);

    Mode mode() const { return mode_; }
    HeadKind head_kind() const {
        return mode_ == Mode::DiscreteTable ? HeadKind::Table : HeadKind::Mlp;
    }
    int q_feat_dim(int k) const;
    long q_cells(int k) const;
    int v_feat_dim() const;
    long v_cells() const;

    Batch v_input(const std::vector<core::StateRepr>& states) const;
    // One row per (state, k-prefix of the row's chunk).
    Batch q_input(const std::vector<core::StateRepr>& states,
                  const std::vector<const core::ActionChunk*>& chunks, int k) const;

private:
    Mode mode_ = Mode::Continuous;
    int d_s_ = 0, d_a_ = 0;
    int n_states_ = 0, n_actions_ = 0;
};

struct BundleConfig {
    core::ScaleSet scales = core::ScaleSet::of({1});
    int n_q = 2;
    double lr = 3e-4;
    double tau = 0.005;
    int width = 64;
    int depth = 2;  // hidden layers for mlp heads
    double final_scale = 0.01;
};

// Q^h with its per-scale partial critics and expectile baselines, each
// with a live EMA shadow.
struct CriticBundle {
    core::ScaleSet scales = core::ScaleSet::of({1});
    std::unique_ptr<Ensemble> qh;
    std::map<int, std::unique_ptr<Ensemble>> qk;  // k in K \ {h}
    std::unique_ptr<Head> vh;
    std::map<int, std::unique_ptr<Head>> vk;

    static CriticBundle make(const BundleConfig& cfg, const FeatureCodec& codec, Rng& rng);

    Ensemble& q_at(int k);
    const Ensemble& q_at(int k) const;
    Head& v_at(int k);
    const Head& v_at(int k) const;
};

// max over candidates of the ensemble-min EMA critic value. cand_in holds
// n*N rows grouped candidate-major within each batch row.
Vec emaq_target(const Ensemble& qh, const Batch& cand_in, int n, int n_candidates);

// One optimization step of each loss. Targets come from EMA shadows only;
// gradients flow into the named head alone. Each returns the scalar loss.
double qh_loss_step(CriticBundle& b, const Batch& q_in, const Vec& partial_return,
                    const Vec& mask, const Vec& boot_value, double gamma);
double vh_loss_step(CriticBundle& b, const Batch& v_in, const Batch& q_in, double kappa);
double qk_loss_step(CriticBundle& b, int k, const Batch& q_in, const Vec& partial_return,
                    const Vec& mask, const Vec& boot_value, double gamma);
double vk_loss_step(CriticBundle& b, int k, const Batch& v_in, const Batch& q_in, double kappa);

// Loss evaluation without stepping (finite-difference harness support).
double mse_loss_eval(const Head& head, const Batch& in, const Vec& target, Vec* d_out = nullptr);
double expectile_loss_eval(const Head& head, const Batch& in, const Vec& target, double kappa,
                           Vec* d_out = nullptr);

}  // namespace chunkrl::critics
