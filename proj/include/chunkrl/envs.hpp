#pragma once

// Synthetic sparse-reward environments and behavior-policy dataset
// generators. All built-in environments use the -1/0 sparse convention:
// a step that arrives at the goal pays 0 and terminates, every other step
// pays -1. Horizon-capped endings are not terminal (no zero bootstrap).

#include "chunkrl/core.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace chunkrl::envs {

struct StepResult {
    core::StateRepr state;
    double reward = 0.0;
    bool terminated = false;  // goal reached or horizon cap hit
    bool goal = false;        // goal reached (true terminal for bootstrapping)
};

class Env {
public:
    virtual ~Env() = default;
    virtual core::Tier tier() const = 0;
    virtual std::string name() const = 0;
    virtual int horizon_cap() const = 0;

    virtual core::StateRepr reset(std::uint64_t seed) = 0;
    virtual StepResult step_discrete(int action);
    virtual StepResult step_continuous(const Vec& action);

    // Called whenever the policy is (re)queried. Resets the open-loop step
    // counter that drives contact-noise accumulation.
    virtual void mark_query() {}

    virtual int action_count() const { return 0; }   // discrete tier
    virtual int action_dim() const { return 0; }     // continuous tier
    virtual int state_dim() const { return 0; }      // continuous tier

protected:
    bool done_ = true;
    int steps_ = 0;
};

// Exact-model view of a discrete environment, consumed by the tabular
// oracle. transition_row() depends on t_open, the number of steps executed
// since the last policy query, which is how open-loop degradation enters
// the chunk-value expectations.
class DiscreteEnvModel {
public:
    virtual ~DiscreteEnvModel() = default;
    virtual int n_states() const = 0;
    virtual int n_actions() const = 0;
    virtual bool terminal(int s) const = 0;
    virtual double reward(int s, int a, int s_next) const = 0;
    virtual void transition_row(int s, int a, int t_open,
                                std::vector<std::pair<int, double>>& out) const = 0;
    virtual int expert_action(int s) const = 0;
    // Local multiplier on the behavior noise level; contact-heavy regions
    // report > 1 because demonstrations wiggle there.
    virtual double behavior_eps_scale(int /*s*/) const { return 1.0; }
    virtual int distance(int s1, int s2) const = 0;  // native metric
    virtual int start_state() const = 0;
    virtual std::string name() const = 0;
};

// States 0..L-1, goal at L-1, actions {0: left, 1: right}. With
// probability p_slip the commanded move is inverted. Walls clamp.
class ChainEnv : public Env, public DiscreteEnvModel {
public:
    ChainEnv(int length, double p_slip = 0.0);

    core::Tier tier() const override { return core::Tier::Discrete; }
    std::string name() const override;
    int horizon_cap() const override { return 4 * length_; }
    core::StateRepr reset(std::uint64_t seed) override;
    StepResult step_discrete(int action) override;
    int action_count() const override { return 2; }

    int n_states() const override { return length_; }
    int n_actions() const override { return 2; }
    bool terminal(int s) const override { return s == length_ - 1; }
    double reward(int s, int a, int s_next) const override;
    void transition_row(int s, int a, int t_open,
                        std::vector<std::pair<int, double>>& out) const override;
    int expert_action(int) const override { return 1; }
    int distance(int s1, int s2) const override { return std::abs(s1 - s2); }
    int start_state() const override { return 0; }

    int length() const { return length_; }

private:
    int length_;
    double p_slip_;
    int state_ = 0;
    Rng rng_;
};

struct GridParams {
    int width = 9;
    int height = 5;
    int contact_cols = 2;      // right-most columns form the contact region
    double p_contact = 0.35;   // base per-step perturbation probability
    double tau_acc = 0.5;      // open-loop accumulation time constant
    double p_cap = 0.95;
    bool hazard = true;        // off-axis contact cells snap back to the entrance
    double contact_noise_scale = 2.8;  // demos wiggle inside the slot
};

// W x H grid split into a free-space corridor and a contact region that
// contains the goal. In contact cells the commanded action is replaced by
// a uniformly random one with probability
//   p(t_open) = min(p_contact * (1 + t_open / tau_acc), p_cap),
// so committing to long open-loop chunks near the goal degrades, while
// per-step re-querying keeps the perturbation at its base rate.
//
// With `hazard` on, the contact region is an insertion slot: only the
// goal row of the strip is passable, and moving into any off-row strip
// cell snaps the agent back to the slot entrance. A single wrong step in
// contact then carries a persistent cost, which is what makes per-step
// re-querying genuinely more valuable than committed chunks there.
class TwoPhaseGridEnv : public Env, public DiscreteEnvModel {
public:
    explicit TwoPhaseGridEnv(GridParams params);

    core::Tier tier() const override { return core::Tier::Discrete; }
    std::string name() const override;
    int horizon_cap() const override { return 4 * (p_.width + p_.height); }
    core::StateRepr reset(std::uint64_t seed) override;
    StepResult step_discrete(int action) override;
    void mark_query() override { t_open_ = 0; }
    int action_count() const override { return 4; }

    int n_states() const override { return p_.width * p_.height; }
    int n_actions() const override { return 4; }
    bool terminal(int s) const override { return s == goal_; }
    double reward(int s, int a, int s_next) const override;
    void transition_row(int s, int a, int t_open,
                        std::vector<std::pair<int, double>>& out) const override;
    int expert_action(int s) const override;
    double behavior_eps_scale(int s) const override {
        return in_contact(s) ? p_.contact_noise_scale : 1.0;
    }
    int distance(int s1, int s2) const override;
    int start_state() const override { return cell(0, p_.height / 2); }
    std::string name_model() const { return name(); }

    bool in_contact(int s) const { return x_of(s) >= p_.width - p_.contact_cols; }
    bool is_hazard(int s) const {
        return p_.hazard && in_contact(s) && y_of(s) != p_.height / 2;
    }
    // Hazard cells are never occupied; region statistics go over these.
    bool reachable(int s) const { return !is_hazard(s); }
    int slot_entrance() const { return cell(p_.width - p_.contact_cols - 1, p_.height / 2); }
    double perturb_prob(int t_open) const;
    int cell(int x, int y) const { return y * p_.width + x; }
    int x_of(int s) const { return s % p_.width; }
    int y_of(int s) const { return s / p_.width; }
    int goal_state() const { return goal_; }
    const GridParams& params() const { return p_; }

private:
    int move(int s, int a) const;

    GridParams p_;
    int goal_ = 0;
    int state_ = 0;
    int t_open_ = 0;
    Rng rng_;
};

struct PointMassParams {
    double dt = 0.1;
    double v_max = 1.0;
    double goal_x = 0.8;
    double goal_y = 0.0;
    double goal_radius = 0.1;
    double contact_r_lo = 0.15;  // drift annulus around the goal
    double contact_r_hi = 0.4;
    double drift_sigma = 0.15;
    int horizon = 200;
};

// 2-D double integrator: state (px, py, vx, vy), acceleration actions
// clipped to [-1,1]^2. Inside the contact annulus an observation-
// independent velocity drift is injected each step.
class PointMassEnv : public Env {
public:
    explicit PointMassEnv(PointMassParams params = {});

    core::Tier tier() const override { return core::Tier::Continuous; }
    std::string name() const override { return "pointmass"; }
    int horizon_cap() const override { return p_.horizon; }
    core::StateRepr reset(std::uint64_t seed) override;
    StepResult step_continuous(const Vec& action) override;
    int action_dim() const override { return 2; }
    int state_dim() const override { return 4; }

    Vec expert_action(const Vec& state) const;
    const PointMassParams& params() const { return p_; }

private:
    PointMassParams p_;
    Vec state_;
    Rng rng_;
};

// Scripted expert plus temporally correlated noise. Discrete tier:
// sticky-random bursts (enter a random-action burst w.p. epsilon, stay in
// it w.p. persistence). Continuous tier: Ornstein-Uhlenbeck noise added to
// the expert action.
struct BehaviorPolicySpec {
    double epsilon = 0.2;      // discrete: burst entry probability
    double persistence = 0.0;  // discrete: burst continuation probability
    double theta_ou = 1.0;     // continuous
    double sigma_ou = 0.0;

    std::string describe() const;
};

// Exact per-state action distribution of the discrete behavior policy.
// Only defined for the memoryless case (persistence == 0); the tabular
// oracle needs this Markov form.
Mat behavior_action_matrix(const DiscreteEnvModel& model, const BehaviorPolicySpec& spec);

core::Dataset generate_dataset(Env& env, const BehaviorPolicySpec& spec, int n_episodes,
                               std::uint64_t seed);

// Fully specified tabular MDP for hand-built test instances. The generic
// path accepts arbitrary rewards (built-in envs stay -1/0).
class GenericTabularModel : public DiscreteEnvModel {
public:
    GenericTabularModel(int n_states, int n_actions);

    void set_transition(int s, int a, std::vector<std::pair<int, double>> rows);
    void set_reward(int s, int a, int s_next, double r);
    void set_terminal(int s, bool flag);
    void set_expert(int s, int a);
    void set_start(int s) { start_ = s; }

    int n_states() const override { return S_; }
    int n_actions() const override { return A_; }
    bool terminal(int s) const override { return terminal_[s]; }
    double reward(int s, int a, int s_next) const override;
    void transition_row(int s, int a, int t_open,
                        std::vector<std::pair<int, double>>& out) const override;
    int expert_action(int s) const override { return expert_[s]; }
    int distance(int s1, int s2) const override { return std::abs(s1 - s2); }
    int start_state() const override { return start_; }
    std::string name() const override { return "generic"; }

private:
    int S_, A_, start_ = 0;
    std::vector<std::vector<std::vector<std::pair<int, double>>>> trans_;  // [s][a]
    std::vector<std::vector<std::vector<double>>> reward_;                 // [s][a][s']
    std::vector<bool> terminal_;
    std::vector<int> expert_;
};

}  // namespace chunkrl::envs
