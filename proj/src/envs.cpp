#include "chunkrl/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace chunkrl::envs {

StepResult Env::step_discrete(int) {
    throw std::runtime_error(name() + ": discrete stepping not supported");
}

StepResult Env::step_continuous(const Vec&) {
    throw std::runtime_error(name() + ": continuous stepping not supported");
}

// ---------------------------------------------------------------------------
// ChainEnv

ChainEnv::ChainEnv(int length, double p_slip) : length_(length), p_slip_(p_slip) {
    require(length_ >= 3, "ChainEnv: length must be >= 3");
    require(p_slip_ >= 0.0 && p_slip_ < 0.5, "ChainEnv: p_slip must be in [0, 0.5)");
}

std::string ChainEnv::name() const {
    return "chain-L" + std::to_string(length_);
}

core::StateRepr ChainEnv::reset(std::uint64_t seed) {
    rng_ = make_rng(seed);
    state_ = 0;
    steps_ = 0;
    done_ = false;
    return core::StateRepr::discrete(state_);
}

double ChainEnv::reward(int, int, int s_next) const {
    return s_next == length_ - 1 ? 0.0 : -1.0;
}

void ChainEnv::transition_row(int s, int a, int /*t_open*/,
                              std::vector<std::pair<int, double>>& out) const {
    out.clear();
    auto clamp_move = [&](int dir) { return std::clamp(s + dir, 0, length_ - 1); };
    const int dir = (a == 1) ? 1 : -1;
    const int intended = clamp_move(dir);
    const int slipped = clamp_move(-dir);
    if (p_slip_ == 0.0) {
        out.emplace_back(intended, 1.0);
        return;
    }
    if (intended == slipped) {
        out.emplace_back(intended, 1.0);
    } else {
        out.emplace_back(intended, 1.0 - p_slip_);
        out.emplace_back(slipped, p_slip_);
    }
}

StepResult ChainEnv::step_discrete(int action) {
    require(!done_, "ChainEnv: step after termination");
    require(action == 0 || action == 1, "ChainEnv: invalid action");
    std::vector<std::pair<int, double>> row;
    transition_row(state_, action, 0, row);
    double u = uniform01(rng_);
    int next = row.back().first;
    for (const auto& [s2, p] : row) {
        if (u <= p) {
            next = s2;
            break;
        }
        u -= p;
    }
    StepResult res;
    res.reward = reward(state_, action, next);
    state_ = next;
    steps_ += 1;
    res.goal = terminal(state_);
    res.terminated = res.goal || steps_ >= horizon_cap();
    res.state = core::StateRepr::discrete(state_);
    done_ = res.terminated;
    return res;
}

// ---------------------------------------------------------------------------
// TwoPhaseGridEnv

TwoPhaseGridEnv::TwoPhaseGridEnv(GridParams params) : p_(params) {
    require(p_.width >= 3 && p_.height >= 1, "TwoPhaseGridEnv: grid too small");
    require(p_.contact_cols >= 1 && p_.contact_cols < p_.width - 1,
            "TwoPhaseGridEnv: contact region must be a proper subset");
    require(p_.p_contact > 0.0 && p_.p_contact <= 0.6, "TwoPhaseGridEnv: p_contact in (0,0.6]");
    require(p_.tau_acc > 0.0, "TwoPhaseGridEnv: tau_acc must be positive");
    require(p_.p_cap >= p_.p_contact && p_.p_cap <= 1.0,
            "TwoPhaseGridEnv: p_cap must lie in [p_contact, 1]");
    goal_ = cell(p_.width - 1, p_.height / 2);
    require(in_contact(goal_), "TwoPhaseGridEnv: goal must lie inside the contact region");
}

std::string TwoPhaseGridEnv::name() const {
    return "grid-" + std::to_string(p_.width) + "x" + std::to_string(p_.height);
}

double TwoPhaseGridEnv::perturb_prob(int t_open) const {
    return std::min(p_.p_contact * (1.0 + t_open / p_.tau_acc), p_.p_cap);
}

int TwoPhaseGridEnv::move(int s, int a) const {
    int x = x_of(s), y = y_of(s);
    switch (a) {
        case 0: x += 1; break;
        case 1: x -= 1; break;
        case 2: y += 1; break;
        case 3: y -= 1; break;
        default: throw std::runtime_error("TwoPhaseGridEnv: invalid action");
    }
    x = std::clamp(x, 0, p_.width - 1);
    y = std::clamp(y, 0, p_.height - 1);
    const int dest = cell(x, y);
    // Off-row contact cells snap the agent back to the slot entrance.
    if (is_hazard(dest)) return slot_entrance();
    return dest;
}

double TwoPhaseGridEnv::reward(int, int, int s_next) const {
    return s_next == goal_ ? 0.0 : -1.0;
}

void TwoPhaseGridEnv::transition_row(int s, int a, int t_open,
                                     std::vector<std::pair<int, double>>& out) const {
    out.clear();
    if (!in_contact(s)) {
        out.emplace_back(move(s, a), 1.0);
        return;
    }
    const double p = perturb_prob(t_open);
    // Commanded action survives w.p. 1-p; otherwise a uniform action (which
    // may coincide with the command) executes.
    std::array<double, 4> probs{};
    probs[a] += 1.0 - p;
    for (int r = 0; r < 4; ++r) probs[r] += p / 4.0;
    std::array<double, 4> mass_by_state{};  // merge duplicate destinations
    std::array<int, 4> dest{};
    for (int r = 0; r < 4; ++r) dest[r] = move(s, r);
    for (int r = 0; r < 4; ++r) {
        bool merged = false;
        for (int q = 0; q < r; ++q) {
            if (dest[q] == dest[r]) {
                mass_by_state[q] += probs[r];
                merged = true;
                break;
            }
        }
        if (!merged) mass_by_state[r] = probs[r];
    }
    for (int r = 0; r < 4; ++r) {
        bool first = true;
        for (int q = 0; q < r; ++q)
            if (dest[q] == dest[r]) first = false;
        if (first && mass_by_state[r] > 0.0) out.emplace_back(dest[r], mass_by_state[r]);
    }
}

core::StateRepr TwoPhaseGridEnv::reset(std::uint64_t seed) {
    rng_ = make_rng(seed);
    state_ = start_state();
    steps_ = 0;
    t_open_ = 0;
    done_ = false;
    return core::StateRepr::discrete(state_);
}

StepResult TwoPhaseGridEnv::step_discrete(int action) {
    require(!done_, "TwoPhaseGridEnv: step after termination");
    require(action >= 0 && action < 4, "TwoPhaseGridEnv: invalid action");
    int executed = action;
    if (in_contact(state_)) {
        if (uniform01(rng_) < perturb_prob(t_open_)) executed = uniform_int(rng_, 4);
    }
    const int next = move(state_, executed);
    StepResult res;
    res.reward = reward(state_, action, next);
    state_ = next;
    steps_ += 1;
    t_open_ += 1;
    res.goal = terminal(state_);
    res.terminated = res.goal || steps_ >= horizon_cap();
    res.state = core::StateRepr::discrete(state_);
    done_ = res.terminated;
    return res;
}

int TwoPhaseGridEnv::expert_action(int s) const {
    // Align to the goal row first, then advance; this never commands a
    // move into a hazard cell.
    const int gx = x_of(goal_), gy = y_of(goal_);
    const int x = x_of(s), y = y_of(s);
    if (y < gy) return 2;
    if (y > gy) return 3;
    if (x < gx) return 0;
    return 1;
}

int TwoPhaseGridEnv::distance(int s1, int s2) const {
    return std::abs(x_of(s1) - x_of(s2)) + std::abs(y_of(s1) - y_of(s2));
}

// ---------------------------------------------------------------------------
// PointMassEnv

PointMassEnv::PointMassEnv(PointMassParams params) : p_(params) {
    require(p_.goal_radius > 0.0, "PointMassEnv: goal radius must be positive");
    state_ = Vec::Zero(4);
}

core::StateRepr PointMassEnv::reset(std::uint64_t seed) {
    rng_ = make_rng(seed);
    state_ = Vec::Zero(4);
    state_(0) = -0.8;
    state_(1) = 0.0;
    steps_ = 0;
    done_ = false;
    return core::StateRepr::continuous(state_);
}

StepResult PointMassEnv::step_continuous(const Vec& action) {
    require(!done_, "PointMassEnv: step after termination");
    require(action.size() == 2, "PointMassEnv: action must be 2-D");
    Vec a = action.cwiseMax(-1.0).cwiseMin(1.0);

    const double dx = state_(0) - p_.goal_x;
    const double dy = state_(1) - p_.goal_y;
    const double r = std::sqrt(dx * dx + dy * dy);
    const bool contact = r >= p_.contact_r_lo && r <= p_.contact_r_hi;

    state_(2) += a(0) * p_.dt;
    state_(3) += a(1) * p_.dt;
    if (contact) {
        state_(2) += p_.drift_sigma * std::sqrt(p_.dt) * normal01(rng_);
        state_(3) += p_.drift_sigma * std::sqrt(p_.dt) * normal01(rng_);
    }
    state_(2) = std::clamp(state_(2), -p_.v_max, p_.v_max);
    state_(3) = std::clamp(state_(3), -p_.v_max, p_.v_max);
    state_(0) = std::clamp(state_(0) + state_(2) * p_.dt, -1.0, 1.0);
    state_(1) = std::clamp(state_(1) + state_(3) * p_.dt, -1.0, 1.0);
    steps_ += 1;

    const double gx = state_(0) - p_.goal_x;
    const double gy = state_(1) - p_.goal_y;
    const bool at_goal = std::sqrt(gx * gx + gy * gy) <= p_.goal_radius;

    StepResult res;
    res.reward = at_goal ? 0.0 : -1.0;
    res.goal = at_goal;
    res.terminated = at_goal || steps_ >= p_.horizon;
    res.state = core::StateRepr::continuous(state_);
    done_ = res.terminated;
    return res;
}

Vec PointMassEnv::expert_action(const Vec& s) const {
    Vec a(2);
    const double kp = 1.2, kd = 1.6;
    a(0) = kp * (p_.goal_x - s(0)) - kd * s(2);
    a(1) = kp * (p_.goal_y - s(1)) - kd * s(3);
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------
// Behavior policies and dataset generation

std::string BehaviorPolicySpec::describe() const {
    return "eps=" + format_double(epsilon) + ",persist=" + format_double(persistence) +
           ",theta_ou=" + format_double(theta_ou) + ",sigma_ou=" + format_double(sigma_ou);
}

Mat behavior_action_matrix(const DiscreteEnvModel& model, const BehaviorPolicySpec& spec) {
    require(spec.persistence == 0.0,
            "behavior_action_matrix: exact Markov form requires persistence == 0");
    require(spec.epsilon >= 0.0 && spec.epsilon <= 1.0, "behavior_action_matrix: bad epsilon");
    const int S = model.n_states();
    const int A = model.n_actions();
    Mat pi = Mat::Zero(S, A);
    for (int s = 0; s < S; ++s) {
        if (model.terminal(s)) {
            pi.row(s).setConstant(1.0 / A);  // never queried in data; uniform by convention
            continue;
        }
        const double eps = std::min(1.0, spec.epsilon * model.behavior_eps_scale(s));
        pi.row(s).setConstant(eps / A);
        pi(s, model.expert_action(s)) += 1.0 - eps;
    }
    return pi;
}

namespace {

// Sticky-random noise process over discrete actions.
struct StickyNoise {
    bool bursting = false;
    int burst_action = 0;

    int apply(int expert, double eps, const BehaviorPolicySpec& spec, int n_actions, Rng& rng) {
        if (bursting) {
            if (uniform01(rng) < spec.persistence) return burst_action;
            bursting = false;
        }
        if (uniform01(rng) < eps) {
            bursting = spec.persistence > 0.0;
            burst_action = uniform_int(rng, n_actions);
            return burst_action;
        }
        return expert;
    }
};

core::Trajectory run_discrete_episode(Env& env, const DiscreteEnvModel& model,
                                      const BehaviorPolicySpec& spec, std::uint64_t seed) {
    core::Trajectory traj;
    traj.tier = core::Tier::Discrete;
    Rng noise_rng = make_rng(derive_seed(seed, 1));
    StickyNoise noise;

    core::StateRepr s = env.reset(seed);
    traj.states.push_back(s);
    while (true) {
        env.mark_query();
        const int expert = model.expert_action(s.index);
        const double eps = std::min(1.0, spec.epsilon * model.behavior_eps_scale(s.index));
        const int a = noise.apply(expert, eps, spec, model.n_actions(), noise_rng);
        StepResult r = env.step_discrete(a);
        traj.action_ids.push_back(a);
        traj.rewards.push_back(r.reward);
        traj.states.push_back(r.state);
        s = r.state;
        if (r.terminated) {
            traj.terminal = r.goal;
            break;
        }
    }
    return traj;
}

core::Trajectory run_continuous_episode(Env& env, const BehaviorPolicySpec& spec,
                                        std::uint64_t seed) {
    auto* pm = dynamic_cast<PointMassEnv*>(&env);
    require(pm != nullptr, "generate_dataset: unknown continuous env");

    core::Trajectory traj;
    traj.tier = core::Tier::Continuous;
    Rng noise_rng = make_rng(derive_seed(seed, 1));
    const double dt = pm->params().dt;
    Vec ou = Vec::Zero(env.action_dim());

    core::StateRepr s = env.reset(seed);
    traj.states.push_back(s);
    std::vector<Vec> actions;
    while (true) {
        env.mark_query();
        // OU recursion: n' = n - theta*n*dt + sigma*sqrt(dt)*N(0, I).
        for (int i = 0; i < ou.size(); ++i) {
            ou(i) += -spec.theta_ou * ou(i) * dt +
                     spec.sigma_ou * std::sqrt(dt) * normal01(noise_rng);
        }
        Vec a = (pm->expert_action(s.vec) + ou).cwiseMax(-1.0).cwiseMin(1.0);
        StepResult r = env.step_continuous(a);
        actions.push_back(a);
        traj.rewards.push_back(r.reward);
        traj.states.push_back(r.state);
        s = r.state;
        if (r.terminated) {
            traj.terminal = r.goal;
            break;
        }
    }
    traj.actions_cont.resize(static_cast<int>(actions.size()), env.action_dim());
    for (int i = 0; i < static_cast<int>(actions.size()); ++i)
        traj.actions_cont.row(i) = actions[i].transpose();
    return traj;
}

}  // namespace

core::Dataset generate_dataset(Env& env, const BehaviorPolicySpec& spec, int n_episodes,
                               std::uint64_t seed) {
    require(n_episodes >= 1, "generate_dataset: need at least one episode");
    core::Dataset ds;
    ds.meta.env_name = env.name();
    ds.meta.behavior = spec.describe();
    ds.meta.seed = seed;

    const auto* model = dynamic_cast<const DiscreteEnvModel*>(&env);
    for (int ep = 0; ep < n_episodes; ++ep) {
        const std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(ep));
        core::Trajectory traj = (env.tier() == core::Tier::Discrete)
                                    ? run_discrete_episode(env, *model, spec, ep_seed)
                                    : run_continuous_episode(env, spec, ep_seed);
        traj.check();
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// GenericTabularModel

GenericTabularModel::GenericTabularModel(int n_states, int n_actions)
    : S_(n_states), A_(n_actions) {
    require(S_ >= 1 && A_ >= 1, "GenericTabularModel: empty spaces");
    trans_.assign(S_, std::vector<std::vector<std::pair<int, double>>>(A_));
    reward_.assign(S_, std::vector<std::vector<double>>(A_, std::vector<double>(S_, 0.0)));
    terminal_.assign(S_, false);
    expert_.assign(S_, 0);
}

void GenericTabularModel::set_transition(int s, int a, std::vector<std::pair<int, double>> rows) {
    double total = 0.0;
    for (const auto& [s2, p] : rows) {
        require(s2 >= 0 && s2 < S_ && p >= 0.0, "GenericTabularModel: bad transition row");
        total += p;
    }
    require(std::abs(total - 1.0) < 1e-12, "GenericTabularModel: transition row must sum to 1");
    trans_[s][a] = std::move(rows);
}

void GenericTabularModel::set_reward(int s, int a, int s_next, double r) {
    reward_[s][a][s_next] = r;
}

void GenericTabularModel::set_terminal(int s, bool flag) { terminal_[s] = flag; }

void GenericTabularModel::set_expert(int s, int a) { expert_[s] = a; }

double GenericTabularModel::reward(int s, int a, int s_next) const {
    return reward_[s][a][s_next];
}

void GenericTabularModel::transition_row(int s, int a, int /*t_open*/,
                                         std::vector<std::pair<int, double>>& out) const {
    require(!trans_[s][a].empty(), "GenericTabularModel: transition not set");
    out = trans_[s][a];
}

}  // namespace chunkrl::envs
