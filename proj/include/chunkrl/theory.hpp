#pragma once

// Executable theorem checks over exact tabular instances: selector
// soundness under bounded noise, noise immunity in low-value regions,
// value dominance of the adaptive policy, bootstrap-error bounds, value
// flow monotonicity, the AOLC reduction, and the chunk-value telescoping
// identity.

#include "chunkrl/envs.hpp"
#include "chunkrl/oracle.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace chunkrl::theory {

struct TheoryCheck {
    std::string name;
    std::string instance;  // instance hash key
    double bound = 0.0;
    double measured = 0.0;
    bool pass = false;
    double margin = 0.0;
};

struct TheoryReport {
    std::vector<TheoryCheck> checks;
    std::map<std::string, std::string> notes;
    bool all_pass() const;
};

// A tabular test instance: model + Markov behavior + scale set.
struct Instance {
    std::string name;
    std::shared_ptr<envs::DiscreteEnvModel> model;
    Mat behavior_pi;
    core::ScaleSet scales = core::ScaleSet::of({1});
    double gamma = 0.99;
    double kappa = 0.9;

    std::string hash_key() const;
};

// Canonical instances used by verify-theory and the acceptance suite:
// two chains and two two-phase grids.
std::vector<Instance> standard_instances();

// Zero-reward corridor ending in an unavoidable -eps boundary; every value
// lies in [-eps, 0], which is the low-value-region premise of the noise
// immunity proposition.
Instance low_value_region_instance(double eps, int length = 30);

// Terminal-free ring; the value-flow monotonicity assertion needs an
// instance without absorption.
Instance continuing_conveyor_instance();

bool has_separable_state(const envs::DiscreteEnvModel& model, const oracle::OracleTables& t);

// --- individual checks -----------------------------------------------------

// Advantage argmax equals k-dagger at every state with Delta(s) > 0, for
// `random_draws` random and one adversarial per-table noise pattern with
// sup-norm budget just under Delta(s) * gamma^{k_min} / 2.
TheoryCheck check_selector_soundness(const Instance& inst, const oracle::OracleTables& tables,
                                     int random_draws, Rng& rng);

// max |delta_k(s)| <= eps + 2 sigma over draws of sigma-bounded noise on
// the discount-normalized tables.
TheoryCheck check_noise_immunity(const Instance& region, const oracle::OracleTables& tables,
                                 double eps, double sigma, int draws, Rng& rng);

// Exact policy evaluation: adaptive >= fixed-k - 1e-9 pointwise for all k.
TheoryCheck check_dominance(const Instance& inst, const oracle::OracleTables& tables);
// Strict improvement at >= 1 (state, scale) pair.
TheoryCheck check_strict_dominance(const Instance& inst, const oracle::OracleTables& tables);

// Exact bootstrap fixed points under a uniform V* perturbation eps_h obey
// ||Qk - Qk*|| <= gamma^k/(1-gamma^k) eps_h per scale.
TheoryCheck check_bootstrap_bound(const Instance& inst, const oracle::OracleTables& tables,
                                  double eps_h);

// Value flow monotonicity across scale pairs with measured fitting
// residuals (injected, bounded by eps_fit).
TheoryCheck check_value_flow(const Instance& inst, const oracle::OracleTables& tables,
                             double eps_h, double eps_fit, Rng& rng);

// eps_h = 0 collapses the fixed point onto Q^{k,*} exactly.
TheoryCheck check_suboptimality_zero(const Instance& inst, const oracle::OracleTables& tables);

// AOLC with a constant selection function reproduces the per-scale OLC
// check computed by an independent straight-line enumeration.
TheoryCheck check_aolc_reduction(const Instance& inst, int k);

// Q^{h,*}(s,c) = R_{0:k} + gamma^k * (expected continuation) at every
// split point k in the scale set.
TheoryCheck check_telescoping(const Instance& inst, const oracle::OracleTables& tables);

// Full battery over one instance.
std::vector<TheoryCheck> run_instance_checks(const Instance& inst, Rng& rng);

TheoryReport verify_theory(const std::vector<Instance>& instances, std::uint64_t seed);

// Exact open-loop chunk value recomputed from a rollout that starts at a
// given open-loop offset; shared by the telescoping and bound checks.
double chunk_value_exact(const envs::DiscreteEnvModel& model, int s0,
                         const std::vector<int>& chunk, double gamma, const Vec& boot_values,
                         int t_open_offset = 0);

}  // namespace chunkrl::theory
