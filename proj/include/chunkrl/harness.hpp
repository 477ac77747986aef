#pragma once

// CLI-facing orchestration: JSON run configs with strict validation,
// environment construction, experiment pipelines, the ablation runner,
// the theorem-verification runner, and plot emission.

#include "chunkrl/envs.hpp"
#include "chunkrl/theory.hpp"
#include "chunkrl/trainer.hpp"

#include <memory>
#include <string>
#include <vector>

namespace chunkrl::harness {

// Validation failure; `pointer` is a JSON pointer to the offending key.
struct ConfigError : std::runtime_error {
    std::string pointer;
    ConfigError(std::string ptr, const std::string& message)
        : std::runtime_error("config error at " + ptr + ": " + message),
          pointer(std::move(ptr)) {}
};

struct EnvSpec {
    std::string kind;  // chain | grid | pointmass
    int chain_length = 15;
    double chain_p_slip = 0.0;
    envs::GridParams grid;
    envs::PointMassParams pointmass;
};

struct DataSpec {
    int n_episodes = 500;
    envs::BehaviorPolicySpec behavior;
    std::string path;  // optional: load instead of generating
};

struct AblationSpec {
    std::string which = "criterion";
    int seeds = 4;
    std::vector<double> kappas = {0.5, 0.7, 0.9, 0.93, 0.95, 0.99};
    std::vector<int> h_values = {5, 10};
};

struct RunConfig {
    EnvSpec env;
    trainer::TrainConfig train;
    DataSpec data;
    AblationSpec ablation;
    std::string output_dir = "out";
    std::string profile = "desk";
    std::uint64_t seed = 0;
    std::string resolved_json;  // echoed into output_dir
};

// Parses and validates; unknown keys are rejected with a JSON pointer.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

std::unique_ptr<envs::Env> make_env(const EnvSpec& spec);

// Returns the dataset: loaded from data.path when given, generated
// deterministically from the config seed otherwise.
core::Dataset obtain_dataset(const RunConfig& cfg, envs::Env& env);

void echo_config(const RunConfig& cfg);

// --- pipelines (each returns a process exit code) --------------------------

int cmd_gen_data(const RunConfig& cfg);
int cmd_oracle(const RunConfig& cfg);
int cmd_train_offline(const RunConfig& cfg);
int cmd_finetune(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);
int cmd_ablate(const RunConfig& cfg, const std::string& which_override = "");
int cmd_verify_theory(const RunConfig& cfg);
int cmd_plot(const RunConfig& cfg, const std::string& input, const std::string& kind);

// Ablation arms for one axis; exposed for tests.
struct AblationArm {
    std::string name;
    trainer::TrainConfig train;
};
std::vector<AblationArm> ablation_arms(const RunConfig& cfg, const std::string& which);

int cli_main(int argc, char** argv);

}  // namespace chunkrl::harness
