#include "chunkrl/harness.hpp"

#include "chunkrl/io.hpp"
#include "chunkrl/svg.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace chunkrl::harness {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::string& pointer,
                         const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key))
            throw ConfigError(pointer + "/" + key, "unknown key");
    }
}

double get_number(const json& obj, const std::string& pointer, const std::string& key,
                  double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(pointer + "/" + key, "expected a number");
    return v.get<double>();
}

long get_int(const json& obj, const std::string& pointer, const std::string& key,
             long fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) throw ConfigError(pointer + "/" + key, "expected an integer");
    return v.get<long>();
}

bool get_bool(const json& obj, const std::string& pointer, const std::string& key,
              bool fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError(pointer + "/" + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& pointer, const std::string& key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError(pointer + "/" + key, "expected a string");
    return v.get<std::string>();
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("/", "top level must be an object");
    reject_unknown_keys(root, "",
                        {"env", "train", "scales", "selector", "data", "ablation", "output_dir",
                         "seed", "profile"});

    RunConfig cfg;

    // Profile first; explicit keys override its values.
    cfg.profile = get_string(root, "", "profile", "desk");
    if (cfg.profile == "desk") {
        cfg.train.width = 64;
        cfg.train.depth = 2;
        cfg.train.offline_steps = 20000;
        cfg.train.online_env_steps = 10000;
        cfg.train.batch_size = 128;
    } else if (cfg.profile == "paper-defaults") {
        cfg.train.width = 512;
        cfg.train.depth = 4;
        cfg.train.offline_steps = 1000000;
        cfg.train.online_env_steps = 1000000;
        cfg.train.batch_size = 256;
    } else {
        throw ConfigError("/profile", "expected 'desk' or 'paper-defaults'");
    }

    if (!root.contains("env")) throw ConfigError("/env", "missing required key");
    const json& env = root.at("env");
    if (!env.is_object()) throw ConfigError("/env", "expected an object");
    reject_unknown_keys(env, "/env", {"kind", "params"});
    if (!env.contains("kind")) throw ConfigError("/env/kind", "missing required key");
    cfg.env.kind = get_string(env, "/env", "kind", "");
    const json params = env.value("params", json::object());
    if (!params.is_object()) throw ConfigError("/env/params", "expected an object");

    if (cfg.env.kind == "chain") {
        reject_unknown_keys(params, "/env/params", {"length", "p_slip"});
        cfg.env.chain_length = static_cast<int>(get_int(params, "/env/params", "length", 15));
        cfg.env.chain_p_slip = get_number(params, "/env/params", "p_slip", 0.0);
    } else if (cfg.env.kind == "grid") {
        reject_unknown_keys(params, "/env/params",
                            {"width", "height", "contact_cols", "p_contact", "tau_acc"});
        cfg.env.grid.width = static_cast<int>(get_int(params, "/env/params", "width", 9));
        cfg.env.grid.height = static_cast<int>(get_int(params, "/env/params", "height", 5));
        cfg.env.grid.contact_cols =
            static_cast<int>(get_int(params, "/env/params", "contact_cols", 2));
        cfg.env.grid.p_contact = get_number(params, "/env/params", "p_contact", 0.35);
        cfg.env.grid.tau_acc = get_number(params, "/env/params", "tau_acc", 1.0);
    } else if (cfg.env.kind == "pointmass") {
        reject_unknown_keys(params, "/env/params", {"drift_sigma", "goal_radius", "horizon"});
        cfg.env.pointmass.drift_sigma =
            get_number(params, "/env/params", "drift_sigma", cfg.env.pointmass.drift_sigma);
        cfg.env.pointmass.goal_radius =
            get_number(params, "/env/params", "goal_radius", cfg.env.pointmass.goal_radius);
        cfg.env.pointmass.horizon = static_cast<int>(
            get_int(params, "/env/params", "horizon", cfg.env.pointmass.horizon));
    } else {
        throw ConfigError("/env/kind", "expected 'chain', 'grid' or 'pointmass'");
    }

    if (root.contains("scales")) {
        const json& scales = root.at("scales");
        if (!scales.is_object()) throw ConfigError("/scales", "expected an object");
        reject_unknown_keys(scales, "/scales", {"k_univ", "h"});
        if (scales.contains("k_univ")) {
            if (!scales.at("k_univ").is_array())
                throw ConfigError("/scales/k_univ", "expected an array of integers");
            cfg.train.k_univ.clear();
            for (const auto& v : scales.at("k_univ")) {
                if (!v.is_number_integer())
                    throw ConfigError("/scales/k_univ", "expected an array of integers");
                cfg.train.k_univ.push_back(v.get<int>());
            }
        }
        cfg.train.h = static_cast<int>(get_int(scales, "/scales", "h", cfg.train.h));
    }

    if (root.contains("selector")) {
        const json& sel = root.at("selector");
        if (!sel.is_object()) throw ConfigError("/selector", "expected an object");
        reject_unknown_keys(sel, "/selector", {"variant", "zscore", "eps_z"});
        cfg.train.selector = get_string(sel, "/selector", "variant", cfg.train.selector);
        cfg.train.zscore = get_bool(sel, "/selector", "zscore", cfg.train.zscore);
        cfg.train.eps_z = get_number(sel, "/selector", "eps_z", cfg.train.eps_z);
        const std::string& v = cfg.train.selector;
        const bool fixed = v.rfind("fixed:", 0) == 0;
        if (v != "aqc" && v != "raw_q" && v != "discount_corrected" && v != "random" && !fixed)
            throw ConfigError("/selector/variant",
                              "expected aqc | raw_q | discount_corrected | random | fixed:<k>");
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        if (!t.is_object()) throw ConfigError("/train", "expected an object");
        reject_unknown_keys(
            t, "/train",
            {"gamma", "kappa_v", "n_candidates", "batch_size", "lr", "ema_tau", "utd_ratio",
             "flow_steps", "offline_steps", "online_env_steps", "warmup_steps", "mix_ratio",
             "stride", "n_q", "buffer_capacity", "log_interval", "eval_interval",
             "eval_episodes", "width", "depth", "table_heads", "bootstrap_source"});
        auto& tc = cfg.train;
        tc.gamma = get_number(t, "/train", "gamma", tc.gamma);
        tc.kappa_v = get_number(t, "/train", "kappa_v", tc.kappa_v);
        tc.n_candidates = static_cast<int>(get_int(t, "/train", "n_candidates", tc.n_candidates));
        tc.batch_size = static_cast<int>(get_int(t, "/train", "batch_size", tc.batch_size));
        tc.lr = get_number(t, "/train", "lr", tc.lr);
        tc.ema_tau = get_number(t, "/train", "ema_tau", tc.ema_tau);
        tc.utd_ratio = static_cast<int>(get_int(t, "/train", "utd_ratio", tc.utd_ratio));
        tc.flow_steps = static_cast<int>(get_int(t, "/train", "flow_steps", tc.flow_steps));
        tc.offline_steps = get_int(t, "/train", "offline_steps", tc.offline_steps);
        tc.online_env_steps = get_int(t, "/train", "online_env_steps", tc.online_env_steps);
        tc.warmup_steps = get_int(t, "/train", "warmup_steps", tc.warmup_steps);
        tc.mix_ratio = get_number(t, "/train", "mix_ratio", tc.mix_ratio);
        tc.stride = static_cast<int>(get_int(t, "/train", "stride", tc.stride));
        tc.n_q = static_cast<int>(get_int(t, "/train", "n_q", tc.n_q));
        tc.buffer_capacity = get_int(t, "/train", "buffer_capacity", tc.buffer_capacity);
        tc.log_interval = static_cast<int>(get_int(t, "/train", "log_interval", tc.log_interval));
        tc.eval_interval =
            static_cast<int>(get_int(t, "/train", "eval_interval", tc.eval_interval));
        tc.eval_episodes =
            static_cast<int>(get_int(t, "/train", "eval_episodes", tc.eval_episodes));
        tc.width = static_cast<int>(get_int(t, "/train", "width", tc.width));
        tc.depth = static_cast<int>(get_int(t, "/train", "depth", tc.depth));
        tc.table_heads = get_bool(t, "/train", "table_heads", tc.table_heads);
        tc.bootstrap_source = get_string(t, "/train", "bootstrap_source", tc.bootstrap_source);
        if (tc.bootstrap_source != "vh" && tc.bootstrap_source != "v1" &&
            tc.bootstrap_source != "qh_direct")
            throw ConfigError("/train/bootstrap_source", "expected vh | v1 | qh_direct");
    }

    if (root.contains("data")) {
        const json& d = root.at("data");
        if (!d.is_object()) throw ConfigError("/data", "expected an object");
        reject_unknown_keys(d, "/data",
                            {"n_episodes", "epsilon", "persistence", "theta_ou", "sigma_ou",
                             "path"});
        cfg.data.n_episodes =
            static_cast<int>(get_int(d, "/data", "n_episodes", cfg.data.n_episodes));
        cfg.data.behavior.epsilon = get_number(d, "/data", "epsilon", cfg.data.behavior.epsilon);
        cfg.data.behavior.persistence =
            get_number(d, "/data", "persistence", cfg.data.behavior.persistence);
        cfg.data.behavior.theta_ou =
            get_number(d, "/data", "theta_ou", cfg.data.behavior.theta_ou);
        cfg.data.behavior.sigma_ou =
            get_number(d, "/data", "sigma_ou", cfg.data.behavior.sigma_ou);
        cfg.data.path = get_string(d, "/data", "path", "");
    }

    if (root.contains("ablation")) {
        const json& a = root.at("ablation");
        if (!a.is_object()) throw ConfigError("/ablation", "expected an object");
        reject_unknown_keys(a, "/ablation", {"which", "seeds", "kappas", "h_values"});
        cfg.ablation.which = get_string(a, "/ablation", "which", cfg.ablation.which);
        cfg.ablation.seeds = static_cast<int>(get_int(a, "/ablation", "seeds", cfg.ablation.seeds));
        if (a.contains("kappas")) {
            cfg.ablation.kappas.clear();
            for (const auto& v : a.at("kappas")) cfg.ablation.kappas.push_back(v.get<double>());
        }
        if (a.contains("h_values")) {
            cfg.ablation.h_values.clear();
            for (const auto& v : a.at("h_values")) cfg.ablation.h_values.push_back(v.get<int>());
        }
    }

    cfg.output_dir = get_string(root, "", "output_dir", "out");
    if (const char* env_out = std::getenv("CHUNKRL_OUTPUT")) cfg.output_dir = env_out;
    cfg.seed = static_cast<std::uint64_t>(get_int(root, "", "seed", 0));
    cfg.train.seed = cfg.seed;

    // Resolved echo: the parsed tree plus the resolved profile values.
    json resolved = root;
    resolved["output_dir"] = cfg.output_dir;
    resolved["resolved_train"] = {{"width", cfg.train.width},
                                  {"depth", cfg.train.depth},
                                  {"offline_steps", cfg.train.offline_steps},
                                  {"online_env_steps", cfg.train.online_env_steps},
                                  {"batch_size", cfg.train.batch_size},
                                  {"selector", cfg.train.selector},
                                  {"h", cfg.train.h},
                                  {"gamma", cfg.train.gamma},
                                  {"kappa_v", cfg.train.kappa_v}};
    cfg.resolved_json = resolved.dump(2) + "\n";
    return cfg;
}

RunConfig load_config(const std::string& path) {
    return parse_config(io::read_file(path));
}

std::unique_ptr<envs::Env> make_env(const EnvSpec& spec) {
    if (spec.kind == "chain")
        return std::make_unique<envs::ChainEnv>(spec.chain_length, spec.chain_p_slip);
    if (spec.kind == "grid") return std::make_unique<envs::TwoPhaseGridEnv>(spec.grid);
    if (spec.kind == "pointmass") return std::make_unique<envs::PointMassEnv>(spec.pointmass);
    throw ConfigError("/env/kind", "unknown environment kind '" + spec.kind + "'");
}

core::Dataset obtain_dataset(const RunConfig& cfg, envs::Env& env) {
    if (!cfg.data.path.empty()) return io::load_dataset(cfg.data.path);
    return envs::generate_dataset(env, cfg.data.behavior, cfg.data.n_episodes,
                                  derive_seed(cfg.seed, 0xDA7A));
}

void echo_config(const RunConfig& cfg) {
    io::write_file(cfg.output_dir + "/resolved_config.json", cfg.resolved_json);
}

// ---------------------------------------------------------------------------
// Pipelines

int cmd_gen_data(const RunConfig& cfg) {
    echo_config(cfg);
    auto env = make_env(cfg.env);
    core::Dataset data = envs::generate_dataset(*env, cfg.data.behavior, cfg.data.n_episodes,
                                                derive_seed(cfg.seed, 0xDA7A));
    io::save_dataset(data, cfg.output_dir + "/dataset.jsonl");
    std::cout << "wrote " << data.trajectories.size() << " episodes ("
              << data.transition_count() << " transitions) to " << cfg.output_dir
              << "/dataset.jsonl\n";
    return 0;
}

namespace {

json tables_to_json(const oracle::OracleTables& t) {
    json out;
    out["gamma"] = t.gamma;
    out["kappa"] = t.kappa;
    out["scales"] = t.scale_set.scales;
    out["v_star"] = std::vector<double>(t.v_star.data(), t.v_star.data() + t.v_star.size());
    json vb = json::array(), ab = json::array();
    for (int s = 0; s < t.v_beta.rows(); ++s) {
        json row_v = json::array(), row_a = json::array();
        for (int ki = 0; ki < t.v_beta.cols(); ++ki) {
            row_v.push_back(std::isfinite(t.v_beta(s, ki)) ? json(t.v_beta(s, ki)) : json());
            row_a.push_back(std::isfinite(t.a_bar(s, ki)) ? json(t.a_bar(s, ki)) : json());
        }
        vb.push_back(std::move(row_v));
        ab.push_back(std::move(row_a));
    }
    out["v_beta"] = std::move(vb);
    out["a_bar"] = std::move(ab);
    json delta = json::array();
    for (int s = 0; s < t.delta.size(); ++s)
        delta.push_back(std::isfinite(t.delta(s)) ? json(t.delta(s)) : json("inf"));
    out["delta"] = std::move(delta);
    out["k_dagger"] = t.k_dagger;
    return out;
}

theory::Instance instance_from_config(const RunConfig& cfg) {
    theory::Instance inst;
    inst.name = cfg.env.kind;
    auto env = make_env(cfg.env);
    auto* model = dynamic_cast<envs::DiscreteEnvModel*>(env.get());
    require(model != nullptr, "oracle pipelines need a discrete environment");
    // Hand the owning pointer over as a shared model.
    inst.model = std::shared_ptr<envs::DiscreteEnvModel>(
        dynamic_cast<envs::DiscreteEnvModel*>(env.release()));
    envs::BehaviorPolicySpec markov = cfg.data.behavior;
    markov.persistence = 0.0;  // exact Markov form
    inst.behavior_pi = envs::behavior_action_matrix(*inst.model, markov);
    inst.scales = cfg.train.scales();
    inst.gamma = cfg.train.gamma;
    inst.kappa = cfg.train.kappa_v;
    return inst;
}

}  // namespace

int cmd_oracle(const RunConfig& cfg) {
    echo_config(cfg);
    theory::Instance inst = instance_from_config(cfg);
    auto tables = oracle::build_tables(*inst.model, inst.behavior_pi, inst.scales,
                                       inst.gamma, inst.kappa);
    const std::string dir = cfg.output_dir + "/golden/" + inst.hash_key();
    io::write_file(dir + "/oracle.json", tables_to_json(tables).dump(2) + "\n");
    std::cout << "wrote oracle tables to " << dir << "/oracle.json\n";
    return 0;
}

namespace {

struct Pipelines {
    std::unique_ptr<envs::Env> env;
    core::Dataset data;
    trainer::Artifacts art;
    trainer::ReplayBuffer buffer{200000};
};

Pipelines prepare(const RunConfig& cfg) {
    Pipelines p;
    p.env = make_env(cfg.env);
    p.data = obtain_dataset(cfg, *p.env);
    p.art = trainer::make_artifacts(cfg.train, *p.env);
    if (p.art.sampler) p.art.sampler->add_dataset(p.data);
    p.buffer = trainer::ReplayBuffer(cfg.train.buffer_capacity);
    return p;
}

}  // namespace

int cmd_train_offline(const RunConfig& cfg) {
    echo_config(cfg);
    Pipelines p = prepare(cfg);
    io::MetricsCsv metrics(cfg.output_dir + "/metrics.csv", cfg.train.scales());
    try {
        trainer::offline_train(cfg.train, p.data, *p.env, p.art, p.buffer,
                               [&](const trainer::MetricRow& row) { metrics.write(row); });
    } catch (const std::exception& e) {
        // The trainer rolled the artifacts back to the last good state.
        io::save_checkpoint(io::snapshot_artifacts(p.art),
                            cfg.output_dir + "/abort_checkpoint");
        throw;
    }
    io::save_checkpoint(io::snapshot_artifacts(p.art), cfg.output_dir + "/checkpoint");
    std::cout << "offline training done; checkpoint in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg) {
    echo_config(cfg);
    Pipelines p = prepare(cfg);
    io::MetricsCsv metrics(cfg.output_dir + "/metrics.csv", cfg.train.scales());
    auto sink = [&](const trainer::MetricRow& row) { metrics.write(row); };

    trainer::offline_train(cfg.train, p.data, *p.env, p.art, p.buffer, sink);

    std::vector<std::string> trace_cols = {"phase", "state", "k_star"};
    for (int k : cfg.train.scales()) trace_cols.push_back("best_score_" + std::to_string(k));
    io::CsvWriter traces(cfg.output_dir + "/selection_traces.csv", trace_cols);
    auto trace = [&](const trainer::SelectionTrace& t) {
        std::vector<std::string> cells = {
            t.phase, t.state.tier == core::Tier::Discrete ? std::to_string(t.state.index) : "-",
            std::to_string(t.k_star)};
        for (int k : cfg.train.scales()) {
            auto it = t.best_score.find(k);
            cells.push_back(it == t.best_score.end() ? "" : format_double(it->second));
        }
        traces.row(cells);
    };
    auto result = trainer::online_finetune(cfg.train, *p.env, p.art, p.buffer, sink, trace);
    io::save_checkpoint(io::snapshot_artifacts(p.art), cfg.output_dir + "/checkpoint");
    std::cout << "finetune done; final success rate "
              << format_double(result.final_eval.success_rate) << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    echo_config(cfg);
    Pipelines p = prepare(cfg);
    const std::string ckpt = cfg.output_dir + "/checkpoint";
    if (std::filesystem::exists(ckpt + ".json"))
        io::restore_artifacts(p.art, io::load_checkpoint(ckpt));
    auto stats = trainer::evaluate_policy(cfg.train, *p.env, p.art, cfg.train.eval_episodes,
                                          derive_seed(cfg.seed, 0xE7A1));
    json out;
    out["success_rate"] = stats.success_rate;
    out["mean_kstar"] = stats.mean_kstar;
    for (const auto& [k, f] : stats.k_freq) out["kstar_freq"][std::to_string(k)] = f;
    io::write_file(cfg.output_dir + "/eval.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

std::vector<AblationArm> ablation_arms(const RunConfig& cfg, const std::string& which) {
    std::vector<AblationArm> arms;
    auto base = cfg.train;
    if (which == "criterion") {
        for (const std::string v : {"aqc", "raw_q", "discount_corrected", "random"}) {
            AblationArm arm{v, base};
            arm.train.selector = v;
            arms.push_back(std::move(arm));
        }
    } else if (which == "adaptive") {
        AblationArm single{"single_critic_fixed_h", base};
        single.train.k_univ = {base.h};
        single.train.selector = "fixed:" + std::to_string(base.h);
        arms.push_back(std::move(single));
        AblationArm multi{"multi_critic_fixed_h", base};
        multi.train.selector = "fixed:" + std::to_string(base.h);
        arms.push_back(std::move(multi));
        AblationArm adaptive{"multi_critic_adaptive", base};
        adaptive.train.selector = "aqc";
        arms.push_back(std::move(adaptive));
    } else if (which == "bootstrap") {
        for (const std::string v : {"vh", "v1", "qh_direct"}) {
            AblationArm arm{v, base};
            arm.train.bootstrap_source = v;
            arms.push_back(std::move(arm));
        }
    } else if (which == "kappa") {
        for (double kappa : cfg.ablation.kappas) {
            AblationArm arm{"kappa_" + format_double(kappa), base};
            arm.train.kappa_v = kappa;
            arms.push_back(std::move(arm));
        }
    } else if (which == "zscore") {
        AblationArm on{"zscore_on", base};
        on.train.zscore = true;
        arms.push_back(std::move(on));
        AblationArm off{"zscore_off", base};
        off.train.zscore = false;
        arms.push_back(std::move(off));
    } else if (which == "chunk_h") {
        for (int h : cfg.ablation.h_values) {
            AblationArm arm{"h_" + std::to_string(h), base};
            arm.train.h = h;
            arms.push_back(std::move(arm));
        }
    } else {
        throw ConfigError("/ablation/which",
                          "expected criterion | adaptive | bootstrap | kappa | zscore | chunk_h");
    }
    return arms;
}

int cmd_ablate(const RunConfig& cfg, const std::string& which_override) {
    echo_config(cfg);
    const std::string which = which_override.empty() ? cfg.ablation.which : which_override;
    auto arms = ablation_arms(cfg, which);

    std::vector<std::string> cols = {"variant", "seed", "step", "success_rate", "mean_kstar"};
    io::CsvWriter table(cfg.output_dir + "/ablation_" + which + ".csv", cols);

    for (const auto& arm : arms) {
        for (int si = 0; si < cfg.ablation.seeds; ++si) {
            auto env = make_env(cfg.env);
            trainer::TrainConfig tc = arm.train;
            tc.seed = derive_seed(cfg.seed, 100 + si);  // paired across arms
            core::Dataset data = envs::generate_dataset(*env, cfg.data.behavior,
                                                        cfg.data.n_episodes,
                                                        derive_seed(cfg.seed, 0xDA7A));
            trainer::Artifacts art = trainer::make_artifacts(tc, *env);
            trainer::ReplayBuffer buffer(tc.buffer_capacity);
            auto sink = [&](const trainer::MetricRow& row) {
                if (!row.success_rate) return;
                table.row({arm.name, std::to_string(si), std::to_string(row.step),
                           format_double(*row.success_rate),
                           row.mean_kstar ? format_double(*row.mean_kstar) : ""});
            };
            trainer::offline_train(tc, data, *env, art, buffer, sink);
            trainer::online_finetune(tc, *env, art, buffer, sink);
        }
    }
    std::cout << "wrote " << cfg.output_dir << "/ablation_" << which << ".csv\n";
    return 0;
}

int cmd_verify_theory(const RunConfig& cfg) {
    echo_config(cfg);
    std::vector<theory::Instance> instances = theory::standard_instances();
    if (cfg.env.kind != "pointmass") {
        // Put the configured instance first so its checks lead the report.
        instances.insert(instances.begin(), instance_from_config(cfg));
    }
    theory::TheoryReport report = theory::verify_theory(instances, cfg.seed);

    json out;
    json checks = json::array();
    for (const auto& c : report.checks) {
        json j;
        j["check"] = c.name;
        j["instance_hash"] = c.instance;
        j["bound"] = c.bound;
        j["measured"] = c.measured;
        j["pass"] = c.pass;
        j["margin"] = c.margin;
        checks.push_back(std::move(j));
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
                  << "  measured=" << format_double(c.measured)
                  << " bound=" << format_double(c.bound) << "\n";
    }
    out["checks"] = std::move(checks);
    out["notes"] = report.notes;
    io::write_file(cfg.output_dir + "/theory_report.json", out.dump(2) + "\n");
    return report.all_pass() ? 0 : 1;
}

int cmd_plot(const RunConfig& cfg, const std::string& input, const std::string& kind) {
    echo_config(cfg);
    const std::string text = io::read_file(input);
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "plot: empty table");
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(header.size());
        rows.push_back(std::move(cells));
    }
    require(!rows.empty(), "plot: empty table");

    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::runtime_error("plot: column '" + name + "' not recognized");
    };

    if (kind == "curves") {
        // One curve per variant: success_rate vs step.
        const int ci_variant = col("variant");
        const int ci_step = col("step");
        const int ci_y = col("success_rate");
        std::map<std::string, std::map<double, std::pair<double, int>>> agg;
        for (const auto& r : rows) {
            if (r[ci_y].empty()) continue;
            auto& cell = agg[r[ci_variant]][std::stod(r[ci_step])];
            cell.first += std::stod(r[ci_y]);
            cell.second += 1;
        }
        std::vector<svg::Series> series;
        for (const auto& [variant, pts] : agg) {
            svg::Series s;
            s.label = variant;
            for (const auto& [x, acc] : pts) {
                s.x.push_back(x);
                s.y.push_back(acc.first / acc.second);
            }
            series.push_back(std::move(s));
        }
        io::write_file(cfg.output_dir + "/plot.svg",
                       svg::line_chart(series, "success rate", "env step", "success"));
    } else if (kind == "kusage") {
        // Per-cell mean selected k* on the grid layout.
        require(cfg.env.kind == "grid", "plot kusage: grid environments only");
        const int ci_state = col("state");
        const int ci_k = col("k_star");
        const int W = cfg.env.grid.width, H = cfg.env.grid.height;
        std::vector<double> sum(static_cast<std::size_t>(W) * H, 0.0);
        std::vector<long> count(static_cast<std::size_t>(W) * H, 0);
        for (const auto& r : rows) {
            if (r[ci_state] == "-") continue;
            const int s = std::stoi(r[ci_state]);
            sum[s] += std::stod(r[ci_k]);
            count[s] += 1;
        }
        std::vector<double> mean(sum.size(), std::nan(""));
        for (std::size_t i = 0; i < sum.size(); ++i)
            if (count[i] > 0) mean[i] = sum[i] / count[i];
        io::write_file(cfg.output_dir + "/plot.svg",
                       svg::heatmap(mean, H, W, "mean selected k*"));
    } else {
        throw std::runtime_error("plot: unknown kind '" + kind + "'");
    }
    std::cout << "wrote " << cfg.output_dir << "/plot.svg\n";
    return 0;
}

int cli_main(int argc, char** argv) {
    CLI::App app{"chunkrl: adaptive multi-horizon chunked critics"};
    app.require_subcommand(1);

    std::string config_path;
    std::string which;
    std::string plot_input;
    std::string plot_kind = "curves";

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run config (JSON)")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a behavior dataset");
    add_config(gen);
    auto* orc = app.add_subcommand("oracle", "emit exact tabular oracle tables");
    add_config(orc);
    auto* off = app.add_subcommand("train-offline", "offline pretraining");
    add_config(off);
    auto* fin = app.add_subcommand("finetune", "offline pretraining + online fine-tuning");
    add_config(fin);
    auto* eva = app.add_subcommand("evaluate", "evaluate a trained checkpoint");
    add_config(eva);
    auto* abl = app.add_subcommand("ablate", "run one ablation axis");
    add_config(abl);
    abl->add_option("--which", which, "criterion|adaptive|bootstrap|kappa|zscore|chunk_h");
    auto* ver = app.add_subcommand("verify-theory", "run the theorem-check battery");
    add_config(ver);
    auto* plt = app.add_subcommand("plot", "emit an SVG from a result table");
    add_config(plt);
    plt->add_option("--input", plot_input, "input CSV")->required();
    plt->add_option("--kind", plot_kind, "curves|kusage");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (orc->parsed()) return cmd_oracle(cfg);
        if (off->parsed()) return cmd_train_offline(cfg);
        if (fin->parsed()) return cmd_finetune(cfg);
        if (eva->parsed()) return cmd_evaluate(cfg);
        if (abl->parsed()) return cmd_ablate(cfg, which);
        if (ver->parsed()) return cmd_verify_theory(cfg);
        if (plt->parsed()) return cmd_plot(cfg, plot_input, plot_kind);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace chunkrl::harness
