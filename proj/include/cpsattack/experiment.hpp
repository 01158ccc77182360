#pragma once

#include "cpsattack/attack_mdp.hpp"
#include "cpsattack/attack_rl.hpp"
#include "cpsattack/fp_md_analysis.hpp"
#include "cpsattack/voltage_control.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cpsattack {

enum class SolverKind { value_iteration, q_tabular, qlfa, qnlfa };

SolverKind solver_kind_from_string(const std::string& s);
std::string to_string(SolverKind k);

struct SolverSettings {
    SolverKind kind = SolverKind::value_iteration;
    HorizonMode mode = HorizonMode::finite;
    int horizon = 30;  ///< value iteration stages (finite mode)
    double gamma = 0.95;
    double tol = 1e-9;
    std::string kernel = "auto";  ///< auto | analytic | monte_carlo
    int kernel_samples = 20000;
    double alpha = 0.1;
    int episodes = 1000;
    int train_horizon = 50;
    EpsilonSchedule epsilon;
    EncoderKind encoder = EncoderKind::fsr;
    NetSpec net;
    int eval_runs = 200;
    int eval_horizon = 50;
    int eval_every = 0;  ///< 0: ten checkpoints over the budget
};

struct SweepSettings {
    std::vector<double> etas{0, 5, 10, 15};
    std::vector<double> sigmas{0, 5, 10, 15};
    int horizon = 10;
    MdAttack md_attack = MdAttack::sequence;
    std::vector<double> attack;  ///< empty: constant 10 over the horizon
    int mc_runs = 0;
};

struct ActionSettings {
    double step = 0.0;
    double max = 0.0;
    Vector mask;
    AttackNorm norm = AttackNorm::l2;
    bool given = false;
};

/// Resolved experiment description. `resolved` holds the canonical JSON with
/// referenced files inlined; its hash excludes the output directory.
struct ExperimentConfig {
    Json resolved;
    std::optional<GridScenario> scenario;
    std::optional<SystemModel> model;
    double eta = 5.0;
    MitigationStrategy mitigation;
    AttackSequenceSpec attack;
    SolverSettings solver;
    std::optional<ErrorGrid> grid;
    ActionSettings actions;
    int horizon = 30;
    int runs = 100;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    NoiseKind measurement_noise = NoiseKind::gaussian;
    double noise_dof = 4.0;
    std::string policy_path;
    std::string traces_path;
    SweepSettings sweep;
    bool write_trajectories = true;

    SystemModel system() const;
    ActionSet action_set() const;
    /// Grid from the config, then the scenario, then default bounds (d = 41).
    ErrorGrid error_grid() const;
    std::string hash() const;
    std::string header() const { return "# config_sha256=" + hash(); }
};

/// Validates against the schema (unknown keys rejected). Relative file
/// references resolve against `base_dir`.
ExperimentConfig parse_config(const Json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

/// Applies --seed / --out overrides and refreshes the resolved document.
void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, std::optional<std::string> out);

struct RunContext {
    std::string out_dir;
    int workers = 1;
    std::string kernel_cache;  ///< directory; empty disables caching
    std::ostream* log = nullptr;
};

struct SolveResult {
    ValueFunctionPolicy vfp;
    ErrorGrid grid;
    ActionSet actions;
    bool cache_hit = false;
    std::string policy_csv, policy_json;
};

struct TrainCurvePoint {
    int episode = 0;
    std::uint64_t env_steps = 0;
    double average_reward = 0.0;
};

struct TrainResult {
    std::vector<TrainCurvePoint> curve;
    std::string policy_path, curve_csv;
};

/// Builds (or loads from the cache) the kernel for the config.
TransitionKernel obtain_kernel(const ExperimentConfig& cfg, const ErrorGrid& grid, const ActionSet& actions,
                               const RunContext& ctx, bool* cache_hit = nullptr);

SolveResult cmd_solve_mdp(const ExperimentConfig& cfg, const RunContext& ctx);
TrainResult cmd_train(const ExperimentConfig& cfg, const RunContext& ctx);
SimulationResult cmd_simulate(const ExperimentConfig& cfg, const RunContext& ctx);
std::vector<SweepRow> cmd_fp_md_sweep(const ExperimentConfig& cfg, const RunContext& ctx);
BFit cmd_estimate_b(const std::string& trace_path, const RunContext& ctx, const std::string& header = "");
/// none / ramp / random (and policy when configured) on the same scenario.
void cmd_compare_attacks(const ExperimentConfig& cfg, const RunContext& ctx);

/// Documented config schema (keys, types, defaults) as JSON.
Json config_schema();

}  // namespace cpsattack
