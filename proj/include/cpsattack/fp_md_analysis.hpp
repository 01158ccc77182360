#pragma once

#include "cpsattack/attack_mdp.hpp"
#include "cpsattack/estimation_defense.hpp"
#include "cpsattack/system_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cpsattack {

/// One detection history and the first two moments of the error along it.
/// The path is packed into bits (bit t = alarm at step t + 1).
struct PathNode {
    std::uint64_t path = 0;
    int depth = 0;
    double prob = 1.0;
    double mean = 0.0;
    double second_moment = 0.0;
    double variance = 0.0;
    bool dead = false;
};

struct MomentStepParams {
    double y_mean = 0.0;  ///< E[y] of the residual
    double S_yy = 0.0;
    double S_xy = 0.0;
    double S_xx = 0.0;    ///< branch-specific, mitigation variance included
    double x_mean = 0.0;  ///< branch-specific prior mean of the next error
    double lo = 0.0, hi = 0.0;  ///< no-alarm band of y; alarm uses the complement
    double B_mit = 0.0;
};

struct RecursionConfig {
    double eta = 0.0;
    MitigationStrategy mitigation;
    double prune_tol = 1e-9;
    bool oracle = false;  ///< Monte Carlo only: alarm iff a != 0
};

MomentStepParams moment_params(const PathNode& node, double a_next, int branch, const SystemModel& model,
                               const SteadyStateKalman& ssk, const RecursionConfig& cfg);

/// Child node for detection outcome `branch` at the next step.
PathNode moment_step(const PathNode& node, double a_next, int branch, const SystemModel& model,
                     const SteadyStateKalman& ssk, const RecursionConfig& cfg);

/// Child node when the branch is imposed (probability 1, no truncation).
PathNode forced_step(const PathNode& node, double a_next, int branch, const SystemModel& model,
                     const SteadyStateKalman& ssk, const MitigationStrategy& mitigation);

/// Attack-free steady state: mean 0, variance P_e.
PathNode initial_node(const SteadyStateKalman& ssk);

struct ErrorTrace {
    std::vector<double> per_step;  ///< E[e[t]^2], t = 1..T
    double total = 0.0;
    double pruned_mass = 0.0;
    std::size_t max_live_nodes = 0;
    std::vector<std::string> warnings;
};

ErrorTrace cumulative_error(const std::vector<double>& attack, const SystemModel& model,
                            const SteadyStateKalman& ssk, const RecursionConfig& cfg);

/// Reference loop with a perfect detector: alarm iff a[t] != 0.
ErrorTrace oracle_reference_error(const std::vector<double>& attack, const SystemModel& model,
                                  const SteadyStateKalman& ssk, const MitigationStrategy& mitigation);

struct McTrace {
    std::vector<double> mean;      ///< E[e[t]^2]
    std::vector<double> std_error;
    std::vector<double> alarm_rate;
    int runs = 0;
};

/// Closed-loop error simulation from e[0] ~ N(0, P_e) (any dimension; the
/// attack is applied as a * ones(m)).
McTrace monte_carlo_error(const std::vector<double>& attack, const SystemModel& model, const SteadyStateKalman& ssk,
                          const RecursionConfig& cfg, int runs, std::uint64_t seed);

double fp_cost(double eta, double sigma_mit, const SystemModel& model, const SteadyStateKalman& ssk, int horizon);

double md_cost(double eta, double sigma_mit, const std::vector<double>& attack, const SystemModel& model,
               const SteadyStateKalman& ssk);

/// MD cost of the optimal attack: finite-horizon value of the MDP against
/// the chi-square detector minus the value against the perfect detector,
/// read at the cell containing e = 0.
double md_cost_optimal(double eta, double sigma_mit, const SystemModel& model, const SteadyStateKalman& ssk,
                       const ErrorGrid& grid, const ActionSet& actions, int horizon);

/// Kernel of the perfect-detector loop: a = 0 never alarms, a != 0 always does.
TransitionKernel build_oracle_kernel_scalar(const ErrorGrid& grid, const ActionSet& actions,
                                            const SystemModel& model, const SteadyStateKalman& ssk,
                                            const MitigationStrategy& mitigation);

enum class MdAttack { sequence, optimal };

struct SweepOptions {
    int horizon = 10;
    MdAttack md_attack = MdAttack::sequence;
    std::vector<double> attack;  ///< used for sequence mode; default constant 10
    int mc_runs = 0;             ///< 0 disables the cross-check column
    std::uint64_t seed = 1;
    double prune_tol = 1e-13;  // the fp column is a difference of near-equal totals
    // optimal mode
    int grid_levels = 81;
    double grid_half_width = 20.0;
    double action_step = 2.0;
    double action_max = 20.0;
};

struct SweepRow {
    double eta = 0.0;
    double sigma_mit = 0.0;
    double fp_cost = 0.0;
    double md_cost = 0.0;
    double pruned_mass = 0.0;
    double mc_crosscheck_relerr = 0.0;  ///< NaN when no cross-check ran
};

std::vector<SweepRow> fp_md_sweep(const std::vector<double>& etas, const std::vector<double>& sigmas,
                                  const SystemModel& model, const SteadyStateKalman& ssk, const SweepOptions& opts);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::string& header_comment = "");

}  // namespace cpsattack
