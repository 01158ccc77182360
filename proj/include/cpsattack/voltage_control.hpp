#pragma once

#include "cpsattack/attack_mdp.hpp"
#include "cpsattack/estimation_defense.hpp"
#include "cpsattack/policy_io.hpp"
#include "cpsattack/system_model.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cpsattack {

/// Pilot-bus voltage regulation loop: A = C = I, x' = x + B u + w,
/// u = alpha B^-1 (x0 - x_hat).
struct GridScenario {
    std::string name;
    int n_pilot = 1;
    Vector x0;
    Vector x_init;
    double alpha_ctrl = 1.0;
    Matrix B;
    double process_sigma = 0.01;
    double measurement_sigma = 0.02;
    double a_max = 0.2;
    double action_step = 0.02;
    double eta = 5.0;
    AttackNorm attack_norm = AttackNorm::l2;
    std::optional<ErrorGrid> grid;  ///< MDP / FSR grid over the error, if given

    SystemModel model() const;
    double condition_number() const;
    /// Actions c * mask for c = 0, step, ..., a_max (per component).
    ActionSet actions(const Vector& mask) const;
    ActionSet actions() const { return actions(Vector::Ones(n_pilot)); }
    void validate() const;
};

GridScenario scenario_from_json(const Json& j);
Json scenario_to_json(const GridScenario& s);
GridScenario load_scenario(const std::string& path);

/// u = alpha B^-1 (x0 - x_hat)
Vector control_law(const Vector& x_hat, const GridScenario& scenario);

struct TraceDataset {
    Matrix x_before;  ///< records x n
    Matrix x_after;
    Matrix u;         ///< records x p

    Eigen::Index records() const { return x_before.rows(); }
};

/// Header x_before_1..n, x_after_1..n, u_1..p. Throws ParseError with the line.
TraceDataset read_traces_csv(std::istream& in);
TraceDataset read_traces_csv(const std::string& path);
void write_traces_csv(std::ostream& out, const TraceDataset& traces);

struct BFit {
    Matrix B;
    double residual_rms = 0.0;
    double condition_number = 0.0;  ///< of the regressor matrix U
    Eigen::Index records = 0;
};

/// Least squares for x_after - x_before = B u over all records.
BFit estimate_B(const TraceDataset& traces);

/// Traces from random control inputs applied to x' = x + B u + w.
TraceDataset synthesize_traces(const Matrix& B, int records, double process_sigma, double u_scale, Rng& rng);

enum class AttackKind { none, ramp, surge, random, policy };

AttackKind attack_kind_from_string(const std::string& s);
std::string to_string(AttackKind k);

struct AttackSequenceSpec {
    AttackKind kind = AttackKind::none;
    double slope = 0.01;      ///< ramp
    double magnitude = 0.1;   ///< surge
    int start = 1;            ///< surge
    double bound = 0.2;       ///< random: uniform in [-bound, bound]
    std::string policy_path;  ///< policy
    Vector mask;              ///< empty = every sensor
};

AttackSequenceSpec attack_spec_from_json(const Json& j);
Json attack_spec_to_json(const AttackSequenceSpec& s);

/// Attack at step t >= 1. `e_est` is the attacker's estimate of x - x_hat.
/// Ramp and surge vectors are scaled down to respect a_max; random draws are
/// clipped per component to a_max.
Vector generate_attack(const AttackSequenceSpec& spec, int t, const Vector& e_est, const GridScenario& scenario,
                       const AttackPolicy* policy, Rng& rng);

struct SimulationOptions {
    double eta = 5.0;
    MitigationStrategy mitigation;
    NoiseKind measurement_noise = NoiseKind::gaussian;
    double noise_dof = 4.0;
    int horizon = 30;
    int runs = 100;
    std::uint64_t seed = 1;
    int workers = 1;
    bool keep_trajectories = false;
};

struct SimulationSummary {
    std::vector<Vector> mean_x, mean_x_hat, mean_x_hat_a;  ///< per step t = 1..T
    std::vector<double> detection_prob;
    std::vector<double> mean_sq_error;  ///< E ||x - x_hat||^2 per step
    double mean_cumulative_error = 0.0;
    double cumulative_error_se = 0.0;
    Vector mean_final_deviation;      ///< E[x_T - x0]
    Vector mean_final_est_deviation;  ///< E[x_hat_T - x0]
    double tracking_discrepancy = 0.0;  ///< mean |(x_hat - x_hat_a) - (x_hat - x)|
    double mean_abs_error = 0.0;        ///< mean |x_hat - x|
};

struct SimulationResult {
    std::vector<Trajectory> trajectories;
    std::vector<double> cumulative_error;  ///< per run
    SimulationSummary summary;
};

/// Runs are independent and seeded by derive_seed(seed, run, stream), so
/// results do not depend on the worker count.
SimulationResult closed_loop_simulate(const GridScenario& scenario, const AttackSequenceSpec& attack,
                                      const SimulationOptions& opts, const AttackPolicy* policy = nullptr);

/// Columns t, mean_x_*, mean_xhat_*, detection_prob, mean_sq_error.
void write_summary_csv(std::ostream& out, const SimulationSummary& s, const std::string& header_comment = "");

}  // namespace cpsattack
