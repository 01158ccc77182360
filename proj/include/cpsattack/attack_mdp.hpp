#pragma once

#include "cpsattack/estimation_defense.hpp"
#include "cpsattack/system_model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cpsattack {

class GridTooLargeError : public std::length_error {
  public:
    using std::length_error::length_error;
};

/// Where the d levels sit inside [lower, upper]. cell_center splits the box
/// into d equal cells; node puts the first and last centers on the bounds.
enum class GridConvention { cell_center, node };

/// Axis-aligned region of error space; infinite bounds allowed.
struct CellBox {
    Vector lo, hi;
    bool contains(const Vector& e) const;
};

/// Uniform d^n grid over a box. States outside the box map to the nearest
/// boundary cell, so the outer cells extend to infinity.
class ErrorGrid {
  public:
    ErrorGrid() = default;
    ErrorGrid(Vector lower, Vector upper, int levels, GridConvention convention = GridConvention::cell_center);

    Eigen::Index dims() const { return lower_.size(); }
    int levels() const { return levels_; }
    std::size_t size() const { return size_; }
    const Vector& lower() const { return lower_; }
    const Vector& upper() const { return upper_; }
    GridConvention convention() const { return convention_; }
    double spacing(Eigen::Index dim) const { return spacing_(dim); }

    /// Coordinate (0..d-1) of a value along one dimension, clamped.
    int coord_of(double value, Eigen::Index dim) const;
    std::size_t cell_of(const Vector& e) const;
    std::vector<int> coords(std::size_t cell) const;
    std::size_t index(const std::vector<int>& coords) const;
    double center_coord(int k, Eigen::Index dim) const;
    Vector center(std::size_t cell) const;
    /// Edge between coordinate k-1 and k (k in 1..d-1) along a dimension.
    double edge(int k, Eigen::Index dim) const;
    /// Cell region with the outer faces pushed to infinity.
    CellBox cell_box(std::size_t cell) const;
    /// Cell region clipped to the nominal (finite) partition.
    CellBox finite_cell_box(std::size_t cell) const;

  private:
    Vector lower_, upper_, spacing_;
    int levels_ = 0;
    std::size_t size_ = 0;
    GridConvention convention_ = GridConvention::cell_center;
};

/// Refuses grids above `max_cells` (default 10^6); larger problems belong
/// to the function-approximation learners.
ErrorGrid build_grid(const Vector& lower, const Vector& upper, int levels,
                     GridConvention convention = GridConvention::cell_center, std::size_t max_cells = 1'000'000);

/// Symmetric bounds +-(6 sqrt(P_e,ii) + margin).
std::pair<Vector, Vector> default_grid_bounds(const SteadyStateKalman& ssk, double margin);

enum class AttackNorm { l2, linf };

struct ActionSet {
    std::vector<Vector> actions;
    double a_max = 0.0;
    AttackNorm norm = AttackNorm::l2;

    std::size_t size() const { return actions.size(); }
    const Vector& operator[](std::size_t i) const { return actions[i]; }
};

double attack_norm(const Vector& a, AttackNorm norm);

/// Attack vectors c * mask for c = 0, step, ..., up to the largest multiple
/// of step not exceeding `max_level`. a_max is set to the norm of the
/// largest action unless given.
ActionSet make_uniform_actions(const Vector& mask, double step, double max_level, AttackNorm norm = AttackNorm::l2,
                               std::optional<double> a_max = std::nullopt);

/// Throws if an action violates the energy bound or the zero action is missing.
void check_action_set(const ActionSet& set);

/// Attack-free detection and mitigation settings seen by the MDP.
struct KernelConfig {
    double eta = 0.0;
    MitigationStrategy mitigation;
};

enum class KernelMethod { analytic_scalar, monte_carlo };

struct SparseEntry {
    std::uint32_t next;
    double prob;
};

struct TransitionKernel {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    std::vector<std::vector<SparseEntry>> rows;  ///< index s * num_actions + a
    KernelMethod method = KernelMethod::analytic_scalar;
    int n_samples = 0;
    double max_raw_deficit = 0.0;   ///< max |1 - row sum| before renormalization
    double clamped_fraction = 0.0;  ///< MC mass landing outside the box (clamped)
    std::vector<std::string> warnings;

    const std::vector<SparseEntry>& row(std::size_t s, std::size_t a) const { return rows[s * num_actions + a]; }
    double prob(std::size_t s, std::size_t a, std::size_t next) const;
};

/// P(e' in [cell_lo, cell_hi] | e, a) for n = m = 1: the no-alarm band of
/// the residual plus the alarm complement, whose next error is shifted by
/// K delta with delta ~ N(delta_mean, delta_var) independent of the noise.
double transition_prob_scalar(double e, double a, double cell_lo, double cell_hi, const SystemModel& model,
                              const SteadyStateKalman& ssk, double eta, double delta_mean, double delta_var);

/// Same quantity for any mitigation strategy (model_only included).
double transition_prob_scalar(double e, double a, double cell_lo, double cell_hi, const SystemModel& model,
                              const SteadyStateKalman& ssk, const KernelConfig& cfg);

/// Monte Carlo estimate of P(e' in box | e, a) from the error dynamics.
double transition_prob_mc(const Vector& e, const Vector& a, const CellBox& box, const SystemModel& model,
                          const SteadyStateKalman& ssk, const KernelConfig& cfg, int n_samples, Rng& rng);

/// Samples one next error from the closed-loop error dynamics.
Vector sample_next_error(const Vector& e, const Vector& a, const SystemModel& model, const SteadyStateKalman& ssk,
                         const DetectorConfig& det, const MitigationStrategy& mitigation, const NoiseSampler& w,
                         const NoiseSampler& v, Rng& rng, int* alarm_out = nullptr);

TransitionKernel build_kernel_scalar(const ErrorGrid& grid, const ActionSet& actions, const SystemModel& model,
                                     const SteadyStateKalman& ssk, const KernelConfig& cfg);

TransitionKernel build_kernel_mc(const ErrorGrid& grid, const ActionSet& actions, const SystemModel& model,
                                 const SteadyStateKalman& ssk, const KernelConfig& cfg, int n_samples,
                                 std::uint64_t seed);

/// sum_{s'} T[s][a][s'] ||xi_{s'}||^2
double expected_reward(std::size_t s, std::size_t a, const TransitionKernel& kernel, const ErrorGrid& grid);

enum class HorizonMode { finite, discounted };

struct ValueFunctionPolicy {
    Vector V;
    std::vector<std::size_t> policy;                    ///< first-stage (or stationary) policy
    std::vector<std::vector<std::size_t>> stage_policies;  ///< finite mode: stage t = 0..T-1
    HorizonMode mode = HorizonMode::finite;
    int horizon = 0;
    double gamma = 0.0;
    int iterations = 0;

    /// Action for a cell at stage t (stationary policy in discounted mode).
    std::size_t action(std::size_t cell, int t = 0) const;
};

struct ValueIterationOptions {
    HorizonMode mode = HorizonMode::finite;
    int horizon = 30;
    double gamma = 0.95;
    double tol = 1e-9;
    int max_iter = 1'000'000;
};

/// Throws if a kernel row deviates from 1 by more than 1e-6.
void check_kernel_normalized(const TransitionKernel& kernel, double tol = 1e-6);

ValueFunctionPolicy value_iteration(const TransitionKernel& kernel, const ErrorGrid& grid,
                                    const ValueIterationOptions& opts);

/// Expected reward table R[s * A + a].
std::vector<double> reward_table(const TransitionKernel& kernel, const ErrorGrid& grid);

/// Value of a fixed stationary policy (discounted) or of the stage policies
/// (finite horizon) under the kernel.
Vector policy_value(const TransitionKernel& kernel, const ErrorGrid& grid, const ValueFunctionPolicy& vfp,
                    const ValueIterationOptions& opts);

/// max_s |V(s) - max_a (R + gamma T V)| for discounted mode.
double bellman_residual(const TransitionKernel& kernel, const ErrorGrid& grid, const Vector& V, double gamma);

/// Content hash of everything that determines a kernel.
std::string kernel_cache_key(const SystemModel& model, const ErrorGrid& grid, const ActionSet& actions,
                             const KernelConfig& cfg, KernelMethod method, int n_samples, std::uint64_t seed);
void save_kernel(const std::string& path, const TransitionKernel& kernel, const std::string& key);
std::optional<TransitionKernel> load_kernel(const std::string& path, const std::string& key);

std::string to_string(KernelMethod m);

}  // namespace cpsattack
