#pragma once

#include "cpsattack/system_model.hpp"

#include <iosfwd>
#include <vector>

namespace cpsattack {

struct DefenderState {
    Vector x_hat;
    int t = 0;
};

struct AttackerState {
    Vector x_hat_a;
    int t = 0;
};

/// Chi-square detector on the normalized residual energy g = r^T P_r^-1 r.
struct DetectorConfig {
    double eta = 0.0;
    Matrix P_r;
    Matrix P_r_inv;

    static DetectorConfig make(const SteadyStateKalman& ssk, double eta);
};

struct Detection {
    double g = 0.0;
    int alarm = 0;
};

enum class MitigationKind { perfect, noisy, model_only };

MitigationKind mitigation_kind_from_string(const std::string& s);
std::string to_string(MitigationKind k);

struct MitigationStrategy {
    MitigationKind kind = MitigationKind::perfect;
    double sigma_mit = 0.0;  ///< std of the mitigation error b[t] (noisy only)

    static MitigationStrategy perfect() { return {MitigationKind::perfect, 0.0}; }
    static MitigationStrategy noisy(double sigma) { return {MitigationKind::noisy, sigma}; }
    static MitigationStrategy model_only() { return {MitigationKind::model_only, 0.0}; }

    /// Variance of the mitigation signal around its mean (B_mit).
    double delta_variance() const { return kind == MitigationKind::noisy ? sigma_mit * sigma_mit : 0.0; }
};

/// Output of the controller's mitigation stage. For model_only with an alarm
/// the measurement is discarded and the KF runs on the model alone.
struct MitigatedMeasurement {
    Vector y_f;
    Vector delta;  ///< mitigation signal actually subtracted (zero without alarm)
    bool skip_innovation = false;
};

/// r = y_a - C (A x_hat + B u)
Vector residual(const Vector& x_hat, const Vector& u, const Vector& y_a, const SystemModel& model);

/// Alarm iff g > eta; g == eta does not alarm.
Detection detect(const Vector& r, const DetectorConfig& cfg);

/// y_f = y_a - i * delta, with delta = a_true (perfect) or a_true + b (noisy).
MitigatedMeasurement mitigate(const Vector& y_a, int alarm, const MitigationStrategy& strategy,
                              const Vector& a_true, Rng& rng);

Vector kf_update(const Vector& x_hat, const Vector& u, const Vector& y_f, const SystemModel& model,
                 const SteadyStateKalman& ssk);
Vector kf_update(const Vector& x_hat, const Vector& u, const MitigatedMeasurement& y_f, const SystemModel& model,
                 const SteadyStateKalman& ssk);

/// Attacker's filter driven by the true measurements y. The innovation is
/// referenced to the attacker's own prediction A x_hat_a + B u.
Vector attacker_kf_update(const Vector& x_hat_a, const Vector& u, const Vector& y_true, const SystemModel& model,
                          const SteadyStateKalman& ssk);

/// e' = A_K e + W_K w - K (a - i delta) - K v
Vector error_step(const Vector& e, const Vector& w, const Vector& v, const Vector& a, int alarm, const Vector& delta,
                  const SteadyStateKalman& ssk);

/// P(g > eta) for the residual r = C A e + C w + a + v of one step taken
/// from a known error e. Scalar models use the Gaussian closed form; other
/// models sample (w, v).
double detection_probability(const Vector& e, const Vector& a, const SystemModel& model,
                             const SteadyStateKalman& ssk, const DetectorConfig& cfg, int n_samples, Rng& rng);

/// Closed form for the scalar model; exposed for cross-checks.
double detection_probability_scalar(double e, double a, const SystemModel& model, const SteadyStateKalman& ssk,
                                    double eta);

struct TrajectoryStep {
    int t = 0;
    Vector x, x_hat, x_hat_a, y, a, u;
    double g = 0.0;
    int alarm = 0;
};

using Trajectory = std::vector<TrajectoryStep>;

/// Columns t, x_1..x_n, xhat_1..xhat_n, xhata_1..xhata_n, y_1..y_m, a_1..a_m, g, i, u_1..u_p.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& header_comment = "");

}  // namespace cpsattack
