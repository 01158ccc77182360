#pragma once

#include "cpsattack/json_io.hpp"
#include "cpsattack/random.hpp"
#include "cpsattack/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cpsattack {

enum class NoiseKind { gaussian, logistic, student_t };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

/// Zero-mean noise law with a prescribed second moment. Non-Gaussian kinds
/// draw unit-variance components and color them with a square root of
/// `covariance`, so the covariance is matched exactly in every case.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    Matrix covariance;
    double dof = 4.0;  ///< Student-t only, must exceed 2.
};

/// x[t+1] = A x[t] + B u[t] + w[t],  y[t] = C x[t] + v[t].
struct SystemModel {
    Matrix A, B, C;
    Matrix Q, R;
    Matrix X0;  ///< Initial-state covariance; empty when not given.
    std::optional<NoiseKind> noise_kind;
    double noise_dof = 4.0;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return C.rows(); }
    Eigen::Index p() const { return B.cols(); }

    static SystemModel scalar(double a, double b, double c, double q, double r);
};

struct ModelCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ValidationReport {
    std::vector<ModelCheck> checks;

    bool ok() const;
    const ModelCheck* find(const std::string& name) const;
    std::string summary() const;
};

class ModelError : public std::invalid_argument {
  public:
    explicit ModelError(const ValidationReport& report)
        : std::invalid_argument("invalid system model: " + report.summary()), report_(report) {}
    const ValidationReport& report() const noexcept { return report_; }

  private:
    ValidationReport report_;
};

ValidationReport validate_model(const SystemModel& model);

/// Throws ModelError unless every check passes.
void require_valid(const SystemModel& model);

struct SteadyStateKalman {
    Matrix P_inf;  ///< Riccati fixed point (prior covariance)
    Matrix K;      ///< steady-state gain
    Matrix P_e;    ///< (I - K C) P_inf
    Matrix A_K;    ///< A - K C A
    Matrix W_K;    ///< I - K C
    Matrix P_r;    ///< C P_inf C^T + R
    Matrix P_r_inv;
    int iterations = 0;
    double residual = 0.0;  ///< ||P - riccati_map(P)||_F at the returned P
};

/// One application of P -> A P A^T + Q - A P C^T (C P C^T + R)^-1 C P A^T.
Matrix riccati_map(const SystemModel& model, const Matrix& P);

/// Fixed-point iteration from X0 (or Q when X0 is empty).
SteadyStateKalman solve_riccati(const SystemModel& model, double tol = 1e-10, int max_iter = 100000);

/// Fills the derived quantities for a given P_inf.
SteadyStateKalman steady_state_from(const SystemModel& model, const Matrix& P_inf);

Vector step_plant(const SystemModel& model, const Vector& x, const Vector& u, const Vector& w);
Vector observe(const SystemModel& model, const Vector& x, const Vector& v);

/// Precomputes the coloring factor of a NoiseSpec.
class NoiseSampler {
  public:
    NoiseSampler() = default;
    explicit NoiseSampler(NoiseSpec spec);

    Vector sample(Rng& rng) const;
    Eigen::Index dim() const { return factor_.rows(); }
    const NoiseSpec& spec() const { return spec_; }

  private:
    NoiseSpec spec_;
    Matrix factor_;
    bool zero_ = true;
};

Vector sample_noise(const NoiseSpec& spec, Rng& rng);

/// Unit-variance scalar draw of the given kind.
double standardized_draw(NoiseKind kind, double dof, Rng& rng);

SystemModel model_from_json(const Json& j);
Json model_to_json(const SystemModel& model);
SystemModel load_model(const std::string& path);

}  // namespace cpsattack
