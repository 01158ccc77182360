#include "cpsattack/estimation_defense.hpp"

#include "cpsattack/gaussian.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace cpsattack {

DetectorConfig DetectorConfig::make(const SteadyStateKalman& ssk, double eta) {
    if (!(eta >= 0.0)) throw std::invalid_argument("DetectorConfig: eta must be nonnegative");
    return DetectorConfig{eta, ssk.P_r, ssk.P_r_inv};
}

MitigationKind mitigation_kind_from_string(const std::string& s) {
    if (s == "perfect") return MitigationKind::perfect;
    if (s == "noisy") return MitigationKind::noisy;
    if (s == "model_only") return MitigationKind::model_only;
    throw std::invalid_argument("unknown mitigation kind '" + s + "'");
}

std::string to_string(MitigationKind k) {
    switch (k) {
        case MitigationKind::perfect: return "perfect";
        case MitigationKind::noisy: return "noisy";
        case MitigationKind::model_only: return "model_only";
    }
    return "perfect";
}

Vector residual(const Vector& x_hat, const Vector& u, const Vector& y_a, const SystemModel& model) {
    require_dims(x_hat.size() == model.n() && u.size() == model.p() && y_a.size() == model.m(),
                 "residual: dimension mismatch");
    return y_a - model.C * (model.A * x_hat + model.B * u);
}

Detection detect(const Vector& r, const DetectorConfig& cfg) {
    require_dims(r.size() == cfg.P_r_inv.rows(), "detect: residual length does not match P_r");
    Detection d;
    d.g = r.dot(cfg.P_r_inv * r);
    d.alarm = d.g > cfg.eta ? 1 : 0;
    return d;
}

MitigatedMeasurement mitigate(const Vector& y_a, int alarm, const MitigationStrategy& strategy, const Vector& a_true,
                              Rng& rng) {
    require_dims(a_true.size() == y_a.size(), "mitigate: attack and measurement lengths differ");
    MitigatedMeasurement out{y_a, Vector::Zero(y_a.size()), false};
    if (!alarm) return out;
    switch (strategy.kind) {
        case MitigationKind::perfect: out.delta = a_true; break;
        case MitigationKind::noisy:
            out.delta = a_true;
            for (Eigen::Index i = 0; i < out.delta.size(); ++i) out.delta(i) += strategy.sigma_mit * standard_normal(rng);
            break;
        case MitigationKind::model_only: out.skip_innovation = true; return out;
    }
    out.y_f = y_a - out.delta;
    return out;
}

Vector kf_update(const Vector& x_hat, const Vector& u, const Vector& y_f, const SystemModel& model,
                 const SteadyStateKalman& ssk) {
    require_dims(x_hat.size() == model.n() && u.size() == model.p() && y_f.size() == model.m(),
                 "kf_update: dimension mismatch");
    const Vector pred = model.A * x_hat + model.B * u;
    return pred + ssk.K * (y_f - model.C * pred);
}

Vector kf_update(const Vector& x_hat, const Vector& u, const MitigatedMeasurement& y_f, const SystemModel& model,
                 const SteadyStateKalman& ssk) {
    if (y_f.skip_innovation) {
        require_dims(x_hat.size() == model.n() && u.size() == model.p(), "kf_update: dimension mismatch");
        return model.A * x_hat + model.B * u;
    }
    return kf_update(x_hat, u, y_f.y_f, model, ssk);
}

Vector attacker_kf_update(const Vector& x_hat_a, const Vector& u, const Vector& y_true, const SystemModel& model,
                          const SteadyStateKalman& ssk) {
    return kf_update(x_hat_a, u, y_true, model, ssk);
}

Vector error_step(const Vector& e, const Vector& w, const Vector& v, const Vector& a, int alarm, const Vector& delta,
                  const SteadyStateKalman& ssk) {
    require_dims(e.size() == ssk.A_K.rows() && w.size() == ssk.W_K.cols() && v.size() == ssk.K.cols() &&
                     a.size() == ssk.K.cols() && delta.size() == ssk.K.cols(),
                 "error_step: dimension mismatch");
    const Vector am = alarm ? Vector(a - delta) : a;
    return ssk.A_K * e + ssk.W_K * w - ssk.K * am - ssk.K * v;
}

double detection_probability_scalar(double e, double a, const SystemModel& model, const SteadyStateKalman& ssk,
                                    double eta) {
    const double c = model.C(0, 0), A = model.A(0, 0);
    const double mean = c * A * e + a;
    const double sd = std::sqrt(c * model.Q(0, 0) * c + model.R(0, 0));
    const double tau = std::sqrt(eta * ssk.P_r(0, 0));
    return 1.0 - normal_interval_prob(mean, sd, -tau, tau);
}

double detection_probability(const Vector& e, const Vector& a, const SystemModel& model,
                             const SteadyStateKalman& ssk, const DetectorConfig& cfg, int n_samples, Rng& rng) {
    if (n_samples < 100) throw std::invalid_argument("detection_probability: n_samples must be >= 100");
    require_dims(e.size() == model.n() && a.size() == model.m(), "detection_probability: dimension mismatch");
    if (model.n() == 1 && model.m() == 1) return detection_probability_scalar(e(0), a(0), model, ssk, cfg.eta);
    const NoiseSampler wq(NoiseSpec{NoiseKind::gaussian, model.Q, 4.0});
    const NoiseSampler vr(NoiseSpec{NoiseKind::gaussian, model.R, 4.0});
    const Vector base = model.C * model.A * e + a;
    long hits = 0;
    for (int s = 0; s < n_samples; ++s) {
        const Vector r = base + model.C * wq.sample(rng) + vr.sample(rng);
        hits += detect(r, cfg).alarm;
    }
    return static_cast<double>(hits) / n_samples;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const std::string& header_comment) {
    if (!header_comment.empty()) out << header_comment << '\n';
    if (traj.empty()) {
        out << "t,g,i\n";
        return;
    }
    const auto& f = traj.front();
    out << "t";
    auto cols = [&](const char* prefix, Eigen::Index k) {
        for (Eigen::Index i = 1; i <= k; ++i) out << ',' << prefix << i;
    };
    cols("x_", f.x.size());
    cols("xhat_", f.x_hat.size());
    cols("xhata_", f.x_hat_a.size());
    cols("y_", f.y.size());
    cols("a_", f.a.size());
    out << ",g,i";
    cols("u_", f.u.size());
    out << '\n';
    out << std::setprecision(17);
    auto vals = [&](const Vector& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << v(i);
    };
    for (const auto& s : traj) {
        out << s.t;
        vals(s.x);
        vals(s.x_hat);
        vals(s.x_hat_a);
        vals(s.y);
        vals(s.a);
        out << ',' << s.g << ',' << s.alarm;
        vals(s.u);
        out << '\n';
    }
}

}  // namespace cpsattack
