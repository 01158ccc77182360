#include "cpsattack/system_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cpsattack {

namespace {

constexpr double kEigTol = 1e-10;

std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool is_symmetric(const Matrix& m) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= kEigTol * scale;
}

double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

Eigen::Index numeric_rank(const Matrix& m) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double tol = std::max(m.rows(), m.cols()) * std::max(s(0), 1.0) * 1e-12;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > tol) ++r;
    return r;
}

ModelCheck covariance_check(const std::string& name, const Matrix& m, Eigen::Index expected, bool definite) {
    ModelCheck c{name, false, ""};
    if (m.rows() != expected || m.cols() != expected) {
        c.detail = name + " is " + dims(m) + ", expected " + std::to_string(expected) + "x" + std::to_string(expected);
        return c;
    }
    if (!is_symmetric(m)) {
        c.detail = name + " not symmetric";
        return c;
    }
    const double lam = min_eigenvalue(m);
    c.passed = definite ? lam > kEigTol : lam >= -kEigTol;
    std::ostringstream os;
    os << name << " min eigenvalue " << lam << (definite ? " (must be > 1e-10)" : " (must be >= -1e-10)");
    c.detail = os.str();
    return c;
}

}  // namespace

NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "logistic") return NoiseKind::logistic;
    if (s == "student_t") return NoiseKind::student_t;
    throw std::invalid_argument("unknown noise kind '" + s + "'");
}

std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::logistic: return "logistic";
        case NoiseKind::student_t: return "student_t";
    }
    return "gaussian";
}

SystemModel SystemModel::scalar(double a, double b, double c, double q, double r) {
    SystemModel m;
    m.A = Matrix::Constant(1, 1, a);
    m.B = Matrix::Constant(1, 1, b);
    m.C = Matrix::Constant(1, 1, c);
    m.Q = Matrix::Constant(1, 1, q);
    m.R = Matrix::Constant(1, 1, r);
    return m;
}

bool ValidationReport::ok() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return !checks.empty();
}

const ModelCheck* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

std::string ValidationReport::summary() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& c : checks) {
        if (c.passed) continue;
        if (!first) os << "; ";
        os << c.name << ": " << c.detail;
        first = false;
    }
    return first ? "all checks passed" : os.str();
}

ValidationReport validate_model(const SystemModel& model) {
    ValidationReport rep;
    const Matrix& A = model.A;
    const Matrix& B = model.B;
    const Matrix& C = model.C;

    ModelCheck finite{"finite", true, ""};
    for (const Matrix* mp : {&A, &B, &C, &model.Q, &model.R, &model.X0}) {
        if (!mp->allFinite()) {
            finite.passed = false;
            finite.detail = "non-finite matrix entry";
        }
    }
    if (A.size() == 0 || B.size() == 0 || C.size() == 0 || model.Q.size() == 0 || model.R.size() == 0) {
        finite.passed = false;
        finite.detail = "empty matrix";
    }
    rep.checks.push_back(finite);

    ModelCheck dim{"dimensions", true, ""};
    std::ostringstream why;
    if (A.rows() != A.cols()) why << "A is " << dims(A) << ", must be square; ";
    if (B.rows() != A.rows()) why << "A/B mismatch: A is " << dims(A) << ", B is " << dims(B) << "; ";
    if (C.cols() != A.cols()) why << "A/C mismatch: A is " << dims(A) << ", C is " << dims(C) << "; ";
    dim.detail = why.str();
    dim.passed = dim.detail.empty();
    rep.checks.push_back(dim);

    const Eigen::Index n = A.rows();
    rep.checks.push_back(covariance_check("Q", model.Q, n, false));
    rep.checks.push_back(covariance_check("R", model.R, C.rows(), true));
    if (model.X0.size() != 0) rep.checks.push_back(covariance_check("X0", model.X0, n, false));

    if (dim.passed && finite.passed) {
        Matrix ctrb(n, n * B.cols());
        Matrix blk = B;
        for (Eigen::Index i = 0; i < n; ++i) {
            ctrb.middleCols(i * B.cols(), B.cols()) = blk;
            blk = A * blk;
        }
        const auto rc = numeric_rank(ctrb);
        rep.checks.push_back({"controllability", rc == n,
                              "controllability matrix rank " + std::to_string(rc) + " of " + std::to_string(n)});

        Matrix obsv(n * C.rows(), n);
        blk = C;
        for (Eigen::Index i = 0; i < n; ++i) {
            obsv.middleRows(i * C.rows(), C.rows()) = blk;
            blk = blk * A;
        }
        const auto ro = numeric_rank(obsv);
        rep.checks.push_back({"observability", ro == n,
                              "observability matrix rank " + std::to_string(ro) + " of " + std::to_string(n)});
    }
    return rep;
}

void require_valid(const SystemModel& model) {
    auto rep = validate_model(model);
    if (!rep.ok()) throw ModelError(rep);
}

Matrix riccati_map(const SystemModel& model, const Matrix& P) {
    const Matrix& A = model.A;
    const Matrix& C = model.C;
    const Matrix S = C * P * C.transpose() + model.R;
    const Matrix APCt = A * P * C.transpose();
    Matrix next = A * P * A.transpose() + model.Q - APCt * S.ldlt().solve(APCt.transpose());
    return 0.5 * (next + next.transpose());
}

SteadyStateKalman steady_state_from(const SystemModel& model, const Matrix& P_inf) {
    SteadyStateKalman ss;
    const Eigen::Index n = model.n();
    const Matrix& C = model.C;
    ss.P_inf = P_inf;
    ss.P_r = C * P_inf * C.transpose() + model.R;
    ss.P_r = 0.5 * (ss.P_r + ss.P_r.transpose());
    ss.P_r_inv = ss.P_r.inverse();
    ss.K = P_inf * C.transpose() * ss.P_r_inv;
    ss.W_K = Matrix::Identity(n, n) - ss.K * C;
    ss.A_K = model.A - ss.K * C * model.A;
    ss.P_e = ss.W_K * P_inf;
    ss.P_e = 0.5 * (ss.P_e + ss.P_e.transpose());
    ss.residual = (P_inf - riccati_map(model, P_inf)).norm();
    return ss;
}

SteadyStateKalman solve_riccati(const SystemModel& model, double tol, int max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve_riccati: tol must be positive");
    require_valid(model);
    Matrix P = model.X0.size() != 0 ? model.X0 : model.Q;
    double diff = 0.0;
    for (int it = 1; it <= max_iter; ++it) {
        Matrix next = riccati_map(model, P);
        diff = (next - P).norm();
        P = std::move(next);
        if (!P.allFinite()) break;
        if (diff < tol) {
            auto ss = steady_state_from(model, P);
            ss.iterations = it;
            return ss;
        }
    }
    throw ConvergenceError("Riccati iteration did not converge in " + std::to_string(max_iter) + " iterations", diff);
}

Vector step_plant(const SystemModel& model, const Vector& x, const Vector& u, const Vector& w) {
    require_dims(x.size() == model.n() && w.size() == model.n() && u.size() == model.p(),
                 "step_plant: expected x,w of length " + std::to_string(model.n()) + " and u of length " +
                     std::to_string(model.p()));
    return model.A * x + model.B * u + w;
}

Vector observe(const SystemModel& model, const Vector& x, const Vector& v) {
    require_dims(x.size() == model.n() && v.size() == model.m(),
                 "observe: expected x of length " + std::to_string(model.n()) + " and v of length " +
                     std::to_string(model.m()));
    return model.C * x + v;
}

double standardized_draw(NoiseKind kind, double dof, Rng& rng) {
    switch (kind) {
        case NoiseKind::gaussian: return standard_normal(rng);
        case NoiseKind::logistic: {
            // Logistic(0, s) has variance s^2 pi^2 / 3.
            double u = uniform01(rng);
            while (u <= 0.0 || u >= 1.0) u = uniform01(rng);
            const double s = std::sqrt(3.0) / std::numbers::pi;
            return s * std::log(u / (1.0 - u));
        }
        case NoiseKind::student_t: {
            std::student_t_distribution<double> t(dof);
            return t(rng) * std::sqrt((dof - 2.0) / dof);
        }
    }
    return 0.0;
}

NoiseSampler::NoiseSampler(NoiseSpec spec) : spec_(std::move(spec)) {
    const Matrix& cov = spec_.covariance;
    require_dims(cov.rows() == cov.cols(), "NoiseSpec: covariance must be square");
    if (spec_.kind == NoiseKind::student_t && !(spec_.dof > 2.0))
        throw std::invalid_argument("NoiseSpec: student_t dof must be > 2");
    const auto n = cov.rows();
    zero_ = cov.size() == 0 || cov.cwiseAbs().maxCoeff() == 0.0;
    if (zero_) {
        factor_ = Matrix::Zero(n, n);
        return;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() < -kEigTol)
        throw std::invalid_argument("NoiseSpec: covariance not positive semidefinite");
    factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vector NoiseSampler::sample(Rng& rng) const {
    const auto n = factor_.rows();
    if (zero_) return Vector::Zero(n);
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = standardized_draw(spec_.kind, spec_.dof, rng);
    return factor_ * z;
}

Vector sample_noise(const NoiseSpec& spec, Rng& rng) { return NoiseSampler(spec).sample(rng); }

SystemModel model_from_json(const Json& j) {
    if (!j.is_object()) throw std::invalid_argument("model file: expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k != "A" && k != "B" && k != "C" && k != "Q" && k != "R" && k != "X0" && k != "noise")
            throw std::invalid_argument("model file: unknown key '" + k + "'");
    }
    SystemModel m;
    for (const char* key : {"A", "B", "C", "Q", "R"})
        if (!j.contains(key)) throw std::invalid_argument(std::string("model file: missing key '") + key + "'");
    m.A = matrix_from_json(j.at("A"), "A");
    m.B = matrix_from_json(j.at("B"), "B");
    m.C = matrix_from_json(j.at("C"), "C");
    m.Q = matrix_from_json(j.at("Q"), "Q");
    m.R = matrix_from_json(j.at("R"), "R");
    if (j.contains("X0")) m.X0 = matrix_from_json(j.at("X0"), "X0");
    if (j.contains("noise")) {
        const Json& nz = j.at("noise");
        m.noise_kind = noise_kind_from_string(nz.value("kind", std::string("gaussian")));
        m.noise_dof = nz.value("dof", 4.0);
        if (*m.noise_kind == NoiseKind::student_t && !(m.noise_dof > 2.0))
            throw std::invalid_argument("model file: student_t dof must be > 2");
    }
    return m;
}

Json model_to_json(const SystemModel& model) {
    Json j;
    j["A"] = matrix_to_json(model.A);
    j["B"] = matrix_to_json(model.B);
    j["C"] = matrix_to_json(model.C);
    j["Q"] = matrix_to_json(model.Q);
    j["R"] = matrix_to_json(model.R);
    if (model.X0.size() != 0) j["X0"] = matrix_to_json(model.X0);
    if (model.noise_kind) j["noise"] = {{"kind", to_string(*model.noise_kind)}, {"dof", model.noise_dof}};
    return j;
}

SystemModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace cpsattack
