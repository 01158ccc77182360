#include "cpsattack/voltage_control.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace cpsattack {

namespace {

double cond(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    return smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
}

Vector broadcast(const Json& j, int n, const char* name) {
    if (j.is_number()) return Vector::Constant(n, j.get<double>());
    Vector v = vector_from_json(j, name);
    require_dims(v.size() == n, std::string(name) + " must have n_pilot entries");
    return v;
}

Matrix matrix_or_scalar(const Json& j, int n, const char* name) {
    if (j.is_number()) return j.get<double>() * Matrix::Identity(n, n);
    return matrix_from_json(j, name);
}

Vector scale_to_cap(Vector a, double a_max, AttackNorm norm) {
    const double nrm = attack_norm(a, norm);
    if (nrm > a_max && nrm > 0.0) a *= a_max / nrm;
    return a;
}

}  // namespace

SystemModel GridScenario::model() const {
    SystemModel m;
    const Eigen::Index n = n_pilot;
    m.A = Matrix::Identity(n, n);
    m.B = B;
    m.C = Matrix::Identity(n, n);
    m.Q = process_sigma * process_sigma * Matrix::Identity(n, n);
    m.R = measurement_sigma * measurement_sigma * Matrix::Identity(n, n);
    return m;
}

double GridScenario::condition_number() const { return cond(B); }

ActionSet GridScenario::actions(const Vector& mask) const {
    require_dims(mask.size() == n_pilot, "attack mask must have n_pilot entries");
    const double unit = cpsattack::attack_norm(mask, attack_norm);
    if (!(unit > 0.0)) throw std::invalid_argument("attack mask is all zero");
    return make_uniform_actions(mask, action_step, a_max / unit * (1.0 + 1e-12), attack_norm, a_max);
}

void GridScenario::validate() const {
    if (n_pilot < 1) throw std::invalid_argument("scenario: n_pilot must be >= 1");
    require_dims(x0.size() == n_pilot && x_init.size() == n_pilot, "scenario: x0/x_init must have n_pilot entries");
    require_dims(B.rows() == n_pilot && B.cols() == n_pilot, "scenario: B must be n_pilot x n_pilot");
    if (!(alpha_ctrl > 0.0 && alpha_ctrl <= 1.0)) throw std::invalid_argument("scenario: alpha_ctrl must be in (0, 1]");
    if (!(process_sigma >= 0.0) || !(measurement_sigma > 0.0))
        throw std::invalid_argument("scenario: noise sigmas must be >= 0 (measurement > 0)");
    if (!(a_max >= 0.0) || !(action_step > 0.0)) throw std::invalid_argument("scenario: bad a_max/action_step");
    if (!std::isfinite(condition_number())) throw std::invalid_argument("scenario: B is singular");
    if (grid) require_dims(grid->dims() == n_pilot, "scenario: grid dimension must equal n_pilot");
}

GridScenario scenario_from_json(const Json& j) {
    static const std::vector<std::string> known{"name", "n_pilot", "x0", "x_init", "alpha_ctrl", "B", "noise",
                                                "a_max", "action_step", "eta", "attack_norm", "grid", "description"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::invalid_argument("scenario: unknown key '" + k + "'");
    GridScenario s;
    s.name = j.at("name").get<std::string>();
    s.n_pilot = j.at("n_pilot").get<int>();
    if (s.n_pilot < 1) throw std::invalid_argument("scenario: n_pilot must be >= 1");
    s.x0 = broadcast(j.at("x0"), s.n_pilot, "x0");
    s.x_init = broadcast(j.at("x_init"), s.n_pilot, "x_init");
    s.alpha_ctrl = j.value("alpha_ctrl", 1.0);
    s.B = matrix_or_scalar(j.at("B"), s.n_pilot, "B");
    if (j.contains("noise")) {
        s.process_sigma = j.at("noise").value("process_sigma", s.process_sigma);
        s.measurement_sigma = j.at("noise").value("measurement_sigma", s.measurement_sigma);
    }
    s.a_max = j.value("a_max", s.a_max);
    s.action_step = j.value("action_step", s.action_step);
    s.eta = j.value("eta", s.eta);
    s.attack_norm = j.value("attack_norm", std::string("l2")) == "linf" ? AttackNorm::linf : AttackNorm::l2;
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        s.grid = ErrorGrid(broadcast(g.at("lower"), s.n_pilot, "grid.lower"),
                           broadcast(g.at("upper"), s.n_pilot, "grid.upper"), g.at("levels").get<int>(),
                           g.value("convention", std::string("cell_center")) == "node" ? GridConvention::node
                                                                                       : GridConvention::cell_center);
    }
    s.validate();
    return s;
}

Json scenario_to_json(const GridScenario& s) {
    Json j;
    j["name"] = s.name;
    j["n_pilot"] = s.n_pilot;
    j["x0"] = vector_to_json(s.x0);
    j["x_init"] = vector_to_json(s.x_init);
    j["alpha_ctrl"] = s.alpha_ctrl;
    j["B"] = matrix_to_json(s.B);
    j["noise"] = {{"process_sigma", s.process_sigma}, {"measurement_sigma", s.measurement_sigma}};
    j["a_max"] = s.a_max;
    j["action_step"] = s.action_step;
    j["eta"] = s.eta;
    j["attack_norm"] = s.attack_norm == AttackNorm::linf ? "linf" : "l2";
    if (s.grid) j["grid"] = grid_to_json(*s.grid);
    return j;
}

GridScenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

Vector control_law(const Vector& x_hat, const GridScenario& scenario) {
    require_dims(x_hat.size() == scenario.n_pilot, "control_law: x_hat dimension mismatch");
    Eigen::FullPivLU<Matrix> lu(scenario.B);
    if (!lu.isInvertible()) throw std::invalid_argument("control_law: B is singular");
    return scenario.alpha_ctrl * lu.solve(Vector(scenario.x0 - x_hat));
}

TraceDataset read_traces_csv(std::istream& in) {
    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
        break;
    }
    if (header.empty()) throw ParseError("trace CSV: missing header", lineno);
    int n = 0, n_after = 0, p = 0;
    for (const auto& h : header) {
        if (h.rfind("x_before_", 0) == 0) ++n;
        else if (h.rfind("x_after_", 0) == 0) ++n_after;
        else if (h.rfind("u_", 0) == 0) ++p;
        else throw ParseError("trace CSV: unexpected column '" + h + "'", lineno);
    }
    if (n == 0 || n != n_after || p == 0)
        throw ParseError("trace CSV: header needs x_before_1..n, x_after_1..n, u_1..p", lineno);
    for (int i = 0; i < n; ++i) {
        if (header[static_cast<std::size_t>(i)] != "x_before_" + std::to_string(i + 1) ||
            header[static_cast<std::size_t>(n + i)] != "x_after_" + std::to_string(i + 1))
            throw ParseError("trace CSV: columns out of order", lineno);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double x;
            try {
                x = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw ParseError("trace CSV: bad number '" + cell + "'", lineno);
            }
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
            if (used != cell.size() || !std::isfinite(x))
                throw ParseError("trace CSV: bad number '" + cell + "'", lineno);
            row.push_back(x);
        }
        if (row.size() != header.size()) {
            std::ostringstream os;
            os << "trace CSV: expected " << header.size() << " fields, got " << row.size();
            throw ParseError(os.str(), lineno);
        }
        rows.push_back(std::move(row));
    }
    TraceDataset t;
    const auto N = static_cast<Eigen::Index>(rows.size());
    t.x_before.resize(N, n);
    t.x_after.resize(N, n);
    t.u.resize(N, p);
    for (Eigen::Index r = 0; r < N; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        for (int i = 0; i < n; ++i) {
            t.x_before(r, i) = row[static_cast<std::size_t>(i)];
            t.x_after(r, i) = row[static_cast<std::size_t>(n + i)];
        }
        for (int k = 0; k < p; ++k) t.u(r, k) = row[static_cast<std::size_t>(2 * n + k)];
    }
    return t;
}

TraceDataset read_traces_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file " + path);
    return read_traces_csv(in);
}

void write_traces_csv(std::ostream& out, const TraceDataset& t) {
    const Eigen::Index n = t.x_before.cols(), p = t.u.cols();
    for (Eigen::Index i = 0; i < n; ++i) out << "x_before_" << i + 1 << ',';
    for (Eigen::Index i = 0; i < n; ++i) out << "x_after_" << i + 1 << ',';
    for (Eigen::Index k = 0; k < p; ++k) out << "u_" << k + 1 << (k + 1 < p ? "," : "\n");
    char buf[64];
    for (Eigen::Index r = 0; r < t.records(); ++r) {
        std::string line;
        auto put = [&](double x) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            if (!line.empty()) line += ',';
            line += buf;
        };
        for (Eigen::Index i = 0; i < n; ++i) put(t.x_before(r, i));
        for (Eigen::Index i = 0; i < n; ++i) put(t.x_after(r, i));
        for (Eigen::Index k = 0; k < p; ++k) put(t.u(r, k));
        out << line << '\n';
    }
}

BFit estimate_B(const TraceDataset& t) {
    const Eigen::Index N = t.records(), n = t.x_before.cols(), p = t.u.cols();
    require_dims(t.x_after.rows() == N && t.u.rows() == N && t.x_after.cols() == n, "estimate_B: ragged traces");
    if (N < n * p || N < p) {
        std::ostringstream os;
        os << "estimate_B: " << N << " records cannot identify a " << n << "x" << p << " matrix (need >= " << n * p
           << ")";
        throw std::invalid_argument(os.str());
    }
    if (!t.x_before.allFinite() || !t.x_after.allFinite() || !t.u.allFinite())
        throw std::invalid_argument("estimate_B: non-finite trace entries");
    Eigen::ColPivHouseholderQR<Matrix> qr(t.u);
    if (qr.rank() < p) throw std::invalid_argument("estimate_B: control inputs are rank deficient");
    const Matrix dX = t.x_after - t.x_before;
    const Matrix Bt = qr.solve(dX);
    BFit fit;
    fit.B = Bt.transpose();
    fit.records = N;
    fit.residual_rms = std::sqrt((dX - t.u * Bt).squaredNorm() / static_cast<double>(dX.size()));
    fit.condition_number = cond(t.u);
    return fit;
}

TraceDataset synthesize_traces(const Matrix& B, int records, double process_sigma, double u_scale, Rng& rng) {
    const Eigen::Index n = B.rows(), p = B.cols();
    TraceDataset t;
    t.x_before.resize(records, n);
    t.x_after.resize(records, n);
    t.u.resize(records, p);
    for (int r = 0; r < records; ++r) {
        for (Eigen::Index i = 0; i < n; ++i) t.x_before(r, i) = 0.9 + 0.2 * uniform01(rng);
        for (Eigen::Index k = 0; k < p; ++k) t.u(r, k) = u_scale * standard_normal(rng);
        const Vector dx = B * t.u.row(r).transpose();
        for (Eigen::Index i = 0; i < n; ++i)
            t.x_after(r, i) = t.x_before(r, i) + dx(i) + process_sigma * standard_normal(rng);
    }
    return t;
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none") return AttackKind::none;
    if (s == "ramp") return AttackKind::ramp;
    if (s == "surge") return AttackKind::surge;
    if (s == "random") return AttackKind::random;
    if (s == "policy") return AttackKind::policy;
    throw std::invalid_argument("unknown attack kind '" + s + "'");
}

std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::ramp: return "ramp";
        case AttackKind::surge: return "surge";
        case AttackKind::random: return "random";
        case AttackKind::policy: return "policy";
    }
    return "none";
}

AttackSequenceSpec attack_spec_from_json(const Json& j) {
    static const std::vector<std::string> known{"kind", "slope", "magnitude", "start", "bound", "policy", "mask"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::invalid_argument("attack: unknown key '" + k + "'");
    AttackSequenceSpec s;
    s.kind = attack_kind_from_string(j.value("kind", std::string("none")));
    s.slope = j.value("slope", s.slope);
    s.magnitude = j.value("magnitude", s.magnitude);
    s.start = j.value("start", s.start);
    s.bound = j.value("bound", s.bound);
    s.policy_path = j.value("policy", std::string());
    if (j.contains("mask")) s.mask = vector_from_json(j.at("mask"), "mask");
    return s;
}

Json attack_spec_to_json(const AttackSequenceSpec& s) {
    Json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case AttackKind::ramp: j["slope"] = s.slope; break;
        case AttackKind::surge:
            j["magnitude"] = s.magnitude;
            j["start"] = s.start;
            break;
        case AttackKind::random: j["bound"] = s.bound; break;
        case AttackKind::policy: j["policy"] = s.policy_path; break;
        case AttackKind::none: break;
    }
    if (s.mask.size()) j["mask"] = vector_to_json(s.mask);
    return j;
}

Vector generate_attack(const AttackSequenceSpec& spec, int t, const Vector& e_est, const GridScenario& scenario,
                       const AttackPolicy* policy, Rng& rng) {
    const Eigen::Index m = scenario.n_pilot;
    const Vector mask = spec.mask.size() ? spec.mask : Vector::Ones(m);
    require_dims(mask.size() == m, "attack mask must have n_pilot entries");
    switch (spec.kind) {
        case AttackKind::none: return Vector::Zero(m);
        case AttackKind::ramp: return scale_to_cap(mask * (spec.slope * t), scenario.a_max, scenario.attack_norm);
        case AttackKind::surge:
            return t >= spec.start ? scale_to_cap(mask * spec.magnitude, scenario.a_max, scenario.attack_norm)
                                   : Vector::Zero(m);
        case AttackKind::random: {
            Vector a(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                const double u = spec.bound * (2.0 * uniform01(rng) - 1.0);
                a(i) = mask(i) * std::clamp(u, -scenario.a_max, scenario.a_max);
            }
            return scale_to_cap(a, scenario.a_max, scenario.attack_norm);
        }
        case AttackKind::policy: {
            if (!policy) throw std::invalid_argument("policy attack requested without a policy artifact");
            const auto& acts = policy->actions();
            const Vector& a = acts[policy->act(e_est, t - 1)];
            require_dims(a.size() == m, "policy action dimension does not match the scenario");
            return a;
        }
    }
    return Vector::Zero(m);
}

namespace {

struct RunRecord {
    Trajectory traj;
    std::vector<Vector> x, x_hat, x_hat_a;
    std::vector<int> alarm;
    std::vector<double> sq_error;
    double cumulative = 0.0;
    double tracking = 0.0, abs_error = 0.0;
};

RunRecord simulate_run(const GridScenario& sc, const SystemModel& model, const SteadyStateKalman& ssk,
                       const DetectorConfig& det, const AttackSequenceSpec& attack, const SimulationOptions& opts,
                       const AttackPolicy* policy, const NoiseSampler& w, const NoiseSampler& v, std::uint64_t run) {
    Rng plant = make_rng(opts.seed, run, "plant");
    Rng attack_rng = make_rng(opts.seed, run, "attack");
    Rng mit_rng = make_rng(opts.seed, run, "mitigation");
    RunRecord rec;
    Vector x = sc.x_init, x_hat = sc.x_init, x_hat_a = sc.x_init;
    for (int t = 1; t <= opts.horizon; ++t) {
        const Vector u = control_law(x_hat, sc);
        x = step_plant(model, x, u, w.sample(plant));
        const Vector y = observe(model, x, v.sample(plant));
        const Vector a = generate_attack(attack, t, Vector(x_hat_a - x_hat), sc, policy, attack_rng);
        const Vector y_a = y + a;
        const Detection d = detect(residual(x_hat, u, y_a, model), det);
        const MitigatedMeasurement mm = mitigate(y_a, d.alarm, opts.mitigation, a, mit_rng);
        x_hat = kf_update(x_hat, u, mm, model, ssk);
        x_hat_a = attacker_kf_update(x_hat_a, u, y, model, ssk);
        const double sq = (x - x_hat).squaredNorm();
        rec.cumulative += sq;
        rec.x.push_back(x);
        rec.x_hat.push_back(x_hat);
        rec.x_hat_a.push_back(x_hat_a);
        rec.alarm.push_back(d.alarm);
        rec.sq_error.push_back(sq);
        rec.tracking += (x - x_hat_a).cwiseAbs().sum();
        rec.abs_error += (x_hat - x).cwiseAbs().sum();
        if (opts.keep_trajectories) rec.traj.push_back({t, x, x_hat, x_hat_a, y_a, a, u, d.g, d.alarm});
    }
    return rec;
}

}  // namespace

SimulationResult closed_loop_simulate(const GridScenario& scenario, const AttackSequenceSpec& attack,
                                      const SimulationOptions& opts, const AttackPolicy* policy) {
    scenario.validate();
    if (opts.runs < 1 || opts.horizon < 1) throw std::invalid_argument("simulate: runs and horizon must be positive");
    if (attack.kind == AttackKind::policy && !policy)
        throw std::invalid_argument("simulate: policy attack without a loaded policy (" + attack.policy_path + ")");
    const SystemModel model = scenario.model();
    const SteadyStateKalman ssk = solve_riccati(model);
    const DetectorConfig det = DetectorConfig::make(ssk, opts.eta);
    const NoiseSampler w(NoiseSpec{NoiseKind::gaussian, model.Q, 4.0});
    const NoiseSampler v(NoiseSpec{opts.measurement_noise, model.R, opts.noise_dof});

    std::vector<RunRecord> recs(static_cast<std::size_t>(opts.runs));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int k = next++; k < opts.runs; k = next++)
            recs[static_cast<std::size_t>(k)] = simulate_run(scenario, model, ssk, det, attack, opts, policy, w, v,
                                                             static_cast<std::uint64_t>(k));
    };
    const int nw = std::max(1, std::min(opts.workers, opts.runs));
    if (nw == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    SimulationResult res;
    auto& s = res.summary;
    const auto T = static_cast<std::size_t>(opts.horizon);
    const Eigen::Index n = scenario.n_pilot;
    s.mean_x.assign(T, Vector::Zero(n));
    s.mean_x_hat.assign(T, Vector::Zero(n));
    s.mean_x_hat_a.assign(T, Vector::Zero(n));
    s.detection_prob.assign(T, 0.0);
    s.mean_sq_error.assign(T, 0.0);
    double s1 = 0.0, s2 = 0.0, track = 0.0, abs_err = 0.0;
    for (auto& r : recs) {
        for (std::size_t t = 0; t < T; ++t) {
            s.mean_x[t] += r.x[t];
            s.mean_x_hat[t] += r.x_hat[t];
            s.mean_x_hat_a[t] += r.x_hat_a[t];
            s.detection_prob[t] += r.alarm[t];
            s.mean_sq_error[t] += r.sq_error[t];
        }
        s1 += r.cumulative;
        s2 += r.cumulative * r.cumulative;
        track += r.tracking;
        abs_err += r.abs_error;
        res.cumulative_error.push_back(r.cumulative);
        if (opts.keep_trajectories) res.trajectories.push_back(std::move(r.traj));
    }
    const double R = opts.runs;
    for (std::size_t t = 0; t < T; ++t) {
        s.mean_x[t] /= R;
        s.mean_x_hat[t] /= R;
        s.mean_x_hat_a[t] /= R;
        s.detection_prob[t] /= R;
        s.mean_sq_error[t] /= R;
    }
    s.mean_cumulative_error = s1 / R;
    s.cumulative_error_se =
        opts.runs > 1 ? std::sqrt(std::max(0.0, (s2 - R * s.mean_cumulative_error * s.mean_cumulative_error) / (R - 1)) / R)
                      : 0.0;
    s.mean_final_deviation = s.mean_x.back() - scenario.x0;
    s.mean_final_est_deviation = s.mean_x_hat.back() - scenario.x0;
    const double cells = R * static_cast<double>(T) * static_cast<double>(n);
    s.tracking_discrepancy = track / cells;
    s.mean_abs_error = abs_err / cells;
    return res;
}

void write_summary_csv(std::ostream& out, const SimulationSummary& s, const std::string& header_comment) {
    if (!header_comment.empty()) out << header_comment << '\n';
    const Eigen::Index n = s.mean_x.empty() ? 0 : s.mean_x.front().size();
    out << "t";
    for (Eigen::Index i = 0; i < n; ++i) out << ",mean_x_" << i + 1;
    for (Eigen::Index i = 0; i < n; ++i) out << ",mean_xhat_" << i + 1;
    out << ",detection_prob,mean_sq_error\n";
    char buf[64];
    for (std::size_t t = 0; t < s.mean_x.size(); ++t) {
        out << t + 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, ",%.10g", s.mean_x[t](i));
            out << buf;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, ",%.10g", s.mean_x_hat[t](i));
            out << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.10g,%.10g\n", s.detection_prob[t], s.mean_sq_error[t]);
        out << buf;
    }
}

}  // namespace cpsattack
