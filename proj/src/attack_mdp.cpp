#include "cpsattack/attack_mdp.hpp"

#include "cpsattack/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cpsattack {

bool CellBox::contains(const Vector& e) const {
    for (Eigen::Index i = 0; i < e.size(); ++i)
        if (e(i) < lo(i) || e(i) > hi(i)) return false;
    return true;
}

ErrorGrid::ErrorGrid(Vector lower, Vector upper, int levels, GridConvention convention)
    : lower_(std::move(lower)), upper_(std::move(upper)), levels_(levels), convention_(convention) {
    require_dims(lower_.size() == upper_.size() && lower_.size() > 0, "ErrorGrid: bound vectors must match");
    if (levels_ < 1) throw std::invalid_argument("ErrorGrid: need at least one level per dimension");
    spacing_.resize(lower_.size());
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
        if (!std::isfinite(lower_(i)) || !std::isfinite(upper_(i)) || !(lower_(i) < upper_(i)))
            throw std::invalid_argument("ErrorGrid: bounds must be finite with lower < upper");
        const int divisions = (convention_ == GridConvention::node && levels_ > 1) ? levels_ - 1 : levels_;
        spacing_(i) = (upper_(i) - lower_(i)) / divisions;
    }
    size_ = 1;
    for (Eigen::Index i = 0; i < lower_.size(); ++i) size_ *= static_cast<std::size_t>(levels_);
}

int ErrorGrid::coord_of(double value, Eigen::Index dim) const {
    if (levels_ == 1) return 0;
    double pos = (value - lower_(dim)) / spacing_(dim);
    if (convention_ == GridConvention::node) pos += 0.5;
    if (!(pos > 0.0)) return 0;  // also catches NaN
    const double k = std::floor(pos);
    return k >= levels_ - 1 ? levels_ - 1 : static_cast<int>(k);
}

std::size_t ErrorGrid::cell_of(const Vector& e) const {
    std::size_t idx = 0, stride = 1;
    for (Eigen::Index i = 0; i < dims(); ++i) {
        idx += static_cast<std::size_t>(coord_of(e(i), i)) * stride;
        stride *= static_cast<std::size_t>(levels_);
    }
    return idx;
}

std::vector<int> ErrorGrid::coords(std::size_t cell) const {
    std::vector<int> c(static_cast<std::size_t>(dims()));
    for (auto& k : c) {
        k = static_cast<int>(cell % static_cast<std::size_t>(levels_));
        cell /= static_cast<std::size_t>(levels_);
    }
    return c;
}

std::size_t ErrorGrid::index(const std::vector<int>& c) const {
    std::size_t idx = 0, stride = 1;
    for (int k : c) {
        idx += static_cast<std::size_t>(k) * stride;
        stride *= static_cast<std::size_t>(levels_);
    }
    return idx;
}

double ErrorGrid::center_coord(int k, Eigen::Index dim) const {
    if (levels_ == 1) return 0.5 * (lower_(dim) + upper_(dim));
    if (convention_ == GridConvention::node) return lower_(dim) + k * spacing_(dim);
    return lower_(dim) + (k + 0.5) * spacing_(dim);
}

Vector ErrorGrid::center(std::size_t cell) const {
    const auto c = coords(cell);
    Vector v(dims());
    for (Eigen::Index i = 0; i < dims(); ++i) v(i) = center_coord(c[static_cast<std::size_t>(i)], i);
    return v;
}

double ErrorGrid::edge(int k, Eigen::Index dim) const {
    if (convention_ == GridConvention::node) return lower_(dim) + (k - 0.5) * spacing_(dim);
    return lower_(dim) + k * spacing_(dim);
}

CellBox ErrorGrid::cell_box(std::size_t cell) const {
    const auto c = coords(cell);
    CellBox b{Vector(dims()), Vector(dims())};
    for (Eigen::Index i = 0; i < dims(); ++i) {
        const int k = c[static_cast<std::size_t>(i)];
        b.lo(i) = k == 0 ? -kInf : edge(k, i);
        b.hi(i) = k == levels_ - 1 ? kInf : edge(k + 1, i);
    }
    return b;
}

CellBox ErrorGrid::finite_cell_box(std::size_t cell) const {
    const auto c = coords(cell);
    CellBox b{Vector(dims()), Vector(dims())};
    for (Eigen::Index i = 0; i < dims(); ++i) {
        const int k = c[static_cast<std::size_t>(i)];
        b.lo(i) = k == 0 ? (convention_ == GridConvention::node ? edge(0, i) : lower_(i)) : edge(k, i);
        b.hi(i) = k == levels_ - 1 ? (convention_ == GridConvention::node ? edge(levels_, i) : upper_(i))
                                   : edge(k + 1, i);
    }
    return b;
}

ErrorGrid build_grid(const Vector& lower, const Vector& upper, int levels, GridConvention convention,
                     std::size_t max_cells) {
    if (levels < 1) throw std::invalid_argument("build_grid: levels must be >= 1");
    double cells = 1.0;
    for (Eigen::Index i = 0; i < lower.size(); ++i) cells *= levels;
    if (cells > static_cast<double>(max_cells)) {
        std::ostringstream os;
        os << "build_grid: " << levels << "^" << lower.size() << " = " << cells << " cells exceeds the cap of "
           << max_cells << "; use the function-approximation learners (train --solver qlfa|qnlfa) instead";
        throw GridTooLargeError(os.str());
    }
    return ErrorGrid(lower, upper, levels, convention);
}

std::pair<Vector, Vector> default_grid_bounds(const SteadyStateKalman& ssk, double margin) {
    const Vector half = (6.0 * ssk.P_e.diagonal().cwiseMax(0.0).cwiseSqrt()).array() + margin;
    return {-half, half};
}

double attack_norm(const Vector& a, AttackNorm norm) {
    if (a.size() == 0) return 0.0;
    return norm == AttackNorm::l2 ? a.norm() : a.cwiseAbs().maxCoeff();
}

ActionSet make_uniform_actions(const Vector& mask, double step, double max_level, AttackNorm norm,
                               std::optional<double> a_max) {
    if (!(step > 0.0) || !(max_level >= 0.0)) throw std::invalid_argument("make_uniform_actions: bad step/level");
    ActionSet set;
    set.norm = norm;
    const int count = static_cast<int>(std::floor(max_level / step + 1e-9));
    for (int k = 0; k <= count; ++k) set.actions.push_back(mask * (k * step));
    set.a_max = a_max ? *a_max : attack_norm(set.actions.back(), norm);
    check_action_set(set);
    return set;
}

void check_action_set(const ActionSet& set) {
    bool has_zero = false;
    for (const auto& a : set.actions) {
        if (attack_norm(a, set.norm) > set.a_max * (1.0 + 1e-12) + 1e-15)
            throw std::invalid_argument("action set: attack exceeds a_max");
        if (a.cwiseAbs().maxCoeff() == 0.0) has_zero = true;
    }
    if (!has_zero) throw std::invalid_argument("action set: the zero action is required");
}

double TransitionKernel::prob(std::size_t s, std::size_t a, std::size_t next) const {
    for (const auto& en : row(s, a))
        if (en.next == next) return en.prob;
    return 0.0;
}

namespace {

// Joint Gaussian law of (r, x) for one step from a known scalar error, where
// r is the residual and x the next error on a given detection branch.
struct ScalarBranch {
    double mean_r, var_r;
    double mean_x, var_x, cov_rx;
};

struct ScalarStep {
    double tau;  // no-alarm band |r| <= tau
    ScalarBranch quiet, alarm;
};

ScalarStep scalar_step(double e, double a, const SystemModel& model, const SteadyStateKalman& ssk, double eta,
                       MitigationKind kind, double delta_mean, double delta_var) {
    require_dims(model.n() == 1 && model.m() == 1, "scalar transition requires n = m = 1");
    const double A = model.A(0, 0), C = model.C(0, 0), Q = model.Q(0, 0), R = model.R(0, 0);
    const double K = ssk.K(0, 0), AK = ssk.A_K(0, 0), WK = ssk.W_K(0, 0);
    ScalarStep st;
    st.tau = std::sqrt(eta * ssk.P_r(0, 0));
    const double mean_r = C * A * e + a;
    const double var_r = C * Q * C + R;
    st.quiet = {mean_r, var_r, AK * e - K * a, WK * Q * WK + K * R * K, WK * Q * C - K * R};
    if (kind == MitigationKind::model_only) {
        // Alarm discards the measurement: e' = A e + w.
        st.alarm = {mean_r, var_r, A * e, Q, Q * C};
    } else {
        st.alarm = st.quiet;
        st.alarm.mean_x += K * delta_mean;
        st.alarm.var_x += K * K * delta_var;
    }
    return st;
}

// P(e' <= edge), split by branch.
double scalar_cdf(const ScalarStep& st, double edge) {
    const auto& q = st.quiet;
    const auto& al = st.alarm;
    double p = bivariate_rect_prob(q.mean_r, q.mean_x, q.var_r, q.var_x, q.cov_rx, -st.tau, st.tau, -kInf, edge);
    p += bivariate_rect_prob(al.mean_r, al.mean_x, al.var_r, al.var_x, al.cov_rx, -kInf, -st.tau, -kInf, edge);
    p += bivariate_rect_prob(al.mean_r, al.mean_x, al.var_r, al.var_x, al.cov_rx, st.tau, kInf, -kInf, edge);
    return p;
}

double scalar_interval(const ScalarStep& st, double lo, double hi) {
    if (hi < lo) return 0.0;
    const auto& q = st.quiet;
    const auto& al = st.alarm;
    double p = bivariate_rect_prob(q.mean_r, q.mean_x, q.var_r, q.var_x, q.cov_rx, -st.tau, st.tau, lo, hi);
    p += bivariate_rect_prob(al.mean_r, al.mean_x, al.var_r, al.var_x, al.cov_rx, -kInf, -st.tau, lo, hi);
    p += bivariate_rect_prob(al.mean_r, al.mean_x, al.var_r, al.var_x, al.cov_rx, st.tau, kInf, lo, hi);
    return p;
}

void finalize_row(std::vector<SparseEntry>& row, double& max_deficit) {
    double sum = 0.0;
    for (const auto& en : row) sum += en.prob;
    max_deficit = std::max(max_deficit, std::abs(1.0 - sum));
    if (sum > 0.0)
        for (auto& en : row) en.prob /= sum;
}

}  // namespace

double transition_prob_scalar(double e, double a, double cell_lo, double cell_hi, const SystemModel& model,
                              const SteadyStateKalman& ssk, double eta, double delta_mean, double delta_var) {
    const auto st = scalar_step(e, a, model, ssk, eta, MitigationKind::noisy, delta_mean, delta_var);
    return scalar_interval(st, cell_lo, cell_hi);
}

double transition_prob_scalar(double e, double a, double cell_lo, double cell_hi, const SystemModel& model,
                              const SteadyStateKalman& ssk, const KernelConfig& cfg) {
    const auto st = scalar_step(e, a, model, ssk, cfg.eta, cfg.mitigation.kind, a, cfg.mitigation.delta_variance());
    return scalar_interval(st, cell_lo, cell_hi);
}

Vector sample_next_error(const Vector& e, const Vector& a, const SystemModel& model, const SteadyStateKalman& ssk,
                         const DetectorConfig& det, const MitigationStrategy& mitigation, const NoiseSampler& w,
                         const NoiseSampler& v, Rng& rng, int* alarm_out) {
    const Vector wv = w.sample(rng);
    const Vector vv = v.sample(rng);
    const Vector r = model.C * (model.A * e + wv) + a + vv;
    const int alarm = detect(r, det).alarm;
    if (alarm_out) *alarm_out = alarm;
    if (alarm && mitigation.kind == MitigationKind::model_only) return model.A * e + wv;
    Vector delta = Vector::Zero(a.size());
    if (alarm) {
        delta = a;
        if (mitigation.kind == MitigationKind::noisy)
            for (Eigen::Index i = 0; i < delta.size(); ++i) delta(i) += mitigation.sigma_mit * standard_normal(rng);
    }
    return error_step(e, wv, vv, a, alarm, delta, ssk);
}

double transition_prob_mc(const Vector& e, const Vector& a, const CellBox& box, const SystemModel& model,
                          const SteadyStateKalman& ssk, const KernelConfig& cfg, int n_samples, Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("transition_prob_mc: n_samples must be positive");
    const DetectorConfig det = DetectorConfig::make(ssk, cfg.eta);
    const NoiseSampler w(NoiseSpec{NoiseKind::gaussian, model.Q, 4.0});
    const NoiseSampler v(NoiseSpec{NoiseKind::gaussian, model.R, 4.0});
    long hits = 0;
    for (int i = 0; i < n_samples; ++i)
        if (box.contains(sample_next_error(e, a, model, ssk, det, cfg.mitigation, w, v, rng))) ++hits;
    return static_cast<double>(hits) / n_samples;
}

TransitionKernel build_kernel_scalar(const ErrorGrid& grid, const ActionSet& actions, const SystemModel& model,
                                     const SteadyStateKalman& ssk, const KernelConfig& cfg) {
    require_dims(grid.dims() == 1 && model.n() == 1 && model.m() == 1, "analytic kernel requires a scalar system");
    TransitionKernel k;
    k.num_states = grid.size();
    k.num_actions = actions.size();
    k.method = KernelMethod::analytic_scalar;
    k.rows.resize(k.num_states * k.num_actions);
    const int d = grid.levels();
    std::vector<double> cdf(static_cast<std::size_t>(d) + 1);
    for (std::size_t s = 0; s < k.num_states; ++s) {
        const double e = grid.center(s)(0);
        for (std::size_t ai = 0; ai < k.num_actions; ++ai) {
            const double a = actions[ai](0);
            const auto st =
                scalar_step(e, a, model, ssk, cfg.eta, cfg.mitigation.kind, a, cfg.mitigation.delta_variance());
            cdf[0] = 0.0;
            for (int j = 1; j < d; ++j) cdf[static_cast<std::size_t>(j)] = scalar_cdf(st, grid.edge(j, 0));
            cdf[static_cast<std::size_t>(d)] = scalar_cdf(st, kInf);
            auto& row = k.rows[s * k.num_actions + ai];
            for (int j = 0; j < d; ++j) {
                const double p = cdf[static_cast<std::size_t>(j) + 1] - cdf[static_cast<std::size_t>(j)];
                if (p > 0.0) row.push_back({static_cast<std::uint32_t>(j), p});
            }
            finalize_row(row, k.max_raw_deficit);
        }
    }
    return k;
}

TransitionKernel build_kernel_mc(const ErrorGrid& grid, const ActionSet& actions, const SystemModel& model,
                                 const SteadyStateKalman& ssk, const KernelConfig& cfg, int n_samples,
                                 std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("build_kernel_mc: n_samples must be positive");
    TransitionKernel k;
    k.num_states = grid.size();
    k.num_actions = actions.size();
    k.method = KernelMethod::monte_carlo;
    k.n_samples = n_samples;
    k.rows.resize(k.num_states * k.num_actions);
    const DetectorConfig det = DetectorConfig::make(ssk, cfg.eta);
    const NoiseSampler w(NoiseSpec{NoiseKind::gaussian, model.Q, 4.0});
    const NoiseSampler v(NoiseSpec{NoiseKind::gaussian, model.R, 4.0});
    std::vector<std::uint32_t> hits(static_cast<std::size_t>(n_samples));
    long clamped = 0;
    for (std::size_t s = 0; s < k.num_states; ++s) {
        const Vector e = grid.center(s);
        for (std::size_t ai = 0; ai < k.num_actions; ++ai) {
            Rng rng = make_rng(seed, s * k.num_actions + ai, "kernel");
            for (int i = 0; i < n_samples; ++i) {
                const Vector next = sample_next_error(e, actions[ai], model, ssk, det, cfg.mitigation, w, v, rng);
                for (Eigen::Index dd = 0; dd < next.size(); ++dd) {
                    if (next(dd) < grid.lower()(dd) || next(dd) > grid.upper()(dd)) {
                        ++clamped;
                        break;
                    }
                }
                hits[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(grid.cell_of(next));
            }
            std::sort(hits.begin(), hits.end());
            auto& row = k.rows[s * k.num_actions + ai];
            for (std::size_t i = 0; i < hits.size();) {
                std::size_t j = i;
                while (j < hits.size() && hits[j] == hits[i]) ++j;
                row.push_back({hits[i], static_cast<double>(j - i) / n_samples});
                i = j;
            }
            finalize_row(row, k.max_raw_deficit);
        }
    }
    k.clamped_fraction = static_cast<double>(clamped) / (static_cast<double>(n_samples) * k.rows.size());
    if (k.clamped_fraction >= 0.01) {
        std::ostringstream os;
        os << "kernel: " << 100.0 * k.clamped_fraction << "% of sampled mass left the grid box and was clamped";
        k.warnings.push_back(os.str());
    }
    return k;
}

double expected_reward(std::size_t s, std::size_t a, const TransitionKernel& kernel, const ErrorGrid& grid) {
    double r = 0.0;
    for (const auto& en : kernel.row(s, a)) r += en.prob * grid.center(en.next).squaredNorm();
    return r;
}

std::vector<double> reward_table(const TransitionKernel& kernel, const ErrorGrid& grid) {
    std::vector<double> sq(grid.size());
    for (std::size_t s = 0; s < grid.size(); ++s) sq[s] = grid.center(s).squaredNorm();
    std::vector<double> R(kernel.rows.size(), 0.0);
    for (std::size_t i = 0; i < kernel.rows.size(); ++i)
        for (const auto& en : kernel.rows[i]) R[i] += en.prob * sq[en.next];
    return R;
}

void check_kernel_normalized(const TransitionKernel& kernel, double tol) {
    for (std::size_t i = 0; i < kernel.rows.size(); ++i) {
        double sum = 0.0;
        for (const auto& en : kernel.rows[i]) sum += en.prob;
        if (std::abs(sum - 1.0) > tol) {
            std::ostringstream os;
            os << "kernel row (s=" << i / kernel.num_actions << ", a=" << i % kernel.num_actions << ") sums to " << sum;
            throw std::invalid_argument(os.str());
        }
    }
}

std::size_t ValueFunctionPolicy::action(std::size_t cell, int t) const {
    if (mode == HorizonMode::finite && !stage_policies.empty()) {
        const auto stage = static_cast<std::size_t>(std::clamp(t, 0, static_cast<int>(stage_policies.size()) - 1));
        return stage_policies[stage][cell];
    }
    return policy[cell];
}

namespace {

double backup(const std::vector<SparseEntry>& row, const Vector& V) {
    double acc = 0.0;
    for (const auto& en : row) acc += en.prob * V(en.next);
    return acc;
}

}  // namespace

ValueFunctionPolicy value_iteration(const TransitionKernel& kernel, const ErrorGrid& grid,
                                    const ValueIterationOptions& opts) {
    check_kernel_normalized(kernel);
    const std::size_t D = kernel.num_states, A = kernel.num_actions;
    if (D != grid.size()) throw std::invalid_argument("value_iteration: kernel and grid sizes differ");
    const auto R = reward_table(kernel, grid);
    ValueFunctionPolicy out;
    out.mode = opts.mode;
    out.horizon = opts.horizon;
    out.gamma = opts.gamma;
    Vector V = Vector::Zero(static_cast<Eigen::Index>(D));
    Vector next(static_cast<Eigen::Index>(D));
    std::vector<std::size_t> pol(D, 0);
    const double discount = opts.mode == HorizonMode::finite ? 1.0 : opts.gamma;

    auto sweep = [&]() {
        for (std::size_t s = 0; s < D; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t a = 0; a < A; ++a) {
                const double q = R[s * A + a] + discount * backup(kernel.rows[s * A + a], V);
                if (q > best) {
                    best = q;
                    arg = a;
                }
            }
            next(static_cast<Eigen::Index>(s)) = best;
            pol[s] = arg;
        }
    };

    if (opts.mode == HorizonMode::finite) {
        if (opts.horizon < 1) throw std::invalid_argument("value_iteration: horizon must be >= 1");
        out.stage_policies.resize(static_cast<std::size_t>(opts.horizon));
        for (int k = 1; k <= opts.horizon; ++k) {
            sweep();
            V = next;
            out.stage_policies[static_cast<std::size_t>(opts.horizon - k)] = pol;
        }
        out.iterations = opts.horizon;
        out.policy = out.stage_policies.front();
    } else {
        if (!(opts.gamma >= 0.0 && opts.gamma < 1.0)) throw std::invalid_argument("value_iteration: gamma in [0,1)");
        const double stop = opts.gamma > 0.0 ? opts.tol * (1.0 - opts.gamma) / (2.0 * opts.gamma) : kInf;
        int it = 0;
        for (; it < opts.max_iter; ++it) {
            sweep();
            const double change = (next - V).cwiseAbs().maxCoeff();
            V = next;
            if (change < stop) break;
        }
        if (it == opts.max_iter) throw ConvergenceError("value_iteration did not converge", 0.0);
        sweep();  // greedy policy w.r.t. the converged V
        out.iterations = it + 1;
        out.policy = pol;
    }
    out.V = V;
    return out;
}

Vector policy_value(const TransitionKernel& kernel, const ErrorGrid& grid, const ValueFunctionPolicy& vfp,
                    const ValueIterationOptions& opts) {
    const std::size_t D = kernel.num_states, A = kernel.num_actions;
    const auto R = reward_table(kernel, grid);
    Vector V = Vector::Zero(static_cast<Eigen::Index>(D));
    Vector next(static_cast<Eigen::Index>(D));
    if (opts.mode == HorizonMode::finite) {
        for (int k = 1; k <= opts.horizon; ++k) {
            const int stage = opts.horizon - k;
            for (std::size_t s = 0; s < D; ++s) {
                const std::size_t a = vfp.action(s, stage);
                next(static_cast<Eigen::Index>(s)) = R[s * A + a] + backup(kernel.rows[s * A + a], V);
            }
            V = next;
        }
        return V;
    }
    const double stop = opts.gamma > 0.0 ? opts.tol * (1.0 - opts.gamma) / (2.0 * opts.gamma) : kInf;
    for (int it = 0; it < opts.max_iter; ++it) {
        for (std::size_t s = 0; s < D; ++s) {
            const std::size_t a = vfp.policy[s];
            next(static_cast<Eigen::Index>(s)) = R[s * A + a] + opts.gamma * backup(kernel.rows[s * A + a], V);
        }
        const double change = (next - V).cwiseAbs().maxCoeff();
        V = next;
        if (change < stop) break;
    }
    return V;
}

double bellman_residual(const TransitionKernel& kernel, const ErrorGrid& grid, const Vector& V, double gamma) {
    const std::size_t D = kernel.num_states, A = kernel.num_actions;
    const auto R = reward_table(kernel, grid);
    double worst = 0.0;
    for (std::size_t s = 0; s < D; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < A; ++a)
            best = std::max(best, R[s * A + a] + gamma * backup(kernel.rows[s * A + a], V));
        worst = std::max(worst, std::abs(best - V(static_cast<Eigen::Index>(s))));
    }
    return worst;
}

std::string to_string(KernelMethod m) { return m == KernelMethod::analytic_scalar ? "analytic_scalar" : "monte_carlo"; }

std::string kernel_cache_key(const SystemModel& model, const ErrorGrid& grid, const ActionSet& actions,
                             const KernelConfig& cfg, KernelMethod method, int n_samples, std::uint64_t seed) {
    Json j;
    j["model"] = model_to_json(model);
    j["grid"] = {{"lower", vector_to_json(grid.lower())},
                 {"upper", vector_to_json(grid.upper())},
                 {"levels", grid.levels()},
                 {"convention", grid.convention() == GridConvention::node ? "node" : "cell_center"}};
    Json acts = Json::array();
    for (const auto& a : actions.actions) acts.push_back(vector_to_json(a));
    j["actions"] = acts;
    j["a_max"] = actions.a_max;
    j["eta"] = cfg.eta;
    j["mitigation"] = {{"kind", to_string(cfg.mitigation.kind)}, {"sigma_mit", cfg.mitigation.sigma_mit}};
    j["method"] = to_string(method);
    if (method == KernelMethod::monte_carlo) {
        j["n_samples"] = n_samples;
        j["seed"] = seed;
    }
    return sha256_hex(j.dump());
}

void save_kernel(const std::string& path, const TransitionKernel& kernel, const std::string& key) {
    Json j;
    j["format"] = "cpsattack-kernel-v1";
    j["key"] = key;
    j["num_states"] = kernel.num_states;
    j["num_actions"] = kernel.num_actions;
    j["method"] = to_string(kernel.method);
    j["n_samples"] = kernel.n_samples;
    j["max_raw_deficit"] = kernel.max_raw_deficit;
    j["clamped_fraction"] = kernel.clamped_fraction;
    Json rows = Json::array();
    for (const auto& row : kernel.rows) {
        Json r = Json::array();
        for (const auto& en : row) r.push_back(Json::array({en.next, en.prob}));
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write kernel cache " + path);
    out << j.dump();
}

std::optional<TransitionKernel> load_kernel(const std::string& path, const std::string& key) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error&) {
        return std::nullopt;
    }
    if (j.value("format", "") != "cpsattack-kernel-v1" || j.value("key", "") != key) return std::nullopt;
    TransitionKernel k;
    k.num_states = j.at("num_states").get<std::size_t>();
    k.num_actions = j.at("num_actions").get<std::size_t>();
    k.method = j.at("method").get<std::string>() == "monte_carlo" ? KernelMethod::monte_carlo
                                                                  : KernelMethod::analytic_scalar;
    k.n_samples = j.at("n_samples").get<int>();
    k.max_raw_deficit = j.at("max_raw_deficit").get<double>();
    k.clamped_fraction = j.at("clamped_fraction").get<double>();
    for (const auto& r : j.at("rows")) {
        std::vector<SparseEntry> row;
        for (const auto& en : r) row.push_back({en[0].get<std::uint32_t>(), en[1].get<double>()});
        k.rows.push_back(std::move(row));
    }
    if (k.rows.size() != k.num_states * k.num_actions) return std::nullopt;
    return k;
}

}  // namespace cpsattack
