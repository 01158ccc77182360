#include "cpsattack/fp_md_analysis.hpp"

#include "cpsattack/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace cpsattack {

namespace {

struct Scalars {
    double A, C, Q, R, K, AK, WK, Pe, Pr;
};

Scalars scalars(const SystemModel& model, const SteadyStateKalman& ssk) {
    require_dims(model.n() == 1 && model.m() == 1, "the path recursion is defined for scalar systems only");
    return {model.A(0, 0), model.C(0, 0), model.Q(0, 0), model.R(0, 0), ssk.K(0, 0),
            ssk.A_K(0, 0), ssk.W_K(0, 0), ssk.P_e(0, 0), ssk.P_r(0, 0)};
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

PathNode initial_node(const SteadyStateKalman& ssk) {
    PathNode n;
    n.variance = ssk.P_e(0, 0);
    n.second_moment = n.variance;
    return n;
}

MomentStepParams moment_params(const PathNode& node, double a_next, int branch, const SystemModel& model,
                               const SteadyStateKalman& ssk, const RecursionConfig& cfg) {
    const Scalars s = scalars(model, ssk);
    if (cfg.eta < 0.0) throw std::invalid_argument("moment_params: eta must be non-negative");
    MomentStepParams p;
    const double s2 = node.variance;
    p.y_mean = s.C * s.A * node.mean + a_next;
    p.S_yy = s.C * s.A * s2 * s.A * s.C + s.C * s.Q * s.C + s.R;
    p.B_mit = cfg.mitigation.delta_variance();
    const double tau = std::sqrt(cfg.eta * s.Pr);
    p.lo = -tau;
    p.hi = tau;
    if (branch == 1 && cfg.mitigation.kind == MitigationKind::model_only) {
        p.x_mean = s.A * node.mean;
        p.S_xx = s.A * s2 * s.A + s.Q;
        p.S_xy = s.A * s2 * s.A * s.C + s.Q * s.C;
        return p;
    }
    p.S_xy = s.AK * s2 * s.A * s.C + s.WK * s.Q * s.C - s.K * s.R;
    p.S_xx = s.AK * s2 * s.AK + s.WK * s.Q * s.WK + s.K * s.R * s.K;
    p.x_mean = s.AK * node.mean - s.K * a_next;
    if (branch == 1) {
        p.S_xx += s.K * p.B_mit * s.K;
        p.x_mean += s.K * a_next;  // mean mitigation signal equals the attack
    }
    return p;
}

PathNode moment_step(const PathNode& node, double a_next, int branch, const SystemModel& model,
                     const SteadyStateKalman& ssk, const RecursionConfig& cfg) {
    const MomentStepParams p = moment_params(node, a_next, branch, model, ssk, cfg);
    const double sd = std::sqrt(p.S_yy);
    const TruncatedMoments z = branch == 0 ? truncated_moments(sd, p.lo - p.y_mean, p.hi - p.y_mean)
                                           : outside_moments(sd, p.lo - p.y_mean, p.hi - p.y_mean);
    PathNode child;
    child.depth = node.depth + 1;
    child.path = node.path;
    if (branch == 1 && node.depth < 64) child.path |= (std::uint64_t{1} << node.depth);
    child.prob = node.prob * z.prob;
    if (z.prob < 1e-15) {
        child.dead = true;
        return child;
    }
    const double beta = p.S_xy / p.S_yy;
    const double v = std::max(0.0, p.S_xx - p.S_xy * p.S_xy / p.S_yy);
    child.mean = p.x_mean + beta * z.mean;
    child.second_moment =
        v + p.x_mean * p.x_mean + 2.0 * p.x_mean * beta * z.mean + beta * beta * z.second_moment;
    child.variance = std::max(0.0, child.second_moment - child.mean * child.mean);
    return child;
}

PathNode forced_step(const PathNode& node, double a_next, int branch, const SystemModel& model,
                     const SteadyStateKalman& ssk, const MitigationStrategy& mitigation) {
    const MomentStepParams p = moment_params(node, a_next, branch, model, ssk, RecursionConfig{0.0, mitigation});
    PathNode child;
    child.depth = node.depth + 1;
    child.path = node.path;
    if (branch == 1 && node.depth < 64) child.path |= (std::uint64_t{1} << node.depth);
    child.prob = node.prob;
    child.mean = p.x_mean;
    child.variance = std::max(0.0, p.S_xx);
    child.second_moment = child.variance + child.mean * child.mean;
    return child;
}

ErrorTrace cumulative_error(const std::vector<double>& attack, const SystemModel& model,
                            const SteadyStateKalman& ssk, const RecursionConfig& cfg) {
    ErrorTrace out;
    std::vector<PathNode> live{initial_node(ssk)};
    std::vector<PathNode> next;
    for (double a : attack) {
        next.clear();
        next.reserve(live.size() * 2);
        double step = 0.0;
        for (const auto& node : live) {
            for (int branch = 0; branch < 2; ++branch) {
                PathNode child = moment_step(node, a, branch, model, ssk, cfg);
                if (child.dead || child.prob < cfg.prune_tol) {
                    out.pruned_mass += child.prob;
                    continue;
                }
                step += child.prob * child.second_moment;
                next.push_back(child);
            }
        }
        live.swap(next);
        out.max_live_nodes = std::max(out.max_live_nodes, live.size());
        out.per_step.push_back(step);
    }
    out.total = sum(out.per_step);
    if (out.pruned_mass > 1e-4) {
        std::ostringstream os;
        os << "pruned probability mass " << out.pruned_mass << " exceeds 1e-4";
        out.warnings.push_back(os.str());
    }
    return out;
}

ErrorTrace oracle_reference_error(const std::vector<double>& attack, const SystemModel& model,
                                  const SteadyStateKalman& ssk, const MitigationStrategy& mitigation) {
    ErrorTrace out;
    PathNode node = initial_node(ssk);
    for (double a : attack) {
        node = forced_step(node, a, a != 0.0 ? 1 : 0, model, ssk, mitigation);
        out.per_step.push_back(node.second_moment);
    }
    out.total = sum(out.per_step);
    out.max_live_nodes = 1;
    return out;
}

McTrace monte_carlo_error(const std::vector<double>& attack, const SystemModel& model, const SteadyStateKalman& ssk,
                          const RecursionConfig& cfg, int runs, std::uint64_t seed) {
    if (runs < 2) throw std::invalid_argument("monte_carlo_error: need at least 2 runs");
    const std::size_t T = attack.size();
    std::vector<double> s1(T, 0.0), s2(T, 0.0), alarms(T, 0.0);
    const bool scalar = model.n() == 1 && model.m() == 1;
    const MitigationKind kind = cfg.mitigation.kind;
    const double sig = cfg.mitigation.sigma_mit;
    if (scalar) {
        const Scalars s = scalars(model, ssk);
        const double sq = std::sqrt(s.Q), sr = std::sqrt(s.R), se = std::sqrt(s.Pe);
        for (int run = 0; run < runs; ++run) {
            Rng rng = make_rng(seed, static_cast<std::uint64_t>(run), "mc-error");
            double e = se * standard_normal(rng);
            for (std::size_t t = 0; t < T; ++t) {
                const double a = attack[t];
                const double w = sq * standard_normal(rng);
                const double v = sr * standard_normal(rng);
                const double r = s.C * (s.A * e + w) + a + v;
                const bool alarm = cfg.oracle ? a != 0.0 : r * r / s.Pr > cfg.eta;
                if (alarm && kind == MitigationKind::model_only) {
                    e = s.A * e + w;
                } else {
                    double delta = 0.0;
                    if (alarm) delta = a + (kind == MitigationKind::noisy ? sig * standard_normal(rng) : 0.0);
                    e = s.AK * e + s.WK * w - s.K * (a - delta) - s.K * v;
                }
                s1[t] += e * e;
                s2[t] += e * e * e * e;
                alarms[t] += alarm ? 1.0 : 0.0;
            }
        }
    } else {
        const DetectorConfig det = DetectorConfig::make(ssk, cfg.eta);
        const DetectorConfig never = DetectorConfig::make(ssk, kInf);
        const DetectorConfig always = DetectorConfig::make(ssk, 0.0);
        const NoiseSampler w(NoiseSpec{NoiseKind::gaussian, model.Q, 4.0});
        const NoiseSampler v(NoiseSpec{NoiseKind::gaussian, model.R, 4.0});
        const NoiseSampler e0(NoiseSpec{NoiseKind::gaussian, ssk.P_e, 4.0});
        for (int run = 0; run < runs; ++run) {
            Rng rng = make_rng(seed, static_cast<std::uint64_t>(run), "mc-error");
            Vector e = e0.sample(rng);
            for (std::size_t t = 0; t < T; ++t) {
                const Vector a = Vector::Constant(model.m(), attack[t]);
                int alarm = 0;
                const DetectorConfig& d = cfg.oracle ? (attack[t] != 0.0 ? always : never) : det;
                e = sample_next_error(e, a, model, ssk, d, cfg.mitigation, w, v, rng, &alarm);
                const double q = e.squaredNorm();
                s1[t] += q;
                s2[t] += q * q;
                alarms[t] += alarm;
            }
        }
    }
    McTrace out;
    out.runs = runs;
    for (std::size_t t = 0; t < T; ++t) {
        const double m = s1[t] / runs;
        const double var = std::max(0.0, (s2[t] - runs * m * m) / (runs - 1));
        out.mean.push_back(m);
        out.std_error.push_back(std::sqrt(var / runs));
        out.alarm_rate.push_back(alarms[t] / runs);
    }
    return out;
}

double fp_cost(double eta, double sigma_mit, const SystemModel& model, const SteadyStateKalman& ssk, int horizon) {
    const std::vector<double> zero(static_cast<std::size_t>(horizon), 0.0);
    const auto mit = MitigationStrategy::noisy(sigma_mit);
    return cumulative_error(zero, model, ssk, RecursionConfig{eta, mit}).total -
           oracle_reference_error(zero, model, ssk, mit).total;
}

double md_cost(double eta, double sigma_mit, const std::vector<double>& attack, const SystemModel& model,
               const SteadyStateKalman& ssk) {
    // no attack, nothing to miss; the difference would be pure FP cost
    if (std::all_of(attack.begin(), attack.end(), [](double a) { return a == 0.0; })) return 0.0;
    const auto mit = MitigationStrategy::noisy(sigma_mit);
    return cumulative_error(attack, model, ssk, RecursionConfig{eta, mit}).total -
           oracle_reference_error(attack, model, ssk, mit).total;
}

TransitionKernel build_oracle_kernel_scalar(const ErrorGrid& grid, const ActionSet& actions,
                                            const SystemModel& model, const SteadyStateKalman& ssk,
                                            const MitigationStrategy& mitigation) {
    TransitionKernel never = build_kernel_scalar(grid, actions, model, ssk, KernelConfig{kInf, mitigation});
    TransitionKernel always = build_kernel_scalar(grid, actions, model, ssk, KernelConfig{0.0, mitigation});
    for (std::size_t ai = 0; ai < actions.size(); ++ai) {
        if (actions[ai].cwiseAbs().maxCoeff() != 0.0) continue;
        for (std::size_t s = 0; s < grid.size(); ++s)
            always.rows[s * always.num_actions + ai] = never.rows[s * never.num_actions + ai];
    }
    always.max_raw_deficit = std::max(always.max_raw_deficit, never.max_raw_deficit);
    return always;
}

double md_cost_optimal(double eta, double sigma_mit, const SystemModel& model, const SteadyStateKalman& ssk,
                       const ErrorGrid& grid, const ActionSet& actions, int horizon) {
    const auto mit = MitigationStrategy::noisy(sigma_mit);
    ValueIterationOptions opts;
    opts.mode = HorizonMode::finite;
    opts.horizon = horizon;
    const auto attacked = build_kernel_scalar(grid, actions, model, ssk, KernelConfig{eta, mit});
    const auto reference = build_oracle_kernel_scalar(grid, actions, model, ssk, mit);
    const std::size_t s0 = grid.cell_of(Vector::Zero(1));
    const auto idx = static_cast<Eigen::Index>(s0);
    return value_iteration(attacked, grid, opts).V(idx) - value_iteration(reference, grid, opts).V(idx);
}

std::vector<SweepRow> fp_md_sweep(const std::vector<double>& etas, const std::vector<double>& sigmas,
                                  const SystemModel& model, const SteadyStateKalman& ssk, const SweepOptions& opts) {
    std::vector<double> attack = opts.attack;
    if (attack.empty()) attack.assign(static_cast<std::size_t>(opts.horizon), 10.0);
    std::optional<ErrorGrid> grid;
    ActionSet actions;
    if (opts.md_attack == MdAttack::optimal) {
        grid = build_grid(Vector::Constant(1, -opts.grid_half_width), Vector::Constant(1, opts.grid_half_width),
                          opts.grid_levels);
        actions = make_uniform_actions(Vector::Ones(1), opts.action_step, opts.action_max);
    }
    std::vector<SweepRow> rows;
    for (double eta : etas) {
        for (double sigma : sigmas) {
            SweepRow row;
            row.eta = eta;
            row.sigma_mit = sigma;
            const auto mit = MitigationStrategy::noisy(sigma);
            const std::vector<double> zero(static_cast<std::size_t>(opts.horizon), 0.0);
            RecursionConfig rc{eta, mit};
            rc.prune_tol = opts.prune_tol;
            const auto fp_trace = cumulative_error(zero, model, ssk, rc);
            row.fp_cost = fp_trace.total - oracle_reference_error(zero, model, ssk, mit).total;
            row.pruned_mass = fp_trace.pruned_mass;
            const auto md_trace = cumulative_error(attack, model, ssk, rc);
            if (opts.md_attack == MdAttack::optimal) {
                row.md_cost = md_cost_optimal(eta, sigma, model, ssk, *grid, actions, opts.horizon);
            } else {
                row.md_cost = md_trace.total - oracle_reference_error(attack, model, ssk, mit).total;
                row.pruned_mass = std::max(row.pruned_mass, md_trace.pruned_mass);
            }
            row.mc_crosscheck_relerr = std::numeric_limits<double>::quiet_NaN();
            if (opts.mc_runs > 1) {
                const auto mc = monte_carlo_error(attack, model, ssk, RecursionConfig{eta, mit}, opts.mc_runs,
                                                  derive_seed(opts.seed, rows.size(), "fp-md-sweep"));
                double worst = 0.0;
                for (std::size_t t = 0; t < attack.size(); ++t)
                    worst = std::max(worst, std::abs(md_trace.per_step[t] - mc.mean[t]) / mc.mean[t]);
                row.mc_crosscheck_relerr = worst;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::string& header_comment) {
    if (!header_comment.empty()) out << header_comment << '\n';
    out << "eta,sigma_mit,fp_cost,md_cost,pruned_mass,mc_crosscheck_relerr\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%.6g,%.6g\n", r.eta, r.sigma_mit, r.fp_cost,
                      r.md_cost, r.pruned_mass, r.mc_crosscheck_relerr);
        out << buf;
    }
}

}  // namespace cpsattack
