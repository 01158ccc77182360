#include "cpsattack/experiment.hpp"

#include "cpsattack/policy_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace cpsattack {

namespace {

void check_keys(const Json& j, const std::vector<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

std::string resolve_path(const std::string& p, const std::string& base) {
    if (p.empty()) return p;
    const fs::path path(p);
    return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

void log_line(const RunContext& ctx, const std::string& msg) {
    if (ctx.log) *ctx.log << msg << '\n';
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

EpsilonSchedule parse_epsilon(const Json& j) {
    check_keys(j, {"initial", "final", "decay_episodes"}, "solver.epsilon");
    EpsilonSchedule e;
    e.initial = j.value("initial", e.initial);
    e.final = j.value("final", e.final);
    e.decay_episodes = j.value("decay_episodes", e.decay_episodes);
    return e;
}

NetSpec parse_net(const Json& j) {
    check_keys(j, {"hidden_layers", "hidden_units", "learning_rate", "batch", "replay_capacity", "target_refresh",
                   "train_every"},
               "solver.net");
    NetSpec n;
    n.hidden_layers = j.value("hidden_layers", n.hidden_layers);
    n.hidden_units = j.value("hidden_units", n.hidden_units);
    n.learning_rate = j.value("learning_rate", n.learning_rate);
    n.batch = j.value("batch", n.batch);
    n.replay_capacity = j.value("replay_capacity", n.replay_capacity);
    n.target_refresh = j.value("target_refresh", n.target_refresh);
    n.train_every = j.value("train_every", n.train_every);
    return n;
}

SolverSettings parse_solver(const Json& j) {
    check_keys(j,
               {"kind", "mode", "horizon", "gamma", "tol", "kernel", "kernel_samples", "alpha", "episodes",
                "train_horizon", "epsilon", "encoder", "net", "eval_runs", "eval_horizon", "eval_every"},
               "solver");
    SolverSettings s;
    if (j.contains("kind")) s.kind = solver_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m != "finite" && m != "discounted") throw std::invalid_argument("solver.mode must be finite|discounted");
        s.mode = m == "finite" ? HorizonMode::finite : HorizonMode::discounted;
    }
    s.horizon = j.value("horizon", s.horizon);
    s.gamma = j.value("gamma", s.gamma);
    s.tol = j.value("tol", s.tol);
    s.kernel = j.value("kernel", s.kernel);
    if (s.kernel != "auto" && s.kernel != "analytic" && s.kernel != "monte_carlo")
        throw std::invalid_argument("solver.kernel must be auto|analytic|monte_carlo");
    s.kernel_samples = j.value("kernel_samples", s.kernel_samples);
    s.alpha = j.value("alpha", s.alpha);
    s.episodes = j.value("episodes", s.episodes);
    s.train_horizon = j.value("train_horizon", s.train_horizon);
    if (j.contains("epsilon")) s.epsilon = parse_epsilon(j.at("epsilon"));
    if (j.contains("encoder")) {
        const auto e = j.at("encoder").get<std::string>();
        if (e != "fsr" && e != "joint_one_hot") throw std::invalid_argument("solver.encoder must be fsr|joint_one_hot");
        s.encoder = e == "fsr" ? EncoderKind::fsr : EncoderKind::joint_one_hot;
    }
    if (j.contains("net")) s.net = parse_net(j.at("net"));
    s.eval_runs = j.value("eval_runs", s.eval_runs);
    s.eval_horizon = j.value("eval_horizon", s.eval_horizon);
    s.eval_every = j.value("eval_every", s.eval_every);
    return s;
}

SweepSettings parse_sweep(const Json& j) {
    check_keys(j, {"etas", "sigmas", "horizon", "md_attack", "attack", "mc_runs"}, "sweep");
    SweepSettings s;
    if (j.contains("etas")) s.etas = j.at("etas").get<std::vector<double>>();
    if (j.contains("sigmas")) s.sigmas = j.at("sigmas").get<std::vector<double>>();
    s.horizon = j.value("horizon", s.horizon);
    const auto md = j.value("md_attack", std::string("sequence"));
    if (md != "sequence" && md != "optimal") throw std::invalid_argument("sweep.md_attack must be sequence|optimal");
    s.md_attack = md == "optimal" ? MdAttack::optimal : MdAttack::sequence;
    if (j.contains("attack")) s.attack = j.at("attack").get<std::vector<double>>();
    s.mc_runs = j.value("mc_runs", s.mc_runs);
    return s;
}

ErrorGrid parse_grid(const Json& j, Eigen::Index n) {
    check_keys(j, {"lower", "upper", "levels", "convention"}, "grid");
    auto vec = [&](const Json& v, const char* name) {
        return v.is_number() ? Vector(Vector::Constant(n, v.get<double>())) : vector_from_json(v, name);
    };
    const auto conv = j.value("convention", std::string("cell_center"));
    if (conv != "cell_center" && conv != "node") throw std::invalid_argument("grid.convention must be cell_center|node");
    return build_grid(vec(j.at("lower"), "grid.lower"), vec(j.at("upper"), "grid.upper"), j.at("levels").get<int>(),
                      conv == "node" ? GridConvention::node : GridConvention::cell_center);
}

Json read_or_inline(const Json& j, const std::string& base) {
    if (j.is_string()) return read_json_file(resolve_path(j.get<std::string>(), base));
    return j;
}

}  // namespace

SolverKind solver_kind_from_string(const std::string& s) {
    if (s == "value_iteration") return SolverKind::value_iteration;
    if (s == "q_tabular") return SolverKind::q_tabular;
    if (s == "qlfa") return SolverKind::qlfa;
    if (s == "qnlfa") return SolverKind::qnlfa;
    throw std::invalid_argument("unknown solver '" + s + "'");
}

std::string to_string(SolverKind k) {
    switch (k) {
        case SolverKind::value_iteration: return "value_iteration";
        case SolverKind::q_tabular: return "q_tabular";
        case SolverKind::qlfa: return "qlfa";
        case SolverKind::qnlfa: return "qnlfa";
    }
    return "value_iteration";
}

SystemModel ExperimentConfig::system() const {
    if (model) return *model;
    if (scenario) return scenario->model();
    throw std::invalid_argument("config: needs a scenario or a model");
}

ActionSet ExperimentConfig::action_set() const {
    const SystemModel m = system();
    if (actions.given) {
        const Vector mask = actions.mask.size() ? actions.mask : Vector::Ones(m.m());
        require_dims(mask.size() == m.m(), "actions.mask must have one entry per sensor");
        const double unit = attack_norm(mask, actions.norm);
        return make_uniform_actions(mask, actions.step, actions.max / unit * (1.0 + 1e-12), actions.norm,
                                    actions.max);
    }
    if (scenario) return scenario->actions(attack.mask.size() ? attack.mask : Vector::Ones(scenario->n_pilot));
    throw std::invalid_argument("config: no action set (give 'actions' or a scenario)");
}

ErrorGrid ExperimentConfig::error_grid() const {
    if (grid) return *grid;
    if (scenario && scenario->grid) return *scenario->grid;
    const auto [lo, hi] = default_grid_bounds(solve_riccati(system()), 0.0);
    return build_grid(lo, hi, 41);
}

std::string ExperimentConfig::hash() const { return sha256_hex(resolved.dump()); }

ExperimentConfig parse_config(const Json& j, const std::string& base_dir) {
    check_keys(j,
               {"description", "scenario", "model", "detector", "mitigation", "attack", "solver", "grid", "actions",
                "horizon", "runs", "seed", "output_dir", "noise", "policy", "traces", "sweep",
                "write_trajectories"},
               "config");
    ExperimentConfig c;
    c.resolved = j;
    c.resolved.erase("output_dir");
    c.resolved.erase("description");
    if (j.contains("scenario")) {
        c.scenario = scenario_from_json(read_or_inline(j.at("scenario"), base_dir));
        c.resolved["scenario"] = scenario_to_json(*c.scenario);
        c.eta = c.scenario->eta;
    }
    if (j.contains("model")) {
        c.model = model_from_json(read_or_inline(j.at("model"), base_dir));
        require_valid(*c.model);
        c.resolved["model"] = model_to_json(*c.model);
    }
    if (!c.model && !c.scenario) throw std::invalid_argument("config: needs a scenario or a model");
    if (j.contains("detector")) {
        check_keys(j.at("detector"), {"eta"}, "detector");
        c.eta = j.at("detector").value("eta", c.eta);
    }
    if (!(c.eta >= 0.0)) throw std::invalid_argument("detector.eta must be >= 0");
    if (j.contains("mitigation")) {
        const auto& m = j.at("mitigation");
        check_keys(m, {"kind", "sigma_mit"}, "mitigation");
        c.mitigation.kind = mitigation_kind_from_string(m.value("kind", std::string("perfect")));
        c.mitigation.sigma_mit = m.value("sigma_mit", 0.0);
        if (!(c.mitigation.sigma_mit >= 0.0)) throw std::invalid_argument("mitigation.sigma_mit must be >= 0");
    }
    if (j.contains("attack")) c.attack = attack_spec_from_json(j.at("attack"));
    if (!c.attack.policy_path.empty()) c.attack.policy_path = resolve_path(c.attack.policy_path, base_dir);
    if (j.contains("solver")) c.solver = parse_solver(j.at("solver"));
    const SystemModel sys = c.system();
    if (j.contains("grid")) c.grid = parse_grid(j.at("grid"), sys.n());
    if (j.contains("actions")) {
        const auto& a = j.at("actions");
        check_keys(a, {"step", "max", "mask", "norm"}, "actions");
        c.actions.given = true;
        c.actions.step = a.at("step").get<double>();
        c.actions.max = a.at("max").get<double>();
        if (a.contains("mask")) c.actions.mask = vector_from_json(a.at("mask"), "actions.mask");
        c.actions.norm = a.value("norm", std::string("l2")) == "linf" ? AttackNorm::linf : AttackNorm::l2;
    }
    c.horizon = j.value("horizon", c.horizon);
    c.runs = j.value("runs", c.runs);
    c.seed = j.value("seed", c.seed);
    c.output_dir = resolve_path(j.value("output_dir", c.output_dir), base_dir);
    if (j.contains("noise")) {
        check_keys(j.at("noise"), {"measurement", "dof"}, "noise");
        c.measurement_noise = noise_kind_from_string(j.at("noise").value("measurement", std::string("gaussian")));
        c.noise_dof = j.at("noise").value("dof", c.noise_dof);
    }
    c.policy_path = resolve_path(j.value("policy", std::string()), base_dir);
    if (c.attack.kind == AttackKind::policy && c.attack.policy_path.empty()) c.attack.policy_path = c.policy_path;
    c.traces_path = resolve_path(j.value("traces", std::string()), base_dir);
    if (j.contains("sweep")) c.sweep = parse_sweep(j.at("sweep"));
    c.write_trajectories = j.value("write_trajectories", c.write_trajectories);
    if (c.horizon < 1 || c.runs < 1) throw std::invalid_argument("config: horizon and runs must be >= 1");
    c.resolved["seed"] = c.seed;
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    const Json j = read_json_file(path);
    return parse_config(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
    if (seed) {
        cfg.seed = *seed;
        cfg.resolved["seed"] = *seed;
    }
    if (out) cfg.output_dir = *out;
}

TransitionKernel obtain_kernel(const ExperimentConfig& cfg, const ErrorGrid& grid, const ActionSet& actions,
                               const RunContext& ctx, bool* cache_hit) {
    const SystemModel model = cfg.system();
    const SteadyStateKalman ssk = solve_riccati(model);
    const bool scalar = model.n() == 1 && model.m() == 1;
    KernelMethod method = scalar ? KernelMethod::analytic_scalar : KernelMethod::monte_carlo;
    if (cfg.solver.kernel == "monte_carlo") method = KernelMethod::monte_carlo;
    if (cfg.solver.kernel == "analytic") {
        if (!scalar) throw std::invalid_argument("analytic kernel requires a scalar system");
        method = KernelMethod::analytic_scalar;
    }
    const KernelConfig kc{cfg.eta, cfg.mitigation};
    const int samples = method == KernelMethod::monte_carlo ? cfg.solver.kernel_samples : 0;
    const std::string key = kernel_cache_key(model, grid, actions, kc, method, samples, cfg.seed);
    std::string path;
    if (!ctx.kernel_cache.empty()) {
        path = (fs::path(ctx.kernel_cache) / ("kernel-" + key + ".json")).string();
        if (auto k = load_kernel(path, key)) {
            if (cache_hit) *cache_hit = true;
            log_line(ctx, "kernel cache hit: " + path);
            return *k;
        }
    }
    if (cache_hit) *cache_hit = false;
    TransitionKernel k = method == KernelMethod::analytic_scalar
                             ? build_kernel_scalar(grid, actions, model, ssk, kc)
                             : build_kernel_mc(grid, actions, model, ssk, kc, samples,
                                               derive_seed(cfg.seed, 0, "kernel"));
    for (const auto& w : k.warnings) log_line(ctx, "warning: " + w);
    if (!path.empty()) {
        fs::create_directories(ctx.kernel_cache);
        save_kernel(path, k, key);
        log_line(ctx, "kernel cached: " + path);
    }
    return k;
}

SolveResult cmd_solve_mdp(const ExperimentConfig& cfg, const RunContext& ctx) {
    SolveResult res;
    res.grid = cfg.error_grid();
    res.actions = cfg.action_set();
    const TransitionKernel k = obtain_kernel(cfg, res.grid, res.actions, ctx, &res.cache_hit);
    ValueIterationOptions o;
    o.mode = cfg.solver.mode;
    o.horizon = cfg.solver.horizon;
    o.gamma = cfg.solver.gamma;
    o.tol = cfg.solver.tol;
    res.vfp = value_iteration(k, res.grid, o);

    res.policy_csv = (fs::path(ctx.out_dir) / "policy.csv").string();
    auto out = open_out(ctx.out_dir, "policy.csv");
    out << cfg.header() << '\n';
    out << "cell";
    for (Eigen::Index i = 0; i < res.grid.dims(); ++i) out << ",e_" << i + 1;
    out << ",action_index";
    const Eigen::Index m = res.actions[0].size();
    for (Eigen::Index i = 0; i < m; ++i) out << ",a_" << i + 1;
    out << ",value\n";
    for (std::size_t s = 0; s < res.grid.size(); ++s) {
        const Vector c = res.grid.center(s);
        const std::size_t a = res.vfp.policy[s];
        out << s;
        for (Eigen::Index i = 0; i < c.size(); ++i) out << ',' << fmt(c(i));
        out << ',' << a;
        for (Eigen::Index i = 0; i < m; ++i) out << ',' << fmt(res.actions[a](i));
        out << ',' << fmt(res.vfp.V(static_cast<Eigen::Index>(s))) << '\n';
    }
    res.policy_json = (fs::path(ctx.out_dir) / "policy_value_iteration.json").string();
    save_value_policy(res.policy_json, res.vfp, res.grid, res.actions, cfg.hash());
    log_line(ctx, "solve-mdp: " + std::to_string(res.grid.size()) + " cells, " +
                      std::to_string(res.actions.size()) + " actions, " + std::to_string(res.vfp.iterations) +
                      " iterations");
    return res;
}

TrainResult cmd_train(const ExperimentConfig& cfg, const RunContext& ctx) {
    const SystemModel model = cfg.system();
    const SteadyStateKalman ssk = solve_riccati(model);
    const ActionSet actions = cfg.action_set();
    const auto& s = cfg.solver;
    if (s.kind == SolverKind::value_iteration)
        throw std::invalid_argument("train: solver 'value_iteration' is handled by solve-mdp");
    ErrorEnv env(model, ssk, actions, EnvOptions{cfg.eta, cfg.mitigation, cfg.measurement_noise, cfg.noise_dof, true});
    RlConfig rl;
    rl.alpha = s.alpha;
    rl.gamma = s.gamma;
    rl.epsilon = s.epsilon;
    rl.episodes = s.episodes;
    rl.horizon = s.train_horizon;
    rl.seed = cfg.seed;
    rl.checkpoint_every = s.eval_every > 0 ? s.eval_every : std::max(1, s.episodes / 10);
    const std::uint64_t eval_seed = derive_seed(cfg.seed, 0, "curve");

    TrainResult res;
    auto record = [&](int ep, std::uint64_t steps, const PolicyFn& pol) {
        const EvalResult ev = evaluate_policy(pol, env, s.eval_runs, s.eval_horizon, eval_seed);
        res.curve.push_back({ep, steps, ev.time_average});
    };
    const std::string tag = to_string(s.kind);
    try {
        if (s.kind == SolverKind::q_tabular) {
            const ErrorGrid grid = cfg.error_grid();
            const QTable q = q_tabular_train(env, grid, rl, nullptr, [&](int ep, std::uint64_t st, const QTable& qt) {
                record(ep, st, [&](const Vector& e, int) { return argmax_first(qt.row(grid.cell_of(e))); });
            });
            res.policy_path = (fs::path(ctx.out_dir) / "policy_q_tabular.json").string();
            fs::create_directories(ctx.out_dir);
            save_tabular_policy(res.policy_path, q, grid, actions, cfg.hash());
        } else if (s.kind == SolverKind::qlfa) {
            const FsrEncoder enc{cfg.error_grid(), s.encoder};
            const LinearQ q = qlfa_train(env, enc, rl, nullptr, [&](int ep, std::uint64_t st, const LinearQ& lq) {
                record(ep, st, [&](const Vector& e, int) { return lq.greedy(e); });
            });
            res.policy_path = (fs::path(ctx.out_dir) / "policy_qlfa.json").string();
            fs::create_directories(ctx.out_dir);
            save_linear_policy(res.policy_path, q, actions, cfg.hash());
        } else {
            const NeuralQ q = qnlfa_train(env, rl, s.net, nullptr, [&](int ep, std::uint64_t st, const NeuralQ& nq) {
                record(ep, st, [&](const Vector& e, int) { return nq.greedy(e); });
            });
            res.policy_path = (fs::path(ctx.out_dir) / "policy_qnlfa.bin").string();
            fs::create_directories(ctx.out_dir);
            save_neural_policy(res.policy_path, q, actions, cfg.hash());
        }
    } catch (const DivergenceError& e) {
        auto diag = open_out(ctx.out_dir, "divergence.txt");
        diag << cfg.header() << '\n' << "solver=" << tag << '\n' << e.what() << '\n';
        throw;
    }
    res.curve_csv = (fs::path(ctx.out_dir) / "learning_curve.csv").string();
    auto out = open_out(ctx.out_dir, "learning_curve.csv");
    out << cfg.header() << '\n' << "episode,env_steps,eval_average_reward\n";
    for (const auto& p : res.curve) out << p.episode << ',' << p.env_steps << ',' << fmt(p.average_reward) << '\n';
    log_line(ctx, "train(" + tag + "): " + std::to_string(res.curve.size()) + " checkpoints");
    return res;
}

SimulationResult cmd_simulate(const ExperimentConfig& cfg, const RunContext& ctx) {
    if (!cfg.scenario) throw std::invalid_argument("simulate: config needs a scenario");
    std::unique_ptr<AttackPolicy> policy;
    if (cfg.attack.kind == AttackKind::policy) {
        if (cfg.attack.policy_path.empty()) throw std::invalid_argument("simulate: policy attack needs 'policy'");
        policy = load_policy(cfg.attack.policy_path);
    }
    SimulationOptions so;
    so.eta = cfg.eta;
    so.mitigation = cfg.mitigation;
    so.measurement_noise = cfg.measurement_noise;
    so.noise_dof = cfg.noise_dof;
    so.horizon = cfg.horizon;
    so.runs = cfg.runs;
    so.seed = cfg.seed;
    so.workers = ctx.workers;
    so.keep_trajectories = cfg.write_trajectories;
    SimulationResult res = closed_loop_simulate(*cfg.scenario, cfg.attack, so, policy.get());
    {
        auto out = open_out(ctx.out_dir, "summary.csv");
        write_summary_csv(out, res.summary, cfg.header());
    }
    {
        auto out = open_out(ctx.out_dir, "runs.csv");
        out << cfg.header() << '\n' << "run,cumulative_error\n";
        for (std::size_t k = 0; k < res.cumulative_error.size(); ++k)
            out << k << ',' << fmt(res.cumulative_error[k]) << '\n';
    }
    if (cfg.write_trajectories) {
        const std::string dir = (fs::path(ctx.out_dir) / "trajectories").string();
        for (std::size_t k = 0; k < res.trajectories.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "run_%05zu.csv", k);
            auto out = open_out(dir, name);
            write_trajectory_csv(out, res.trajectories[k], cfg.header());
        }
    }
    log_line(ctx, "simulate: mean cumulative error " + fmt(res.summary.mean_cumulative_error) + " (se " +
                      fmt(res.summary.cumulative_error_se) + ")");
    return res;
}

std::vector<SweepRow> cmd_fp_md_sweep(const ExperimentConfig& cfg, const RunContext& ctx) {
    const SystemModel model = cfg.system();
    const SteadyStateKalman ssk = solve_riccati(model);
    const auto& sw = cfg.sweep;
    auto out = open_out(ctx.out_dir, "sweep.csv");
    const bool scalar = model.n() == 1 && model.m() == 1;
    if (scalar) {
        SweepOptions o;
        o.horizon = sw.horizon;
        o.md_attack = sw.md_attack;
        o.attack = sw.attack;
        o.mc_runs = sw.mc_runs;
        o.seed = cfg.seed;
        if (sw.md_attack == MdAttack::optimal) {
            const ErrorGrid g = cfg.error_grid();
            o.grid_levels = g.levels();
            o.grid_half_width = std::max(std::abs(g.lower()(0)), std::abs(g.upper()(0)));
            const ActionSet a = cfg.action_set();
            o.action_step = a.size() > 1 ? a[1](0) : 1.0;
            o.action_max = a.actions.back()(0);
        }
        const auto rows = fp_md_sweep(sw.etas, sw.sigmas, model, ssk, o);
        write_sweep_csv(out, rows, cfg.header());
        log_line(ctx, "fp-md-sweep: " + std::to_string(rows.size()) + " rows (analytic)");
        return rows;
    }
    // Multivariate systems: Monte Carlo only.
    const int runs = sw.mc_runs > 1 ? sw.mc_runs : 2000;
    std::vector<double> attack = sw.attack;
    if (attack.empty()) attack.assign(static_cast<std::size_t>(sw.horizon), 10.0);
    const std::vector<double> zero(attack.size(), 0.0);
    out << cfg.header() << '\n' << "# analytic columns omitted: non-scalar system, Monte Carlo only\n";
    out << "eta,sigma_mit,fp_cost_mc,md_cost_mc,mc_runs\n";
    std::vector<SweepRow> rows;
    auto total = [](const McTrace& t) {
        double s = 0.0;
        for (double x : t.mean) s += x;
        return s;
    };
    for (double eta : sw.etas) {
        for (double sigma : sw.sigmas) {
            const auto mit = MitigationStrategy::noisy(sigma);
            const std::uint64_t sd = derive_seed(cfg.seed, rows.size(), "fp-md-mc");
            RecursionConfig det{eta, mit};
            RecursionConfig oracle{eta, mit, 1e-9, true};
            SweepRow r;
            r.eta = eta;
            r.sigma_mit = sigma;
            r.fp_cost = total(monte_carlo_error(zero, model, ssk, det, runs, sd)) -
                        total(monte_carlo_error(zero, model, ssk, oracle, runs, sd));
            r.md_cost = total(monte_carlo_error(attack, model, ssk, det, runs, sd)) -
                        total(monte_carlo_error(attack, model, ssk, oracle, runs, sd));
            r.pruned_mass = std::numeric_limits<double>::quiet_NaN();
            r.mc_crosscheck_relerr = std::numeric_limits<double>::quiet_NaN();
            out << fmt(eta) << ',' << fmt(sigma) << ',' << fmt(r.fp_cost) << ',' << fmt(r.md_cost) << ',' << runs
                << '\n';
            rows.push_back(r);
        }
    }
    log_line(ctx, "fp-md-sweep: " + std::to_string(rows.size()) + " rows (Monte Carlo only)");
    return rows;
}

BFit cmd_estimate_b(const std::string& trace_path, const RunContext& ctx, const std::string& header) {
    const TraceDataset t = read_traces_csv(trace_path);
    const BFit fit = estimate_B(t);
    Json j;
    if (!header.empty()) j["config_sha256"] = header.substr(header.find('=') + 1);
    j["B"] = matrix_to_json(fit.B);
    j["fit"] = {{"residual_rms", fit.residual_rms},
                {"condition_number", fit.condition_number},
                {"records", fit.records}};
    fs::create_directories(ctx.out_dir);
    write_json_file((fs::path(ctx.out_dir) / "B.json").string(), j);
    log_line(ctx, "estimate-b: " + std::to_string(fit.records) + " records, residual rms " + fmt(fit.residual_rms) +
                      ", cond(U) " + fmt(fit.condition_number));
    return fit;
}

void cmd_compare_attacks(const ExperimentConfig& cfg, const RunContext& ctx) {
    if (!cfg.scenario) throw std::invalid_argument("compare-attacks: config needs a scenario");
    std::vector<std::pair<std::string, AttackSequenceSpec>> attacks;
    AttackSequenceSpec none;
    attacks.emplace_back("none", none);
    AttackSequenceSpec ramp;
    ramp.kind = AttackKind::ramp;
    ramp.slope = cfg.attack.kind == AttackKind::ramp ? cfg.attack.slope : 0.01;
    attacks.emplace_back("ramp", ramp);
    AttackSequenceSpec rnd;
    rnd.kind = AttackKind::random;
    rnd.bound = cfg.scenario->a_max;
    attacks.emplace_back("random", rnd);
    std::unique_ptr<AttackPolicy> policy;
    const std::string ppath = !cfg.attack.policy_path.empty() ? cfg.attack.policy_path : cfg.policy_path;
    if (!ppath.empty()) {
        policy = load_policy(ppath);
        AttackSequenceSpec p;
        p.kind = AttackKind::policy;
        p.policy_path = ppath;
        attacks.emplace_back("policy", p);
    }
    SimulationOptions so;
    so.eta = cfg.eta;
    so.mitigation = cfg.mitigation;
    so.measurement_noise = cfg.measurement_noise;
    so.noise_dof = cfg.noise_dof;
    so.horizon = cfg.horizon;
    so.runs = cfg.runs;
    so.seed = cfg.seed;
    so.workers = ctx.workers;
    std::vector<SimulationSummary> sums;
    auto out = open_out(ctx.out_dir, "compare.csv");
    out << cfg.header() << '\n'
        << "attack,mean_cumulative_error,std_error,mean_final_deviation,mean_final_est_deviation\n";
    for (auto& [name, spec] : attacks) {
        const auto r = closed_loop_simulate(*cfg.scenario, spec, so, policy.get());
        const auto& s = r.summary;
        out << name << ',' << fmt(s.mean_cumulative_error) << ',' << fmt(s.cumulative_error_se) << ','
            << fmt(s.mean_final_deviation.mean()) << ',' << fmt(s.mean_final_est_deviation.mean()) << '\n';
        sums.push_back(s);
    }
    auto det = open_out(ctx.out_dir, "detection.csv");
    det << cfg.header() << '\n' << "t";
    for (const auto& a : attacks) det << ',' << a.first;
    det << '\n';
    for (int t = 0; t < cfg.horizon; ++t) {
        det << t + 1;
        for (const auto& s : sums) det << ',' << fmt(s.detection_prob[static_cast<std::size_t>(t)]);
        det << '\n';
    }
    log_line(ctx, "compare-attacks: " + std::to_string(attacks.size()) + " attacks");
}

Json config_schema() {
    return Json::parse(R"js({
  "description": "string, ignored",
  "scenario": "path or object: name, n_pilot, x0, x_init, alpha_ctrl, B, noise{process_sigma, measurement_sigma}, a_max, action_step, eta, attack_norm, grid",
  "model": "path or object: A, B, C, Q, R, X0?, noise{kind, dof}?",
  "detector": {"eta": "number >= 0 (default: scenario eta, else 5)"},
  "mitigation": {"kind": "perfect | noisy | model_only", "sigma_mit": "number >= 0"},
  "attack": {"kind": "none | ramp | surge | random | policy", "slope": 0.01, "magnitude": 0.1, "start": 1, "bound": 0.2, "policy": "path", "mask": "array"},
  "solver": {"kind": "value_iteration | q_tabular | qlfa | qnlfa", "mode": "finite | discounted", "horizon": 30, "gamma": 0.95, "tol": 1e-9,
             "kernel": "auto | analytic | monte_carlo", "kernel_samples": 20000, "alpha": 0.1, "episodes": 1000, "train_horizon": 50,
             "epsilon": {"initial": 1.0, "final": 0.05, "decay_episodes": "default half of episodes"},
             "encoder": "fsr | joint_one_hot",
             "net": {"hidden_layers": 5, "hidden_units": 20, "learning_rate": 0.001, "batch": 200, "replay_capacity": 50000, "target_refresh": 500, "train_every": 1},
             "eval_runs": 200, "eval_horizon": 50, "eval_every": "episodes between learning-curve points"},
  "grid": {"lower": "number or array", "upper": "number or array", "levels": "int", "convention": "cell_center | node"},
  "actions": {"step": "number", "max": "number", "mask": "array", "norm": "l2 | linf"},
  "horizon": 30, "runs": 100, "seed": 1, "output_dir": "path",
  "noise": {"measurement": "gaussian | logistic | student_t", "dof": 4},
  "policy": "path to a policy artifact", "traces": "path to a trace CSV",
  "sweep": {"etas": [0,5,10,15], "sigmas": [0,5,10,15], "horizon": 10, "md_attack": "sequence | optimal", "attack": "array", "mc_runs": 0},
  "write_trajectories": true
})js");
}

}  // namespace cpsattack
