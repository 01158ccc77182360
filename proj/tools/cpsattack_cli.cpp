// cpsattack command-line front end.
#include "cpsattack/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace cpsattack;

namespace {

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cpsattack: optimal stealthy attacks on Kalman-filtered control loops"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int workers = 1;
    std::string kernel_cache;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--seed", seed, "master seed override");
    app.add_option("--out", out, "output directory override");
    app.add_option("--workers", workers, "simulation worker threads")->check(CLI::PositiveNumber);
    app.add_option("--kernel-cache", kernel_cache, "transition-kernel cache directory");

    auto* solve = app.add_subcommand("solve-mdp", "value iteration over the discretized error MDP");
    auto* train = app.add_subcommand("train", "train q_tabular / qlfa / qnlfa and write a learning curve");
    auto* sim = app.add_subcommand("simulate", "closed-loop Monte Carlo of the voltage-control scenario");
    auto* sweep = app.add_subcommand("fp-md-sweep", "false-positive / missed-detection cost over eta and sigma_mit");
    auto* estb = app.add_subcommand("estimate-b", "least-squares B from input/output traces");
    auto* cmp = app.add_subcommand("compare-attacks", "none / ramp / random / policy attacks on one scenario");
    auto* schema = app.add_subcommand("schema", "print the config schema");
    std::string trace_arg;
    estb->add_option("traces", trace_arg, "trace CSV (overrides the config's 'traces')");

    CLI11_PARSE(app, argc, argv);

    if (schema->parsed()) {
        std::cout << config_schema().dump(2) << '\n';
        return 0;
    }

    try {
        ExperimentConfig cfg;
        const bool have_config = !config_path.empty();
        if (have_config) {
            cfg = load_config(config_path);
        } else if (!estb->parsed()) {
            std::cerr << "error: --config is required for this command\n";
            return 2;
        }
        apply_overrides(cfg, seed, out);

        RunContext ctx;
        ctx.out_dir = cfg.output_dir;
        ctx.workers = workers;
        ctx.kernel_cache = kernel_cache;
        fs::create_directories(ctx.out_dir);
        std::ofstream log((fs::path(ctx.out_dir) / "run.log").string(), std::ios::app);
        ctx.log = &log;
        log << "[" << timestamp() << "] " << app.get_subcommands().front()->get_name();
        if (have_config) log << " config=" << config_path << " sha256=" << cfg.hash();
        log << " seed=" << cfg.seed << " workers=" << workers << '\n';

        if (solve->parsed()) {
            const auto r = cmd_solve_mdp(cfg, ctx);
            std::cout << "policy: " << r.policy_csv << (r.cache_hit ? " (kernel from cache)" : "") << '\n';
        } else if (train->parsed()) {
            const auto r = cmd_train(cfg, ctx);
            std::cout << "policy: " << r.policy_path << "\ncurve: " << r.curve_csv << '\n';
            if (!r.curve.empty()) std::cout << "final eval reward: " << r.curve.back().average_reward << '\n';
        } else if (sim->parsed()) {
            const auto r = cmd_simulate(cfg, ctx);
            std::cout << "mean cumulative error " << r.summary.mean_cumulative_error << " (se "
                      << r.summary.cumulative_error_se << ")\n";
        } else if (sweep->parsed()) {
            const auto rows = cmd_fp_md_sweep(cfg, ctx);
            std::cout << rows.size() << " sweep rows written to " << (fs::path(ctx.out_dir) / "sweep.csv").string()
                      << '\n';
        } else if (estb->parsed()) {
            const std::string path = !trace_arg.empty() ? trace_arg : cfg.traces_path;
            if (path.empty()) {
                std::cerr << "error: estimate-b needs a trace CSV\n";
                return 2;
            }
            const auto fit = cmd_estimate_b(path, ctx, have_config ? cfg.header() : "");
            std::cout << "B =\n" << fit.B << "\nresidual rms " << fit.residual_rms << ", cond(U) "
                      << fit.condition_number << '\n';
        } else if (cmp->parsed()) {
            cmd_compare_attacks(cfg, ctx);
            std::cout << "written " << (fs::path(ctx.out_dir) / "compare.csv").string() << '\n';
        }
        log << "[" << timestamp() << "] done\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
