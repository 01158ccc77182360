#include "cpsattack/experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cpsattack;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = CPSATTACK_SOURCE_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cpsattack_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Json scalar_cfg() {
    return Json::parse(R"({
      "model": "models/scalar_benchmark.json",
      "detector": {"eta": 10},
      "grid": {"lower": -40, "upper": 10, "levels": 21},
      "actions": {"step": 2, "max": 20},
      "solver": {"kind": "value_iteration", "mode": "discounted"},
      "seed": 3
    })");
}

RunContext ctx_for(const fs::path& p) {
    RunContext c;
    c.out_dir = p.string();
    return c;
}

}  // namespace

TEST_CASE("config validation") {
    Json j = scalar_cfg();
    CHECK_NOTHROW(parse_config(j, kRoot));
    j["detecter"] = Json::object();
    CHECK_THROWS_AS(parse_config(j, kRoot), std::invalid_argument);
    j = scalar_cfg();
    j["solver"]["alpah"] = 0.1;
    CHECK_THROWS(parse_config(j, kRoot));
    j = scalar_cfg();
    j["solver"]["kind"] = "sarsa";
    CHECK_THROWS(parse_config(j, kRoot));
    j = scalar_cfg();
    j.erase("model");
    CHECK_THROWS(parse_config(j, kRoot));
    j = scalar_cfg();
    j["detector"]["eta"] = -1;
    CHECK_THROWS(parse_config(j, kRoot));
}

TEST_CASE("config hash ignores the output directory and follows the seed") {
    Json a = scalar_cfg(), b = scalar_cfg();
    a["output_dir"] = "x";
    b["output_dir"] = "y";
    CHECK(parse_config(a, kRoot).hash() == parse_config(b, kRoot).hash());
    b["seed"] = 4;
    CHECK(parse_config(a, kRoot).hash() != parse_config(b, kRoot).hash());
    auto c = parse_config(a, kRoot);
    const auto h = c.hash();
    apply_overrides(c, 99, std::string("elsewhere"));
    CHECK(c.hash() != h);
    CHECK(c.output_dir == "elsewhere");
    CHECK(c.header().rfind("# config_sha256=", 0) == 0);
}

TEST_CASE("solve-mdp writes one row per cell and reuses the kernel cache") {
    TempDir tmp("solve");
    auto cfg = parse_config(scalar_cfg(), kRoot);
    auto ctx = ctx_for(tmp.path / "out");
    ctx.kernel_cache = (tmp.path / "cache").string();
    const auto r1 = cmd_solve_mdp(cfg, ctx);
    CHECK_FALSE(r1.cache_hit);
    const std::string first = slurp(r1.policy_csv);
    const auto r2 = cmd_solve_mdp(cfg, ctx);
    CHECK(r2.cache_hit);
    CHECK(slurp(r2.policy_csv) == first);

    std::istringstream in(first);
    std::string line;
    std::getline(in, line);
    CHECK(line == cfg.header());
    std::getline(in, line);
    CHECK(line == "cell,e_1,action_index,a_1,value");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const auto parts = line.substr(0, line.rfind(','));
        const double a = std::stod(parts.substr(parts.rfind(',') + 1));
        CHECK(a >= 0.0);
        CHECK(a <= 20.0);
    }
    CHECK(rows == 21);
}

TEST_CASE("solve-mdp on a one-cell grid") {
    TempDir tmp("one");
    Json j = scalar_cfg();
    j["grid"]["levels"] = 1;
    const auto r = cmd_solve_mdp(parse_config(j, kRoot), ctx_for(tmp.path));
    std::istringstream in(slurp(r.policy_csv));
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    CHECK(n == 3);
}

TEST_CASE("train: zero episodes gives an empty curve; fixed seed reproduces") {
    TempDir tmp("train");
    Json j = scalar_cfg();
    j["solver"] = Json::parse(R"({"kind": "qlfa", "episodes": 0, "eval_runs": 10})");
    const auto r0 = cmd_train(parse_config(j, kRoot), ctx_for(tmp.path / "zero"));
    CHECK(r0.curve.empty());

    j["solver"]["episodes"] = 200;
    j["solver"]["eval_every"] = 50;
    const auto cfg = parse_config(j, kRoot);
    const auto a = cmd_train(cfg, ctx_for(tmp.path / "a"));
    const auto b = cmd_train(cfg, ctx_for(tmp.path / "b"));
    CHECK(a.curve.size() == 4);
    CHECK(slurp(a.curve_csv) == slurp(b.curve_csv));
    CHECK(slurp(a.policy_path) == slurp(b.policy_path));
}

TEST_CASE("train: divergence leaves a diagnostics file") {
    TempDir tmp("diverge");
    Json j = Json::parse(R"({
      "scenario": "scenarios/ieee39.json",
      "solver": {"kind": "qlfa", "alpha": 1.0, "gamma": 0.99, "episodes": 500}
    })");
    const auto cfg = parse_config(j, kRoot);
    CHECK_THROWS_AS(cmd_train(cfg, ctx_for(tmp.path)), DivergenceError);
    CHECK(fs::exists(tmp.path / "divergence.txt"));
}

TEST_CASE("simulate: per-run files, headers and byte-identical reruns") {
    TempDir tmp("sim");
    Json j = Json::parse(R"({
      "scenario": "scenarios/ieee9.json",
      "attack": {"kind": "ramp", "slope": 0.01},
      "horizon": 10, "runs": 7, "seed": 5
    })");
    const auto cfg = parse_config(j, kRoot);
    auto c1 = ctx_for(tmp.path / "a");
    auto c2 = ctx_for(tmp.path / "b");
    c2.workers = 3;
    cmd_simulate(cfg, c1);
    cmd_simulate(cfg, c2);
    int files = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "a" / "trajectories")) {
        ++files;
        CHECK(slurp(e.path()).rfind(cfg.header(), 0) == 0);
        CHECK(slurp(e.path()) == slurp(tmp.path / "b" / "trajectories" / e.path().filename()));
    }
    CHECK(files == 7);
    for (const char* f : {"summary.csv", "runs.csv"}) {
        CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
        CHECK(slurp(tmp.path / "a" / f).rfind(cfg.header(), 0) == 0);
    }
}

TEST_CASE("fp-md sweep: scalar rows, empty grid, non-scalar flag") {
    TempDir tmp("sweep");
    Json j = Json::parse(R"({"model": "models/scalar_benchmark.json",
                             "sweep": {"etas": [0, 5], "sigmas": [0, 15], "horizon": 6}})");
    const auto rows = cmd_fp_md_sweep(parse_config(j, kRoot), ctx_for(tmp.path / "s"));
    REQUIRE(rows.size() == 4);
    CHECK(std::abs(rows[0].fp_cost) < 1e-6);
    CHECK(std::abs(rows[2].fp_cost) < 1e-6);
    CHECK(std::abs(rows[0].md_cost) < 1e-6);
    CHECK(rows[1].fp_cost > rows[3].fp_cost);

    j["sweep"]["etas"] = Json::array();
    const auto cfg = parse_config(j, kRoot);
    cmd_fp_md_sweep(cfg, ctx_for(tmp.path / "e"));
    CHECK(slurp(tmp.path / "e" / "sweep.csv") ==
          cfg.header() + "\neta,sigma_mit,fp_cost,md_cost,pruned_mass,mc_crosscheck_relerr\n");

    Json v = Json::parse(R"({"scenario": "scenarios/ieee39.json",
                             "sweep": {"etas": [5], "sigmas": [0], "horizon": 3, "mc_runs": 200}})");
    cmd_fp_md_sweep(parse_config(v, kRoot), ctx_for(tmp.path / "v"));
    const auto text = slurp(tmp.path / "v" / "sweep.csv");
    CHECK(text.find("Monte Carlo only") != std::string::npos);
    CHECK(text.find("fp_cost_mc") != std::string::npos);
}

TEST_CASE("estimate-b round trip through files") {
    TempDir tmp("estb");
    const Matrix B{{1.0, 0.3}, {-0.2, 0.9}};
    Rng rng(6);
    const auto t = synthesize_traces(B, 200, 0.0, 0.1, rng);
    {
        std::ofstream out(tmp.path / "traces.csv");
        write_traces_csv(out, t);
    }
    const auto fit = cmd_estimate_b((tmp.path / "traces.csv").string(), ctx_for(tmp.path / "o"));
    CHECK((fit.B - B).cwiseAbs().maxCoeff() < 1e-10);
    const auto j = read_json_file((tmp.path / "o" / "B.json").string());
    CHECK((matrix_from_json(j.at("B"), "B") - B).cwiseAbs().maxCoeff() < 1e-12);

    {
        std::ofstream out(tmp.path / "short.csv");
        out << "x_before_1,x_before_2,x_after_1,x_after_2,u_1,u_2\n0,0,1,1,1,1\n";
    }
    CHECK_THROWS(cmd_estimate_b((tmp.path / "short.csv").string(), ctx_for(tmp.path / "o")));
}

TEST_CASE("compare-attacks writes every attack and a detection table") {
    TempDir tmp("cmp");
    Json j = Json::parse(R"({"scenario": "scenarios/ieee9.json", "horizon": 8, "runs": 20})");
    cmd_compare_attacks(parse_config(j, kRoot), ctx_for(tmp.path));
    const auto text = slurp(tmp.path / "compare.csv");
    for (const char* name : {"\nnone,", "\nramp,", "\nrandom,"}) CHECK(text.find(name) != std::string::npos);
    const auto det = slurp(tmp.path / "detection.csv");
    CHECK(det.find("t,none,ramp,random") != std::string::npos);
}

TEST_CASE("schema lists the top-level keys") {
    const auto s = config_schema();
    for (const char* k : {"scenario", "detector", "mitigation", "attack", "solver", "horizon", "runs", "seed",
                          "output_dir"})
        CHECK(s.contains(k));
}
