#include "cpsattack/attack_rl.hpp"
#include "cpsattack/gaussian.hpp"
#include "cpsattack/policy_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace cpsattack;

namespace {

SystemModel bench() { return SystemModel::scalar(1, 1, 1, 1, 10); }
Vector s(double x) { return Vector::Constant(1, x); }

ErrorEnv bench_env(double eta = 10.0) {
    const auto m = bench();
    return ErrorEnv(m, solve_riccati(m), make_uniform_actions(s(1), 2, 20),
                    EnvOptions{eta, MitigationStrategy::perfect()});
}

SystemModel iso(int n) {
    SystemModel m;
    m.A = m.B = m.C = Matrix::Identity(n, n);
    m.Q = 1e-4 * Matrix::Identity(n, n);
    m.R = 4e-4 * Matrix::Identity(n, n);
    return m;
}

}  // namespace

TEST_CASE("q_update examples") {
    RlConfig cfg;
    cfg.alpha = 1.0;
    cfg.gamma = 0.0;
    QTable q(3, 2, 0.7);
    q_update(q, 1, 1, 5.0, 2, cfg);
    CHECK(q.at(1, 1) == 5.0);
    // the geometric fixed point 1 / (1 - gamma)
    cfg.alpha = 0.5;
    cfg.gamma = 0.9;
    QTable one(1, 1);
    for (int i = 0; i < 2000; ++i) q_update(one, 0, 0, 1.0, 0, cfg);
    CHECK(one.at(0, 0) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK_THROWS_AS(q.at(3, 0), std::out_of_range);
}

TEST_CASE("q_update with alpha zero is rejected by validation but leaves Q unchanged") {
    RlConfig cfg;
    cfg.alpha = 0.0;
    CHECK_THROWS(cfg.validate());
    QTable q(1, 1, 3.0);
    q_update(q, 0, 0, 100.0, 0, cfg);
    CHECK(q.at(0, 0) == 3.0);
}

TEST_CASE("epsilon greedy") {
    Rng rng(3);
    const std::vector<double> v{0.1, 2.0, -1.0, 1.9};
    for (int i = 0; i < 1000; ++i) CHECK(epsilon_greedy(v, 0.0, rng) == 1);
    CHECK(epsilon_greedy({1.0, 1.0, 1.0}, 0.0, rng) == 0);
    std::vector<int> hits(4, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hits[epsilon_greedy(v, 1.0, rng)];
    const double p = 0.25, sd = std::sqrt(n * p * (1 - p));
    for (int h : hits) CHECK(std::abs(h - n * p) < 3 * sd);
}

TEST_CASE("epsilon schedule decays linearly over half the budget") {
    EpsilonSchedule e;
    CHECK(e.at(0, 100) == doctest::Approx(1.0));
    CHECK(e.at(25, 100) == doctest::Approx(0.525));
    CHECK(e.at(50, 100) == doctest::Approx(0.05));
    CHECK(e.at(99, 100) == doctest::Approx(0.05));
}

TEST_CASE("fsr encoding examples") {
    FsrEncoder e1{ErrorGrid(s(0), s(4), 4), EncoderKind::fsr};
    const Vector f = fsr_encode(s(2.5), e1);
    CHECK(f.size() == 4);
    CHECK(f == Vector{{0, 0, 1, 0}});

    FsrEncoder e2{ErrorGrid(Vector::Zero(2), Vector::Constant(2, 3), 3), EncoderKind::fsr};
    CHECK(fsr_encode(Vector{{0.5, 2.5}}, e2) == Vector{{1, 0, 0, 0, 0, 1}});

    FsrEncoder e5{ErrorGrid(Vector::Constant(5, -1), Vector::Constant(5, 1), 7), EncoderKind::fsr};
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        Vector x(5);
        for (int j = 0; j < 5; ++j) x(j) = 3.0 * standard_normal(rng);
        CHECK(fsr_encode(x, e5).sum() == 5.0);
    }
    FsrEncoder joint{ErrorGrid(Vector::Zero(2), Vector::Constant(2, 3), 3), EncoderKind::joint_one_hot};
    CHECK(joint.length() == 9);
    CHECK(joint.encode(Vector{{0.5, 2.5}})(6) == 1.0);
}

TEST_CASE("linear Q values match the dot product") {
    FsrEncoder enc{ErrorGrid(Vector::Constant(3, -1), Vector::Constant(3, 1), 5), EncoderKind::fsr};
    LinearQ q(enc, 4);
    Rng rng(2);
    for (Eigen::Index i = 0; i < q.theta().size(); ++i) q.theta().data()[i] = standard_normal(rng);
    const Vector e{{0.3, -0.7, 0.9}};
    const Vector phi = enc.encode(e);
    const auto v = q.values(phi);
    for (std::size_t a = 0; a < 4; ++a) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < phi.size(); ++k) acc += phi(k) * q.theta()(k, static_cast<Eigen::Index>(a));
        CHECK(v[a] == acc);
    }
}

TEST_CASE("greedy cost scales linearly in d") {
    auto ops = [](int d) {
        FsrEncoder enc{ErrorGrid(Vector::Constant(4, -1), Vector::Constant(4, 1), d), EncoderKind::fsr};
        LinearQ q(enc, 11);
        for (int i = 0; i < 10; ++i) q.greedy(Vector::Constant(4, 0.1 * i));
        return q.op_count();
    };
    CHECK(ops(40) == 2 * ops(20));
    CHECK(ops(80) == 2 * ops(40));
}

TEST_CASE("QLFA with joint one-hot reproduces tabular Q-learning exactly") {
    SystemModel m = iso(2);
    const auto k = solve_riccati(m);
    ErrorEnv env(m, k, make_uniform_actions(Vector::Ones(2), 0.05, 0.2, AttackNorm::linf),
                 EnvOptions{5.99, MitigationStrategy::perfect()});
    const ErrorGrid grid(Vector::Constant(2, -0.3), Vector::Constant(2, 0.1), 6);
    RlConfig cfg;
    cfg.episodes = 200;
    cfg.horizon = 30;
    cfg.seed = 9;
    const QTable qt = q_tabular_train(env, grid, cfg);
    const LinearQ lq = qlfa_train(env, FsrEncoder{grid, EncoderKind::joint_one_hot}, cfg);
    double worst = 0.0;
    for (std::size_t st = 0; st < grid.size(); ++st)
        for (std::size_t a = 0; a < qt.actions(); ++a)
            worst = std::max(worst, std::abs(qt.at(st, a) - lq.theta()(static_cast<Eigen::Index>(st),
                                                                      static_cast<Eigen::Index>(a))));
    CHECK(worst <= 1e-12);
}

TEST_CASE("zero-reward environment leaves theta at zero") {
    auto m = SystemModel::scalar(1, 1, 1, 0, 1);
    const auto k = solve_riccati(m);
    ErrorEnv env(m, k, make_uniform_actions(s(1), 1, 3), EnvOptions{5.0, MitigationStrategy::perfect(), NoiseKind::gaussian, 4.0, false});
    RlConfig cfg;
    cfg.episodes = 20;
    cfg.horizon = 10;
    const LinearQ q = qlfa_train(env, FsrEncoder{ErrorGrid(s(-1), s(1), 5), EncoderKind::fsr}, cfg);
    CHECK(q.theta().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("QLFA divergence guard") {
    const auto m = iso(10);
    ErrorEnv env(m, solve_riccati(m), make_uniform_actions(Vector::Ones(10), 0.02, 0.2, AttackNorm::linf),
                 EnvOptions{18.3, MitigationStrategy::perfect()});
    RlConfig cfg;
    cfg.alpha = 1.0;
    cfg.gamma = 0.99;
    cfg.episodes = 500;
    CHECK_THROWS_AS(qlfa_train(env, FsrEncoder{ErrorGrid(Vector::Constant(10, -0.35), Vector::Constant(10, 0.15), 21),
                                               EncoderKind::fsr},
                               cfg),
                    DivergenceError);
}

TEST_CASE("evaluate_policy: zero attack without detection matches P_e per step") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    ErrorEnv env(m, k, make_uniform_actions(s(1), 2, 20), EnvOptions{kInf, MitigationStrategy::perfect()});
    const PolicyFn zero = [](const Vector&, int) { return std::size_t{0}; };
    const auto r = evaluate_policy(zero, env, 4000, 50, 1);
    CHECK(r.mean_cumulative == doctest::Approx(50 * k.P_e(0, 0)).epsilon(0.05));
    const auto again = evaluate_policy(zero, env, 4000, 50, 1);
    CHECK(again.mean_cumulative == r.mean_cumulative);
    CHECK(r.std_error > 0.0);
}

TEST_CASE("environment reward is the squared next error") {
    auto env = bench_env();
    Rng rng(5);
    env.reset(rng);
    for (int i = 0; i < 20; ++i) {
        const double r = env.step(static_cast<std::size_t>(i % 11), rng);
        CHECK(r == doctest::Approx(env.state().squaredNorm()).epsilon(1e-14));
    }
    CHECK(env.steps_taken() == 20);
}

TEST_CASE("mlp gradient matches central differences") {
    Rng rng(12);
    Mlp net({3, 8, 8, 4}, rng);
    Matrix X(3, 16);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = standard_normal(rng);
    std::vector<std::size_t> acts;
    Vector y(16);
    for (int b = 0; b < 16; ++b) {
        acts.push_back(static_cast<std::size_t>(b % 4));
        y(b) = standard_normal(rng);
    }
    Vector grad;
    net.loss_and_grad(X, acts, y, grad);
    const Vector p0 = net.params();
    REQUIRE(grad.size() == p0.size());
    const double h = 1e-6;
    int checked = 0;
    for (Eigen::Index i = 0; i < p0.size() && checked < 10; i += p0.size() / 10) {
        Vector p = p0;
        p(i) += h;
        net.set_params(p);
        const double up = net.loss(X, acts, y);
        p(i) -= 2 * h;
        net.set_params(p);
        const double down = net.loss(X, acts, y);
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(fd - grad(i)) <= 1e-4 * std::max(std::abs(grad(i)), 1e-3));
        ++checked;
    }
    CHECK(checked == 10);
}

TEST_CASE("mlp parameter round trip") {
    Rng rng(1);
    Mlp a({2, 5, 3}, rng);
    CHECK(a.num_params() == 2 * 5 + 5 + 5 * 3 + 3);
    Mlp b({2, 5, 3}, a.params());
    Matrix X = Matrix::Random(2, 4);
    CHECK((a.forward(X) - b.forward(X)).norm() == 0.0);
}

TEST_CASE("adam minimizes a quadratic") {
    Vector p = Vector::Constant(3, 5.0);
    Adam opt(3, 0.1);
    for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * p);
    CHECK(p.norm() < 1e-2);
}

TEST_CASE("replay buffer samples distinct indices and overwrites oldest") {
    ReplayBuffer buf(5, 1);
    for (int i = 0; i < 8; ++i) buf.push(s(i), 0, double(i), s(i + 1));
    CHECK(buf.size() == 5);
    std::set<double> rewards(buf.rewards.begin(), buf.rewards.end());
    CHECK(rewards == std::set<double>{3, 4, 5, 6, 7});
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const auto idx = buf.sample(4, rng);
        CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 4);
    }
}

TEST_CASE("untrained network falls well short of the solved policy") {
    auto env = bench_env();
    RlConfig cfg;
    NetSpec spec;
    const NeuralQ q = make_neural_q(env, cfg, spec);
    const auto untrained = evaluate_policy([&](const Vector& e, int) { return q.greedy(e); }, env, 300, 50, 4);
    Rng pick(8);
    const auto random = evaluate_policy([&](const Vector&, int) { return std::size_t(uniform01(pick) * 11) % 11; },
                                        env, 300, 50, 4);

    const auto m = bench();
    const auto k = solve_riccati(m);
    const ErrorGrid grid(s(-40), s(10), 41);
    const auto kern = build_kernel_scalar(grid, env.actions(), m, k, KernelConfig{10.0, MitigationStrategy::perfect()});
    ValueIterationOptions o;
    o.mode = HorizonMode::discounted;
    const auto vfp = value_iteration(kern, grid, o);
    const auto solved =
        evaluate_policy([&](const Vector& e, int) { return vfp.policy[grid.cell_of(e)]; }, env, 300, 50, 4);
    MESSAGE("untrained " << untrained.time_average << ", random " << random.time_average << ", solved "
                         << solved.time_average);
    CHECK(untrained.time_average < 0.6 * solved.time_average);
    CHECK(random.time_average < 0.6 * solved.time_average);
}

TEST_CASE("qnlfa training is deterministic and finite") {
    auto env = bench_env();
    RlConfig cfg;
    cfg.episodes = 20;
    cfg.horizon = 20;
    NetSpec spec;
    spec.hidden_layers = 2;
    spec.hidden_units = 8;
    spec.batch = 32;
    TrainStats st;
    const NeuralQ a = qnlfa_train(env, cfg, spec, &st);
    const NeuralQ b = qnlfa_train(env, cfg, spec);
    CHECK((a.net.params() - b.net.params()).norm() == 0.0);
    CHECK(a.net.params().allFinite());
    CHECK(st.env_steps == 400);
}

TEST_CASE("policy files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "cpsattack_policy_test";
    std::filesystem::create_directories(dir);
    auto env = bench_env();
    const ErrorGrid grid(s(-40), s(10), 21);
    RlConfig cfg;
    cfg.episodes = 30;
    const auto acts = env.actions();

    const QTable qt = q_tabular_train(env, grid, cfg);
    save_tabular_policy((dir / "q.json").string(), qt, grid, acts, "abc");
    const auto pt = load_policy((dir / "q.json").string());
    CHECK(pt->kind() == "q_tabular");

    const LinearQ lq = qlfa_train(env, FsrEncoder{grid, EncoderKind::fsr}, cfg);
    save_linear_policy((dir / "l.json").string(), lq, acts);
    const auto pl = load_policy((dir / "l.json").string());

    NetSpec spec;
    spec.hidden_layers = 2;
    spec.hidden_units = 6;
    const NeuralQ nq = make_neural_q(env, cfg, spec);
    save_neural_policy((dir / "n.bin").string(), nq, acts);
    const NeuralQ nq2 = load_neural_q((dir / "n.bin").string());
    const auto pn = load_policy((dir / "n.bin").string());

    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const Vector e = s(-40.0 + 50.0 * uniform01(rng));
        CHECK(pt->act(e, 0) == argmax_first(qt.row(grid.cell_of(e))));
        CHECK(pl->act(e, 0) == lq.greedy(e));
        CHECK(pn->act(e, 0) == nq.greedy(e));
        CHECK(nq2.values_at(e) == nq.values_at(e));
    }
    std::filesystem::remove_all(dir);
}
