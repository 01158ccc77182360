#include "cpsattack/system_model.hpp"

#include <doctest.h>

#include <cmath>

using namespace cpsattack;

namespace {

SystemModel bench() { return SystemModel::scalar(1, 1, 1, 1, 10); }

Matrix sample_cov(const std::vector<Vector>& xs) {
    const Eigen::Index n = xs.front().size();
    Vector mean = Vector::Zero(n);
    for (const auto& x : xs) mean += x;
    mean /= double(xs.size());
    Matrix c = Matrix::Zero(n, n);
    for (const auto& x : xs) c += (x - mean) * (x - mean).transpose();
    return c / double(xs.size() - 1);
}

}  // namespace

TEST_CASE("validate_model: scalar benchmark passes") {
    const auto rep = validate_model(bench());
    CHECK(rep.ok());
    CHECK_NOTHROW(require_valid(bench()));
}

TEST_CASE("validate_model: zero control matrix is not controllable") {
    SystemModel m;
    m.A = Matrix::Identity(2, 2);
    m.B = Matrix::Zero(2, 1);
    m.C = Matrix::Identity(2, 2);
    m.Q = Matrix::Identity(2, 2);
    m.R = Matrix::Identity(2, 2);
    const auto rep = validate_model(m);
    CHECK_FALSE(rep.ok());
    const auto* c = rep.find("controllability");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->passed);
    CHECK(c->detail.find("rank 0") != std::string::npos);
    CHECK_THROWS_AS(require_valid(m), ModelError);
}

TEST_CASE("validate_model: R = 0 fails positive definiteness") {
    auto m = bench();
    m.R(0, 0) = 0.0;
    const auto rep = validate_model(m);
    REQUIRE(rep.find("R") != nullptr);
    CHECK_FALSE(rep.find("R")->passed);
}

TEST_CASE("validate_model: dimension mismatch names both shapes") {
    auto m = bench();
    m.C = Matrix::Ones(1, 2);
    const auto rep = validate_model(m);
    CHECK_FALSE(rep.find("dimensions")->passed);
    CHECK(rep.find("dimensions")->detail.find("1x2") != std::string::npos);
}

TEST_CASE("solve_riccati: scalar closed form") {
    const auto k = solve_riccati(bench());
    const double p = (1.0 + std::sqrt(41.0)) / 2.0;
    CHECK(k.P_inf(0, 0) == doctest::Approx(p).epsilon(1e-9));
    CHECK(k.K(0, 0) == doctest::Approx(p / (p + 10.0)).epsilon(1e-9));
    CHECK(k.P_e(0, 0) == doctest::Approx((1.0 - p / (p + 10.0)) * p).epsilon(1e-9));
    CHECK(k.P_e(0, 0) == doctest::Approx(2.7016).epsilon(1e-4));
    CHECK(k.P_r(0, 0) == doctest::Approx(p + 10.0).epsilon(1e-9));
    CHECK(k.residual < 1e-8);
}

TEST_CASE("solve_riccati: zero process noise gives zero gain") {
    auto m = SystemModel::scalar(0.5, 1, 1, 0, 1);
    const auto k = solve_riccati(m);
    CHECK(k.P_inf(0, 0) == doctest::Approx(0.0));
    CHECK(k.K(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("solve_riccati: non-convergence reports the residual") {
    auto m = SystemModel::scalar(1, 1, 1, 1, 10);
    try {
        solve_riccati(m, 1e-14, 2);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.residual() > 0.0);
    }
}

TEST_CASE("riccati fixed point residual on a 3-state system") {
    SystemModel m;
    m.A = Matrix{{0.9, 0.1, 0.0}, {0.0, 1.0, 0.2}, {0.1, 0.0, 0.95}};
    m.B = Matrix::Identity(3, 3);
    m.C = Matrix{{1, 0, 0}, {0, 0, 1}};
    m.Q = 0.1 * Matrix::Identity(3, 3);
    m.R = Matrix{{0.5, 0.1}, {0.1, 0.4}};
    const auto k = solve_riccati(m);
    CHECK((riccati_map(m, k.P_inf) - k.P_inf).norm() < 1e-8);
    CHECK((k.A_K - (m.A - k.K * m.C * m.A)).norm() < 1e-12);
}

TEST_CASE("riccati iteration is monotone from zero") {
    SystemModel two;
    two.A = Matrix{{1.0, 0.2}, {0.0, 0.9}};
    two.B = Matrix::Identity(2, 2);
    two.C = Matrix{{1.0, 0.0}};
    two.Q = Matrix{{0.3, 0.05}, {0.05, 0.2}};
    two.R = Matrix::Constant(1, 1, 2.0);
    for (const auto& m : {bench(), two}) {
        Matrix P = Matrix::Zero(m.n(), m.n());
        for (int i = 0; i < 40; ++i) {
            const Matrix next = riccati_map(m, P);
            Eigen::SelfAdjointEigenSolver<Matrix> es(next - P);
            CHECK(es.eigenvalues().minCoeff() >= -1e-12);
            P = next;
        }
    }
}

TEST_CASE("step_plant and observe arithmetic") {
    const auto m = bench();
    const Vector z = Vector::Zero(1);
    CHECK(step_plant(m, z, z, z)(0) == 0.0);
    CHECK(step_plant(m, Vector::Constant(1, 0.835), Vector::Constant(1, -0.1), z)(0) ==
          doctest::Approx(0.735).epsilon(1e-12));
    CHECK(observe(m, Vector::Constant(1, 0.8), Vector::Constant(1, 0.02))(0) == doctest::Approx(0.82).epsilon(1e-12));

    SystemModel two;
    two.A = Matrix::Identity(2, 2);
    two.B = Matrix{{2.0, 0.5}, {0.1, 1.0}};
    two.C = Matrix::Identity(2, 2);
    const Vector x0(Vector{{1.0, 0.9}}), xs(Vector{{0.8, 0.85}});
    const Vector u = two.B.fullPivLu().solve(xs - x0);
    CHECK((step_plant(two, x0, u, Vector::Zero(2)) - xs).norm() < 1e-12);
    CHECK((observe(two, x0, Vector::Zero(2)) - x0).norm() == 0.0);
}

TEST_CASE("step_plant rejects wrong dimensions") {
    CHECK_THROWS_AS(step_plant(bench(), Vector::Zero(2), Vector::Zero(1), Vector::Zero(1)), DimensionError);
}

TEST_CASE("sample_noise: gaussian and logistic variances") {
    for (auto kind : {NoiseKind::gaussian, NoiseKind::logistic}) {
        NoiseSampler s(NoiseSpec{kind, Matrix::Constant(1, 1, 4e-4), 4.0});
        Rng rng(42);
        double sum = 0.0, sq = 0.0;
        const int n = 1'000'000;
        for (int i = 0; i < n; ++i) {
            const double x = s.sample(rng)(0);
            sum += x;
            sq += x * x;
        }
        const double var = sq / n - (sum / n) * (sum / n);
        CHECK(var == doctest::Approx(4e-4).epsilon(0.02));
    }
}

TEST_CASE("sample_noise: student-t variance matched") {
    // dof 10 keeps the fourth moment finite so the sample variance settles
    NoiseSampler s(NoiseSpec{NoiseKind::student_t, Matrix::Constant(1, 1, 4e-4), 10.0});
    Rng rng(7);
    double sq = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) sq += std::pow(s.sample(rng)(0), 2);
    CHECK(sq / n == doctest::Approx(4e-4).epsilon(0.03));
}

TEST_CASE("sample_noise: zero covariance and determinism") {
    Rng rng(1);
    NoiseSampler zero(NoiseSpec{NoiseKind::gaussian, Matrix::Zero(3, 3), 4.0});
    for (int i = 0; i < 10; ++i) CHECK(zero.sample(rng).norm() == 0.0);

    NoiseSpec spec{NoiseKind::gaussian, Matrix{{2.0, 0.3}, {0.3, 1.0}}, 4.0};
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK((sample_noise(spec, a) - sample_noise(spec, b)).norm() == 0.0);
}

TEST_CASE("sample_noise: correlated covariance reproduced") {
    NoiseSampler s(NoiseSpec{NoiseKind::gaussian, Matrix{{2.0, 0.6}, {0.6, 1.0}}, 4.0});
    Rng rng(5);
    std::vector<Vector> xs;
    for (int i = 0; i < 200000; ++i) xs.push_back(s.sample(rng));
    const Matrix c = sample_cov(xs);
    CHECK(c(0, 0) == doctest::Approx(2.0).epsilon(0.02));
    CHECK(c(0, 1) == doctest::Approx(0.6).epsilon(0.05));
    CHECK(c(1, 1) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("steady-state error covariance matches P_e empirically") {
    SystemModel m;
    m.A = Matrix{{1.0, 0.1}, {0.0, 0.95}};
    m.B = Matrix::Identity(2, 2);
    m.C = Matrix{{1.0, 0.0}};
    m.Q = Matrix{{0.2, 0.0}, {0.0, 0.1}};
    m.R = Matrix::Constant(1, 1, 1.0);
    const auto k = solve_riccati(m);
    NoiseSampler w(NoiseSpec{NoiseKind::gaussian, m.Q, 4}), v(NoiseSpec{NoiseKind::gaussian, m.R, 4});
    std::vector<Vector> es;
    const Vector u = Vector::Zero(2);
    for (int run = 0; run < 10000; ++run) {
        Rng rng = make_rng(3, run, "pe");
        Vector x = Vector::Zero(2), xh = Vector::Zero(2);
        for (int t = 0; t < 60; ++t) {
            x = step_plant(m, x, u, w.sample(rng));
            const Vector y = observe(m, x, v.sample(rng));
            const Vector pred = m.A * xh;
            xh = pred + k.K * (y - m.C * pred);
        }
        es.push_back(x - xh);
    }
    const Matrix c = sample_cov(es);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(c(i, j) == doctest::Approx(k.P_e(i, j)).epsilon(0.05));
}

TEST_CASE("model JSON round trip and unknown keys") {
    const auto m = bench();
    const auto back = model_from_json(model_to_json(m));
    CHECK((back.R - m.R).norm() == 0.0);
    Json j = model_to_json(m);
    j["bogus"] = 1;
    CHECK_THROWS_AS(model_from_json(j), std::invalid_argument);
}
