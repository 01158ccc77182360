#include "cpsattack/estimation_defense.hpp"
#include "cpsattack/gaussian.hpp"

#include <doctest.h>

#include <cmath>

using namespace cpsattack;

namespace {

SystemModel bench() { return SystemModel::scalar(1, 1, 1, 1, 10); }
Vector s(double x) { return Vector::Constant(1, x); }

}  // namespace

TEST_CASE("residual examples") {
    const auto m = bench();
    CHECK(residual(s(0.3), s(0.2), s(0.5), m)(0) == doctest::Approx(0.0));
    CHECK(residual(s(0), s(0), s(0.5), m)(0) == doctest::Approx(0.5));
    CHECK(residual(s(1.0), s(0.0), s(1.0 + 2.5), m)(0) == doctest::Approx(2.5));
}

TEST_CASE("detect: statistic and boundary") {
    const auto k = solve_riccati(bench());
    const auto cfg = DetectorConfig::make(k, 10.0);
    auto d = detect(s(0), cfg);
    CHECK(d.g == 0.0);
    CHECK(d.alarm == 0);
    d = detect(s(12), cfg);
    CHECK(d.g == doctest::Approx(144.0 / 13.7016).epsilon(1e-5));
    CHECK(d.alarm == 1);

    DetectorConfig exact;
    exact.eta = 4.0;
    exact.P_r = Matrix::Identity(1, 1);
    exact.P_r_inv = Matrix::Identity(1, 1);
    CHECK(detect(s(2.0), exact).alarm == 0);
    CHECK(detect(s(std::nextafter(2.0, 3.0)), exact).alarm == 1);
    CHECK_THROWS(DetectorConfig::make(k, -1.0));
}

TEST_CASE("detection_probability examples") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    // from a known e = 0 the residual variance is CQC' + R, not P_r
    const double shrink = k.P_r(0, 0) / (m.Q(0, 0) + m.R(0, 0));
    for (double eta : {1.0, 5.0, 10.0})
        CHECK(detection_probability_scalar(0, 0, m, k, eta) ==
              doctest::Approx(2.0 * normal_cdf(-std::sqrt(eta * shrink))).epsilon(1e-12));
    // averaged over the stationary error law it is the chi-square tail
    for (double eta : {1.0, 5.0, 10.0}) {
        const double sd = std::sqrt(k.P_e(0, 0));
        double avg = 0.0;
        const int n = 4000;
        for (int i = 0; i < n; ++i) {
            const double z = -8.0 + 16.0 * (i + 0.5) / n;
            avg += detection_probability_scalar(sd * z, 0, m, k, eta) * normal_pdf(z) * 16.0 / n;
        }
        CHECK(avg == doctest::Approx(chi_square_survival(1, eta)).epsilon(1e-6));
    }
    CHECK(detection_probability_scalar(0, 10, m, k, 10) == doctest::Approx(0.30).epsilon(0.1));
    CHECK(detection_probability_scalar(0, 3, m, k, 0) == doctest::Approx(1.0));
    double prev = 0.0;
    for (int a = 0; a <= 20; a += 2) {
        const double p = detection_probability_scalar(0, a, m, k, 10);
        CHECK(p >= prev);
        prev = p;
    }
    Rng rng(3);
    const double mc = detection_probability(s(0.0), s(10.0), m, k, DetectorConfig::make(k, 10.0), 100000, rng);
    CHECK(mc == doctest::Approx(detection_probability_scalar(0, 10, m, k, 10)).epsilon(0.03));
}

TEST_CASE("detection_probability for a vector residual uses chi-square") {
    SystemModel m;
    m.A = Matrix::Identity(3, 3);
    m.B = Matrix::Identity(3, 3);
    m.C = Matrix::Identity(3, 3);
    m.Q = 0.2 * Matrix::Identity(3, 3);
    m.R = 0.5 * Matrix::Identity(3, 3);
    const auto k = solve_riccati(m);
    Rng rng(11);
    const int n = 200000;
    const double p =
        detection_probability(Vector::Zero(3), Vector::Zero(3), m, k, DetectorConfig::make(k, 7.0), n, rng);
    // residual e + w + v from e = 0 has covariance Q + R = 0.7 I
    const double want = chi_square_survival(3, 7.0 * k.P_r(0, 0) / 0.7);
    CHECK(std::abs(p - want) < 4.0 * std::sqrt(want * (1 - want) / n));
}

TEST_CASE("mitigate strategies") {
    Rng rng(1);
    const Vector y_a = s(3.0), a = s(2.0);
    for (auto st : {MitigationStrategy::perfect(), MitigationStrategy::noisy(5.0), MitigationStrategy::model_only()}) {
        const auto r = mitigate(y_a, 0, st, a, rng);
        CHECK(r.y_f(0) == 3.0);
        CHECK_FALSE(r.skip_innovation);
    }
    CHECK(mitigate(y_a, 1, MitigationStrategy::perfect(), a, rng).y_f(0) == doctest::Approx(1.0));
    CHECK(mitigate(y_a, 1, MitigationStrategy::model_only(), a, rng).skip_innovation);

    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double b = 1.0 - mitigate(y_a, 1, MitigationStrategy::noisy(5.0), a, rng).y_f(0);
        sum += b;
        sq += b * b;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(sq / n == doctest::Approx(25.0).epsilon(0.02));
}

TEST_CASE("kf_update examples") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    CHECK(kf_update(s(0.4), s(0.1), s(0.5), m, k)(0) == doctest::Approx(0.5));
    CHECK(kf_update(s(0), s(0), s(1), m, k)(0) == doctest::Approx(k.K(0, 0)).epsilon(1e-12));
    CHECK(k.K(0, 0) == doctest::Approx(0.2702).epsilon(1e-3));
    SteadyStateKalman zero = k;
    zero.K.setZero();
    CHECK(kf_update(s(0.7), s(0.2), s(100), m, zero)(0) == doctest::Approx(0.9));
    MitigatedMeasurement skip{s(100), s(0), true};
    CHECK(kf_update(s(0.7), s(0.2), skip, m, k)(0) == doctest::Approx(0.9));
}

TEST_CASE("attacker filter tracks the defender without attack") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    Rng rng(4);
    Vector x = s(0), xh = s(0), xa = s(0);
    for (int t = 0; t < 50; ++t) {
        x = step_plant(m, x, s(0), s(standard_normal(rng)));
        const Vector y = observe(m, x, s(std::sqrt(10.0) * standard_normal(rng)));
        xh = kf_update(xh, s(0), y, m, k);
        xa = attacker_kf_update(xa, s(0), y, m, k);
        CHECK(xa(0) == doctest::Approx(xh(0)).epsilon(1e-12));
    }
}

TEST_CASE("attacker filter converges at the A_K rate on noiseless data") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    const double rate = k.A_K(0, 0);
    Vector x = s(2.0), xa = s(0.0);
    double prev = std::abs(x(0) - xa(0));
    for (int t = 0; t < 20; ++t) {
        x = step_plant(m, x, s(0), s(0));
        xa = attacker_kf_update(xa, s(0), observe(m, x, s(0)), m, k);
        const double err = std::abs(x(0) - xa(0));
        CHECK(err == doctest::Approx(rate * prev).epsilon(1e-9));
        prev = err;
    }
}

TEST_CASE("error_step examples") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    const Vector z = s(0);
    CHECK(error_step(z, z, z, z, 0, z, k)(0) == 0.0);
    CHECK(error_step(s(1.5), z, z, s(4), 1, s(4), k)(0) == doctest::Approx(k.A_K(0, 0) * 1.5));
    CHECK(error_step(z, z, z, s(10), 0, z, k)(0) == doctest::Approx(-2.702).epsilon(1e-3));
}

TEST_CASE("plant loop and error recursion agree step by step") {
    SystemModel m;
    m.A = Matrix{{1.0, 0.1}, {0.0, 0.9}};
    m.B = Matrix::Identity(2, 2);
    m.C = Matrix::Identity(2, 2);
    m.Q = 0.05 * Matrix::Identity(2, 2);
    m.R = Matrix{{0.3, 0.05}, {0.05, 0.2}};
    const auto k = solve_riccati(m);
    const auto det = DetectorConfig::make(k, 3.0);
    NoiseSampler w(NoiseSpec{NoiseKind::gaussian, m.Q, 4}), v(NoiseSpec{NoiseKind::gaussian, m.R, 4});
    for (auto mit : {MitigationStrategy::perfect(), MitigationStrategy::noisy(0.5)}) {
        Rng rng(21);
        Vector x = Vector::Zero(2), xh = Vector::Zero(2), e = Vector::Zero(2);
        int alarms = 0;
        for (int t = 0; t < 200; ++t) {
            const Vector u = Vector{{0.1 * std::sin(t), -0.05}};
            const Vector a = Vector{{0.02 * t, -0.01 * t}};
            const Vector wt = w.sample(rng), vt = v.sample(rng);
            x = step_plant(m, x, u, wt);
            const Vector y_a = observe(m, x, vt) + a;
            const auto d = detect(residual(xh, u, y_a, m), det);
            const auto mm = mitigate(y_a, d.alarm, mit, a, rng);
            xh = kf_update(xh, u, mm, m, k);
            e = error_step(e, wt, vt, a, d.alarm, d.alarm ? mm.delta : Vector(Vector::Zero(2)), k);
            CHECK((e - (x - xh)).norm() < 1e-10);
            alarms += d.alarm;
        }
        CHECK(alarms > 0);
    }
}

TEST_CASE("null alarm rate matches the chi-square tail") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    const double eta = 5.0;
    const auto det = DetectorConfig::make(k, eta);
    Rng rng(8);
    double x = 0.0, xh = 0.0;
    const double sd_x = std::sqrt(k.P_e(0, 0));
    x = sd_x * standard_normal(rng);
    int alarms = 0;
    const int n = 100000;
    for (int t = 0; t < n; ++t) {
        x += standard_normal(rng);
        const double y = x + std::sqrt(10.0) * standard_normal(rng);
        alarms += detect(residual(s(xh), s(0), s(y), m), det).alarm;
        xh = kf_update(s(xh), s(0), s(y), m, k)(0);
    }
    const double p = chi_square_survival(1, eta);
    CHECK(std::abs(double(alarms) / n - p) < 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("perfect mitigation with a forced alarm leaves the error untouched") {
    const auto m = bench();
    const auto k = solve_riccati(m);
    std::vector<double> plain, attacked;
    for (int run = 0; run < 10000; ++run) {
        for (int pass = 0; pass < 2; ++pass) {
            Rng rng = make_rng(5, run, "neutral");
            double e = std::sqrt(k.P_e(0, 0)) * standard_normal(rng);
            for (int t = 0; t < 20; ++t) {
                const double w = standard_normal(rng), v = std::sqrt(10.0) * standard_normal(rng);
                const double a = pass ? 3.0 + t : 0.0;
                e = error_step(s(e), s(w), s(v), s(a), pass, s(a), k)(0);
            }
            (pass ? attacked : plain).push_back(e);
        }
    }
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(attacked[i] == doctest::Approx(plain[i]).epsilon(1e-9));
    double sq = 0.0;
    for (double e : attacked) sq += e * e;
    CHECK(sq / attacked.size() == doctest::Approx(k.P_e(0, 0)).epsilon(0.05));
}

TEST_CASE("trajectory CSV columns") {
    TrajectoryStep st;
    st.t = 1;
    st.x = st.x_hat = st.x_hat_a = Vector::Zero(2);
    st.y = st.a = Vector::Zero(2);
    st.u = Vector::Zero(1);
    std::ostringstream os;
    write_trajectory_csv(os, {st}, "# config_sha256=abc");
    const std::string out = os.str();
    CHECK(out.rfind("# config_sha256=abc\n", 0) == 0);
    CHECK(out.find("t,x_1,x_2,xhat_1,xhat_2,xhata_1,xhata_2,y_1,y_2,a_1,a_2,g,i,u_1") != std::string::npos);
}
