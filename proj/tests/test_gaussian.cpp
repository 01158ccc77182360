#include "cpsattack/gaussian.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

using namespace cpsattack;
using boost::math::quadrature::gauss_kronrod;

namespace {

double integrate(const std::function<double(double)>& f, double lo, double hi) {
    return gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-13);
}

}  // namespace

TEST_CASE("truncated moments against quadrature") {
    const double cases[][3] = {{1.0, -0.5, 2.0}, {2.7, -1.0, 1.0}, {0.3, 0.1, 5.0}, {4.0, -kInf, 1.5}};
    for (const auto& c : cases) {
        const double sd = c[0], lo = c[1], hi = c[2];
        const auto pdf = [&](double z) { return normal_pdf(z / sd) / sd; };
        const double p = integrate(pdf, lo, hi);
        const double m1 = integrate([&](double z) { return z * pdf(z); }, lo, hi) / p;
        const double m2 = integrate([&](double z) { return z * z * pdf(z); }, lo, hi) / p;
        const auto t = truncated_moments(sd, lo, hi);
        CHECK(t.prob == doctest::Approx(p).epsilon(1e-10));
        CHECK(t.mean == doctest::Approx(m1).epsilon(1e-8));
        CHECK(t.second_moment == doctest::Approx(m2).epsilon(1e-8));
    }
}

TEST_CASE("outside moments complement the band") {
    const double sd = 1.7, lo = -2.0, hi = 1.0;
    const auto in = truncated_moments(sd, lo, hi);
    const auto out = outside_moments(sd, lo, hi);
    CHECK(in.prob + out.prob == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(in.prob * in.mean + out.prob * out.mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(in.prob * in.second_moment + out.prob * out.second_moment == doctest::Approx(sd * sd).epsilon(1e-12));
}

TEST_CASE("symmetric truncation has zero mean") {
    CHECK(truncated_moments(2.0, -1.3, 1.3).mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("bivariate normal cdf against quadrature") {
    const double cases[][3] = {{0.5, -0.2, 0.3}, {1.0, 2.0, -0.7}, {-1.5, 0.4, 0.95}, {0.0, 0.0, 0.0}, {2.0, -1.0, -0.99}};
    for (const auto& c : cases) {
        const double h = c[0], k = c[1], rho = c[2];
        // P(X <= h, Y <= k) = int_{-inf}^{h} phi(x) Phi((k - rho x)/sqrt(1 - rho^2)) dx
        const double s = std::sqrt(1 - rho * rho);
        const double want =
            integrate([&](double x) { return normal_pdf(x) * normal_cdf((k - rho * x) / s); }, -40.0, h);
        CHECK(bivariate_normal_cdf(h, k, rho) == doctest::Approx(want).epsilon(1e-9));
    }
    CHECK(bivariate_normal_cdf(0.3, 0.8, 1.0) == doctest::Approx(normal_cdf(0.3)));
    CHECK(bivariate_normal_cdf(0.3, 0.8, -1.0) == doctest::Approx(normal_cdf(0.3) + normal_cdf(0.8) - 1.0));
}

TEST_CASE("bivariate rectangle probability") {
    // independent case factorizes
    const double p = bivariate_rect_prob(1.0, -2.0, 4.0, 9.0, 0.0, 0.0, 3.0, -5.0, 1.0);
    const double want = (normal_cdf(1.0) - normal_cdf(-0.5)) * (normal_cdf(1.0) - normal_cdf(-1.0));
    CHECK(p == doctest::Approx(want).epsilon(1e-10));
    // zero variance on one coordinate is a point mass
    CHECK(bivariate_rect_prob(0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 1.0) ==
          doctest::Approx(normal_cdf(1.0) - normal_cdf(-1.0)));
    CHECK(bivariate_rect_prob(0.0, 0.0, 2.0, 3.0, 1.0, -kInf, kInf, -kInf, kInf) == doctest::Approx(1.0));
}

TEST_CASE("chi-square survival matches boost") {
    for (int k : {1, 2, 10, 30})
        for (double eta : {0.5, 5.0, 18.3, 43.8}) {
            boost::math::chi_squared d(k);
            CHECK(chi_square_survival(k, eta) == doctest::Approx(boost::math::cdf(complement(d, eta))).epsilon(1e-10));
        }
}

TEST_CASE("normal interval with zero sd") {
    CHECK(normal_interval_prob(1.0, 0.0, 0.0, 2.0) == 1.0);
    CHECK(normal_interval_prob(3.0, 0.0, 0.0, 2.0) == 0.0);
}
