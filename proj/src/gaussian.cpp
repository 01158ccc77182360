#include "cpsattack/gaussian.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/owens_t.hpp>

#include <algorithm>
#include <stdexcept>

namespace cpsattack {

double normal_interval_prob(double mean, double sd, double lo, double hi) {
    if (hi < lo) return 0.0;
    if (sd <= 0.0) return (mean >= lo && mean <= hi) ? 1.0 : 0.0;
    const double a = (lo - mean) / sd;
    const double b = (hi - mean) / sd;
    // Evaluate in the tail that keeps precision.
    if (a > 0.0) return std::max(0.0, normal_cdf(-a) - normal_cdf(-b));
    return std::max(0.0, normal_cdf(b) - normal_cdf(a));
}

TruncatedMoments truncated_moments(double sd, double lo, double hi) {
    TruncatedMoments m;
    if (hi < lo) return m;
    if (sd <= 0.0) {
        if (lo <= 0.0 && hi >= 0.0) m.prob = 1.0;
        return m;
    }
    const double a = lo / sd;
    const double b = hi / sd;
    m.prob = normal_interval_prob(0.0, 1.0, a, b);
    if (m.prob <= 0.0) return m;
    const double pa = std::isinf(a) ? 0.0 : normal_pdf(a);
    const double pb = std::isinf(b) ? 0.0 : normal_pdf(b);
    const double apa = std::isinf(a) ? 0.0 : a * pa;
    const double bpb = std::isinf(b) ? 0.0 : b * pb;
    m.mean = sd * (pa - pb) / m.prob;
    m.second_moment = std::max(0.0, sd * sd * (1.0 + (apa - bpb) / m.prob));
    return m;
}

TruncatedMoments outside_moments(double sd, double lo, double hi) {
    const TruncatedMoments left = truncated_moments(sd, -kInf, lo);
    const TruncatedMoments right = truncated_moments(sd, hi, kInf);
    TruncatedMoments m;
    m.prob = left.prob + right.prob;
    if (m.prob <= 0.0) return m;
    m.mean = (left.prob * left.mean + right.prob * right.mean) / m.prob;
    m.second_moment = (left.prob * left.second_moment + right.prob * right.second_moment) / m.prob;
    return m;
}

double bivariate_normal_cdf(double h, double k, double rho) {
    if (h == -kInf || k == -kInf) return 0.0;
    if (h == kInf) return normal_cdf(k);
    if (k == kInf) return normal_cdf(h);
    if (rho >= 1.0) return normal_cdf(std::min(h, k));
    if (rho <= -1.0) return std::max(0.0, normal_cdf(h) - normal_cdf(-k));
    // Owen's T representation; the arguments below are singular at zero.
    constexpr double nudge = 1e-12;
    if (std::abs(h) < nudge) h = std::copysign(nudge, h == 0.0 ? 1.0 : h);
    if (std::abs(k) < nudge) k = std::copysign(nudge, k == 0.0 ? 1.0 : k);
    const double s = std::sqrt((1.0 - rho) * (1.0 + rho));
    const double ah = (k - rho * h) / (h * s);
    const double ak = (h - rho * k) / (k * s);
    const double beta = (h * k < 0.0) ? 0.5 : 0.0;
    const double p = 0.5 * (normal_cdf(h) + normal_cdf(k)) - boost::math::owens_t(h, ah) -
                     boost::math::owens_t(k, ak) - beta;
    return std::clamp(p, 0.0, 1.0);
}

double bivariate_rect_prob(double mean_r, double mean_x, double var_r, double var_x, double cov_rx,
                           double r_lo, double r_hi, double x_lo, double x_hi) {
    if (r_hi < r_lo || x_hi < x_lo) return 0.0;
    const double sr = std::sqrt(std::max(var_r, 0.0));
    const double sx = std::sqrt(std::max(var_x, 0.0));
    constexpr double tiny = 1e-300;
    if (sr <= tiny || sx <= tiny) {
        return normal_interval_prob(mean_r, sr, r_lo, r_hi) * normal_interval_prob(mean_x, sx, x_lo, x_hi);
    }
    const double rho = std::clamp(cov_rx / (sr * sx), -1.0, 1.0);
    const double h1 = (r_lo - mean_r) / sr, h2 = (r_hi - mean_r) / sr;
    const double k1 = (x_lo - mean_x) / sx, k2 = (x_hi - mean_x) / sx;
    if (std::abs(rho) > 1.0 - 1e-12) {
        // X is an affine function of R: intersect the two intervals in Z.
        const double l = rho > 0.0 ? std::max(h1, k1) : std::max(h1, -k2);
        const double u = rho > 0.0 ? std::min(h2, k2) : std::min(h2, -k1);
        return normal_interval_prob(0.0, 1.0, l, u);
    }
    const double p = bivariate_normal_cdf(h2, k2, rho) - bivariate_normal_cdf(h1, k2, rho) -
                     bivariate_normal_cdf(h2, k1, rho) + bivariate_normal_cdf(h1, k1, rho);
    return std::clamp(p, 0.0, 1.0);
}

double chi_square_survival(int dof, double eta) {
    if (dof < 1) throw std::invalid_argument("chi_square_survival: dof must be >= 1");
    if (eta <= 0.0) return 1.0;
    if (std::isinf(eta)) return 0.0;
    return boost::math::gamma_q(0.5 * dof, 0.5 * eta);
}

}  // namespace cpsattack
