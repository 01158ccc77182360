#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace cpsattack {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// P(lo <= Z <= hi) for Z ~ N(mean, sd^2). sd == 0 is a point mass.
double normal_interval_prob(double mean, double sd, double lo, double hi);

/// Moments of Z ~ N(0, sd^2) restricted to [lo, hi] (bounds may be infinite).
struct TruncatedMoments {
    double prob = 0.0;           ///< P(Z in [lo, hi])
    double mean = 0.0;           ///< E[Z | Z in [lo, hi]]
    double second_moment = 0.0;  ///< E[Z^2 | Z in [lo, hi]]
};
TruncatedMoments truncated_moments(double sd, double lo, double hi);

/// Same moments over the complement (-inf, -c] U [c, inf) of a symmetric
/// band, with the band given in Z coordinates as [lo, hi].
TruncatedMoments outside_moments(double sd, double lo, double hi);

/// Standard bivariate normal CDF P(X <= h, Y <= k) with correlation rho.
double bivariate_normal_cdf(double h, double k, double rho);

/// P(r_lo <= R <= r_hi, x_lo <= X <= x_hi) for (R, X) jointly Gaussian.
/// Degenerate (zero-variance or perfectly correlated) cases are handled.
double bivariate_rect_prob(double mean_r, double mean_x, double var_r, double var_x, double cov_rx,
                           double r_lo, double r_hi, double x_lo, double x_hi);

/// P(chi^2_m > eta).
double chi_square_survival(int dof, double eta);

}  // namespace cpsattack
