#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qtun::stats {

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x) (NIST's igamc).
double gamma_q(double a, double x);

/// Upper tail of the chi-square distribution.
double chi2_sf(double statistic, double dof);

struct ChiSquare {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    std::size_t cells = 0; // after merging
};

/// Pearson goodness of fit. Adjacent cells are merged left to right until
/// every merged expected count is >= min_expected (a short remainder joins
/// the last merged cell). dof = cells - 1 - fitted_params.
ChiSquare chi_square_gof(std::span<const double> observed, std::span<const double> expected,
                         int fitted_params = 0, double min_expected = 5.0);

/// sup_n |F_empirical(n) - F_model(n)| over the support points 1..cdf.size()-1
/// of a discrete law; `cdf[n]` is the model CDF at n.
double ks_distance_discrete(std::span<const std::uint64_t> counts, std::span<const double> cdf);

} // namespace qtun::stats
