#include "qtun/special.hpp"

#include "qtun/error.hpp"

#include <cmath>
#include <limits>

namespace qtun::stats {

namespace {

constexpr int kMaxIterations = 100000;
constexpr double kEps = 1e-16;

// log of x^a e^{-x} / Gamma(a)
double log_prefactor(double a, double x) { return a * std::log(x) - x - std::lgamma(a); }

double lower_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < kMaxIterations; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kEps) {
            return sum * std::exp(log_prefactor(a, x));
        }
    }
    throw Error(Errc::NoConvergence, "incomplete gamma series");
}

// Modified Lentz continued fraction for Q(a, x), x > a + 1.
double upper_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIterations; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) {
            d = tiny;
        }
        c = b + an / c;
        if (std::abs(c) < tiny) {
            c = tiny;
        }
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) {
            return std::exp(log_prefactor(a, x)) * h;
        }
    }
    throw Error(Errc::NoConvergence, "incomplete gamma continued fraction");
}

void check_args(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0) || std::isnan(x)) {
        throw Error(Errc::DomainError, "incomplete gamma needs a > 0, x >= 0");
    }
}

} // namespace

double gamma_p(double a, double x) {
    check_args(a, x);
    if (x == 0.0) {
        return 0.0;
    }
    if (std::isinf(x)) {
        return 1.0;
    }
    return x < a + 1.0 ? lower_series(a, x) : 1.0 - upper_fraction(a, x);
}

double gamma_q(double a, double x) {
    check_args(a, x);
    if (x == 0.0) {
        return 1.0;
    }
    if (std::isinf(x)) {
        return 0.0;
    }
    return x < a + 1.0 ? 1.0 - lower_series(a, x) : upper_fraction(a, x);
}

double chi2_sf(double statistic, double dof) {
    if (!(dof > 0.0)) {
        throw Error(Errc::DomainError, "chi-square needs dof > 0");
    }
    if (statistic <= 0.0) {
        return 1.0;
    }
    return gamma_q(0.5 * dof, 0.5 * statistic);
}

ChiSquare chi_square_gof(std::span<const double> observed, std::span<const double> expected, int fitted_params,
                         double min_expected) {
    if (observed.size() != expected.size() || observed.empty()) {
        throw Error(Errc::ShapeMismatch, "observed and expected must be non-empty and equally long");
    }
    std::vector<double> obs;
    std::vector<double> exp;
    double acc_o = 0.0;
    double acc_e = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (!(expected[i] > 0.0)) {
            throw Error(Errc::ShapeMismatch, "expected counts must be > 0");
        }
        acc_o += observed[i];
        acc_e += expected[i];
        if (acc_e >= min_expected) {
            obs.push_back(acc_o);
            exp.push_back(acc_e);
            acc_o = acc_e = 0.0;
        }
    }
    if (acc_e > 0.0) {
        if (exp.empty()) {
            obs.push_back(acc_o);
            exp.push_back(acc_e);
        } else {
            obs.back() += acc_o;
            exp.back() += acc_e;
        }
    }
    ChiSquare out;
    out.cells = exp.size();
    for (std::size_t i = 0; i < exp.size(); ++i) {
        const double d = obs[i] - exp[i];
        out.statistic += d * d / exp[i];
    }
    out.dof = static_cast<double>(out.cells) - 1.0 - fitted_params;
    if (out.dof <= 0.0) {
        throw Error(Errc::ShapeMismatch, "chi-square has no degrees of freedom after merging");
    }
    out.p_value = chi2_sf(out.statistic, out.dof);
    return out;
}

double ks_distance_discrete(std::span<const std::uint64_t> counts, std::span<const double> cdf) {
    if (counts.size() != cdf.size()) {
        throw Error(Errc::ShapeMismatch, "counts and cdf must be equally long");
    }
    double total = 0.0;
    for (auto c : counts) {
        total += static_cast<double>(c);
    }
    if (total == 0.0) {
        throw Error(Errc::EmptyHistogram, "no samples");
    }
    double running = 0.0;
    double worst = 0.0;
    for (std::size_t n = 0; n < counts.size(); ++n) {
        running += static_cast<double>(counts[n]);
        worst = std::max(worst, std::abs(running / total - cdf[n]));
    }
    return worst;
}

} // namespace qtun::stats
