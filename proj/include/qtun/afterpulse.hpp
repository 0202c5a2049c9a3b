#pragma once

#include "qtun/error.hpp"
#include "qtun/kv.hpp"
#include "qtun/source.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qtun {

/// Fitted after-pulse model. The log-quotient of the interval pmf over the
/// geometric law is modeled as D + C exp(-B n) with C = A (p0 + B) / (p0 B);
/// the constant D re-normalizes the reference (hold-off shift and the mass
/// moved by after-pulses) so the corrected quotient decays to 0.
struct AfterpulseFit {
    double p0_hat = 0.0;
    double C_hat = 0.0;
    double B_hat = 0.0;
    double A_hat = 0.0;
    double residual = 0.0;   // RMS of log-quotient residuals
    double C_stderr = 0.0;   // Wald, marginal over B
    double B_stderr = 0.0;
    std::uint64_t fit_first = 0;
    std::uint64_t fit_last = 0;
    std::uint64_t tail_start = 0;  // 60th percentile t0
    double tail_fraction = 0.0;    // share of intervals above t0
    double log_offset = 0.0;       // D
    std::uint64_t sample_count = 0;
    int iterations = 0;

    /// Throws InvalidFit.
    void validate() const;

    /// Re-normalized reference e^D p0 (1-p0)^(n-1).
    double reference_pmf(std::uint64_t n) const;

    /// C exp(-B n).
    double fitted_log_quotient(double n) const;

    SourceModel model(std::uint32_t holdoff_periods = 0, double clock_period = 2e-9) const;

    KeyValues to_kv() const;
    static AfterpulseFit from_kv(const KeyValues& kv);
    void save(const std::filesystem::path& path) const;
    static AfterpulseFit load(const std::filesystem::path& path);
};

/// Raised when Gauss-Newton fails; `partial` holds the state reached.
class FitDivergedError : public Error {
public:
    FitDivergedError(const std::string& msg, AfterpulseFit partial)
        : Error(Errc::FitDiverged, msg), partial_(partial) {}
    const AfterpulseFit& partial() const { return partial_; }

private:
    AfterpulseFit partial_;
};

struct FitOptions {
    std::size_t min_intervals = 100'000;
    std::uint64_t min_bin_count = 50;
    double tail_quantile = 0.6;
    int max_iterations = 200;
};

/// p0 from a geometric MLE above the tail quantile, then a weighted
/// Gauss-Newton fit of D + C exp(-B n) to the log-quotient (weights = counts).
/// Throws InsufficientData or FitDivergedError.
AfterpulseFit fit_afterpulse(const IntervalStream& stream, const FitOptions& opt = {});

struct LogQuotientPoint {
    double n = 0.0;  // bin start, or group centre
    double empirical = 0.0;
    double fitted = 0.0;
    std::uint64_t count = 0;
};

/// Per-period log-quotient over every interval value with at least
/// `min_bin_count` occurrences.
std::vector<LogQuotientPoint> log_quotient(const IntervalStream& stream, const AfterpulseFit& fit,
                                           std::uint64_t min_bin_count = 50);

/// Log-quotient pooled over groups of `width` periods covering [first, last].
std::vector<LogQuotientPoint> grouped_log_quotient(const IntervalStream& stream, const AfterpulseFit& fit,
                                                   std::uint64_t first, std::uint64_t last, std::uint64_t width);

/// 1 - sum w (y - f)^2 / sum w (y - ybar_w)^2 with w = count.
double weighted_r_squared(const std::vector<LogQuotientPoint>& points);

/// CSV `n,log_quotient_empirical,log_quotient_fitted`.
void write_log_quotient_csv(const std::filesystem::path& path, const std::vector<LogQuotientPoint>& points);

struct AfterpulseParams {
    double p0 = 1e-3;
    double A = 0.0;
    double B = 0.01;
};

/// (p0 + A e^{-Bt}) exp(-(p0 t + (A/B)(1 - e^{-Bt}))), t >= 0.
double theoretical_pr(const AfterpulseParams& p, double t);
/// Integer-period form; DomainError for n < 1.
double theoretical_pr(const AfterpulseParams& p, std::uint64_t n);

/// ln(P_r(t) / P(t)) + A/B where P(t) = p0 e^{-p0 t}; the A/B offset puts the
/// reference on the same tail mass so the quotient decays to 0.
double theoretical_log_quotient(const AfterpulseParams& p, double t);

/// Acceptance probability r(n) = [P(n)/P_r(n)] / sup_m [P(m)/P_r(m)]
///   = p0 / (p0 + A e^{-Bn}) * exp(-(A/B) e^{-Bn}).
double acceptance_probability(const AfterpulseFit& fit, std::uint64_t n);

struct SelectionReport {
    std::uint64_t input_count = 0;
    std::uint64_t kept_count = 0;
    double keep_fraction = 0.0;
    /// r(n) for n = 1..size(); r is 1 beyond the end.
    std::vector<double> acceptance_curve;

    KeyValues to_kv() const;
};

struct Selection {
    IntervalStream stream;
    SelectionReport report;
};

/// Keeps interval i with probability r(n_i) using the counter-based uniform
/// (seed, i), so any chunking of the input gives the same result.
Selection preselect(const IntervalStream& stream, const AfterpulseFit& fit, std::uint64_t seed);

} // namespace qtun
