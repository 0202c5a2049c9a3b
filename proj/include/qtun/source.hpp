#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qtun {

/// Per-period detection model: base tunneling probability p0 plus an
/// exponentially decaying after-pulse excess A exp(-B n), with a hold-off
/// of `holdoff_periods` forced-idle periods after every detection.
struct SourceModel {
    double p0 = 1e-3;
    double ap_amplitude = 0.0; // A
    double ap_decay = 0.01;    // B, per period
    double clock_period = 2e-9; // seconds
    std::uint32_t holdoff_periods = 0;

    /// Throws InvalidModel.
    void validate() const;

    /// A exp(-B n), with n counted from the previous detection.
    double excess(std::uint64_t n) const;

    /// Detection probability in period n (0 during hold-off).
    double hazard(std::uint64_t n) const;

    double clock_hz() const { return 1.0 / clock_period; }

    /// Dead periods covering `holdoff_ns`, rounded up.
    static std::uint32_t holdoff_from_ns(double holdoff_ns, double clock_period);
};

struct StreamMetadata {
    double clock_hz = 500e6;
    double holdoff_ns = 0.0;
    std::string bias_voltage = "unknown";
    std::string source = "simulated"; // simulated | hardware

    bool operator==(const StreamMetadata&) const = default;
};

/// Periods between adjacent detections, hold-off included (every value >= 1).
struct IntervalStream {
    std::vector<std::uint32_t> intervals;
    StreamMetadata meta;

    std::size_t size() const { return intervals.size(); }
    bool empty() const { return intervals.empty(); }
    double clock_period() const { return 1.0 / meta.clock_hz; }

    /// Throws FormatError if an interval is zero or clock_hz is not positive.
    void validate() const;
};

/// P(n) = h(n) prod_{i<n} (1 - h(i)) evaluated in log space; h is zero during
/// hold-off, so with holdoff_periods = 0 this is the after-pulse interval law
/// and with A = 0 additionally the geometric law (1-p0)^(n-1) p0.
double interval_pmf(const SourceModel& model, std::uint64_t n);
double interval_log_pmf(const SourceModel& model, std::uint64_t n);

/// pmf for n = 0..n_max (entry 0 is zero) computed by one cumulative pass.
std::vector<double> interval_pmf_table(const SourceModel& model, std::uint64_t n_max);

/// Exact sampler. A per-period Bernoulli(p0 + e(n)) equals the OR of two
/// independent Bernoullis with p0 and e(n)/(1-p0); the base part is drawn as
/// a geometric variate and the after-pulse part by thinning, so the cost per
/// interval does not grow with 1/p0. Deterministic in (model, count, seed).
IntervalStream sample_intervals(const SourceModel& model, std::size_t count, std::uint64_t seed);

/// Literal period-by-period Bernoulli simulation; reference for the fast sampler.
IntervalStream sample_intervals_per_period(const SourceModel& model, std::size_t count, std::uint64_t seed);

StreamMetadata simulated_metadata(const SourceModel& model);

/// Sidecar path for an interval file: `<path>.meta`.
std::filesystem::path metadata_path(const std::filesystem::path& path);

/// Binary interval file: magic "QTUNINT1" then little-endian u32 values,
/// plus the key=value sidecar.
void write_intervals(const std::filesystem::path& path, const IntervalStream& stream);
IntervalStream ingest_intervals(const std::filesystem::path& path);

struct SecondCount {
    std::uint64_t second = 0;
    std::uint64_t count = 0;
    bool partial = false;

    bool operator==(const SecondCount&) const = default;
};

/// Detections bucketed into half-open wall-time windows [k, k+1) seconds.
/// Every second from 0 to the last detection is listed; the last one is
/// flagged partial because recording stops inside it.
std::vector<SecondCount> dcr_per_second(const IntervalStream& stream);

/// CSV `second,count` plus a trailing `partial` column.
void write_dcr_csv(const std::filesystem::path& path, const std::vector<SecondCount>& counts);

} // namespace qtun
