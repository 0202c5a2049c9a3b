#pragma once

#include "qtun/bitstream.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace qtun::nist {

/// Test statistic and its p-value. Sequences are spans of 0/1 bytes.
struct Outcome {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Monobit: S = sum(2x - 1), p = erfc(|S| / sqrt(2n)).
Outcome frequency(std::span<const std::uint8_t> eps);

/// Chi-square over ones proportions of n / block blocks.
Outcome block_frequency(std::span<const std::uint8_t> eps, std::size_t block = 128);

/// Total number of runs; p = 0 when the monobit prerequisite fails.
Outcome runs(std::span<const std::uint8_t> eps);

/// Longest run of ones in 128-bit blocks against the six classes
/// <=4, 5, 6, 7, 8, >=9. Throws TooShort below 128 bits.
Outcome longest_run_of_ones(std::span<const std::uint8_t> eps);

/// Class probabilities of the longest run of ones in a uniform 128-bit
/// block, from an exact dynamic program over (current run, longest run).
const std::array<double, 6>& longest_run_probabilities();

/// Maximum partial-sum excursion, forward then backward.
std::array<Outcome, 2> cumulative_sums(std::span<const std::uint8_t> eps);

/// Overlapping m-bit pattern counts; the two p-values of the first and
/// second differences of psi^2.
std::array<Outcome, 2> serial(std::span<const std::uint8_t> eps, unsigned m = 5);

Outcome approximate_entropy(std::span<const std::uint8_t> eps, unsigned m = 5);

/// Discrete Fourier transform: share of the first n/2 moduli below the
/// 95% peak bound sqrt(n ln 20).
Outcome dft_spectral(std::span<const std::uint8_t> eps);

/// One battery row (a test, or one output of a two-output test).
struct TestRow {
    std::string name;
    std::vector<double> p_values; // per sequence
    std::uint64_t passes = 0;     // alpha <= p <= 1 - alpha
    double proportion = 0.0;
    double interval_low = 0.0;
    double interval_high = 1.0;
    double uniformity_p = 1.0; // chi-square of p-values over ten equal bins
    double median_p = 0.0;
    bool passed = false; // proportion inside [interval_low, interval_high]
};

struct TestReport {
    std::uint64_t sequence_length = 0;
    std::uint64_t sequence_count = 0;
    double alpha = 0.01;
    std::vector<TestRow> rows;

    bool all_passed() const;
    const TestRow& row(const std::string& name) const;
    /// Columns: Statistical Test, P-value (uniformity), median p, Proportion,
    /// Assessment.
    std::string table() const;
    /// One line per sequence: sequence index then every row's p-value.
    void write_csv(const std::filesystem::path& path) const;
};

/// Pass-rate interval for s sequences under the two-sided rule
/// alpha <= p <= 1 - alpha: q +- 3 sqrt(q (1 - q) / s), q = 1 - 2 alpha.
std::array<double, 2> proportion_interval(double alpha, std::uint64_t sequences);

/// Splits bits into floor(size / seq_len) sequences and runs the eight
/// tests on each, in parallel across sequences. Throws TooShort when fewer
/// than seq_len bits (or seq_len < 128) and InvalidParams for alpha outside
/// (0, 0.5).
TestReport run_battery(const BitStream& bits, std::uint64_t seq_len, double alpha = 0.01);

} // namespace qtun::nist
