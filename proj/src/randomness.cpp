#include "qtun/randomness.hpp"

#include "qtun/error.hpp"
#include "qtun/special.hpp"

#include <fftw3.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <thread>

namespace qtun::nist {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

// Overlapping m-bit pattern counts with the sequence wrapped around.
std::vector<std::uint64_t> pattern_counts(std::span<const std::uint8_t> eps, unsigned m) {
    std::vector<std::uint64_t> counts(std::size_t{1} << m, 0);
    if (m == 0) {
        counts[0] = eps.size();
        return counts;
    }
    const std::size_t n = eps.size();
    const std::uint32_t mask = (1u << m) - 1;
    std::uint32_t w = 0;
    for (unsigned j = 0; j + 1 < m; ++j) {
        w = (w << 1) | eps[j % n];
    }
    for (std::size_t i = 0; i < n; ++i) {
        w = ((w << 1) | eps[(i + m - 1) % n]) & mask;
        ++counts[w];
    }
    return counts;
}

double psi_squared(std::span<const std::uint8_t> eps, unsigned m) {
    if (m == 0) {
        return 0.0;
    }
    const auto counts = pattern_counts(eps, m);
    const double n = static_cast<double>(eps.size());
    double sum = 0.0;
    for (auto c : counts) {
        sum += static_cast<double>(c) * static_cast<double>(c);
    }
    return sum * std::ldexp(1.0, static_cast<int>(m)) / n - n;
}

double phi_entropy(std::span<const std::uint8_t> eps, unsigned m) {
    const auto counts = pattern_counts(eps, m);
    const double n = static_cast<double>(eps.size());
    double sum = 0.0;
    for (auto c : counts) {
        if (c) {
            const double p = static_cast<double>(c) / n;
            sum += p * std::log(p);
        }
    }
    return sum;
}

double cusum_p(std::int64_t n, std::int64_t z) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double zd = static_cast<double>(z);
    double sum1 = 0.0;
    for (std::int64_t k = (-n / z + 1) / 4; k <= (n / z - 1) / 4; ++k) {
        sum1 += normal_cdf((4 * k + 1) * zd / sn) - normal_cdf((4 * k - 1) * zd / sn);
    }
    double sum2 = 0.0;
    for (std::int64_t k = (-n / z - 3) / 4; k <= (n / z - 1) / 4; ++k) {
        sum2 += normal_cdf((4 * k + 3) * zd / sn) - normal_cdf((4 * k + 1) * zd / sn);
    }
    return clamp01(1.0 - sum1 + sum2);
}

struct FftPlans {
    std::mutex mutex;
    std::map<std::size_t, fftw_plan> plans;

    ~FftPlans() {
        for (auto& [n, p] : plans) {
            fftw_destroy_plan(p);
        }
    }

    // Planning is not thread-safe in FFTW; execution on fresh arrays is.
    fftw_plan get(std::size_t n) {
        std::lock_guard lock(mutex);
        auto it = plans.find(n);
        if (it != plans.end()) {
            return it->second;
        }
        double* in = fftw_alloc_real(n);
        fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
        fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        plans.emplace(n, p);
        return p;
    }
};

FftPlans& fft_plans() {
    static FftPlans plans;
    return plans;
}

void require_bits(std::span<const std::uint8_t> eps, std::size_t min, const char* test) {
    if (eps.size() < min) {
        throw Error(Errc::TooShort, std::string(test) + " needs at least " + std::to_string(min) + " bits");
    }
}

} // namespace

Outcome frequency(std::span<const std::uint8_t> eps) {
    require_bits(eps, 1, "frequency");
    std::int64_t s = 0;
    for (auto b : eps) {
        s += b ? 1 : -1;
    }
    const double n = static_cast<double>(eps.size());
    return {static_cast<double>(s), std::erfc(std::abs(static_cast<double>(s)) / std::sqrt(2.0 * n))};
}

Outcome block_frequency(std::span<const std::uint8_t> eps, std::size_t block) {
    if (block == 0) {
        throw Error(Errc::InvalidParams, "block size must be positive");
    }
    require_bits(eps, block, "block frequency");
    const std::size_t blocks = eps.size() / block;
    double chi = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < block; ++j) {
            ones += eps[b * block + j];
        }
        const double d = static_cast<double>(ones) / static_cast<double>(block) - 0.5;
        chi += d * d;
    }
    chi *= 4.0 * static_cast<double>(block);
    return {chi, stats::gamma_q(0.5 * static_cast<double>(blocks), 0.5 * chi)};
}

Outcome runs(std::span<const std::uint8_t> eps) {
    require_bits(eps, 2, "runs");
    const double n = static_cast<double>(eps.size());
    std::size_t ones = 0;
    std::size_t v = 1;
    for (std::size_t k = 0; k < eps.size(); ++k) {
        ones += eps[k];
        if (k + 1 < eps.size() && eps[k] != eps[k + 1]) {
            ++v;
        }
    }
    const double pi = static_cast<double>(ones) / n;
    if (std::abs(pi - 0.5) >= 2.0 / std::sqrt(n)) {
        return {static_cast<double>(v), 0.0};
    }
    const double q = pi * (1.0 - pi);
    const double p = std::erfc(std::abs(static_cast<double>(v) - 2.0 * n * q) / (2.0 * std::sqrt(2.0 * n) * q));
    return {static_cast<double>(v), p};
}

const std::array<double, 6>& longest_run_probabilities() {
    static const std::array<double, 6> probs = [] {
        constexpr std::size_t M = 128;
        // state[cur][best], cur <= best
        std::vector<long double> state((M + 1) * (M + 1), 0.0L);
        std::vector<long double> next(state.size());
        auto at = [](std::vector<long double>& v, std::size_t cur, std::size_t best) -> long double& {
            return v[cur * (M + 1) + best];
        };
        at(state, 0, 0) = 1.0L;
        for (std::size_t step = 0; step < M; ++step) {
            std::fill(next.begin(), next.end(), 0.0L);
            for (std::size_t cur = 0; cur <= step; ++cur) {
                for (std::size_t best = cur; best <= step; ++best) {
                    const long double p = at(state, cur, best);
                    if (p == 0.0L) {
                        continue;
                    }
                    at(next, 0, best) += 0.5L * p;
                    at(next, cur + 1, std::max(best, cur + 1)) += 0.5L * p;
                }
            }
            std::swap(state, next);
        }
        std::array<long double, M + 1> longest{};
        for (std::size_t cur = 0; cur <= M; ++cur) {
            for (std::size_t best = cur; best <= M; ++best) {
                longest[best] += at(state, cur, best);
            }
        }
        std::array<double, 6> out{};
        for (std::size_t r = 0; r <= M; ++r) {
            const std::size_t cls = r <= 4 ? 0 : (r >= 9 ? 5 : r - 4);
            out[cls] += static_cast<double>(longest[r]);
        }
        return out;
    }();
    return probs;
}

Outcome longest_run_of_ones(std::span<const std::uint8_t> eps) {
    constexpr std::size_t M = 128;
    require_bits(eps, M, "longest run of ones");
    const auto& pi = longest_run_probabilities();
    const std::size_t blocks = eps.size() / M;
    std::array<double, 6> nu{};
    for (std::size_t b = 0; b < blocks; ++b) {
        std::size_t run = 0;
        std::size_t best = 0;
        for (std::size_t j = 0; j < M; ++j) {
            run = eps[b * M + j] ? run + 1 : 0;
            best = std::max(best, run);
        }
        nu[best <= 4 ? 0 : (best >= 9 ? 5 : best - 4)] += 1.0;
    }
    double chi = 0.0;
    const double N = static_cast<double>(blocks);
    for (std::size_t i = 0; i < 6; ++i) {
        const double e = N * pi[i];
        chi += (nu[i] - e) * (nu[i] - e) / e;
    }
    return {chi, stats::gamma_q(2.5, 0.5 * chi)};
}

std::array<Outcome, 2> cumulative_sums(std::span<const std::uint8_t> eps) {
    require_bits(eps, 1, "cumulative sums");
    std::int64_t s = 0;
    std::int64_t sup = 0;
    std::int64_t inf = 0;
    for (auto b : eps) {
        s += b ? 1 : -1;
        sup = std::max(sup, s);
        inf = std::min(inf, s);
    }
    const auto n = static_cast<std::int64_t>(eps.size());
    const std::int64_t forward = std::max(sup, -inf);
    const std::int64_t backward = std::max(sup - s, s - inf);
    return {Outcome{static_cast<double>(forward), cusum_p(n, forward)},
            Outcome{static_cast<double>(backward), cusum_p(n, backward)}};
}

std::array<Outcome, 2> serial(std::span<const std::uint8_t> eps, unsigned m) {
    if (m < 3 || m > 16) {
        throw Error(Errc::InvalidParams, "serial test needs 3 <= m <= 16");
    }
    require_bits(eps, m, "serial");
    const double p0 = psi_squared(eps, m);
    const double p1 = psi_squared(eps, m - 1);
    const double p2 = psi_squared(eps, m - 2);
    const double d1 = p0 - p1;
    const double d2 = p0 - 2.0 * p1 + p2;
    return {Outcome{d1, stats::gamma_q(std::ldexp(1.0, static_cast<int>(m) - 2), 0.5 * std::max(0.0, d1))},
            Outcome{d2, stats::gamma_q(std::ldexp(1.0, static_cast<int>(m) - 3), 0.5 * std::max(0.0, d2))}};
}

Outcome approximate_entropy(std::span<const std::uint8_t> eps, unsigned m) {
    if (m < 1 || m > 15) {
        throw Error(Errc::InvalidParams, "approximate entropy needs 1 <= m <= 15");
    }
    require_bits(eps, m + 1, "approximate entropy");
    const double apen = phi_entropy(eps, m) - phi_entropy(eps, m + 1);
    const double chi = 2.0 * static_cast<double>(eps.size()) * (std::numbers::ln2 - apen);
    return {chi, stats::gamma_q(std::ldexp(1.0, static_cast<int>(m) - 1), 0.5 * std::max(0.0, chi))};
}

Outcome dft_spectral(std::span<const std::uint8_t> eps) {
    require_bits(eps, 2, "dft spectral");
    const std::size_t n = eps.size();
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    for (std::size_t i = 0; i < n; ++i) {
        in[i] = eps[i] ? 1.0 : -1.0;
    }
    fftw_execute_dft_r2c(fft_plans().get(n), in, out);
    const double nd = static_cast<double>(n);
    const double threshold = std::sqrt(std::log(20.0) * nd);
    std::size_t below = 0;
    for (std::size_t k = 0; k < n / 2; ++k) {
        if (std::hypot(out[k][0], out[k][1]) < threshold) {
            ++below;
        }
    }
    fftw_free(in);
    fftw_free(out);
    const double expected = 0.95 * nd / 2.0;
    const double d = (static_cast<double>(below) - expected) / std::sqrt(nd * 0.95 * 0.05 / 4.0);
    return {d, std::erfc(std::abs(d) / std::numbers::sqrt2)};
}

std::array<double, 2> proportion_interval(double alpha, std::uint64_t sequences) {
    if (!(alpha > 0.0 && alpha < 0.5) || sequences == 0) {
        throw Error(Errc::InvalidParams, "proportion interval needs 0 < alpha < 0.5 and sequences > 0");
    }
    const double q = 1.0 - 2.0 * alpha;
    const double half = 3.0 * std::sqrt(q * (1.0 - q) / static_cast<double>(sequences));
    return {q - half, std::min(1.0, q + half)};
}

bool TestReport::all_passed() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const TestRow& r) { return r.passed; });
}

const TestRow& TestReport::row(const std::string& name) const {
    for (const auto& r : rows) {
        if (r.name == name) {
            return r;
        }
    }
    throw Error(Errc::InvalidParams, "no battery row named " + name);
}

std::string TestReport::table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "sequences: %llu x %llu bits, alpha = %g, pass rule %g <= p <= %g\n",
                  static_cast<unsigned long long>(sequence_count), static_cast<unsigned long long>(sequence_length),
                  alpha, alpha, 1.0 - alpha);
    out += line;
    if (!rows.empty()) {
        std::snprintf(line, sizeof line, "proportion interval: [%.4f, %.4f]\n", rows.front().interval_low,
                      rows.front().interval_high);
        out += line;
    }
    std::snprintf(line, sizeof line, "%-26s %12s %10s %11s  %s\n", "Statistical Test", "P-value(unif)",
                  "median p", "Proportion", "Assessment");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-26s %12.6f %10.6f %11.4f  %s\n", r.name.c_str(), r.uniformity_p,
                      r.median_p, r.proportion, r.passed ? "Success" : "Failure");
        out += line;
    }
    return out;
}

void TestReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out << "sequence";
    for (const auto& r : rows) {
        out << ',' << r.name;
    }
    out << '\n';
    char buf[32];
    for (std::uint64_t s = 0; s < sequence_count; ++s) {
        out << s;
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%.10g", r.p_values[s]);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
}

TestReport run_battery(const BitStream& bits, std::uint64_t seq_len, double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5)) {
        throw Error(Errc::InvalidParams, "alpha must lie in (0, 0.5)");
    }
    if (seq_len < 128 || bits.size() < seq_len) {
        throw Error(Errc::TooShort, "battery needs seq_len >= 128 and at least seq_len bits, got " +
                                        std::to_string(bits.size()) + " bits for seq_len " + std::to_string(seq_len));
    }
    static const char* const names[] = {"Frequency",
                                        "BlockFrequency",
                                        "CumulativeSums(forward)",
                                        "CumulativeSums(backward)",
                                        "Runs",
                                        "LongestRun",
                                        "FFT",
                                        "ApproximateEntropy",
                                        "Serial(1)",
                                        "Serial(2)"};
    constexpr std::size_t kRows = std::size(names);
    const std::uint64_t count = bits.size() / seq_len;

    TestReport report;
    report.sequence_length = seq_len;
    report.sequence_count = count;
    report.alpha = alpha;
    report.rows.resize(kRows);
    for (std::size_t r = 0; r < kRows; ++r) {
        report.rows[r].name = names[r];
        report.rows[r].p_values.assign(count, 0.0);
    }

    std::atomic<std::uint64_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        std::vector<std::uint8_t> eps(seq_len);
        for (std::uint64_t s = next++; s < count; s = next++) {
            try {
                const std::uint64_t base = s * seq_len;
                for (std::uint64_t i = 0; i < seq_len; ++i) {
                    eps[i] = bits.bit(base + i);
                }
                const auto cs = cumulative_sums(eps);
                const auto se = serial(eps, 5);
                const double p[kRows] = {frequency(eps).p_value,
                                         block_frequency(eps, 128).p_value,
                                         cs[0].p_value,
                                         cs[1].p_value,
                                         runs(eps).p_value,
                                         longest_run_of_ones(eps).p_value,
                                         dft_spectral(eps).p_value,
                                         approximate_entropy(eps, 5).p_value,
                                         se[0].p_value,
                                         se[1].p_value};
                for (std::size_t r = 0; r < kRows; ++r) {
                    report.rows[r].p_values[s] = p[r];
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                return;
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                            static_cast<unsigned>(std::min<std::uint64_t>(count, 64))));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }

    const auto interval = proportion_interval(alpha, count);
    for (auto& r : report.rows) {
        std::array<double, 10> bins{};
        for (double p : r.p_values) {
            if (p >= alpha && p <= 1.0 - alpha) {
                ++r.passes;
            }
            bins[std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0))] += 1.0;
        }
        r.proportion = static_cast<double>(r.passes) / static_cast<double>(count);
        r.interval_low = interval[0];
        r.interval_high = interval[1];
        const double e = static_cast<double>(count) / 10.0;
        double chi = 0.0;
        for (double b : bins) {
            chi += (b - e) * (b - e) / e;
        }
        r.uniformity_p = stats::gamma_q(4.5, 0.5 * chi);
        auto sorted = r.p_values;
        std::sort(sorted.begin(), sorted.end());
        r.median_p = count % 2 ? sorted[count / 2] : 0.5 * (sorted[count / 2 - 1] + sorted[count / 2]);
        r.passed = r.proportion >= r.interval_low && r.proportion <= r.interval_high;
    }
    return report;
}

} // namespace qtun::nist
