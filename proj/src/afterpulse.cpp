#include "qtun/afterpulse.hpp"

#include "qtun/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

namespace qtun {

namespace {

constexpr double kMinDecay = 1e-5;
constexpr double kMaxDecay = 1.0;

struct Bin {
    std::uint64_t n;
    std::uint64_t count;
};

std::vector<Bin> histogram(const IntervalStream& stream) {
    std::vector<Bin> out;
    std::uint32_t top = 0;
    for (auto v : stream.intervals) {
        top = std::max(top, v);
    }
    if (top <= (1u << 24)) {
        std::vector<std::uint64_t> dense(std::size_t{top} + 1, 0);
        for (auto v : stream.intervals) {
            ++dense[v];
        }
        for (std::size_t n = 0; n < dense.size(); ++n) {
            if (dense[n] != 0) {
                out.push_back({n, dense[n]});
            }
        }
        return out;
    }
    std::vector<std::uint32_t> sorted = stream.intervals;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        out.push_back({sorted[i], j - i});
        i = j;
    }
    return out;
}

// Geometric law p0 (1-p0)^(n-1) shifted by the fitted log offset.
double log_reference(const AfterpulseFit& fit, double n) {
    return std::log(fit.p0_hat) + (n - 1.0) * std::log1p(-fit.p0_hat) + fit.log_offset;
}

struct Point {
    double n;
    double y;
    double w;
};

struct Params {
    double c;
    double b;
    double d;
};

double ssr(const std::vector<Point>& pts, const Params& q) {
    double s = 0.0;
    for (const auto& p : pts) {
        const double r = p.y - q.d - q.c * std::exp(-q.b * p.n);
        s += p.w * r * r;
    }
    return s;
}

// Solves the symmetric system a x = g by elimination with partial pivoting.
// Returns false when a pivot is negligible.
template <std::size_t N>
bool solve(std::array<std::array<double, N>, N> a, std::array<double, N> g, std::array<double, N>& x) {
    double scale = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        scale = std::max(scale, std::fabs(a[i][i]));
    }
    for (std::size_t k = 0; k < N; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < N; ++i) {
            if (std::fabs(a[i][k]) > std::fabs(a[piv][k])) {
                piv = i;
            }
        }
        if (!(std::fabs(a[piv][k]) > 1e-13 * scale)) {
            return false;
        }
        std::swap(a[k], a[piv]);
        std::swap(g[k], g[piv]);
        for (std::size_t i = k + 1; i < N; ++i) {
            const double f = a[i][k] / a[k][k];
            for (std::size_t j = k; j < N; ++j) {
                a[i][j] -= f * a[k][j];
            }
            g[i] -= f * g[k];
        }
    }
    for (std::size_t k = N; k-- > 0;) {
        double v = g[k];
        for (std::size_t j = k + 1; j < N; ++j) {
            v -= a[k][j] * x[j];
        }
        x[k] = v / a[k][k];
    }
    return true;
}

// Offset from the tail, then log-linear regression on the leading run of
// quotients above it.
Params initial_guess(const std::vector<Point>& pts, double tail_start) {
    Params q{0.0, 0.0, 0.0};
    double sw = 0.0;
    double swy = 0.0;
    for (const auto& p : pts) {
        if (p.n > tail_start) {
            sw += p.w;
            swy += p.w * p.y;
        }
    }
    q.d = sw > 0.0 ? swy / sw : 0.0;
    q.b = std::clamp(1.0 / (pts.back().n - pts.front().n + 1.0), kMinDecay, kMaxDecay);

    std::size_t run = 0;
    while (run < pts.size() && pts[run].y > q.d) {
        ++run;
    }
    if (run < 3) {
        return q;
    }
    double s0 = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < run; ++i) {
        const double v = pts[i].y - q.d;
        const double w = pts[i].w * v * v; // Var(ln v) ~ Var(v) / v^2
        const double lv = std::log(v);
        s0 += w;
        sx += w * pts[i].n;
        sy += w * lv;
        sxx += w * pts[i].n * pts[i].n;
        sxy += w * pts[i].n * lv;
    }
    const double den = s0 * sxx - sx * sx;
    if (!(den > 0.0)) {
        q.c = pts.front().y - q.d;
        return q;
    }
    const double slope = (s0 * sxy - sx * sy) / den;
    if (slope < 0.0) {
        q.b = std::clamp(-slope, kMinDecay, kMaxDecay);
    }
    q.c = std::exp((sy - slope * sx) / s0);
    return q;
}

} // namespace

void AfterpulseFit::validate() const {
    if (!(p0_hat > 0.0 && p0_hat < 1.0)) {
        throw Error(Errc::InvalidFit, "p0_hat must lie in (0, 1)");
    }
    if (!(B_hat > 0.0) || !std::isfinite(B_hat)) {
        throw Error(Errc::InvalidFit, "B_hat must be positive");
    }
    if (!(A_hat >= 0.0) || !std::isfinite(A_hat)) {
        throw Error(Errc::InvalidFit, "A_hat must be non-negative");
    }
    if (!(residual >= 0.0)) {
        throw Error(Errc::InvalidFit, "residual must be non-negative");
    }
}

double AfterpulseFit::reference_pmf(std::uint64_t n) const {
    return std::exp(log_reference(*this, static_cast<double>(n)));
}

double AfterpulseFit::fitted_log_quotient(double n) const { return C_hat * std::exp(-B_hat * n); }

SourceModel AfterpulseFit::model(std::uint32_t holdoff_periods, double clock_period) const {
    SourceModel m;
    m.p0 = p0_hat;
    m.ap_amplitude = A_hat;
    m.ap_decay = B_hat;
    m.holdoff_periods = holdoff_periods;
    m.clock_period = clock_period;
    return m;
}

KeyValues AfterpulseFit::to_kv() const {
    KeyValues kv;
    kv.set("p0_hat", p0_hat);
    kv.set("A_hat", A_hat);
    kv.set("B_hat", B_hat);
    kv.set("C_hat", C_hat);
    kv.set("residual", residual);
    kv.set("fit_range", std::to_string(fit_first) + ":" + std::to_string(fit_last));
    kv.set("C_stderr", C_stderr);
    kv.set("B_stderr", B_stderr);
    kv.set("tail_start", tail_start);
    kv.set("tail_fraction", tail_fraction);
    kv.set("log_offset", log_offset);
    kv.set("sample_count", sample_count);
    kv.set("iterations", static_cast<std::int64_t>(iterations));
    return kv;
}

AfterpulseFit AfterpulseFit::from_kv(const KeyValues& kv) {
    AfterpulseFit f;
    f.p0_hat = kv.real("p0_hat");
    f.A_hat = kv.real("A_hat");
    f.B_hat = kv.real("B_hat");
    f.C_hat = kv.real("C_hat");
    f.residual = kv.real("residual");
    const auto range = kv.str("fit_range");
    const auto colon = range.find(':');
    if (colon == std::string::npos) {
        throw Error(Errc::ConfigError, "fit_range must be first:last");
    }
    f.fit_first = parse_unsigned(range.substr(0, colon));
    f.fit_last = parse_unsigned(range.substr(colon + 1));
    f.C_stderr = kv.real_or("C_stderr", 0.0);
    f.B_stderr = kv.real_or("B_stderr", 0.0);
    f.tail_start = kv.unsigned_integer("tail_start");
    f.tail_fraction = kv.real("tail_fraction");
    f.log_offset = kv.real("log_offset");
    f.sample_count = kv.unsigned_integer("sample_count");
    f.iterations = static_cast<int>(kv.integer_or("iterations", 0));
    f.validate();
    return f;
}

void AfterpulseFit::save(const std::filesystem::path& path) const { to_kv().save(path); }

AfterpulseFit AfterpulseFit::load(const std::filesystem::path& path) { return from_kv(KeyValues::load(path)); }

AfterpulseFit fit_afterpulse(const IntervalStream& stream, const FitOptions& opt) {
    if (stream.size() < opt.min_intervals) {
        throw Error(Errc::InsufficientData,
                    "after-pulse fit needs at least " + std::to_string(opt.min_intervals) + " intervals");
    }
    const auto bins = histogram(stream);
    const auto total = static_cast<double>(stream.size());

    AfterpulseFit fit;
    fit.sample_count = stream.size();

    // Tail start: the value at the requested quantile.
    const auto rank = static_cast<std::uint64_t>(opt.tail_quantile * (total - 1.0));
    std::uint64_t seen = 0;
    for (const auto& b : bins) {
        seen += b.count;
        if (seen > rank) {
            fit.tail_start = b.n;
            break;
        }
    }
    std::uint64_t tail_count = 0;
    double tail_excess = 0.0;
    for (const auto& b : bins) {
        if (b.n > fit.tail_start) {
            tail_count += b.count;
            tail_excess += static_cast<double>(b.count) * static_cast<double>(b.n - fit.tail_start);
        }
    }
    if (tail_count == 0) {
        throw Error(Errc::InsufficientData, "no intervals above the tail quantile");
    }
    fit.p0_hat = static_cast<double>(tail_count) / tail_excess;
    fit.tail_fraction = static_cast<double>(tail_count) / total;
    if (!(fit.p0_hat < 1.0)) {
        throw Error(Errc::InsufficientData, "tail carries no spread; p0 not identifiable");
    }

    // Bins are admitted on the tail-scaled reference's expected count, so the
    // selection does not follow the noise. The quotient is taken against the
    // plain geometric law; the constant offset D absorbs the hold-off shift
    // and the normalization lost to after-pulses. -1/(2c) removes the leading
    // bias of count-weighted log counts.
    const double log_fail = std::log1p(-fit.p0_hat);
    const double log_p0 = std::log(fit.p0_hat);
    std::vector<Point> pts;
    for (const auto& b : bins) {
        const double n = static_cast<double>(b.n);
        const double expected = static_cast<double>(tail_count) * fit.p0_hat *
                                std::exp((n - static_cast<double>(fit.tail_start) - 1.0) * log_fail);
        if (expected >= static_cast<double>(opt.min_bin_count)) {
            const auto c = static_cast<double>(b.count);
            pts.push_back({n, std::log(c / total) - log_p0 - (n - 1.0) * log_fail - 0.5 / c, c});
        }
    }
    if (pts.size() < 4) {
        throw Error(Errc::InsufficientData, "fewer than 4 interval bins reach the count threshold");
    }
    fit.fit_first = static_cast<std::uint64_t>(pts.front().n);
    fit.fit_last = static_cast<std::uint64_t>(pts.back().n);

    Params q = initial_guess(pts, static_cast<double>(fit.tail_start));
    double s = ssr(pts, q);
    auto fail = [&](const std::string& why) {
        fit.C_hat = q.c;
        fit.B_hat = q.b;
        fit.log_offset = q.d;
        fit.residual = std::sqrt(s / static_cast<double>(pts.size()));
        throw FitDivergedError(why, fit);
    };

    // Gauss-Newton in (C, ln B, D) with step halving. When B is not
    // identifiable (C ~ 0) the step is taken in (C, D) alone.
    bool converged = false;
    for (int it = 0; it < opt.max_iterations; ++it) {
        fit.iterations = it + 1;
        std::array<std::array<double, 3>, 3> a{};
        std::array<double, 3> g{};
        for (const auto& p : pts) {
            const double e = std::exp(-q.b * p.n);
            const double r = p.y - q.d - q.c * e;
            const std::array<double, 3> j{e, -q.c * p.n * q.b * e, 1.0};
            for (std::size_t u = 0; u < 3; ++u) {
                for (std::size_t v = 0; v < 3; ++v) {
                    a[u][v] += p.w * j[u] * j[v];
                }
                g[u] += p.w * j[u] * r;
            }
        }
        std::array<double, 3> step{};
        if (!solve<3>(a, g, step)) {
            std::array<double, 2> sub{};
            if (!solve<2>({{{a[0][0], a[0][2]}, {a[2][0], a[2][2]}}}, {g[0], g[2]}, sub)) {
                fail("singular normal equations");
            }
            step = {sub[0], 0.0, sub[1]};
        }
        if (!std::isfinite(step[0]) || !std::isfinite(step[1]) || !std::isfinite(step[2])) {
            fail("non-finite Gauss-Newton step");
        }

        double t = 1.0;
        Params next = q;
        double s_next = s;
        bool improved = false;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            next = {q.c + t * step[0], std::clamp(q.b * std::exp(t * step[1]), kMinDecay, kMaxDecay),
                    q.d + t * step[2]};
            s_next = ssr(pts, next);
            if (s_next <= s) {
                improved = true;
                break;
            }
        }
        if (!improved) {
            converged = true;
            break;
        }
        const double change = s - s_next;
        q = next;
        s = s_next;
        if (change <= 1e-10 * s) {
            converged = true;
            break;
        }
    }
    if (!std::isfinite(s) || !std::isfinite(q.c) || !std::isfinite(q.d)) {
        fail("fit produced non-finite parameters");
    }
    if (!converged) {
        fail("Gauss-Newton did not converge in " + std::to_string(opt.max_iterations) + " iterations");
    }

    fit.C_hat = q.c;
    fit.B_hat = q.b;
    fit.log_offset = q.d;
    fit.A_hat = std::max(0.0, q.c * fit.p0_hat * q.b / (fit.p0_hat + q.b));

    // Wald errors from the information matrix in (C, B, D), scaled by the
    // reduced chi-square. The B column is taken without the factor C so the
    // matrix stays regular at C = 0.
    double sq = 0.0;
    std::array<std::array<double, 3>, 3> info{};
    for (const auto& p : pts) {
        const double e = std::exp(-q.b * p.n);
        const double r = p.y - q.d - q.c * e;
        sq += r * r;
        const std::array<double, 3> j{e, -p.n * e, 1.0};
        for (std::size_t u = 0; u < 3; ++u) {
            for (std::size_t v = 0; v < 3; ++v) {
                info[u][v] += p.w * j[u] * j[v];
            }
        }
    }
    fit.residual = std::sqrt(sq / static_cast<double>(pts.size()));
    const double scale = s / (static_cast<double>(pts.size()) - 3.0);
    const double inf = std::numeric_limits<double>::infinity();
    std::array<double, 3> col0{};
    std::array<double, 3> col1{};
    if (solve<3>(info, {1.0, 0.0, 0.0}, col0) && solve<3>(info, {0.0, 1.0, 0.0}, col1)) {
        fit.C_stderr = std::sqrt(scale * col0[0]);
        fit.B_stderr = q.c != 0.0 ? std::sqrt(scale * col1[1]) / std::fabs(q.c) : inf;
    } else {
        fit.C_stderr = inf;
        fit.B_stderr = inf;
    }
    fit.validate();
    return fit;
}

std::vector<LogQuotientPoint> log_quotient(const IntervalStream& stream, const AfterpulseFit& fit,
                                           std::uint64_t min_bin_count) {
    const auto total = static_cast<double>(stream.size());
    std::vector<LogQuotientPoint> out;
    for (const auto& b : histogram(stream)) {
        if (b.count >= min_bin_count) {
            const double n = static_cast<double>(b.n);
            out.push_back({n, std::log(static_cast<double>(b.count) / total) - log_reference(fit, n),
                           fit.fitted_log_quotient(n), b.count});
        }
    }
    return out;
}

std::vector<LogQuotientPoint> grouped_log_quotient(const IntervalStream& stream, const AfterpulseFit& fit,
                                                   std::uint64_t first, std::uint64_t last, std::uint64_t width) {
    if (width == 0 || last < first) {
        throw Error(Errc::InvalidParams, "group width must be positive and first <= last");
    }
    std::vector<std::uint64_t> counts(last - first + 1, 0);
    for (auto v : stream.intervals) {
        if (v >= first && v <= last) {
            ++counts[v - first];
        }
    }
    const auto total = static_cast<double>(stream.size());
    std::vector<LogQuotientPoint> out;
    for (std::uint64_t a = first; a <= last; a += width) {
        const std::uint64_t end = std::min(last + 1, a + width);
        std::uint64_t c = 0;
        double ref = 0.0;
        double model = 0.0;
        for (std::uint64_t n = a; n < end; ++n) {
            c += counts[n - first];
            const double r = fit.reference_pmf(n);
            ref += r;
            model += r * std::exp(fit.fitted_log_quotient(static_cast<double>(n)));
        }
        if (c == 0) {
            continue;
        }
        out.push_back({0.5 * static_cast<double>(a + end - 1), std::log(static_cast<double>(c) / total / ref),
                       std::log(model / ref), c});
    }
    return out;
}

double weighted_r_squared(const std::vector<LogQuotientPoint>& points) {
    double sw = 0.0;
    double swy = 0.0;
    for (const auto& p : points) {
        sw += static_cast<double>(p.count);
        swy += static_cast<double>(p.count) * p.empirical;
    }
    if (!(sw > 0.0)) {
        throw Error(Errc::InsufficientData, "no points for R^2");
    }
    const double mean = swy / sw;
    double res = 0.0;
    double tot = 0.0;
    for (const auto& p : points) {
        const double w = static_cast<double>(p.count);
        res += w * (p.empirical - p.fitted) * (p.empirical - p.fitted);
        tot += w * (p.empirical - mean) * (p.empirical - mean);
    }
    return tot > 0.0 ? 1.0 - res / tot : 0.0;
}

void write_log_quotient_csv(const std::filesystem::path& path, const std::vector<LogQuotientPoint>& points) {
    std::ofstream out(path);
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    out << "n,log_quotient_empirical,log_quotient_fitted\n";
    for (const auto& p : points) {
        out << format_real(p.n) << ',' << format_real(p.empirical) << ',' << format_real(p.fitted) << '\n';
    }
}

double theoretical_pr(const AfterpulseParams& p, double t) {
    if (!(t >= 0.0)) {
        throw Error(Errc::DomainError, "t must be >= 0");
    }
    const double e = std::exp(-p.B * t);
    return (p.p0 + p.A * e) * std::exp(-(p.p0 * t - p.A / p.B * std::expm1(-p.B * t)));
}

double theoretical_pr(const AfterpulseParams& p, std::uint64_t n) {
    if (n < 1) {
        throw Error(Errc::DomainError, "n must be >= 1");
    }
    return theoretical_pr(p, static_cast<double>(n));
}

double theoretical_log_quotient(const AfterpulseParams& p, double t) {
    const double e = std::exp(-p.B * t);
    return std::log1p(p.A * e / p.p0) + p.A / p.B * e;
}

double acceptance_probability(const AfterpulseFit& fit, std::uint64_t n) {
    if (fit.A_hat == 0.0) {
        return 1.0;
    }
    const double e = std::exp(-fit.B_hat * static_cast<double>(n));
    return std::exp(-std::log1p(fit.A_hat * e / fit.p0_hat) - fit.A_hat / fit.B_hat * e);
}

KeyValues SelectionReport::to_kv() const {
    KeyValues kv;
    kv.set("input_count", input_count);
    kv.set("kept_count", kept_count);
    kv.set("keep_fraction", keep_fraction);
    return kv;
}

Selection preselect(const IntervalStream& stream, const AfterpulseFit& fit, std::uint64_t seed) {
    fit.validate();
    Selection out;
    out.stream.meta = stream.meta;
    auto& rep = out.report;
    rep.input_count = stream.size();

    // Tabulate r(n) until it rounds to 1.
    std::uint64_t longest = 0;
    for (auto v : stream.intervals) {
        longest = std::max<std::uint64_t>(longest, v);
    }
    for (std::uint64_t n = 1; n <= longest; ++n) {
        const double r = acceptance_probability(fit, n);
        if (r >= 1.0) {
            break;
        }
        rep.acceptance_curve.push_back(r);
    }

    out.stream.intervals.reserve(stream.size());
    const auto& curve = rep.acceptance_curve;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const std::uint32_t n = stream.intervals[i];
        const double r = n <= curve.size() ? curve[n - 1] : 1.0;
        if (r >= 1.0 || counter_uniform(seed, i) < r) {
            out.stream.intervals.push_back(n);
        }
    }
    rep.kept_count = out.stream.size();
    rep.keep_fraction = rep.input_count ? static_cast<double>(rep.kept_count) / static_cast<double>(rep.input_count) : 0.0;
    return out;
}

} // namespace qtun
