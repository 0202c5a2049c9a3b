#pragma once

#include "qtun/error.hpp"

#include <array>
#include <cmath>
#include <queue>
#include <vector>

namespace qtun::quad {

struct Estimate {
    double value = 0.0;
    double error = 0.0;
};

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
inline constexpr std::array<double, 8> kronrod_x{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kronrod_w{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
inline constexpr std::array<double, 4> gauss_w{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
Estimate gk15(F&& f, double a, double b) {
    const double center = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double fc = f(center);
    double kronrod = fc * kronrod_w[7];
    double gauss = fc * gauss_w[3];
    for (std::size_t i = 0; i < 7; ++i) {
        const double dx = half * kronrod_x[i];
        const double sum = f(center - dx) + f(center + dx);
        kronrod += kronrod_w[i] * sum;
        if (i % 2 == 1) {
            gauss += gauss_w[i / 2] * sum;
        }
    }
    return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

} // namespace detail

struct Options {
    double rel_tol = 1e-8;
    double abs_tol = 0.0;
    int max_intervals = 20000;
};

/// Globally adaptive G7K15 with bisection of the worst interval.
/// Throws NoConvergence if the interval budget is exhausted first.
template <class F>
Estimate integrate(F&& f, double a, double b, Options opt = {}) {
    if (a == b) {
        return {};
    }
    struct Piece {
        double a, b;
        Estimate est;
        bool operator<(const Piece& other) const { return est.error < other.est.error; }
    };
    std::priority_queue<Piece> heap;
    auto first = detail::gk15(f, a, b);
    heap.push({a, b, first});
    double total = first.value;
    double error = first.error;
    int count = 1;
    while (error > std::max(opt.abs_tol, opt.rel_tol * std::abs(total))) {
        if (count >= opt.max_intervals) {
            throw Error(Errc::NoConvergence, "adaptive quadrature exceeded interval budget");
        }
        const auto worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (mid <= worst.a || mid >= worst.b) {
            // interval no longer divisible in double precision
            heap.push(worst);
            break;
        }
        const auto left = detail::gk15(f, worst.a, mid);
        const auto right = detail::gk15(f, mid, worst.b);
        total += left.value + right.value - worst.est.value;
        error += left.error + right.error - worst.est.error;
        heap.push({worst.a, mid, left});
        heap.push({mid, worst.b, right});
        ++count;
        if (error < 0.0) {
            error = 0.0;
        }
    }
    // recompute from pieces to shed accumulated rounding in the running sums
    double value = 0.0;
    double err = 0.0;
    while (!heap.empty()) {
        value += heap.top().est.value;
        err += heap.top().est.error;
        heap.pop();
    }
    if (!std::isfinite(value)) {
        throw Error(Errc::NonFinite, "quadrature produced a non-finite value");
    }
    return {value, err};
}

/// Integrates over consecutive breakpoints so kinks never fall inside a panel.
template <class F>
Estimate integrate_piecewise(F&& f, const std::vector<double>& breaks, Options opt = {}) {
    Estimate total;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const auto part = integrate(f, breaks[i], breaks[i + 1], opt);
        total.value += part.value;
        total.error += part.error;
    }
    return total;
}

} // namespace qtun::quad
