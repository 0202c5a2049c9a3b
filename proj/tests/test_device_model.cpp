#include "device_oracles.hpp"
#include "qtun/device_model.hpp"
#include "qtun/error.hpp"
#include "qtun/quadrature.hpp"

#include <doctest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <vector>

using namespace qtun;
using namespace qtun::device;
using namespace qtun::testing;

namespace {

using Big = boost::multiprecision::cpp_bin_float_50;

// Direct, un-rearranged transcription of the tunneling currents at 50 digits.
Big tunneling_generation_oracle(const DeviceParams& p, double field) {
    using boost::multiprecision::exp;
    using boost::multiprecision::sqrt;
    const Big pi = boost::math::constants::pi<Big>();
    const Big q = kElementaryCharge, h = kPlanck, hbar = kHbar, F = field;
    const Big mr = p.mass_reduced, Eg = p.bandgap, mlh = p.mass_light_hole, mc = p.mass_conduction;
    const Big eb1 = p.trap_gap_valence, eb2 = p.trap_gap_conduction;
    const Big pref = sqrt(2 * mr / Eg) * q * q * F * F / (4 * pi * pi * pi * h * h);
    const Big bbt = pref * exp(-pi * sqrt(mr * Eg * Eg * Eg) / (2 * sqrt(Big(2)) * q * hbar * F));
    const Big x1 = pi * sqrt(mlh * eb1 * eb1 * eb1) / (2 * sqrt(Big(2)) * q * hbar * F);
    const Big x2 = pi * sqrt(mc * eb2 * eb2 * eb2) / (2 * sqrt(Big(2)) * q * hbar * F);
    const Big tat = pref * Big(p.trap_density) * exp(-(x1 + x2)) /
                    (Big(p.valence_density) * exp(-x1) + Big(p.conduction_density) * exp(-x2));
    return (bbt + tat) / q;
}

} // namespace

TEST_CASE("mean multiplication closed-form cases") {
    SUBCASE("equal coefficients give 1/(1 - alpha L) everywhere") {
        const double alpha = 1.5e5, L = 2e-6;
        const auto p = with_alphas(alpha, alpha, L);
        for (double x : {0.0, 0.3e-6, 1e-6, 2e-6}) {
            CHECK(mean_multiplication(p, x) == doctest::Approx(1.0 / (1.0 - alpha * L)).epsilon(1e-12));
            CHECK(mean_multiplication_closed_form(p, x) ==
                  doctest::Approx(1.0 / (1.0 - alpha * L)).epsilon(1e-12));
        }
    }
    SUBCASE("no ionization gives unity") {
        const auto p = with_alphas(0.0, 0.0, 2e-6);
        CHECK(std::abs(mean_multiplication(p, 0.7e-6) - 1.0) < 1e-12);
    }
}

TEST_CASE("mean multiplication agrees with the dense trapezoid oracle") {
    const double ae = 2e5, ah = 1e5, L = 2e-6, x = 1e-6;
    // 10^6-panel trapezoid, frozen; mpmath at 40 digits gives 1.41943852185260994853.
    const double frozen = 1.4194385218526099;
    const double oracle = multiplication_trapezoid(ae, ah, L, x, 1'000'000);
    CHECK(oracle == doctest::Approx(frozen).epsilon(1e-9));
    const auto p = with_alphas(ae, ah, L);
    CHECK(mean_multiplication(p, x) == doctest::Approx(frozen).epsilon(1e-8));
    CHECK(mean_multiplication_closed_form(p, x) == doctest::Approx(mean_multiplication(p, x)).epsilon(1e-6));
}

TEST_CASE("mean multiplication errors") {
    const auto p = with_alphas(2e5, 1e5, 2e-6);
    CHECK_THROWS_AS(mean_multiplication(p, -1e-9), Error);
    CHECK_THROWS_AS(mean_multiplication(p, 2.1e-6), Error);
    try {
        mean_multiplication(with_alphas(3e6, 2.5e6, 1e-6), 0.0);
        FAIL("expected breakdown");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BreakdownRegime);
    }
}

TEST_CASE("mean multiplication is at least one below breakdown") {
    for (double ae : {0.0, 5e4, 1e5, 2e5, 3e5}) {
        for (double ah : {0.0, 5e4, 1e5, 2e5, 3e5}) {
            const auto p = with_alphas(ae, ah, 2e-6);
            for (double x : {0.0, 0.5e-6, 1e-6, 1.5e-6, 2e-6}) {
                double m = 0.0;
                try {
                    m = mean_multiplication(p, x);
                } catch (const Error& e) {
                    CHECK(e.code() == Errc::BreakdownRegime);
                    continue;
                }
                CHECK(m >= 1.0 - 1e-12);
                CHECK(m == doctest::Approx(mean_multiplication_closed_form(p, x)).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("avalanche probability trivial cases") {
    SUBCASE("no hole ionization") {
        const auto p = with_alphas(2e5, 0.0, 2e-6);
        CHECK(avalanche_probability_origin(p) == 0.0);
        CHECK(avalanche_probability(p, 1e-6) == 0.0);
    }
    SUBCASE("equal coefficients make P_p flat") {
        const auto p = with_alphas(1.5e6, 1.5e6, 1e-6);
        const double origin = avalanche_probability_origin(p);
        CHECK(origin > 0.5);
        CHECK(origin == doctest::Approx(origin_by_bisection(1.5e6, 1.5e6, 1e-6)).epsilon(1e-9));
        for (double x : {0.0, 0.25e-6, 1e-6}) {
            CHECK(std::abs(avalanche_probability(p, x) - origin) < 1e-12);
        }
    }
}

TEST_CASE("avalanche probability matches the bisection oracle") {
    SUBCASE("sub-breakdown profile has only the trivial root") {
        const double oracle = origin_by_bisection(2e5, 1.5e5, 2e-6);
        CHECK(oracle == 0.0);
        CHECK(avalanche_probability_origin(with_alphas(2e5, 1.5e5, 2e-6)) == 0.0);
    }
    SUBCASE("Geiger-mode profile") {
        const double oracle = origin_by_bisection(3e6, 2.5e6, 1e-6);
        // mpmath findroot on the closed-form map: 0.880917034835444920225
        CHECK(oracle == doctest::Approx(0.8809170348354449).epsilon(1e-12));
        const auto p = with_alphas(3e6, 2.5e6, 1e-6);
        CHECK(avalanche_probability_origin(p) == doctest::Approx(oracle).epsilon(1e-9));
        CHECK(avalanche_map(p, 0.4) == doctest::Approx(origin_map_closed(3e6, 2.5e6, 1e-6, 0.4)).epsilon(1e-10));
    }
    SUBCASE("domain and convergence errors") {
        const auto p = with_alphas(3e6, 2.5e6, 1e-6);
        CHECK_THROWS_AS(avalanche_probability(p, 1.5e-6), Error);
        // gain exactly 1 at the trivial root: sublinear convergence
        const auto critical = with_alphas(1e6, 1e6, 1e-6);
        try {
            avalanche_probability_origin(critical);
            FAIL("expected NoConvergence");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::NoConvergence);
        }
    }
}

TEST_CASE("avalanche probability stays in [0,1] and decreases when alpha_e > alpha_h") {
    for (double ae : {1.5e6, 3e6, 6e6}) {
        for (double ratio : {0.3, 0.6, 0.9}) {
            const auto p = with_alphas(ae, ae * ratio, 1e-6);
            double previous = 2.0;
            for (int i = 0; i <= 20; ++i) {
                const double v = avalanche_probability(p, i * 0.05e-6);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                CHECK(v <= previous + 1e-15);
                previous = v;
            }
        }
    }
}

TEST_CASE("thermal generation") {
    auto p = silicon_like();
    p.intrinsic_dep = 1e16;
    p.lifetime_dep = 1e-6;
    CHECK(thermal_generation(p, Layer::Depletion) == doctest::Approx(1e22).epsilon(1e-15));
    p.intrinsic_ab = 0.0;
    CHECK(thermal_generation(p, Layer::Absorption) == 0.0);
    const double before = thermal_generation(p, Layer::Depletion);
    p.lifetime_dep *= 2.0;
    CHECK(thermal_generation(p, Layer::Depletion) == doctest::Approx(before / 2.0).epsilon(1e-15));
    CHECK(parse_layer("absorption") == Layer::Absorption);
    try {
        parse_layer("bulk");
        FAIL("expected UnknownLayer");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnknownLayer);
    }
}

TEST_CASE("tunneling generation") {
    auto p = silicon_like();
    CHECK(tunneling_generation(p, 0.0) == 0.0);
    CHECK_THROWS_AS(tunneling_generation(p, -1.0), Error);

    SUBCASE("high-precision oracle at 5e7 V/m") {
        // mpmath (40 digits) gives 2.8775095201043168054e+43.
        const double oracle = static_cast<double>(tunneling_generation_oracle(p, 5e7));
        CHECK(oracle == doctest::Approx(2.8775095201043168e43).epsilon(1e-14));
        CHECK(tunneling_generation(p, 5e7) == doctest::Approx(oracle).epsilon(1e-12));
    }
    SUBCASE("no traps leaves only band-to-band") {
        p.trap_density = 0.0;
        const auto j = tunneling_currents(p, 5e7);
        CHECK(j.trap_assisted == 0.0);
        CHECK(tunneling_generation(p, 5e7) == doctest::Approx(j.band_to_band / kElementaryCharge).epsilon(1e-15));
        // mpmath: J_BBT = 4.0403434786805598407e+19
        CHECK(j.band_to_band == doctest::Approx(4.0403434786805598e19).epsilon(1e-12));
    }
    SUBCASE("weak fields underflow to zero instead of overflowing") {
        CHECK(tunneling_generation(p, 1e3) == 0.0);
        CHECK(tunneling_generation(p, 1e-30) == 0.0);
        for (double f : {1e6, 3e6, 1e7, 3e7, 1e8}) {
            const double oracle = static_cast<double>(tunneling_generation_oracle(p, f));
            CHECK(tunneling_generation(p, f) == doctest::Approx(oracle).epsilon(1e-12));
            CHECK(tunneling_oracle_double(p, f) == doctest::Approx(oracle).epsilon(1e-12));
        }
    }
}

TEST_CASE("dark count rate") {
    SUBCASE("no field and no carriers") {
        auto p = silicon_like();
        p.field = FieldProfile({0.0, 3e-6}, {0.0, 0.0});
        p.intrinsic_dep = p.intrinsic_ab = 0.0;
        const auto dcr = dark_count_rate(p);
        CHECK(dcr.total == 0.0);
    }
    SUBCASE("thermal only isolates the thermal terms") {
        auto p = silicon_like();
        p.field = FieldProfile({0.0, 3e-6}, {0.0, 0.0});
        p.trap_density = 0.0;
        const auto dcr = dark_count_rate(p);
        CHECK(dcr.tunnel_dep == 0.0);
        CHECK(dcr.tunnel_ab == 0.0);
        const double delta = p.alpha_e - p.alpha_h;
        const double P0 = origin_by_bisection(p.alpha_e, p.alpha_h, p.dep_length);
        const double pp_integral = std::log(1.0 / (P0 * std::exp(-delta * p.dep_length) + 1.0 - P0)) / delta;
        CHECK(dcr.thermal_dep == doctest::Approx(p.area * 1e20 * pp_integral).epsilon(1e-9));
        CHECK(dcr.thermal_ab == doctest::Approx(P0 * p.area * 1e20 * p.ab_length).epsilon(1e-9));
        CHECK(dcr.total == doctest::Approx(dcr.thermal_dep + dcr.thermal_ab).epsilon(1e-12));
    }
    SUBCASE("full profile agrees with the Simpson oracle") {
        const auto p = silicon_like();
        const auto dcr = dark_count_rate(p);
        const double oracle = dcr_simpson_oracle(p, 100'000);
        CHECK(dcr.total == doctest::Approx(oracle).epsilon(1e-4));
        CHECK(dcr.total ==
              doctest::Approx(dcr.thermal_dep + dcr.tunnel_dep + dcr.thermal_ab + dcr.tunnel_ab).epsilon(1e-9));
        // Simpson at half the step: the oracle itself is converged
        CHECK(dcr_simpson_oracle(p, 200'000) == doctest::Approx(oracle).epsilon(1e-6));
    }
    SUBCASE("monotone under uniform field scaling") {
        const auto p = silicon_like();
        double previous = 0.0;
        for (double s : {0.6, 0.8, 1.0, 1.2, 1.4}) {
            auto q = p;
            q.field = p.field.scaled(s);
            const double total = dark_count_rate(q).total;
            CHECK(total >= previous);
            previous = total;
        }
    }
}

TEST_CASE("device profile text round trip") {
    const auto p = silicon_like();
    const auto text = p.to_kv().to_string();
    const auto q = DeviceParams::from_kv(KeyValues::parse(text));
    CHECK(q.alpha_e == p.alpha_e);
    CHECK(q.field.positions() == p.field.positions());
    CHECK(q.field.fields() == p.field.fields());
    CHECK(dark_count_rate(q).total == dark_count_rate(p).total);

    auto bad = KeyValues::parse(text);
    bad.set("L_dep", std::string("-1"));
    CHECK_THROWS_AS(DeviceParams::from_kv(bad), Error);
    bad = KeyValues::parse(text);
    bad.set("field_profile", std::string("0:1e7, 1e-6:-5"));
    CHECK_THROWS_AS(DeviceParams::from_kv(bad), Error);
}

TEST_CASE("quadrature is stable when the step or tolerance is halved") {
    const auto p = silicon_like();
    const double origin = avalanche_probability_origin(p);
    auto tunnel = [&](double x) { return tunneling_generation(p, p.field(x)); };
    auto weighted = [&](double x) { return tunnel(x) * avalanche_probability_given(p, origin, x); };
    const auto& breaks = p.field.positions();

    SUBCASE("adaptive tolerance halved") {
        for (double tol : {1e-8, 1e-10}) {
            const double a = quad::integrate_piecewise(tunnel, breaks, {.rel_tol = tol}).value;
            const double b = quad::integrate_piecewise(tunnel, breaks, {.rel_tol = tol / 2}).value;
            CHECK(std::abs(a - b) < 1e-6 * std::abs(b));
            const double c = quad::integrate(weighted, 0.0, p.dep_length, {.rel_tol = tol}).value;
            const double d = quad::integrate(weighted, 0.0, p.dep_length, {.rel_tol = tol / 2}).value;
            CHECK(std::abs(c - d) < 1e-6 * std::abs(d));
        }
    }
    SUBCASE("fixed panels halved") {
        auto panels = [&](int n) {
            double s = 0.0;
            for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
                const double h = (breaks[i + 1] - breaks[i]) / n;
                for (int j = 0; j < n; ++j) {
                    s += quad::detail::gk15(tunnel, breaks[i] + j * h, breaks[i] + (j + 1) * h).value;
                }
            }
            return s;
        };
        const double coarse = panels(64);
        const double fine = panels(128);
        CHECK(std::abs(coarse - fine) < 1e-6 * fine);
        CHECK(dark_count_rate(p).tunnel_dep > 0.0);
    }
}

TEST_CASE("shipped silicon-like profile matches the test profile") {
    const auto p = DeviceParams::load(QTUN_DATA_DIR "/silicon_like.device");
    const auto q = silicon_like();
    CHECK(p.field.to_string() == q.field.to_string());
    for (auto [a, b] : {std::pair{p.alpha_e, q.alpha_e}, {p.alpha_h, q.alpha_h}, {p.dep_length, q.dep_length},
                        {p.ab_length, q.ab_length}, {p.area, q.area}, {p.bandgap, q.bandgap},
                        {p.mass_reduced, q.mass_reduced}, {p.mass_light_hole, q.mass_light_hole},
                        {p.mass_conduction, q.mass_conduction}, {p.trap_density, q.trap_density},
                        {p.valence_density, q.valence_density}, {p.conduction_density, q.conduction_density},
                        {p.trap_gap_valence, q.trap_gap_valence}, {p.trap_gap_conduction, q.trap_gap_conduction},
                        {p.intrinsic_dep, q.intrinsic_dep}, {p.intrinsic_ab, q.intrinsic_ab},
                        {p.lifetime_dep, q.lifetime_dep}, {p.lifetime_ab, q.lifetime_ab}}) {
        CHECK(a == doctest::Approx(b).epsilon(1e-11));
    }
    CHECK(dark_count_rate(p).total == doctest::Approx(dark_count_rate(q).total).epsilon(1e-10));
}
