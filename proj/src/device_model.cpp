#include "qtun/device_model.hpp"

#include "qtun/error.hpp"
#include "qtun/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace qtun::device {

namespace {

constexpr double kQuadTol = 1e-10;
constexpr double kDenominatorFloor = 1e-12;
constexpr double kPpTolerance = 1e-10;
constexpr int kPpMaxIterations = 10000;

[[noreturn]] void invalid(const std::string& what) { throw Error(Errc::InvalidParams, what); }

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        invalid(std::string(name) + " must be finite and > 0");
    }
}

void require_non_negative(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
        invalid(std::string(name) + " must be finite and >= 0");
    }
}

void check_in_depletion(const DeviceParams& p, double x) {
    if (!(x >= 0.0 && x <= p.dep_length)) {
        throw Error(Errc::DomainError, "position outside [0, dep_length]");
    }
}

// alpha_e - alpha_h at x; coefficients are position independent.
double ionization_excess(const DeviceParams& p, double /*x*/) { return p.alpha_e - p.alpha_h; }

// f(x) = exp(-int_0^x (alpha_e - alpha_h))
double weighting(const DeviceParams& p, double x) { return std::exp(-(p.alpha_e - p.alpha_h) * x); }

double log_sum_exp(double a, double b) {
    if (a == -INFINITY) {
        return b;
    }
    if (b == -INFINITY) {
        return a;
    }
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// pi sqrt(m E^3) / (2 sqrt(2) q hbar): tunneling exponent times F.
double tunnel_exponent_scale(double mass, double energy) {
    return std::numbers::pi * std::sqrt(mass * energy * energy * energy) /
           (2.0 * std::numbers::sqrt2 * kElementaryCharge * kHbar);
}

std::vector<double> breakpoints(const FieldProfile& field, double a, double b) {
    std::vector<double> pts{a};
    for (double x : field.positions()) {
        if (x > a && x < b) {
            pts.push_back(x);
        }
    }
    pts.push_back(b);
    return pts;
}

} // namespace

FieldProfile::FieldProfile(std::vector<double> positions, std::vector<double> fields)
    : x_(std::move(positions)), f_(std::move(fields)) {
    if (x_.size() != f_.size() || x_.size() < 2) {
        invalid("field profile needs at least two (x, F) samples");
    }
    for (std::size_t i = 0; i < x_.size(); ++i) {
        if (!std::isfinite(x_[i]) || !std::isfinite(f_[i]) || f_[i] < 0.0) {
            invalid("field profile samples must be finite with F >= 0");
        }
        if (i > 0 && !(x_[i] > x_[i - 1])) {
            invalid("field profile positions must be strictly increasing");
        }
    }
}

FieldProfile FieldProfile::parse(std::string_view text) {
    std::vector<double> xs;
    std::vector<double> fs;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const auto item = trim(text.substr(0, comma));
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
        if (item.empty()) {
            continue;
        }
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) {
            invalid("field profile entry '" + std::string(item) + "' is not x:F");
        }
        xs.push_back(parse_real(item.substr(0, colon)));
        fs.push_back(parse_real(item.substr(colon + 1)));
    }
    return FieldProfile(std::move(xs), std::move(fs));
}

double FieldProfile::operator()(double x) const {
    if (x <= x_.front()) {
        return f_.front();
    }
    if (x >= x_.back()) {
        return f_.back();
    }
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const auto i = static_cast<std::size_t>(it - x_.begin());
    const double t = (x - x_[i - 1]) / (x_[i] - x_[i - 1]);
    return f_[i - 1] + t * (f_[i] - f_[i - 1]);
}

FieldProfile FieldProfile::scaled(double factor) const {
    auto fs = f_;
    for (auto& f : fs) {
        f *= factor;
    }
    return FieldProfile(x_, std::move(fs));
}

std::string FieldProfile::to_string() const {
    std::string out;
    for (std::size_t i = 0; i < x_.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += format_real(x_[i]) + ":" + format_real(f_[i]);
    }
    return out;
}

Layer parse_layer(std::string_view name) {
    if (name == "depletion" || name == "dep") {
        return Layer::Depletion;
    }
    if (name == "absorption" || name == "ab") {
        return Layer::Absorption;
    }
    throw Error(Errc::UnknownLayer, "unknown layer '" + std::string(name) + "'");
}

void DeviceParams::validate() const {
    require_non_negative(alpha_e, "alpha_e");
    require_non_negative(alpha_h, "alpha_h");
    require_positive(dep_length, "L_dep");
    require_positive(ab_length, "L_ab");
    require_positive(area, "area");
    require_positive(bandgap, "E_g");
    require_positive(mass_reduced, "m_r");
    require_positive(mass_light_hole, "m_lh");
    require_positive(mass_conduction, "m_c");
    require_non_negative(trap_density, "N_trap");
    require_positive(valence_density, "N_v");
    require_positive(conduction_density, "N_c");
    require_positive(trap_gap_valence, "E_B1");
    require_positive(trap_gap_conduction, "E_B2");
    require_non_negative(intrinsic_dep, "n_i_dep");
    require_non_negative(intrinsic_ab, "n_i_ab");
    require_positive(lifetime_dep, "tau_dep");
    require_positive(lifetime_ab, "tau_ab");
    const auto& xs = field.positions();
    if (xs.size() < 2) {
        invalid("field profile missing");
    }
    if (xs.front() > 0.0 || xs.back() < dep_length + ab_length) {
        invalid("field profile must cover [0, L_dep + L_ab]");
    }
}

DeviceParams DeviceParams::from_kv(const KeyValues& kv) {
    DeviceParams p;
    p.alpha_e = kv.real("alpha_e");
    p.alpha_h = kv.real("alpha_h");
    p.dep_length = kv.real("L_dep");
    p.ab_length = kv.real("L_ab");
    p.area = kv.real("area");
    p.field = FieldProfile::parse(kv.str("field_profile"));
    p.bandgap = kv.real("E_g");
    p.mass_reduced = kv.real("m_r");
    p.mass_light_hole = kv.real("m_lh");
    p.mass_conduction = kv.real("m_c");
    p.trap_density = kv.real("N_trap");
    p.valence_density = kv.real("N_v");
    p.conduction_density = kv.real("N_c");
    p.trap_gap_valence = kv.real("E_B1");
    p.trap_gap_conduction = kv.real("E_B2");
    p.intrinsic_dep = kv.real("n_i_dep");
    p.intrinsic_ab = kv.real("n_i_ab");
    p.lifetime_dep = kv.real("tau_dep");
    p.lifetime_ab = kv.real("tau_ab");
    p.validate();
    return p;
}

DeviceParams DeviceParams::load(const std::filesystem::path& path) { return from_kv(KeyValues::load(path)); }

KeyValues DeviceParams::to_kv() const {
    KeyValues kv;
    kv.set("alpha_e", alpha_e);
    kv.set("alpha_h", alpha_h);
    kv.set("L_dep", dep_length);
    kv.set("L_ab", ab_length);
    kv.set("area", area);
    kv.set("field_profile", field.to_string());
    kv.set("E_g", bandgap);
    kv.set("m_r", mass_reduced);
    kv.set("m_lh", mass_light_hole);
    kv.set("m_c", mass_conduction);
    kv.set("N_trap", trap_density);
    kv.set("N_v", valence_density);
    kv.set("N_c", conduction_density);
    kv.set("E_B1", trap_gap_valence);
    kv.set("E_B2", trap_gap_conduction);
    kv.set("n_i_dep", intrinsic_dep);
    kv.set("n_i_ab", intrinsic_ab);
    kv.set("tau_dep", lifetime_dep);
    kv.set("tau_ab", lifetime_ab);
    return kv;
}

KeyValues DcrBreakdown::to_kv() const {
    KeyValues kv;
    kv.set("thermal_dep", thermal_dep);
    kv.set("tunnel_dep", tunnel_dep);
    kv.set("thermal_ab", thermal_ab);
    kv.set("tunnel_ab", tunnel_ab);
    kv.set("total", total);
    return kv;
}

double mean_multiplication(const DeviceParams& p, double x) {
    check_in_depletion(p, x);
    const double L = p.dep_length;
    const quad::Options opt{.rel_tol = 1e-12, .abs_tol = 0.0};
    auto excess_from = [&](double from) {
        return quad::integrate([&](double s) { return ionization_excess(p, s); }, from, L, opt).value;
    };
    const double numerator = std::exp(-excess_from(x));
    const double feedback =
        quad::integrate([&](double s) { return p.alpha_e * std::exp(-excess_from(s)); }, 0.0, L,
                        {.rel_tol = kQuadTol})
            .value;
    const double denominator = 1.0 - feedback;
    if (denominator <= kDenominatorFloor) {
        throw Error(Errc::BreakdownRegime, "multiplication denominator <= 1e-12 (past breakdown)");
    }
    return numerator / denominator;
}

double mean_multiplication_closed_form(const DeviceParams& p, double x) {
    check_in_depletion(p, x);
    const double L = p.dep_length;
    const double delta = p.alpha_e - p.alpha_h;
    const double numerator = std::exp(-delta * (L - x));
    // int_0^L exp(-delta (L - s)) ds = (1 - exp(-delta L)) / delta
    const double kernel = delta == 0.0 ? L : -std::expm1(-delta * L) / delta;
    const double denominator = 1.0 - p.alpha_e * kernel;
    if (denominator <= kDenominatorFloor) {
        throw Error(Errc::BreakdownRegime, "multiplication denominator <= 1e-12 (past breakdown)");
    }
    return numerator / denominator;
}

double avalanche_probability_given(const DeviceParams& p, double origin, double x) {
    const double weighted = origin * weighting(p, x);
    const double denom = weighted + 1.0 - origin;
    return denom > 0.0 ? weighted / denom : 1.0;
}

double avalanche_map(const DeviceParams& p, double origin) {
    if (p.alpha_h == 0.0) {
        return 0.0;
    }
    const double integral =
        quad::integrate([&](double s) { return p.alpha_h * avalanche_probability_given(p, origin, s); }, 0.0,
                        p.dep_length, {.rel_tol = kQuadTol * 1e-2})
            .value;
    return -std::expm1(-integral);
}

double avalanche_probability_origin(const DeviceParams& p) {
    if (p.alpha_h == 0.0) {
        return 0.0; // the hole-ionization integrand vanishes identically
    }
    double current = 0.5;
    for (int iter = 0; iter < kPpMaxIterations; ++iter) {
        const double next = 0.5 * current + 0.5 * avalanche_map(p, current);
        if (std::abs(next - current) < kPpTolerance) {
            // Below breakdown the iteration contracts onto the trivial root;
            // report it exactly rather than as a residual of order the tolerance.
            const double gain = p.alpha_h *
                                quad::integrate([&](double s) { return weighting(p, s); }, 0.0, p.dep_length,
                                                {.rel_tol = kQuadTol})
                                    .value;
            if (gain < 1.0 && next < 1e3 * kPpTolerance) {
                return 0.0;
            }
            return next;
        }
        current = next;
    }
    throw Error(Errc::NoConvergence, "avalanche fixed point did not converge in 10000 iterations");
}

double avalanche_probability(const DeviceParams& p, double x) {
    check_in_depletion(p, x);
    return avalanche_probability_given(p, avalanche_probability_origin(p), x);
}

double thermal_generation(const DeviceParams& p, Layer layer) {
    switch (layer) {
    case Layer::Depletion: return p.intrinsic_dep / p.lifetime_dep;
    case Layer::Absorption: return p.intrinsic_ab / p.lifetime_ab;
    }
    throw Error(Errc::UnknownLayer, "unknown layer");
}

TunnelingCurrents tunneling_currents(const DeviceParams& p, double field) {
    if (!(field >= 0.0) || !std::isfinite(field)) {
        throw Error(Errc::DomainError, "field must be finite and >= 0");
    }
    if (field == 0.0) {
        return {};
    }
    constexpr double pi3 = std::numbers::pi * std::numbers::pi * std::numbers::pi;
    const double q = kElementaryCharge;
    // log of sqrt(2 m_r / E_g) q^2 F^2 / (4 pi^3 h^2)
    const double log_prefactor = 0.5 * std::log(2.0 * p.mass_reduced / p.bandgap) + 2.0 * std::log(q * field) -
                                 std::log(4.0 * pi3 * kPlanck * kPlanck);
    const double bbt_exponent = tunnel_exponent_scale(p.mass_reduced, p.bandgap) / field;
    const double a1 = tunnel_exponent_scale(p.mass_light_hole, p.trap_gap_valence) / field;
    const double a2 = tunnel_exponent_scale(p.mass_conduction, p.trap_gap_conduction) / field;

    TunnelingCurrents out;
    out.band_to_band = std::exp(log_prefactor - bbt_exponent);
    if (p.trap_density > 0.0) {
        // N_trap e^{-(a1+a2)} / (N_v e^{-a1} + N_c e^{-a2}) = N_trap / (N_v e^{a2} + N_c e^{a1})
        const double log_den = log_sum_exp(std::log(p.valence_density) + a2, std::log(p.conduction_density) + a1);
        out.trap_assisted = std::exp(log_prefactor + std::log(p.trap_density) - log_den);
    }
    if (!std::isfinite(out.band_to_band) || !std::isfinite(out.trap_assisted)) {
        throw Error(Errc::NonFinite, "tunneling current overflowed");
    }
    return out;
}

double tunneling_generation(const DeviceParams& p, double field) {
    const auto j = tunneling_currents(p, field);
    return (j.band_to_band + j.trap_assisted) / kElementaryCharge;
}

DcrBreakdown dark_count_rate(const DeviceParams& p) {
    p.validate();
    const double origin = avalanche_probability_origin(p);
    const quad::Options opt{.rel_tol = 1e-10};
    const double dep_end = p.dep_length;
    const double ab_end = p.dep_length + p.ab_length;
    const auto dep_breaks = breakpoints(p.field, 0.0, dep_end);
    const auto ab_breaks = breakpoints(p.field, dep_end, ab_end);

    DcrBreakdown out;
    if (origin > 0.0) {
        const double g_dep = thermal_generation(p, Layer::Depletion);
        if (g_dep > 0.0) {
            out.thermal_dep =
                p.area * g_dep *
                quad::integrate_piecewise([&](double x) { return avalanche_probability_given(p, origin, x); },
                                          dep_breaks, opt)
                    .value;
        }
        out.tunnel_dep = p.area * quad::integrate_piecewise(
                                      [&](double x) {
                                          return tunneling_generation(p, p.field(x)) *
                                                 avalanche_probability_given(p, origin, x);
                                      },
                                      dep_breaks, opt)
                                      .value;
        out.thermal_ab = origin * p.area * thermal_generation(p, Layer::Absorption) * p.ab_length;
        out.tunnel_ab =
            origin * p.area *
            quad::integrate_piecewise([&](double x) { return tunneling_generation(p, p.field(x)); }, ab_breaks, opt)
                .value;
    }
    out.total = out.thermal_dep + out.tunnel_dep + out.thermal_ab + out.tunnel_ab;
    return out;
}

} // namespace qtun::device
