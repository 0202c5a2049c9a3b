#pragma once

#include "qtun/kv.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace qtun::device {

// CODATA 2018 exact / recommended SI values.
inline constexpr double kElementaryCharge = 1.602176634e-19; // C
inline constexpr double kPlanck = 6.62607015e-34;            // J s
inline constexpr double kHbar = 1.054571817e-34;             // J s
inline constexpr double kElectronMass = 9.1093837015e-31;    // kg
inline constexpr double kElectronVolt = 1.602176634e-19;     // J

/// Electric field F(x) in V/m as linear interpolation between samples.
class FieldProfile {
public:
    FieldProfile() = default;
    FieldProfile(std::vector<double> positions, std::vector<double> fields);

    /// Parses `x0:F0, x1:F1, ...` (SI units).
    static FieldProfile parse(std::string_view text);

    double operator()(double x) const;
    FieldProfile scaled(double factor) const;

    const std::vector<double>& positions() const { return x_; }
    const std::vector<double>& fields() const { return f_; }
    std::string to_string() const;

private:
    std::vector<double> x_;
    std::vector<double> f_;
};

enum class Layer { Depletion, Absorption };

Layer parse_layer(std::string_view name);

/// Geometry: depletion (multiplication) layer spans [0, dep_length], the
/// absorption layer spans [dep_length, dep_length + ab_length]. The field
/// profile must cover both.
struct DeviceParams {
    double alpha_e = 0.0; // 1/m
    double alpha_h = 0.0; // 1/m
    double dep_length = 0.0; // m
    double ab_length = 0.0;  // m
    double area = 0.0;       // m^2
    FieldProfile field;

    double bandgap = 0.0;      // J
    double mass_reduced = 0.0; // kg
    double mass_light_hole = 0.0;
    double mass_conduction = 0.0;
    double trap_density = 0.0;       // 1/m^3, may be zero
    double valence_density = 0.0;    // 1/m^3
    double conduction_density = 0.0; // 1/m^3
    double trap_gap_valence = 0.0;    // J, valence band to trap
    double trap_gap_conduction = 0.0; // J, trap to conduction band

    double intrinsic_dep = 0.0; // 1/m^3
    double intrinsic_ab = 0.0;
    double lifetime_dep = 0.0; // s
    double lifetime_ab = 0.0;

    /// Throws InvalidParams naming the first violated invariant.
    void validate() const;

    static DeviceParams from_kv(const KeyValues& kv);
    static DeviceParams load(const std::filesystem::path& path);
    KeyValues to_kv() const;
};

struct DcrBreakdown {
    double thermal_dep = 0.0;
    double tunnel_dep = 0.0;
    double thermal_ab = 0.0;
    double tunnel_ab = 0.0;
    double total = 0.0; // counts per second

    KeyValues to_kv() const;
};

/// Mean multiplication M(x) from nested adaptive quadrature.
/// BreakdownRegime when the denominator is <= 1e-12.
double mean_multiplication(const DeviceParams& params, double x);

/// Same quantity with the inner integrals in closed form (constant coefficients).
double mean_multiplication_closed_form(const DeviceParams& params, double x);

/// Self-consistent avalanche-triggering probability at the p-side edge.
/// Solved by damped iteration (start 0.5, damping 0.5, tol 1e-10, 10000 steps).
double avalanche_probability_origin(const DeviceParams& params);

/// P_p(x) for a known origin probability.
double avalanche_probability_given(const DeviceParams& params, double origin, double x);

double avalanche_probability(const DeviceParams& params, double x);

/// The fixed-point map P -> 1 - exp(-int alpha_h P_p(x; P) dx); exposed for oracles.
double avalanche_map(const DeviceParams& params, double origin);

/// Thermal generation n_i / tau_i for the layer, per m^3 per second.
double thermal_generation(const DeviceParams& params, Layer layer);

/// Band-to-band plus trap-assisted tunneling generation at field F (V/m),
/// (J_BBT + J_TAT) / q. Evaluated in log space; exactly 0 at F = 0.
double tunneling_generation(const DeviceParams& params, double field);

struct TunnelingCurrents {
    double band_to_band = 0.0;
    double trap_assisted = 0.0;
};
TunnelingCurrents tunneling_currents(const DeviceParams& params, double field);

DcrBreakdown dark_count_rate(const DeviceParams& params);

} // namespace qtun::device
