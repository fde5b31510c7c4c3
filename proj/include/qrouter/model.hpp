#pragma once

// Closed-form scattering model of the router basic cell: one two-level
// emitter side-coupled to two open waveguides A and B.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "units.hpp"

namespace qrouter {

using cplx = std::complex<double>;
inline constexpr cplx imag_unit{0.0, 1.0};

enum class Channel { AA, BB, AB, BA };

inline constexpr std::array<Channel, 4> all_channels{Channel::AA, Channel::BB, Channel::AB, Channel::BA};

constexpr bool is_through(Channel c) noexcept { return c == Channel::AA || c == Channel::BB; }

constexpr std::size_t index_of(Channel c) noexcept { return static_cast<std::size_t>(c); }

constexpr std::string_view channel_name(Channel c) noexcept {
    switch (c) {
    case Channel::AA: return "AA";
    case Channel::BB: return "BB";
    case Channel::AB: return "AB";
    case Channel::BA: return "BA";
    }
    return "?";
}

inline Channel parse_channel(std::string_view s) {
    // Primed forms are accepted so files written by hand with AA' etc. load.
    if (!s.empty() && s.back() == '\'') s.remove_suffix(1);
    if (s == "AA") return Channel::AA;
    if (s == "BB") return Channel::BB;
    if (s == "AB") return Channel::AB;
    if (s == "BA") return Channel::BA;
    throw std::invalid_argument("unknown channel '" + std::string(s) + "'");
}

/// Four complex transmission coefficients indexed by Channel.
struct ChannelSet {
    std::array<cplx, 4> v{};

    cplx& operator[](Channel c) noexcept { return v[index_of(c)]; }
    const cplx& operator[](Channel c) const noexcept { return v[index_of(c)]; }
};

/// Physical parameters of the basic cell. All rates are angular (rad/s).
///
/// `gamma_a`, `gamma_b` are the emitter-waveguide couplings (half width
/// contributions), `phi_a`, `phi_b` the small phenomenological coupling phases,
/// `gamma_phi` pure dephasing and `gamma_bath` relaxation into the thermal
/// bath. `omega_ef` is only used by the dressed-line helpers.
struct CellParams {
    double gamma_a = mhz(1.82);
    double gamma_b = mhz(2.31);
    double phi_a = 0.0;
    double phi_b = 0.0;
    double omega_ge = ghz(6.163);
    double omega_ef = ghz(6.015);
    double gamma_phi = 0.0;
    double gamma_bath = 0.0;

    /// Rate entering the imaginary part of the transition frequency.
    double decoherence_rate() const noexcept { return gamma_phi + 0.5 * gamma_bath; }
};

namespace detail {

inline void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite");
}

inline void validate(const CellParams& p) {
    require_finite(p.gamma_a, "gamma_a");
    require_finite(p.gamma_b, "gamma_b");
    require_finite(p.phi_a, "phi_a");
    require_finite(p.phi_b, "phi_b");
    require_finite(p.omega_ge, "omega_ge");
    require_finite(p.gamma_phi, "gamma_phi");
    require_finite(p.gamma_bath, "gamma_bath");
    if (p.gamma_a <= 0.0 || p.gamma_b <= 0.0)
        throw std::invalid_argument("couplings gamma_a and gamma_b must be positive");
    if (std::abs(p.phi_a) >= std::numbers::pi / 2 || std::abs(p.phi_b) >= std::numbers::pi / 2)
        throw std::invalid_argument("coupling phases must satisfy |phi| < pi/2");
    if (p.gamma_phi < 0.0 || p.gamma_bath < 0.0)
        throw std::invalid_argument("gamma_phi and gamma_bath must be non-negative");
}

// Common denominator Delta_eff + i(Gamma_A + Gamma_B), where the transition
// frequency carries the imaginary shift -i(Gamma_phi + Gamma_bath/2).
inline cplx denominator(double omega, const CellParams& p) {
    const double detuning = omega - p.omega_ge;
    return cplx(detuning, p.decoherence_rate() + p.gamma_a + p.gamma_b);
}

inline cplx coupling_a(const CellParams& p) { return p.gamma_a * std::polar(1.0, p.phi_a); }
inline cplx coupling_b(const CellParams& p) { return p.gamma_b * std::polar(1.0, p.phi_b); }

} // namespace detail

/// Through transmission (AA' or BB') at angular frequency `omega`.
inline cplx t_through(Channel channel, double omega, const CellParams& p) {
    if (!is_through(channel)) throw std::invalid_argument("t_through expects channel AA or BB");
    detail::require_finite(omega, "omega");
    detail::validate(p);
    const cplx g = channel == Channel::AA ? detail::coupling_a(p) : detail::coupling_b(p);
    return 1.0 - imag_unit * g / detail::denominator(omega, p);
}

/// Qubit-mediated cross transmission (AB' or BA'). The model is reciprocal,
/// so both directions return the same value; the leading minus sign of the
/// wavefunction amplitude is not part of the coefficient.
inline cplx t_cross(Channel channel, double omega, const CellParams& p) {
    if (is_through(channel)) throw std::invalid_argument("t_cross expects channel AB or BA");
    detail::require_finite(omega, "omega");
    detail::validate(p);
    const cplx coupling = std::sqrt(p.gamma_a * p.gamma_b) * std::polar(1.0, 0.5 * (p.phi_a + p.phi_b));
    return imag_unit * coupling / detail::denominator(omega, p);
}

/// Back-reflection into the driven waveguide, -i Gamma_x e^{i phi_x} / D.
inline cplx reflection(Channel channel, double omega, const CellParams& p) {
    if (!is_through(channel)) throw std::invalid_argument("reflection expects channel AA or BB");
    detail::require_finite(omega, "omega");
    detail::validate(p);
    const cplx g = channel == Channel::AA ? detail::coupling_a(p) : detail::coupling_b(p);
    return -imag_unit * g / detail::denominator(omega, p);
}

inline ChannelSet cell_coefficients(double omega, const CellParams& p) {
    ChannelSet out;
    out[Channel::AA] = t_through(Channel::AA, omega, p);
    out[Channel::BB] = t_through(Channel::BB, omega, p);
    out[Channel::AB] = t_cross(Channel::AB, omega, p);
    out[Channel::BA] = t_cross(Channel::BA, omega, p);
    return out;
}

/// Coefficients of a cell whose emitter is fully decoupled (high-drive limit):
/// unit through transmission, no cross transfer.
inline ChannelSet decoupled_coefficients() {
    ChannelSet out;
    out[Channel::AA] = 1.0;
    out[Channel::BB] = 1.0;
    return out;
}

template <int N>
using PortMatrix = Eigen::Matrix<cplx, N, N>;

/// Cell port order used by every 4x4 matrix in the library.
enum CellPort : int { a_in = 0, a_out = 1, b_in = 2, b_out = 3 };

/// Full 4x4 scattering matrix of the cell, ports ordered (A-in, A-out, B-in,
/// B-out); rows are outgoing ports, columns incoming ports. The emitter
/// radiates symmetrically into both directions of each waveguide, so a wave
/// from A-in reaches B-in and B-out with the same cross amplitude.
inline PortMatrix<4> cell_smatrix(double omega, const CellParams& p) {
    const cplx ta = t_through(Channel::AA, omega, p);
    const cplx tb = t_through(Channel::BB, omega, p);
    const cplx ra = reflection(Channel::AA, omega, p);
    const cplx rb = reflection(Channel::BB, omega, p);
    const cplx x = t_cross(Channel::AB, omega, p);
    PortMatrix<4> s;
    // clang-format off
    s << ra, ta, x,  x,
         ta, ra, x,  x,
         x,  x,  rb, tb,
         x,  x,  tb, rb;
    // clang-format on
    return s;
}

/// Decoupled cell: two straight-through waveguides.
inline PortMatrix<4> transparent_cell() {
    PortMatrix<4> s = PortMatrix<4>::Zero();
    s(a_out, a_in) = s(a_in, a_out) = 1.0;
    s(b_out, b_in) = s(b_in, b_out) = 1.0;
    return s;
}

/// Calibration-free transfer efficiency E = t_AB' t_BA' / (t_AA' t_BB') at
/// detuning `delta` = omega - omega_ge.
///
/// For real couplings this is
///   -G_A G_B / (D^2 + i D (G_A + G_B + 2 G) - G (G_A + G_B + G) - G_A G_B)
/// with G = Gamma_phi + Gamma_bath/2; coupling phases are carried through the
/// same product so the identity with the coefficient ratio holds exactly.
inline cplx efficiency(double delta, const CellParams& p) {
    detail::require_finite(delta, "delta");
    detail::validate(p);
    const cplx d(delta, p.decoherence_rate() + p.gamma_a + p.gamma_b);
    const cplx ga = detail::coupling_a(p);
    const cplx gb = detail::coupling_b(p);
    return -(ga * gb) / ((d - imag_unit * ga) * (d - imag_unit * gb));
}

/// Resonant efficiency for real couplings, 1 / (1 + G(1/G_A + 1/G_B) + G^2/(G_A G_B)).
inline double efficiency_resonant(double gamma_phi, double gamma_a, double gamma_b) {
    if (gamma_a <= 0.0 || gamma_b <= 0.0) throw std::invalid_argument("couplings must be positive");
    return 1.0 / (1.0 + gamma_phi * (1.0 / gamma_a + 1.0 / gamma_b) + gamma_phi * gamma_phi / (gamma_a * gamma_b));
}

// --- flux bias ---------------------------------------------------------------

/// Transition frequency versus bias current, omega(I) = omega0 + l I + c I^2 (I in mA).
struct FluxModel {
    double curvature = -mhz(352.0); // rad/s per mA^2
    double linear = 0.0;            // rad/s per mA
    double sweet_spot_omega = ghz(6.163);
};

inline double omega_ge_of_bias(double ib_ma, const FluxModel& f) {
    return f.sweet_spot_omega + f.linear * ib_ma + f.curvature * ib_ma * ib_ma;
}

/// d omega_ge / d I_b in rad/s per ampere.
inline double flux_slope_per_ampere(double ib_ma, const FluxModel& f) {
    return (2.0 * f.curvature * ib_ma + f.linear) * 1e3;
}

// --- temperature -------------------------------------------------------------

/// Bose-Einstein occupation at angular frequency `omega`.
inline double n_thermal(double temperature_k, double omega) {
    if (!(temperature_k > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (!(omega > 0.0)) throw std::invalid_argument("omega must be positive");
    const double x = constants::hbar * omega / (constants::k_boltzmann * temperature_k);
    return 1.0 / std::expm1(x);
}

/// Per-thermal-photon rate increase: Gamma_bath = (2n+1) gamma1, Gamma_phi = n gamma_phi.
struct ThermalCoefficients {
    double gamma1_zero = mhz(0.26);
    double gamma_phi_zero_per_photon = mhz(10.38);
};

inline double thermal_gamma_bath(double n_th, const ThermalCoefficients& tc) {
    return (2.0 * n_th + 1.0) * tc.gamma1_zero;
}

inline double thermal_gamma_phi(double n_th, const ThermalCoefficients& tc) {
    return n_th * tc.gamma_phi_zero_per_photon;
}

/// Effective imaginary frequency shift n(gamma1 + gamma_phi) + gamma1/2.
inline double thermal_decoherence_rate(double n_th, const ThermalCoefficients& tc) {
    return n_th * (tc.gamma1_zero + tc.gamma_phi_zero_per_photon) + 0.5 * tc.gamma1_zero;
}

inline double efficiency_thermal(double n_th, double gamma_a, double gamma_b, const ThermalCoefficients& tc) {
    if (!(n_th >= 0.0)) throw std::invalid_argument("n_th must be non-negative");
    if (gamma_a <= 0.0 || gamma_b <= 0.0) throw std::invalid_argument("couplings must be positive");
    return efficiency_resonant(thermal_decoherence_rate(n_th, tc), gamma_a, gamma_b);
}

// --- photon number and saturation -------------------------------------------

/// Mean photon number of a rectangular pulse: (A^2 / 2Z) * duration / (hbar omega).
/// Zero amplitude is allowed and yields zero photons.
inline double photons_in_pulse(double amplitude_v, double impedance_ohm, double duration_s, double omega) {
    if (amplitude_v < 0.0 || !(impedance_ohm > 0.0) || !(duration_s > 0.0) || !(omega > 0.0))
        throw std::invalid_argument("photons_in_pulse: amplitude must be >= 0, other inputs > 0");
    const double power = amplitude_v * amplitude_v / (2.0 * impedance_ohm);
    return power * duration_s / (constants::hbar * omega);
}

/// Parameters of f(n) = a - b / (1 + n^c / d).
struct SaturationParams {
    double a = 1.0;
    double b = 0.44;
    double c = 1.0;
    double d = 3.0;
};

inline double saturation_curve(double n_avg, const SaturationParams& s) {
    if (!(n_avg >= 0.0)) throw std::invalid_argument("n_avg must be non-negative");
    return s.a - s.b / (1.0 + std::pow(n_avg, s.c) / s.d);
}

// --- dressed transitions -----------------------------------------------------

struct DressedModel {
    double lambda_red = mhz(0.81);
    double lambda_blue = mhz(0.39);
    double omega_ge = ghz(6.163);
    double omega_ef = ghz(6.015);
};

struct LinePair {
    double red = 0.0;
    double blue = 0.0;
};

struct DressedLines {
    LinePair ge;
    LinePair ef;
};

/// Dressed splitting sqrt((omega - omega_ge)^2 + 4 lambda^2 N).
inline double dressed_splitting(double omega_drive, double n_photons, double lambda, double omega_ge) {
    const double detuning = omega_drive - omega_ge;
    return std::sqrt(detuning * detuning + 4.0 * lambda * lambda * n_photons);
}

inline DressedLines dressed_lines(double omega_drive, double n_photons, const DressedModel& m) {
    if (!(n_photons >= 0.0)) throw std::invalid_argument("n_photons must be non-negative");
    const double half_red = 0.5 * dressed_splitting(omega_drive, n_photons, m.lambda_red, m.omega_ge);
    const double half_blue = 0.5 * dressed_splitting(omega_drive, n_photons, m.lambda_blue, m.omega_ge);
    DressedLines out;
    out.ge = {m.omega_ge - half_red, m.omega_ge + half_blue};
    out.ef = {m.omega_ef - half_red, m.omega_ef + half_blue};
    return out;
}

} // namespace qrouter
