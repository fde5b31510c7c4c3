#pragma once

// Seeded synthetic measurement campaigns: imperfect measurement lines,
// four-channel raw spectra with high-drive references, bias / temperature /
// power sweeps and time-domain IQ shot clouds.
//
// Seeds: every random stream is derived from the campaign seed with
// splitmix64(seed ^ splitmix64(stream_tag) + index), so sweep points and
// streams are independent and reproducible in any evaluation order.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "estimation.hpp"
#include "model.hpp"
#include "network.hpp"
#include "spectrum.hpp"

namespace qrouter {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed of sub-stream `tag`/`index` of a campaign seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) noexcept {
    return splitmix64((seed ^ splitmix64(tag)) + index);
}

namespace stream {
inline constexpr std::uint64_t lines = 1;
inline constexpr std::uint64_t meas_noise = 2;
inline constexpr std::uint64_t hd_noise = 3;
inline constexpr std::uint64_t iq = 4;
} // namespace stream

// --- lines -------------------------------------------------------------------

struct LineSpec {
    double through_db = -30.0;     // net S21 * G21 level of the A path
    double jitter_db = 1.0;        // B path sits this much below A
    double max_delay_s = 20e-9;    // per-line electrical delay drawn in [0, max]
    double ripple_db = 0.2;        // standing-wave ripple amplitude
    double reflection_bound = 0.05; // |S11|, |S22| drawn in [0, bound]
    double isolation_db = -20.0;
    double reference_hz = 6.163e9; // phases are referred to this frequency
};

inline void validate(const LineSpec& s) {
    if (!std::isfinite(s.through_db) || s.through_db > 0.0) throw ConfigError("lines.through_db must be <= 0");
    if (!std::isfinite(s.jitter_db) || s.jitter_db < 0.0) throw ConfigError("lines.jitter_db must be >= 0");
    if (!(s.max_delay_s >= 0.0)) throw ConfigError("lines.max_delay_s must be >= 0");
    if (!(s.ripple_db >= 0.0)) throw ConfigError("lines.ripple_db must be >= 0");
    if (!(s.reflection_bound >= 0.0) || s.reflection_bound > 0.2)
        throw ConfigError("lines.reflection_bound must lie in [0, 0.2]");
    if (!(s.isolation_db <= -10.0)) throw ConfigError("lines.isolation_db must be <= -10");
    if (!(s.reference_hz > 0.0)) throw ConfigError("lines.reference_hz must be positive");
    // |t| + |r| <= 1 bounds the largest singular value of every line.
    const double t_max = db_to_amplitude(0.5 * s.through_db + s.ripple_db);
    if (t_max + s.reflection_bound > 1.0) throw ConfigError("lines: transmission plus reflection exceeds passivity");
}

/// One reciprocal two-port with delay, ripple and constant reflections.
struct LinePath {
    double amplitude = 1.0;
    double phase0 = 0.0;
    double delay_s = 0.0;
    double ripple_db = 0.0;
    double ripple_period_hz = 40e6;
    double ripple_phase = 0.0;
    cplx r1 = 0.0;
    cplx r2 = 0.0;
    double reference_hz = 6.163e9;

    cplx transmission(double omega) const {
        const double df = angular_to_hz(omega) - reference_hz;
        const double ripple = ripple_db * std::sin(2.0 * std::numbers::pi * df / ripple_period_hz + ripple_phase);
        return std::polar(amplitude * db_to_amplitude(ripple), phase0 - constants::two_pi * df * delay_s);
    }
    TwoPort at(double omega) const {
        const cplx t = transmission(omega);
        return TwoPort{{r1, t}, {t, r2}};
    }
};

/// Frequency-dependent measurement setup: input/output lines of both
/// waveguides plus the direct isolation path.
struct LineNetwork {
    LinePath in_a, out_a, in_b, out_b;
    cplx isolation = 0.0;

    LineModel at(double omega) const {
        LineModel m;
        m.s_in_a = in_a.at(omega);
        m.s_out_a = out_a.at(omega);
        m.s_in_b = in_b.at(omega);
        m.s_out_b = out_b.at(omega);
        m.isolation = isolation;
        return m;
    }
};

inline LineNetwork gen_lines(const LineSpec& spec, std::uint64_t seed) {
    validate(spec);
    std::mt19937_64 rng(derive_seed(seed, stream::lines));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double two_pi = constants::two_pi;
    const auto path = [&](double amplitude) {
        LinePath p;
        p.amplitude = amplitude;
        p.phase0 = two_pi * u(rng);
        p.delay_s = spec.max_delay_s * u(rng);
        p.ripple_db = spec.ripple_db;
        p.ripple_period_hz = 20e6 + 40e6 * u(rng);
        p.ripple_phase = two_pi * u(rng);
        p.r1 = std::polar(spec.reflection_bound * u(rng), two_pi * u(rng));
        p.r2 = std::polar(spec.reflection_bound * u(rng), two_pi * u(rng));
        p.reference_hz = spec.reference_hz;
        return p;
    };
    const double amp_a = db_to_amplitude(0.5 * spec.through_db);
    const double amp_b = db_to_amplitude(0.5 * (spec.through_db - spec.jitter_db));
    LineNetwork net;
    net.in_a = path(amp_a);
    net.out_a = path(amp_a);
    net.in_b = path(amp_b);
    net.out_b = path(amp_b);
    net.isolation = std::polar(db_to_amplitude(spec.isolation_db), two_pi * u(rng));
    return net;
}

// --- campaign ----------------------------------------------------------------

enum class Forward { simplified, exact };

struct FrequencyGrid {
    double start_hz = 6.143e9;
    double stop_hz = 6.183e9;
    std::size_t points = 401;

    std::vector<double> values() const { return linear_grid(start_hz, stop_hz, points); }
};

struct CampaignConfig {
    CellParams cell;
    FluxModel flux;
    LineSpec lines;
    std::array<double, 4> noise_sigma{1e-3, 1e-3, 1e-3, 1e-3}; // per channel, relative to the line level
    Forward forward = Forward::simplified;
    FrequencyGrid grid;
    std::uint64_t seed = 1;

    // bias sweep
    std::vector<double> bias_ma;
    double s_i = 3e-19;              // A^2/Hz
    double gamma_phi_zero = mhz(0.2); // sweet-spot dephasing
    // temperature sweep
    std::vector<double> temperatures_k;
    ThermalCoefficients thermal;
    // power sweep
    std::vector<double> powers_dbm;
    SaturationParams saturation;
    double reference_power_dbm = -140.0; // drive power giving reference_photons
    double reference_photons = 1.0;
};

inline void validate(const CampaignConfig& c) {
    detail::validate(c.cell);
    validate(c.lines);
    for (double s : c.noise_sigma)
        if (!(s >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    if (c.grid.points < 2 || !(c.grid.stop_hz > c.grid.start_hz) || !(c.grid.start_hz > 0.0))
        throw ConfigError("grid: need start < stop and at least 2 points");
    if (!(c.s_i >= 0.0) || !(c.gamma_phi_zero >= 0.0)) throw ConfigError("flux noise parameters must be >= 0");
    for (double t : c.temperatures_k)
        if (!(t > 0.0)) throw ConfigError("temperatures must be positive");
    if (!(c.reference_photons > 0.0)) throw ConfigError("reference_photons must be positive");
}

/// Ground truth injected at one synthetic operating point.
struct Truth {
    CellParams cell;
    double saturation = 1.0; // emitter response weight s(n) in [0, 1]
    double n_avg = 0.0;
};

struct SyntheticSpectrum {
    ChannelSpectrum meas;
    ChannelSpectrum hd;
    Truth truth;
    LineNetwork lines;
};

namespace detail {

inline ChannelSet weighted_coefficients(double omega, const Truth& t) {
    const ChannelSet cell = cell_coefficients(omega, t.cell);
    const ChannelSet off = decoupled_coefficients();
    ChannelSet out;
    for (Channel c : all_channels) out[c] = off[c] + t.saturation * (cell[c] - off[c]);
    return out;
}

inline ChannelSet forward_channels(double omega, const Truth* t, const LineModel& l, Forward fwd) {
    if (fwd == Forward::simplified)
        return simplified_forward(t ? weighted_coefficients(omega, *t) : decoupled_coefficients(), l);
    PortMatrix<4> cell = transparent_cell();
    if (t) cell += t->saturation * (cell_smatrix(omega, t->cell) - cell);
    ChannelSet m = channels_of(compose_exact(cell, l).s_meas);
    // Isolation bypasses the cell network and adds to the cross channels.
    m[Channel::AB] += l.s_in_a(1, 0) * l.isolation * l.s_out_b(1, 0);
    m[Channel::BA] += l.s_in_b(1, 0) * l.isolation * l.s_out_a(1, 0);
    return m;
}

inline double line_level(const LineModel& l, Channel c) {
    switch (c) {
    case Channel::AA: return std::abs(l.s_in_a(1, 0) * l.s_out_a(1, 0));
    case Channel::BB: return std::abs(l.s_in_b(1, 0) * l.s_out_b(1, 0));
    case Channel::AB: return std::abs(l.s_in_a(1, 0) * l.s_out_b(1, 0));
    case Channel::BA: return std::abs(l.s_in_b(1, 0) * l.s_out_a(1, 0));
    }
    return 0.0;
}

} // namespace detail

/// Raw and high-drive spectra for one operating point. `index` selects the
/// noise sub-stream so sweep points get independent noise.
inline SyntheticSpectrum gen_spectrum(const CampaignConfig& config, const Truth& truth, std::uint64_t index = 0,
                                      SpectrumMetadata meta = {}) {
    validate(config);
    SyntheticSpectrum out;
    out.truth = truth;
    out.lines = gen_lines(config.lines, config.seed);
    out.meas.meta = meta;
    out.hd.meta = meta;
    std::mt19937_64 rng_meas(derive_seed(config.seed, stream::meas_noise, index));
    std::mt19937_64 rng_hd(derive_seed(config.seed, stream::hd_noise, index));
    std::normal_distribution<double> g(0.0, 1.0 / std::numbers::sqrt2);
    const auto noisy = [&](ChannelSet s, const LineModel& l, std::mt19937_64& rng) {
        for (Channel c : all_channels) {
            const double sigma = config.noise_sigma[index_of(c)] * detail::line_level(l, c);
            const double re = g(rng);
            const double im = g(rng);
            s[c] += sigma * cplx(re, im);
        }
        return s;
    };
    for (double f : config.grid.values()) {
        const double w = hz_to_angular(f);
        const LineModel l = out.lines.at(w);
        out.meas.push_back(f, noisy(detail::forward_channels(w, &truth, l, config.forward), l, rng_meas));
        out.hd.push_back(f, noisy(detail::forward_channels(w, nullptr, l, config.forward), l, rng_hd));
    }
    return out;
}

inline SyntheticSpectrum gen_spectrum(const CampaignConfig& config) { return gen_spectrum(config, Truth{config.cell}); }

// --- sweeps ------------------------------------------------------------------

/// Cell at bias `ib_ma`: omega_ge from the flux model and flux-noise dephasing
/// pi (d omega / d I)^2 S_I + Gamma_phi0.
inline CellParams cell_at_bias(const CampaignConfig& c, double ib_ma) {
    CellParams p = c.cell;
    p.omega_ge = omega_ge_of_bias(ib_ma, c.flux);
    const double slope = flux_slope_per_ampere(ib_ma, c.flux);
    p.gamma_phi = std::numbers::pi * slope * slope * c.s_i + c.gamma_phi_zero;
    return p;
}

/// Cell at temperature `t_k`: thermal bath relaxation and dephasing.
inline CellParams cell_at_temperature(const CampaignConfig& c, double t_k) {
    CellParams p = c.cell;
    const double n = n_thermal(t_k, p.omega_ge);
    p.gamma_bath = thermal_gamma_bath(n, c.thermal);
    p.gamma_phi = thermal_gamma_phi(n, c.thermal);
    return p;
}

inline double photons_at_power(const CampaignConfig& c, double power_dbm) {
    return c.reference_photons * std::pow(10.0, (power_dbm - c.reference_power_dbm) / 10.0);
}

/// Emitter response weight 1 / (1 + n^c / d): 1 at low drive, 0 when saturated.
inline double response_weight(double n_avg, const SaturationParams& s) {
    return 1.0 / (1.0 + std::pow(n_avg, s.c) / s.d);
}

struct SweepPoint {
    double key = 0.0;
    SyntheticSpectrum data;
};

inline std::vector<SweepPoint> gen_bias_sweep(const CampaignConfig& c) {
    std::vector<SweepPoint> out;
    for (std::size_t k = 0; k < c.bias_ma.size(); ++k) {
        SpectrumMetadata meta;
        meta.bias_ma = c.bias_ma[k];
        out.push_back({c.bias_ma[k], gen_spectrum(c, Truth{cell_at_bias(c, c.bias_ma[k])}, k, meta)});
    }
    return out;
}

inline std::vector<SweepPoint> gen_temperature_sweep(const CampaignConfig& c) {
    std::vector<SweepPoint> out;
    for (std::size_t k = 0; k < c.temperatures_k.size(); ++k) {
        SpectrumMetadata meta;
        meta.temperature_k = c.temperatures_k[k];
        out.push_back({c.temperatures_k[k], gen_spectrum(c, Truth{cell_at_temperature(c, c.temperatures_k[k])}, k, meta)});
    }
    return out;
}

inline std::vector<SweepPoint> gen_power_sweep(const CampaignConfig& c) {
    std::vector<SweepPoint> out;
    for (std::size_t k = 0; k < c.powers_dbm.size(); ++k) {
        SpectrumMetadata meta;
        meta.power_dbm = c.powers_dbm[k];
        Truth t{c.cell};
        t.n_avg = photons_at_power(c, c.powers_dbm[k]);
        t.saturation = response_weight(t.n_avg, c.saturation);
        out.push_back({c.powers_dbm[k], gen_spectrum(c, t, k, meta)});
    }
    return out;
}

// --- IQ shots ----------------------------------------------------------------

struct IqSpec {
    cplx z_g{0.0, 0.0};
    cplx z_e{1.0, 0.0};
    double sigma = 0.05;      // per-sample complex noise, absolute
    cplx dc_through{0.2, 0.1}; // DC offset of the through readout
    double dc_ratio = 10.0;   // through / cross DC offset
    double cross_gain = 1.0;  // cross readout anchors relative to through
    std::size_t shots = 1000;
};

struct IqClouds {
    std::vector<IqSetting> through;
    std::vector<IqSetting> cross;
};

/// Heterodyne samples per setting: p z_e + (1 - p) z_g + dc + complex noise.
inline IqClouds gen_iq_shots(std::span<const double> keys, std::span<const double> p, const IqSpec& spec,
                             std::uint64_t seed) {
    if (keys.size() != p.size()) throw std::invalid_argument("gen_iq_shots: keys and populations differ in length");
    if (!(spec.sigma >= 0.0)) throw std::invalid_argument("gen_iq_shots: sigma must be >= 0");
    if (!(spec.dc_ratio > 0.0)) throw std::invalid_argument("gen_iq_shots: dc_ratio must be positive");
    IqClouds out;
    std::normal_distribution<double> g(0.0, spec.sigma / std::numbers::sqrt2);
    const cplx dc_cross = spec.dc_through / spec.dc_ratio;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        std::mt19937_64 rng(derive_seed(seed, stream::iq, k));
        const cplx mean = p[k] * spec.z_e + (1.0 - p[k]) * spec.z_g;
        IqSetting th{keys[k], {}};
        IqSetting cr{keys[k], {}};
        th.samples.reserve(spec.shots);
        cr.samples.reserve(spec.shots);
        for (std::size_t s = 0; s < spec.shots; ++s) {
            const double a = g(rng), b = g(rng), c = g(rng), d = g(rng);
            th.samples.push_back(mean + spec.dc_through + cplx(a, b));
            cr.samples.push_back(spec.cross_gain * mean + dc_cross + cplx(c, d));
        }
        out.through.push_back(std::move(th));
        out.cross.push_back(std::move(cr));
    }
    return out;
}

} // namespace qrouter
