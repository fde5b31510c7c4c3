#pragma once

// Parameter estimation: the simultaneous four-channel fit, efficiency-based
// dephasing, flux-noise and thermal fits, saturation, time-domain lifetimes,
// rate budget and PCA population decomposition.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "calibration.hpp"
#include "error.hpp"
#include "lsq.hpp"
#include "model.hpp"
#include "spectrum.hpp"

namespace qrouter {

struct FitParam {
    std::string name;
    std::string unit;
    double value = 0.0;
    double sigma = 0.0;
};

struct FitReport {
    std::vector<FitParam> params;
    double residual_norm = 0.0;
    int n_iter = 0;
    bool converged = false;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> flags;
    std::vector<double> cost_history;

    const FitParam& param(std::string_view name) const {
        for (const FitParam& p : params)
            if (p.name == name) return p;
        throw std::out_of_range("FitReport: no parameter " + std::string(name));
    }
    double value(std::string_view name) const { return param(name).value; }
    double sigma(std::string_view name) const { return param(name).sigma; }
    bool has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

namespace detail {

inline FitReport report_from(const lsq::Result& r) {
    FitReport rep;
    rep.residual_norm = r.residual_norm;
    rep.n_iter = r.iterations;
    rep.converged = r.converged;
    rep.cost_history = r.cost_history;
    if (!r.converged) rep.flags.push_back("not_converged");
    return rep;
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": input lengths differ");
}

// Insignificant relative to its uncertainty, or numerically zero.
inline bool insignificant(double value, double sigma, double scale) {
    return std::abs(value) <= std::max(3.0 * sigma, 1e-9 * scale);
}

} // namespace detail

// --- four-channel fit --------------------------------------------------------

/// Rate scale of the four-channel fit parameters, 2 pi * 1 MHz.
inline constexpr double four_channel_scale = mhz(1.0);

struct FourChannelFit {
    CellParams params;
    FitReport report;
};

/// Least-squares problem over stacked (re, im) residuals of all four channels,
/// model minus data, channel-major. Parameters are scaled offsets from `init`:
///   x = [dGamma_A/s, dGamma_B/s, d omega_ge/s, d phi_A, d phi_B],
/// with s = 2 pi * 1 MHz. Gamma_phi and Gamma_bath stay at their init values.
inline lsq::Problem four_channel_problem(const ChannelSpectrum& data, const CellParams& init) {
    const double s = four_channel_scale;
    const auto params_of = [init, s](const lsq::Vector& x) {
        CellParams p = init;
        p.gamma_a = init.gamma_a + s * x(0);
        p.gamma_b = init.gamma_b + s * x(1);
        p.omega_ge = init.omega_ge + s * x(2);
        p.phi_a = init.phi_a + x(3);
        p.phi_b = init.phi_b + x(4);
        return p;
    };
    const std::size_t n = data.size();

    lsq::Problem prob;
    prob.residual = [&data, params_of, n](const lsq::Vector& x) {
        const CellParams p = params_of(x);
        lsq::Vector r(8 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const ChannelSet m = cell_coefficients(data.omega(i), p);
            for (Channel c : all_channels) {
                const cplx d = m[c] - data.trace(c)[i];
                const std::size_t row = 2 * (index_of(c) * n + i);
                r(row) = d.real();
                r(row + 1) = d.imag();
            }
        }
        return r;
    };
    prob.jacobian = [&data, params_of, n, s](const lsq::Vector& x) {
        const CellParams p = params_of(x);
        const cplx i1 = imag_unit;
        const cplx ea = std::polar(1.0, p.phi_a);
        const cplx eb = std::polar(1.0, p.phi_b);
        const cplx ga = p.gamma_a * ea;
        const cplx gb = p.gamma_b * eb;
        const cplx cc = std::sqrt(p.gamma_a * p.gamma_b) * std::polar(1.0, 0.5 * (p.phi_a + p.phi_b));
        // Derivatives of D with respect to (Gamma_A, Gamma_B, omega_ge, phi_A, phi_B).
        const cplx dd[5] = {i1, i1, -1.0, 0.0, 0.0};
        const cplx dga[5] = {ea, 0.0, 0.0, i1 * ga, 0.0};
        const cplx dgb[5] = {0.0, eb, 0.0, 0.0, i1 * gb};
        const cplx dcc[5] = {cc / (2.0 * p.gamma_a), cc / (2.0 * p.gamma_b), 0.0, 0.5 * i1 * cc, 0.5 * i1 * cc};
        const double chain[5] = {s, s, s, 1.0, 1.0};

        lsq::Matrix jac(8 * n, 5);
        for (std::size_t i = 0; i < n; ++i) {
            const cplx d = detail::denominator(data.omega(i), p);
            const cplx d2 = d * d;
            for (int k = 0; k < 5; ++k) {
                ChannelSet g;
                g[Channel::AA] = -i1 * dga[k] / d + i1 * ga * dd[k] / d2;
                g[Channel::BB] = -i1 * dgb[k] / d + i1 * gb * dd[k] / d2;
                g[Channel::AB] = i1 * dcc[k] / d - i1 * cc * dd[k] / d2;
                g[Channel::BA] = g[Channel::AB];
                for (Channel c : all_channels) {
                    const std::size_t row = 2 * (index_of(c) * n + i);
                    jac(row, k) = chain[k] * g[c].real();
                    jac(row + 1, k) = chain[k] * g[c].imag();
                }
            }
        }
        return jac;
    };
    // Keep couplings positive and phases inside (-pi/2, pi/2).
    const double margin = 1e-6;
    const double half_pi = std::numbers::pi / 2;
    prob.lower = lsq::Vector{{(margin * s - init.gamma_a) / s, (margin * s - init.gamma_b) / s, -1e12,
                              -half_pi + margin - init.phi_a, -half_pi + margin - init.phi_b}};
    prob.upper = lsq::Vector{{1e12, 1e12, 1e12, half_pi - margin - init.phi_a, half_pi - margin - init.phi_b}};
    return prob;
}

/// Simultaneous fit of Gamma_A, Gamma_B, omega_ge, phi_A and phi_B to the four
/// calibrated traces.
inline FourChannelFit fit_four_channel(const ChannelSpectrum& calibrated, const CellParams& init,
                                       const lsq::Options& opt = {}) {
    validate(calibrated);
    if (calibrated.size() < 3) throw std::invalid_argument("fit_four_channel: need at least 3 frequency points");
    const lsq::Problem prob = four_channel_problem(calibrated, init);
    const lsq::Result r = lsq::solve(prob, lsq::Vector::Zero(5), opt);

    FourChannelFit out;
    out.report = detail::report_from(r);
    const double s = four_channel_scale;
    out.params = init;
    out.params.gamma_a = init.gamma_a + s * r.x(0);
    out.params.gamma_b = init.gamma_b + s * r.x(1);
    out.params.omega_ge = init.omega_ge + s * r.x(2);
    out.params.phi_a = init.phi_a + r.x(3);
    out.params.phi_b = init.phi_b + r.x(4);
    out.report.params = {
        {"gamma_a", "rad/s", out.params.gamma_a, s * r.sigma(0)},
        {"gamma_b", "rad/s", out.params.gamma_b, s * r.sigma(1)},
        {"omega_ge", "rad/s", out.params.omega_ge, s * r.sigma(2)},
        {"phi_a", "rad", out.params.phi_a, r.sigma(3)},
        {"phi_b", "rad", out.params.phi_b, r.sigma(4)},
    };
    const double span = calibrated.omega(calibrated.size() - 1) - calibrated.omega(0);
    const double width = 2.0 * (out.params.gamma_a + out.params.gamma_b + out.params.decoherence_rate());
    if (span < 3.0 * width) out.report.flags.push_back("span_below_3_linewidths");
    return out;
}

/// Starting point for fit_four_channel read off the calibrated traces: the
/// circle fit of t_AA gives omega_ge and the loaded width, the resonant dips
/// give the coupling split and phases (1 - t_x = Gamma_x e^{i phi_x} / sum at
/// resonance).
inline CellParams initial_guess(const ChannelSpectrum& calibrated, const CellParams& fixed = {}) {
    validate(calibrated);
    const CircleFitResult circ = circle_fit(calibrated.trace(Channel::AA), calibrated.freqs_hz);
    const std::size_t k = nearest_index(calibrated.freqs_hz, circ.omega_res);
    const cplx dip_a = 1.0 - calibrated.trace(Channel::AA)[k];
    const cplx dip_b = 1.0 - calibrated.trace(Channel::BB)[k];
    const double half_width = 0.5 * circ.kappa_loaded;
    const double clamp = std::numbers::pi / 2 - 1e-3;
    CellParams p = fixed;
    p.omega_ge = circ.omega_res;
    p.gamma_a = std::max(std::abs(dip_a) * half_width, 1e-3 * half_width);
    p.gamma_b = std::max(std::abs(dip_b) * half_width, 1e-3 * half_width);
    p.phi_a = std::clamp(std::arg(dip_a), -clamp, clamp);
    p.phi_b = std::clamp(std::arg(dip_b), -clamp, clamp);
    return p;
}

// --- efficiency and dephasing -----------------------------------------------

/// E(omega) = t_AB' t_BA' / (t_AA' t_BB') straight from raw traces; the line
/// factors cancel, so no calibration is needed.
inline std::vector<cplx> efficiency_trace(const ChannelSpectrum& raw, double floor = 1e-8) {
    validate(raw);
    std::vector<cplx> e(raw.size());
    std::vector<double> bad;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const ChannelSet m = raw.at(i);
        if (!(std::abs(m[Channel::AA]) >= floor) || !(std::abs(m[Channel::BB]) >= floor)) {
            bad.push_back(raw.freqs_hz[i]);
            continue;
        }
        e[i] = m[Channel::AB] * m[Channel::BA] / (m[Channel::AA] * m[Channel::BB]);
    }
    if (!bad.empty())
        throw DegenerateReferenceError("efficiency_trace: through channel below floor at " +
                                           std::to_string(bad.size()) + " frequencies",
                                       bad);
    return e;
}

/// Same ratio with the isolation path removed: the high-drive cross traces
/// are subtracted from the measured ones first, which drops the I and I^2
/// terms while keeping the line factors cancelled.
inline std::vector<cplx> efficiency_trace(const ChannelSpectrum& raw, const ChannelSpectrum& hd, double floor = 1e-8) {
    validate(hd);
    if (hd.freqs_hz != raw.freqs_hz) throw std::invalid_argument("efficiency_trace: raw and hd grids differ");
    ChannelSpectrum corrected = raw;
    for (Channel c : {Channel::AB, Channel::BA})
        for (std::size_t i = 0; i < raw.size(); ++i) corrected.trace(c)[i] -= hd.trace(c)[i];
    return efficiency_trace(corrected, floor);
}

struct ResonantEfficiency {
    double freq_hz = 0.0;
    cplx e = 0.0;
    std::size_t points = 0; // samples used in the local fit
};

/// Resonant value of an efficiency trace. 1/E is exactly quadratic in the
/// detuning (both through coefficients share the denominator), so a complex
/// quadratic is fitted to 1/E within +-half_window_hz of the |E| peak and
/// |E| is maximized on the fitted curve.
inline ResonantEfficiency resonant_efficiency(std::span<const cplx> e, std::span<const double> freqs_hz,
                                              double half_window_hz) {
    detail::require_same_size(e.size(), freqs_hz.size(), "resonant_efficiency");
    if (e.size() < 3) throw std::invalid_argument("resonant_efficiency: need at least 3 points");
    if (!(half_window_hz > 0.0)) throw std::invalid_argument("resonant_efficiency: window must be positive");
    std::size_t peak = 1;
    double best = -1.0;
    for (std::size_t i = 1; i + 1 < e.size(); ++i) {
        const double m = std::abs(e[i - 1]) + std::abs(e[i]) + std::abs(e[i + 1]);
        if (m > best) {
            best = m;
            peak = i;
        }
    }
    const double f_peak = freqs_hz[peak];
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < e.size(); ++i)
        if (std::abs(freqs_hz[i] - f_peak) <= half_window_hz && std::abs(e[i]) > 0.0) idx.push_back(i);
    ResonantEfficiency out{f_peak, e[peak], idx.size()};
    if (idx.size() < 4) return out;
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXcd a(n, 3);
    Eigen::VectorXcd y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = idx[static_cast<std::size_t>(k)];
        const double x = (freqs_hz[i] - f_peak) / half_window_hz;
        a(k, 0) = x * x;
        a(k, 1) = x;
        a(k, 2) = 1.0;
        y(k) = 1.0 / e[i];
    }
    const Eigen::Vector3cd c = a.colPivHouseholderQr().solve(y);
    const auto inv = [&](double x) { return c(0) * x * x + c(1) * x + c(2); };
    // |1/E|^2 is a quartic in x; a grid plus golden-section refinement finds its minimum.
    double xb = 0.0;
    for (int k = -100; k <= 100; ++k) {
        const double x = 0.01 * k;
        if (std::norm(inv(x)) < std::norm(inv(xb))) xb = x;
    }
    double lo = std::max(-1.0, xb - 0.01), hi = std::min(1.0, xb + 0.01);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 60; ++it) {
        const double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
        if (std::norm(inv(x1)) < std::norm(inv(x2))) hi = x2;
        else lo = x1;
    }
    const double x = 0.5 * (lo + hi);
    out.freq_hz = f_peak + x * half_window_hz;
    out.e = 1.0 / inv(x);
    return out;
}

struct QuadraticFit {
    double c2 = 0.0; // per mA^2
    double c1 = 0.0; // per mA
    double c0 = 0.0;
    double sigma_c2 = 0.0;
    double sigma_c1 = 0.0;
    double sigma_c0 = 0.0;
    double residual_norm = 0.0;
};

/// Least-squares quadratic E(ib) = c2 ib^2 + c1 ib + c0.
inline QuadraticFit fit_E_polynomial(std::span<const double> ib_ma, std::span<const double> e) {
    detail::require_same_size(ib_ma.size(), e.size(), "fit_E_polynomial");
    if (ib_ma.size() < 3) throw std::invalid_argument("fit_E_polynomial: need at least 3 bias points");
    const Eigen::Index n = static_cast<Eigen::Index>(ib_ma.size());
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        a(i, 0) = ib_ma[i] * ib_ma[i];
        a(i, 1) = ib_ma[i];
        a(i, 2) = 1.0;
        y(i) = e[i];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < 3) throw FitError("fit_E_polynomial: rank-deficient design (fewer than 3 distinct bias points)");
    const Eigen::Vector3d c = qr.solve(y);
    QuadraticFit out;
    out.c2 = c(0);
    out.c1 = c(1);
    out.c0 = c(2);
    const Eigen::VectorXd res = a * c - y;
    out.residual_norm = res.norm();
    if (n > 3) {
        const Eigen::Matrix3d cov = (a.transpose() * a).inverse() * (res.squaredNorm() / static_cast<double>(n - 3));
        out.sigma_c2 = std::sqrt(cov(0, 0));
        out.sigma_c1 = std::sqrt(cov(1, 1));
        out.sigma_c0 = std::sqrt(cov(2, 2));
    }
    return out;
}

/// Headroom above E = 1 that is attributed to noise and clamped.
inline constexpr double efficiency_clamp_headroom = 0.05;

/// Positive root of G^2/(G_A G_B) + G (1/G_A + 1/G_B) + 1 - 1/E = 0.
///
/// E in (1, 1.05] is treated as noise on a lossless cell: returns 0 and sets
/// `*clamped`. Larger E or E <= 0 throws.
inline double gamma_phi_from_E(double e, double gamma_a, double gamma_b, bool* clamped = nullptr) {
    if (!(gamma_a > 0.0) || !(gamma_b > 0.0)) throw std::invalid_argument("gamma_phi_from_E: couplings must be positive");
    if (!(e > 0.0) || e > 1.0 + efficiency_clamp_headroom)
        throw std::invalid_argument("gamma_phi_from_E: E must lie in (0, 1]");
    if (clamped) *clamped = e > 1.0;
    if (e >= 1.0) return 0.0;
    const double a = 1.0 / (gamma_a * gamma_b);
    const double b = 1.0 / gamma_a + 1.0 / gamma_b;
    const double c = 1.0 - 1.0 / e; // < 0
    // Cancellation-free form of (-b + sqrt(b^2 - 4ac)) / 2a.
    return -2.0 * c / (b + std::sqrt(b * b - 4.0 * a * c));
}

struct GammaPhiEstimate {
    double gamma_phi = 0.0;
    double imag_part = 0.0; // |Im E|, a model-consistency diagnostic
    bool clamped = false;
};

/// Dephasing from a complex resonant efficiency: uses Re E and reports |Im E|.
inline GammaPhiEstimate gamma_phi_from_E(cplx e, double gamma_a, double gamma_b) {
    GammaPhiEstimate out;
    out.imag_part = std::abs(e.imag());
    out.gamma_phi = gamma_phi_from_E(e.real(), gamma_a, gamma_b, &out.clamped);
    return out;
}

/// Resonant efficiency of the model cell, extracted the same way as from data.
inline ResonantEfficiency model_resonant_efficiency(const CellParams& p) {
    const double span = p.gamma_a + p.gamma_b;
    const double f0 = angular_to_hz(p.omega_ge);
    std::vector<double> f;
    std::vector<cplx> e;
    for (double x : linear_grid(-1.0, 1.0, 201)) {
        f.push_back(f0 + x * angular_to_hz(span));
        e.push_back(efficiency(x * span, p));
    }
    return resonant_efficiency(e, f, 0.5 * angular_to_hz(span));
}

/// Dephasing for a cell with complex couplings: the Gamma_phi at which the
/// model's resonant |E| equals |e|, other rates and phases taken from `cell`.
/// Agrees with the closed form for real couplings. imag_part is |Im(e - E_model)|.
inline GammaPhiEstimate gamma_phi_from_E(cplx e, const CellParams& cell) {
    detail::validate(cell);
    const double target = std::abs(e);
    CellParams p = cell;
    const auto peak = [&](double g) {
        p.gamma_phi = g;
        return model_resonant_efficiency(p).e;
    };
    const double top = std::abs(peak(0.0));
    if (!(target > 0.0) || target > top + efficiency_clamp_headroom)
        throw std::invalid_argument("gamma_phi_from_E: |E| must lie in (0, resonant |E| at Gamma_phi = 0]");
    GammaPhiEstimate out;
    if (target >= top) {
        out.clamped = target > top;
        out.imag_part = std::abs((e - peak(0.0)).imag());
        return out;
    }
    double lo = 0.0, hi = cell.gamma_a + cell.gamma_b;
    for (int k = 0; k < 60 && std::abs(peak(hi)) > target; ++k) {
        lo = hi;
        hi *= 2.0;
    }
    for (int it = 0; it < 100 && hi - lo > 1e-13 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (std::abs(peak(mid)) > target ? lo : hi) = mid;
    }
    out.gamma_phi = 0.5 * (lo + hi);
    out.imag_part = std::abs((e - peak(out.gamma_phi)).imag());
    return out;
}

struct FluxNoiseFit {
    double s_i = 0.0;            // A^2/Hz
    double gamma_phi_zero = 0.0; // rad/s
    double sigma_s_i = 0.0;
    double sigma_gamma_phi_zero = 0.0;
    double residual_norm = 0.0;
};

/// Linear fit Gamma_phi = pi (d omega_ge / d I_b)^2 S_I + Gamma_phi0.
inline FluxNoiseFit fit_flux_noise(std::span<const double> ib_ma, std::span<const double> gamma_phi,
                                   const FluxModel& flux) {
    detail::require_same_size(ib_ma.size(), gamma_phi.size(), "fit_flux_noise");
    if (ib_ma.size() < 3) throw std::invalid_argument("fit_flux_noise: need at least 3 bias points");
    const Eigen::Index n = static_cast<Eigen::Index>(ib_ma.size());
    Eigen::MatrixXd a(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double slope = flux_slope_per_ampere(ib_ma[i], flux);
        a(i, 0) = std::numbers::pi * slope * slope;
        a(i, 1) = 1.0;
        y(i) = gamma_phi[i];
    }
    const double x_max = a.col(0).cwiseAbs().maxCoeff();
    const double x_min = a.col(0).cwiseAbs().minCoeff();
    if (!(x_max > 0.0) || x_max - x_min <= 1e-12 * x_max)
        throw FitError("fit_flux_noise: S_I unidentifiable (flux slope does not vary across the bias points)");
    // Column scaling keeps the normal equations well conditioned.
    Eigen::MatrixXd as = a;
    as.col(0) /= x_max;
    const Eigen::Vector2d cs = as.colPivHouseholderQr().solve(y);
    FluxNoiseFit out;
    out.s_i = cs(0) / x_max;
    out.gamma_phi_zero = cs(1);
    const Eigen::VectorXd res = as * cs - y;
    out.residual_norm = res.norm();
    if (n > 2) {
        const Eigen::Matrix2d cov = (as.transpose() * as).inverse() * (res.squaredNorm() / static_cast<double>(n - 2));
        out.sigma_s_i = std::sqrt(cov(0, 0)) / x_max;
        out.sigma_gamma_phi_zero = std::sqrt(cov(1, 1));
    }
    return out;
}

// --- thermal -----------------------------------------------------------------

struct ThermalFit {
    ThermalCoefficients coeffs;
    FitReport report;
};

/// Residuals E_model(n_k) - E_k over x = [gamma1/s, gamma_phi/s], s = 2 pi MHz.
inline lsq::Problem thermal_problem(std::vector<double> n_th, std::vector<double> e, double gamma_a, double gamma_b) {
    const double s = mhz(1.0);
    const double qa = 1.0 / (gamma_a * gamma_b);
    const double qb = 1.0 / gamma_a + 1.0 / gamma_b;
    lsq::Problem prob;
    prob.residual = [=](const lsq::Vector& x) {
        const ThermalCoefficients tc{s * x(0), s * x(1)};
        lsq::Vector r(static_cast<Eigen::Index>(n_th.size()));
        for (std::size_t k = 0; k < n_th.size(); ++k)
            r(static_cast<Eigen::Index>(k)) = efficiency_thermal(n_th[k], gamma_a, gamma_b, tc) - e[k];
        return r;
    };
    prob.jacobian = [=](const lsq::Vector& x) {
        const ThermalCoefficients tc{s * x(0), s * x(1)};
        lsq::Matrix j(static_cast<Eigen::Index>(n_th.size()), 2);
        for (std::size_t k = 0; k < n_th.size(); ++k) {
            const double g = thermal_decoherence_rate(n_th[k], tc);
            const double ek = efficiency_resonant(g, gamma_a, gamma_b);
            const double de_dg = -(qb + 2.0 * qa * g) * ek * ek;
            j(static_cast<Eigen::Index>(k), 0) = de_dg * (n_th[k] + 0.5) * s;
            j(static_cast<Eigen::Index>(k), 1) = de_dg * n_th[k] * s;
        }
        return j;
    };
    prob.lower = lsq::Vector::Zero(2);
    return prob;
}

/// Fits gamma1 and gamma_phi (per thermal photon) to the resonant efficiency
/// versus temperature.
inline ThermalFit fit_thermal(std::span<const double> temperature_k, std::span<const double> e, double gamma_a,
                              double gamma_b, double omega_ge, const lsq::Options& opt = {}) {
    detail::require_same_size(temperature_k.size(), e.size(), "fit_thermal");
    if (temperature_k.size() < 2) throw std::invalid_argument("fit_thermal: need at least 2 temperatures");
    std::vector<double> n_th;
    for (double t : temperature_k) n_th.push_back(n_thermal(t, omega_ge));

    // Initial point: the decoherence rate is linear in (gamma1, gamma_phi).
    const double s = mhz(1.0);
    const Eigen::Index m = static_cast<Eigen::Index>(n_th.size());
    Eigen::MatrixXd a(m, 2);
    Eigen::VectorXd g(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const double ek = std::clamp(e[static_cast<std::size_t>(k)], 1e-6, 1.0 + efficiency_clamp_headroom);
        a(k, 0) = n_th[static_cast<std::size_t>(k)] + 0.5;
        a(k, 1) = n_th[static_cast<std::size_t>(k)];
        g(k) = gamma_phi_from_E(ek, gamma_a, gamma_b) / s;
    }
    lsq::Vector x0 = a.colPivHouseholderQr().solve(g).cwiseMax(0.0);
    if (!x0.allFinite()) x0 = lsq::Vector::Zero(2);

    const lsq::Problem prob = thermal_problem(n_th, std::vector<double>(e.begin(), e.end()), gamma_a, gamma_b);
    const lsq::Result r = lsq::solve(prob, x0, opt);
    ThermalFit out;
    out.report = detail::report_from(r);
    out.coeffs = {s * r.x(0), s * r.x(1)};
    out.report.params = {{"gamma1_zero", "rad/s", out.coeffs.gamma1_zero, s * r.sigma(0)},
                         {"gamma_phi_zero", "rad/s", out.coeffs.gamma_phi_zero_per_photon, s * r.sigma(1)}};
    if (detail::insignificant(r.x(1), r.sigma(1), std::max(r.x(0), 1.0)))
        out.report.flags.push_back("gamma_phi_unidentifiable");
    if (out.coeffs.gamma_phi_zero_per_photon > 10.0 * out.coeffs.gamma1_zero)
        out.report.flags.push_back("dephasing_dominates");
    return out;
}

// --- saturation --------------------------------------------------------------

struct SaturationFit {
    SaturationParams params;
    FitReport report;
};

/// Residuals over x = [a, b, c, log10 d].
inline lsq::Problem saturation_problem(std::vector<double> n_avg, std::vector<double> y) {
    lsq::Problem prob;
    prob.residual = [=](const lsq::Vector& x) {
        const SaturationParams sp{x(0), x(1), x(2), std::pow(10.0, x(3))};
        lsq::Vector r(static_cast<Eigen::Index>(n_avg.size()));
        for (std::size_t k = 0; k < n_avg.size(); ++k)
            r(static_cast<Eigen::Index>(k)) = saturation_curve(n_avg[k], sp) - y[k];
        return r;
    };
    prob.jacobian = [=](const lsq::Vector& x) {
        lsq::Matrix j(static_cast<Eigen::Index>(n_avg.size()), 4);
        for (std::size_t k = 0; k < n_avg.size(); ++k) {
            const auto row = static_cast<Eigen::Index>(k);
            const double n = n_avg[k];
            const double u = n > 0.0 ? std::pow(n, x(2)) * std::pow(10.0, -x(3)) : 0.0;
            const double q = 1.0 + u;
            j(row, 0) = 1.0;
            j(row, 1) = -1.0 / q;
            j(row, 2) = n > 0.0 ? x(1) * u * std::log(n) / (q * q) : 0.0;
            j(row, 3) = -x(1) * u * std::log(10.0) / (q * q);
        }
        return j;
    };
    prob.lower = lsq::Vector{{-1e6, -1e6, 0.05, -12.0}};
    prob.upper = lsq::Vector{{1e6, 1e6, 10.0, 12.0}};
    return prob;
}

/// Fits f(n) = a - b / (1 + n^c / d) to response magnitudes versus mean
/// photon number.
inline SaturationFit fit_saturation(std::span<const double> n_avg, std::span<const double> magnitude,
                                    const lsq::Options& opt = {}) {
    detail::require_same_size(n_avg.size(), magnitude.size(), "fit_saturation");
    if (n_avg.size() < 4) throw std::invalid_argument("fit_saturation: need at least 4 photon numbers");
    const auto [lo_it, hi_it] = std::minmax_element(n_avg.begin(), n_avg.end());
    if (!(*lo_it >= 0.0)) throw std::invalid_argument("fit_saturation: photon numbers must be non-negative");
    const double lo_pos = [&] {
        double v = *hi_it;
        for (double n : n_avg)
            if (n > 0.0) v = std::min(v, n);
        return v;
    }();
    const bool wide = *hi_it > 0.0 && *hi_it / lo_pos >= 100.0;

    const std::size_t ilo = static_cast<std::size_t>(lo_it - n_avg.begin());
    const std::size_t ihi = static_cast<std::size_t>(hi_it - n_avg.begin());
    const double a0 = magnitude[ihi];
    const double b0 = magnitude[ihi] - magnitude[ilo];
    // d0: photon number where the response is halfway.
    const double half = magnitude[ilo] + 0.5 * b0;
    double d0 = std::sqrt(lo_pos * *hi_it);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n_avg.size(); ++k)
        if (n_avg[k] > 0.0 && std::abs(magnitude[k] - half) < best) {
            best = std::abs(magnitude[k] - half);
            d0 = n_avg[k];
        }

    const lsq::Problem prob = saturation_problem(std::vector<double>(n_avg.begin(), n_avg.end()),
                                                 std::vector<double>(magnitude.begin(), magnitude.end()));
    const lsq::Result r = lsq::solve(prob, lsq::Vector{{a0, b0, 1.0, std::log10(d0)}}, opt);
    SaturationFit out;
    out.report = detail::report_from(r);
    out.params = {r.x(0), r.x(1), r.x(2), std::pow(10.0, r.x(3))};
    out.report.params = {{"a", "", out.params.a, r.sigma(0)},
                         {"b", "", out.params.b, r.sigma(1)},
                         {"c", "", out.params.c, r.sigma(2)},
                         {"d", "photons", out.params.d, out.params.d * std::log(10.0) * r.sigma(3)}};
    if (detail::insignificant(r.x(1), r.sigma(1), std::abs(r.x(0)))) out.report.flags.push_back("c_d_unidentifiable");
    if (!wide) out.report.flags.push_back("span_below_2_decades");
    return out;
}

// --- time domain -------------------------------------------------------------

inline constexpr double time_scale = 1e-9; // fit times in ns

struct T1Fit {
    double t1 = 0.0; // s
    double p0 = 0.0;
    double p_inf = 0.0;
    FitReport report;
};

/// Residuals of p0 e^{-t/T1} + p_inf over x = [p0, T1/ns, p_inf].
inline lsq::Problem t1_problem(std::vector<double> t_s, std::vector<double> p) {
    lsq::Problem prob;
    prob.residual = [=](const lsq::Vector& x) {
        lsq::Vector r(static_cast<Eigen::Index>(t_s.size()));
        for (std::size_t k = 0; k < t_s.size(); ++k)
            r(static_cast<Eigen::Index>(k)) = x(0) * std::exp(-t_s[k] / time_scale / x(1)) + x(2) - p[k];
        return r;
    };
    prob.jacobian = [=](const lsq::Vector& x) {
        lsq::Matrix j(static_cast<Eigen::Index>(t_s.size()), 3);
        for (std::size_t k = 0; k < t_s.size(); ++k) {
            const auto row = static_cast<Eigen::Index>(k);
            const double tau = t_s[k] / time_scale;
            const double e = std::exp(-tau / x(1));
            j(row, 0) = e;
            j(row, 1) = x(0) * e * tau / (x(1) * x(1));
            j(row, 2) = 1.0;
        }
        return j;
    };
    prob.lower = lsq::Vector{{-1e3, 1e-6, -1e3}};
    return prob;
}

inline T1Fit fit_T1(std::span<const double> t_s, std::span<const double> p, const lsq::Options& opt = {}) {
    detail::require_same_size(t_s.size(), p.size(), "fit_T1");
    if (t_s.size() < 5) throw std::invalid_argument("fit_T1: need at least 5 delays");
    const double p_inf0 = p.back();
    const double p00 = p.front() - p_inf0;
    // 1/e crossing as the lifetime guess.
    double t10 = 0.5 * (t_s.back() - t_s.front()) / time_scale;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (std::abs(p[k] - p_inf0) <= std::abs(p00) / std::numbers::e) {
            t10 = std::max((t_s[k] - t_s.front()) / time_scale, 1e-3);
            break;
        }
    const lsq::Problem prob = t1_problem(std::vector<double>(t_s.begin(), t_s.end()), std::vector<double>(p.begin(), p.end()));
    const lsq::Result r = lsq::solve(prob, lsq::Vector{{p00, t10, p_inf0}}, opt);
    T1Fit out;
    out.report = detail::report_from(r);
    out.p0 = r.x(0);
    out.t1 = r.x(1) * time_scale;
    out.p_inf = r.x(2);
    out.report.params = {{"p0", "", out.p0, r.sigma(0)},
                         {"t1", "s", out.t1, r.sigma(1) * time_scale},
                         {"p_inf", "", out.p_inf, r.sigma(2)}};
    if (detail::insignificant(out.p0, r.sigma(0), 1.0)) out.report.flags.push_back("t1_unidentifiable");
    if (t_s.back() - t_s.front() < 2.0 * out.t1) out.report.flags.push_back("span_below_2_t1");
    return out;
}

struct RabiFit {
    double t_r = 0.0; // s
    double p_max = 0.0;
    double t_pi = 0.0; // s
    double p_inf = 0.0;
    FitReport report;
};

/// p(t) = [p_max sin^2(pi t / 2 t_pi) - p_inf] e^{-t/T_R} + p_inf.
inline double rabi_model(double t, double p_max, double t_pi, double p_inf, double t_r) {
    const double s = std::sin(std::numbers::pi * t / (2.0 * t_pi));
    return (p_max * s * s - p_inf) * std::exp(-t / t_r) + p_inf;
}

/// Residuals over x = [p_max, t_pi/ns, p_inf, T_R/ns].
inline lsq::Problem rabi_problem(std::vector<double> t_s, std::vector<double> p) {
    lsq::Problem prob;
    prob.residual = [=](const lsq::Vector& x) {
        lsq::Vector r(static_cast<Eigen::Index>(t_s.size()));
        for (std::size_t k = 0; k < t_s.size(); ++k)
            r(static_cast<Eigen::Index>(k)) = rabi_model(t_s[k] / time_scale, x(0), x(1), x(2), x(3)) - p[k];
        return r;
    };
    prob.jacobian = [=](const lsq::Vector& x) {
        const double pi = std::numbers::pi;
        lsq::Matrix j(static_cast<Eigen::Index>(t_s.size()), 4);
        for (std::size_t k = 0; k < t_s.size(); ++k) {
            const auto row = static_cast<Eigen::Index>(k);
            const double t = t_s[k] / time_scale;
            const double arg = pi * t / (2.0 * x(1));
            const double sn = std::sin(arg);
            const double e = std::exp(-t / x(3));
            j(row, 0) = sn * sn * e;
            j(row, 1) = -x(0) * e * std::sin(2.0 * arg) * pi * t / (2.0 * x(1) * x(1));
            j(row, 2) = 1.0 - e;
            j(row, 3) = (x(0) * sn * sn - x(2)) * e * t / (x(3) * x(3));
        }
        return j;
    };
    prob.lower = lsq::Vector{{-1e3, 1e-6, -1e3, 1e-6}};
    return prob;
}

/// Decaying Rabi fit. The start point comes from a grid over (t_pi, T_R) with
/// p_max and p_inf solved linearly at every node.
inline RabiFit fit_rabi_decay(std::span<const double> t_s, std::span<const double> p, const lsq::Options& opt = {}) {
    detail::require_same_size(t_s.size(), p.size(), "fit_rabi_decay");
    if (t_s.size() < 8) throw std::invalid_argument("fit_rabi_decay: need at least 8 samples");
    std::vector<double> tn(t_s.size());
    for (std::size_t k = 0; k < t_s.size(); ++k) tn[k] = t_s[k] / time_scale;
    const double span = tn.back() - tn.front();
    double dt = span;
    for (std::size_t k = 1; k < tn.size(); ++k) dt = std::min(dt, tn[k] - tn[k - 1]);
    if (!(dt > 0.0)) throw std::invalid_argument("fit_rabi_decay: times must be strictly increasing");

    const Eigen::Index m = static_cast<Eigen::Index>(tn.size());
    Eigen::VectorXd y(m);
    for (Eigen::Index k = 0; k < m; ++k) y(k) = p[static_cast<std::size_t>(k)];
    double best_cost = std::numeric_limits<double>::infinity();
    lsq::Vector x0{{1.0, span / 6.0, 0.5, span / 2.0}};
    // t_pi from above Nyquist (period 2 t_pi >= 2 dt) up to the span.
    const int n_tpi = 200;
    const int n_tr = 40;
    for (int i = 0; i < n_tpi; ++i) {
        const double t_pi = dt * std::pow(span / dt, static_cast<double>(i) / (n_tpi - 1));
        for (int j = 0; j < n_tr; ++j) {
            const double t_r = 0.2 * dt * std::pow(50.0 * span / (0.2 * dt), static_cast<double>(j) / (n_tr - 1));
            Eigen::MatrixXd a(m, 2);
            for (Eigen::Index k = 0; k < m; ++k) {
                const double sn = std::sin(std::numbers::pi * tn[static_cast<std::size_t>(k)] / (2.0 * t_pi));
                const double e = std::exp(-tn[static_cast<std::size_t>(k)] / t_r);
                a(k, 0) = sn * sn * e;
                a(k, 1) = 1.0 - e;
            }
            const Eigen::Vector2d c = a.colPivHouseholderQr().solve(y);
            const double cost = (a * c - y).squaredNorm();
            if (std::isfinite(cost) && cost < best_cost) {
                best_cost = cost;
                x0 = lsq::Vector{{c(0), t_pi, c(1), t_r}};
            }
        }
    }

    const lsq::Problem prob = rabi_problem(std::vector<double>(t_s.begin(), t_s.end()), std::vector<double>(p.begin(), p.end()));
    const lsq::Result r = lsq::solve(prob, x0, opt);
    RabiFit out;
    out.report = detail::report_from(r);
    out.p_max = r.x(0);
    out.t_pi = r.x(1) * time_scale;
    out.p_inf = r.x(2);
    out.t_r = r.x(3) * time_scale;
    out.report.params = {{"p_max", "", out.p_max, r.sigma(0)},
                         {"t_pi", "s", out.t_pi, r.sigma(1) * time_scale},
                         {"p_inf", "", out.p_inf, r.sigma(2)},
                         {"t_r", "s", out.t_r, r.sigma(3) * time_scale}};
    if (t_s.back() - t_s.front() < 3.0 * 2.0 * out.t_pi) out.report.flags.push_back("fewer_than_3_periods");
    return out;
}

// --- rate budget -------------------------------------------------------------

struct RateBudget {
    double gamma_1 = 0.0;  // rad/s
    double gamma_r = 0.0;  // rad/s
    double gamma_phi = 0.0; // central value
    double gamma_phi_lo = 0.0;
    double gamma_phi_hi = 0.0;
    double gamma_bath = 0.0;
    double gamma_bath_raw = 0.0; // before clipping
    bool gamma_bath_clipped = false;
    double t1_coupling_limit = 0.0; // 1 / (2 Gamma_A + 2 Gamma_B), s
    std::optional<double> pi_amplitude_ratio;
    double coupling_ratio = 0.0; // Gamma_B / Gamma_A
};

/// Gamma_1 = 1/T1, Gamma_bath = Gamma_1 - 2 Gamma_A - 2 Gamma_B, and
/// Gamma_phi = 2 (Gamma_R - 3 Gamma_1 / 4). The Gamma_phi interval is the
/// worst-case range over the endpoints T1 +- dT1, T_R +- dT_R, clipped at 0.
inline RateBudget rate_budget(double t1, double t_r, double gamma_a, double gamma_b, double sigma_t1 = 0.0,
                              double sigma_t_r = 0.0, std::optional<double> pi_amplitude_ratio = std::nullopt) {
    if (!(t1 > 0.0) || !(t_r > 0.0)) throw std::invalid_argument("rate_budget: lifetimes must be positive");
    if (!(sigma_t1 >= 0.0) || !(sigma_t_r >= 0.0) || sigma_t1 >= t1 || sigma_t_r >= t_r)
        throw std::invalid_argument("rate_budget: uncertainties must be in [0, lifetime)");
    if (!(gamma_a > 0.0) || !(gamma_b > 0.0)) throw std::invalid_argument("rate_budget: couplings must be positive");

    const auto phi_of = [](double t1v, double trv) { return 2.0 * (1.0 / trv - 0.75 / t1v); };
    RateBudget b;
    b.gamma_1 = 1.0 / t1;
    b.gamma_r = 1.0 / t_r;
    b.gamma_phi = phi_of(t1, t_r);
    b.gamma_phi_lo = b.gamma_phi;
    b.gamma_phi_hi = b.gamma_phi;
    for (double t1v : {t1 - sigma_t1, t1 + sigma_t1})
        for (double trv : {t_r - sigma_t_r, t_r + sigma_t_r}) {
            b.gamma_phi_lo = std::min(b.gamma_phi_lo, phi_of(t1v, trv));
            b.gamma_phi_hi = std::max(b.gamma_phi_hi, phi_of(t1v, trv));
        }
    b.gamma_phi_lo = std::max(b.gamma_phi_lo, 0.0);
    b.gamma_phi_hi = std::max(b.gamma_phi_hi, 0.0);
    b.gamma_phi = std::max(b.gamma_phi, 0.0);

    const double coupling = 2.0 * gamma_a + 2.0 * gamma_b;
    b.t1_coupling_limit = 1.0 / coupling;
    b.gamma_bath_raw = b.gamma_1 - coupling;
    const double gamma_1_hi = 1.0 / (t1 - sigma_t1);
    if (b.gamma_bath_raw < 0.0 && gamma_1_hi - coupling >= 0.0) {
        b.gamma_bath = 0.0;
        b.gamma_bath_clipped = true;
    } else {
        b.gamma_bath = b.gamma_bath_raw;
    }
    b.pi_amplitude_ratio = pi_amplitude_ratio;
    b.coupling_ratio = gamma_b / gamma_a;
    return b;
}

// --- PCA population decomposition -------------------------------------------

/// IQ shots recorded at one setting (drive duration, amplitude or delay).
struct IqSetting {
    double key = 0.0;
    std::vector<cplx> samples;
};

struct PopulationTrace {
    std::vector<double> keys;
    std::vector<double> p;
    cplx i_g = 0.0;
    cplx i_e = 0.0;
    cplx axis = 1.0;              // unit principal direction
    double worst_violation = 0.0; // largest excursion of p outside [0, 1]
    double max_off_axis = 0.0;    // largest distance of a mean from the axis, in units of |I_e - I_g|
};

/// Worst-case population error the decomposition tolerates below zero.
inline constexpr double population_slack = 0.15;

/// Projects per-setting IQ means onto their principal axis, anchors I_g at the
/// zero-drive setting and picks I_e as the smallest excursion along the axis
/// for which every population satisfies -0.15 <= p <= 1.
inline PopulationTrace pca_populations(const std::vector<IqSetting>& settings, double zero_drive_key) {
    if (settings.size() < 2) throw std::invalid_argument("pca_populations: need at least 2 settings");
    std::vector<cplx> means;
    std::optional<std::size_t> zero;
    for (std::size_t k = 0; k < settings.size(); ++k) {
        if (settings[k].samples.empty()) throw std::invalid_argument("pca_populations: setting without samples");
        cplx m = 0.0;
        for (cplx z : settings[k].samples) m += z;
        means.push_back(m / static_cast<double>(settings[k].samples.size()));
        if (settings[k].key == zero_drive_key) zero = k;
    }
    if (!zero) throw std::invalid_argument("pca_populations: zero-drive setting not present");

    cplx centroid = 0.0;
    for (cplx m : means) centroid += m;
    centroid /= static_cast<double>(means.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (cplx m : means) {
        const Eigen::Vector2d v(m.real() - centroid.real(), m.imag() - centroid.imag());
        cov += v * v.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    const double total = eig.eigenvalues().sum();
    if (!(total > 0.0) || !(eig.eigenvalues()(1) > 1e-24 * std::norm(centroid)))
        throw FitError("pca_populations: settings are indistinguishable (zero variance)");
    cplx axis(eig.eigenvectors()(0, 1), eig.eigenvectors()(1, 1));
    axis /= std::abs(axis);

    PopulationTrace out;
    out.i_g = means[*zero];
    std::vector<double> x(means.size());
    for (std::size_t k = 0; k < means.size(); ++k) x[k] = (std::conj(axis) * (means[k] - out.i_g)).real();
    // Orient the axis towards the point farthest from the ground anchor.
    const auto far = std::max_element(x.begin(), x.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*far < 0.0) {
        axis = -axis;
        for (double& v : x) v = -v;
    }
    const double x_max = *std::max_element(x.begin(), x.end());
    const double x_min = *std::min_element(x.begin(), x.end());
    const double excursion = std::max(x_max, -x_min / population_slack);
    out.axis = axis;
    out.i_e = out.i_g + excursion * axis;
    for (std::size_t k = 0; k < means.size(); ++k) {
        out.keys.push_back(settings[k].key);
        out.p.push_back(x[k] / excursion);
        out.worst_violation = std::max({out.worst_violation, out.p.back() - 1.0, -out.p.back()});
        const double off = std::abs((std::conj(axis) * (means[k] - out.i_g)).imag());
        out.max_off_axis = std::max(out.max_off_axis, off / excursion);
    }
    return out;
}

} // namespace qrouter
