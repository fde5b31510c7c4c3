#pragma once

// Raw four-channel spectra -> calibrated cell responses: phase conditioning,
// high-drive (HD) reference normalization, circle fits and the loss budget.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "error.hpp"
#include "lsq.hpp"
#include "model.hpp"
#include "network.hpp"
#include "spectrum.hpp"

namespace qrouter {

/// Standard unwrap: removes jumps larger than pi between adjacent samples.
inline std::vector<double> unwrap(std::span<const double> phase) {
    std::vector<double> out(phase.begin(), phase.end());
    double offset = 0.0;
    for (std::size_t i = 1; i < out.size(); ++i) {
        const double d = phase[i] - phase[i - 1];
        double wrapped = std::remainder(d, 2.0 * std::numbers::pi);
        if (wrapped == -std::numbers::pi && d > 0) wrapped = std::numbers::pi;
        offset += wrapped - d;
        out[i] = phase[i] + offset;
    }
    return out;
}

/// Continuous phase of a trace whose phase may jump by pi (typically the
/// output of a complex square root): the angles are doubled, unwrapped and
/// halved again.
inline std::vector<double> unwrap_halved_phase(std::span<const cplx> trace) {
    std::vector<double> doubled(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) doubled[i] = 2.0 * std::arg(trace[i]);
    std::vector<double> out = unwrap(doubled);
    for (double& x : out) x *= 0.5;
    return out;
}

inline std::size_t nearest_index(std::span<const double> freqs_hz, double omega) {
    if (freqs_hz.empty()) throw std::invalid_argument("nearest_index: empty grid");
    const double f = angular_to_hz(omega);
    std::size_t best = 0;
    for (std::size_t i = 1; i < freqs_hz.size(); ++i)
        if (std::abs(freqs_hz[i] - f) < std::abs(freqs_hz[best] - f)) best = i;
    return best;
}

/// Rotates the whole trace so the sample nearest `omega_res` has zero phase.
inline std::vector<cplx> remove_global_phase(std::span<const cplx> trace, std::span<const double> freqs_hz,
                                             double omega_res) {
    if (trace.empty()) throw std::invalid_argument("remove_global_phase: empty trace");
    if (trace.size() != freqs_hz.size()) throw std::invalid_argument("remove_global_phase: length mismatch");
    const cplx ref = trace[nearest_index(freqs_hz, omega_res)];
    const cplx rot = std::abs(ref) > 0.0 ? std::conj(ref) / std::abs(ref) : cplx(1.0);
    std::vector<cplx> out(trace.begin(), trace.end());
    for (cplx& z : out) z *= rot;
    return out;
}

struct CalibrationOptions {
    double reference_floor = 1e-8;
    bool mask_degenerate = false; // drop offending points instead of throwing
};

struct CalibrationDiagnostics {
    std::vector<double> masked_freqs_hz;
    bool cross_sign_flipped = false;
};

/// Calibrated cell responses from measured and high-drive spectra:
///   t_AA = meas_AA / hd_AA,  t_AB = (meas_AB - hd_AB) sqrt(hd_BA / (hd_AA hd_BB hd_AB)),
/// and symmetrically for BB and BA.
///
/// The square-root factor is made continuous across frequency with
/// unwrap_halved_phase. The BA factor is tied to the AB factor through
/// f_AB f_BA = 1/(hd_AA hd_BB), and the remaining global sign is fixed by the
/// model relation t_cross = sqrt(Gamma_B/Gamma_A) e^{i(phi_B-phi_A)/2} (1 - t_AA),
/// i.e. Re[t_cross conj(1 - t_through)] > 0 whenever |phi_B - phi_A| < pi.
inline ChannelSpectrum calibrate_responses(const ChannelSpectrum& meas, const ChannelSpectrum& hd_in,
                                           const CalibrationOptions& opt = {},
                                           CalibrationDiagnostics* diag = nullptr) {
    validate(meas);
    validate(hd_in);
    if (meas.size() == 0) throw std::invalid_argument("calibrate_responses: empty spectrum");
    const ChannelSpectrum hd = hd_in.freqs_hz == meas.freqs_hz ? hd_in : resample(hd_in, meas.freqs_hz);

    std::vector<std::size_t> keep;
    std::vector<double> bad;
    for (std::size_t i = 0; i < meas.size(); ++i) {
        bool ok = true;
        for (Channel c : all_channels)
            if (!(std::abs(hd.trace(c)[i]) >= opt.reference_floor)) ok = false;
        if (ok)
            keep.push_back(i);
        else
            bad.push_back(meas.freqs_hz[i]);
    }
    if (!bad.empty() && !opt.mask_degenerate) {
        std::ostringstream msg;
        msg << "calibrate_responses: |t_HD| below " << opt.reference_floor << " at " << bad.size()
            << " frequencies:";
        for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 8); ++k) msg << ' ' << bad[k];
        if (bad.size() > 8) msg << " ...";
        throw DegenerateReferenceError(msg.str(), bad);
    }
    if (keep.empty()) throw DegenerateReferenceError("calibrate_responses: every reference point is degenerate", bad);

    std::vector<cplx> root_ab(keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const ChannelSet h = hd.at(keep[k]);
        root_ab[k] = std::sqrt(h[Channel::BA] / (h[Channel::AA] * h[Channel::BB] * h[Channel::AB]));
    }
    const std::vector<double> phase_ab = unwrap_halved_phase(root_ab);

    ChannelSpectrum out;
    out.meta = meas.meta;
    cplx orientation = 0.0;
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const std::size_t i = keep[k];
        const ChannelSet m = meas.at(i);
        const ChannelSet h = hd.at(i);
        const cplx f_ab = std::polar(std::abs(root_ab[k]), phase_ab[k]);
        const cplx f_ba = 1.0 / (h[Channel::AA] * h[Channel::BB] * f_ab);
        ChannelSet t;
        t[Channel::AA] = m[Channel::AA] / h[Channel::AA];
        t[Channel::BB] = m[Channel::BB] / h[Channel::BB];
        t[Channel::AB] = (m[Channel::AB] - h[Channel::AB]) * f_ab;
        t[Channel::BA] = (m[Channel::BA] - h[Channel::BA]) * f_ba;
        orientation += t[Channel::AB] * std::conj(1.0 - t[Channel::AA]) + t[Channel::BA] * std::conj(1.0 - t[Channel::BB]);
        out.push_back(meas.freqs_hz[i], t);
    }
    const bool flip = orientation.real() < 0.0;
    if (flip) {
        for (Channel c : {Channel::AB, Channel::BA})
            for (cplx& z : out.trace(c)) z = -z;
    }
    if (diag) {
        diag->masked_freqs_hz = bad;
        diag->cross_sign_flipped = flip;
    }
    return out;
}

/// Point-wise isolation estimate from a high-drive spectrum.
inline std::vector<cplx> isolation_trace(const ChannelSpectrum& hd) {
    std::vector<cplx> out(hd.size());
    for (std::size_t i = 0; i < hd.size(); ++i) out[i] = isolation_from_hd(hd.at(i));
    return out;
}

struct CircleFitResult {
    double omega_res = 0.0;
    double kappa_loaded = 0.0; // FWHM, rad/s
    double diameter = 0.0;     // 2R / |background|
    cplx background = 0.0;
    cplx center = 0.0;
    double radius = 0.0;
    double arc_span = 0.0; // radians of circle covered by the data
    bool sufficient_arc = false;
    double sigma_omega_res = 0.0;
    double sigma_kappa = 0.0;
};

namespace detail {

// Algebraic (Kasa) circle fit in centered, scaled coordinates.
inline void algebraic_circle(std::span<const cplx> z, cplx& center, double& radius) {
    const std::size_t n = z.size();
    cplx mean = 0.0;
    for (cplx p : z) mean += p;
    mean /= static_cast<double>(n);
    double scale = 0.0;
    for (cplx p : z) scale += std::norm(p - mean);
    scale = std::sqrt(scale / static_cast<double>(n));
    if (!(scale > 0.0)) throw FitError("circle_fit: all points coincide");

    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    for (std::size_t i = 0; i < n; ++i) {
        const cplx u = (z[i] - mean) / scale;
        a(i, 0) = u.real();
        a(i, 1) = u.imag();
        a(i, 2) = 1.0;
        b(i) = -std::norm(u);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(2) < 1e-10 * sv(0)) throw FitError("circle_fit: points are collinear");
    const Eigen::Vector3d coef = svd.solve(b);
    const cplx c(-0.5 * coef(0), -0.5 * coef(1));
    const double r2 = std::norm(c) - coef(2);
    if (!(r2 > 0.0) || std::sqrt(r2) > 1e6) throw FitError("circle_fit: points are (nearly) collinear");
    center = mean + scale * c;
    radius = scale * std::sqrt(r2);
}

} // namespace detail

/// Circle fit of a resonance trace in the complex plane followed by a fit of
/// the angle around the center, theta = theta0 + 2 s atan(2 (omega - omega_r) / kappa).
inline CircleFitResult circle_fit(std::span<const cplx> trace, std::span<const double> freqs_hz) {
    if (trace.size() != freqs_hz.size()) throw std::invalid_argument("circle_fit: length mismatch");
    if (trace.size() < 5) throw std::invalid_argument("circle_fit: need at least 5 points");

    CircleFitResult out;
    detail::algebraic_circle(trace, out.center, out.radius);

    // Geometric refinement of (center, radius).
    {
        const double r0 = out.radius;
        const cplx c0 = out.center;
        lsq::Problem prob;
        prob.residual = [&](const lsq::Vector& x) {
            const cplx c = c0 + r0 * cplx(x(0), x(1));
            lsq::Vector r(trace.size());
            for (std::size_t i = 0; i < trace.size(); ++i) r(i) = (std::abs(trace[i] - c) - r0 * x(2)) / r0;
            return r;
        };
        const lsq::Result fit = lsq::solve(prob, lsq::Vector{{0.0, 0.0, 1.0}});
        if (fit.x.allFinite() && fit.x(2) > 0.0) {
            out.center = c0 + r0 * cplx(fit.x(0), fit.x(1));
            out.radius = r0 * fit.x(2);
        }
    }

    std::vector<double> raw(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) raw[i] = std::arg(trace[i] - out.center);
    const std::vector<double> theta = unwrap(raw);
    const auto [lo, hi] = std::minmax_element(theta.begin(), theta.end());
    out.arc_span = *hi - *lo;
    out.sufficient_arc = out.arc_span >= std::numbers::pi;

    const double sign = theta.back() >= theta.front() ? 1.0 : -1.0;
    std::vector<double> omega(freqs_hz.size());
    for (std::size_t i = 0; i < omega.size(); ++i) omega[i] = hz_to_angular(freqs_hz[i]);

    // Initial guess: steepest angle change marks resonance; the slope there is 4/kappa.
    std::size_t steep = 1;
    double best_slope = 0.0;
    for (std::size_t i = 1; i < theta.size(); ++i) {
        const double slope = std::abs((theta[i] - theta[i - 1]) / (omega[i] - omega[i - 1]));
        if (slope > best_slope) {
            best_slope = slope;
            steep = i;
        }
    }
    if (!(best_slope > 0.0)) throw FitError("circle_fit: angle does not vary with frequency");
    const double w0 = 0.5 * (omega[steep] + omega[steep - 1]);
    const double k0 = std::max(4.0 / best_slope, std::abs(omega[1] - omega[0]));
    const double th0 = 0.5 * (theta[steep] + theta[steep - 1]);

    lsq::Problem prob;
    prob.residual = [&](const lsq::Vector& x) {
        const double wr = w0 + k0 * x(1);
        const double kappa = k0 * x(2);
        lsq::Vector r(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i)
            r(i) = x(0) + 2.0 * sign * std::atan(2.0 * (omega[i] - wr) / kappa) - theta[i];
        return r;
    };
    prob.lower = lsq::Vector{{-1e9, -1e9, 1e-9}};
    const lsq::Result fit = lsq::solve(prob, lsq::Vector{{th0, 0.0, 1.0}});
    if (!fit.x.allFinite()) throw FitError("circle_fit: phase fit failed");

    out.omega_res = w0 + k0 * fit.x(1);
    out.kappa_loaded = k0 * fit.x(2);
    out.sigma_omega_res = k0 * fit.sigma(1);
    out.sigma_kappa = k0 * fit.sigma(2);
    out.background = out.center + std::polar(out.radius, fit.x(0) + sign * std::numbers::pi);
    out.diameter = std::abs(out.background) > 0.0 ? 2.0 * out.radius / std::abs(out.background) : 0.0;
    return out;
}

struct LossBudget {
    double kappa_l_aa = 0.0;
    double kappa_l_bb = 0.0;
    double kappa_l_mean = 0.0;
    double uncertainty = 0.0;
    double kappa_i = 0.0;
    bool over_coupled_warning = false; // kappa_i below -uncertainty
};

/// Balance kappa_L = kappa_i + 2 Gamma_A + 2 Gamma_B applied to the mean of
/// the two loaded widths, with a 10 % band on the mean.
inline LossBudget loss_budget(double kappa_l_aa, double kappa_l_bb, double gamma_a, double gamma_b) {
    if (!(kappa_l_aa > 0.0) || !(kappa_l_bb > 0.0)) throw std::invalid_argument("loss_budget: widths must be positive");
    LossBudget b;
    b.kappa_l_aa = kappa_l_aa;
    b.kappa_l_bb = kappa_l_bb;
    b.kappa_l_mean = 0.5 * (kappa_l_aa + kappa_l_bb);
    b.uncertainty = 0.1 * b.kappa_l_mean;
    b.kappa_i = b.kappa_l_mean - 2.0 * gamma_a - 2.0 * gamma_b;
    b.over_coupled_warning = b.kappa_i < -b.uncertainty;
    return b;
}

inline LossBudget loss_budget(const CircleFitResult& aa, const CircleFitResult& bb, double gamma_a, double gamma_b) {
    return loss_budget(aa.kappa_loaded, bb.kappa_loaded, gamma_a, gamma_b);
}

} // namespace qrouter
