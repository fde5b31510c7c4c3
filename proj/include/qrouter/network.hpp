#pragma once

// Multiport S-matrix algebra: embedding the four-port cell between input
// lines (S_A, S_B) and output lines (G_A, G_B), exactly and by Neumann
// truncation, plus the reflection-free shortcut used for calibration.

#include <cmath>
#include <complex>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "error.hpp"
#include "model.hpp"

namespace qrouter {

/// Two-port line matrix [[S11, S12], [S21, S22]]; port 1 faces the instrument
/// for input lines and the cell for output lines.
using TwoPort = PortMatrix<2>;

inline TwoPort ideal_line() { return TwoPort{{0.0, 1.0}, {1.0, 0.0}}; }

inline TwoPort attenuator(cplx transmission, cplx reflection = 0.0) {
    return TwoPort{{reflection, transmission}, {transmission, reflection}};
}

/// Measurement lines at one frequency plus the additive isolation between
/// the waveguides.
struct LineModel {
    TwoPort s_in_a = ideal_line();
    TwoPort s_out_a = ideal_line();
    TwoPort s_in_b = ideal_line();
    TwoPort s_out_b = ideal_line();
    cplx isolation = 0.0;
};

/// Largest singular value; <= 1 for a passive network.
template <typename Derived>
double max_singular_value(const Eigen::MatrixBase<Derived>& m) {
    Eigen::JacobiSVD<Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic>> svd(m);
    return svd.singularValues()(0);
}

template <typename Derived>
bool is_passive(const Eigen::MatrixBase<Derived>& m, double tol = 1e-12) {
    return max_singular_value(m) <= 1.0 + tol;
}

template <typename Derived>
double max_abs_entry(const Eigen::MatrixBase<Derived>& m) {
    return m.cwiseAbs().maxCoeff();
}

struct CompositionResult {
    PortMatrix<4> s_meas = PortMatrix<4>::Zero();
    std::optional<int> order; // nullopt for the exact composition
    double truncation_error = 0.0;
    bool regularized = false; // a singular cell was shifted by eps * I
    double condition_number = 1.0;
};

/// Reorders natural waves (a_A, a_GA, a_B, a_GB) into (a_ext, a_int) with
/// a_ext = (a_1A, a_2GA, a_1B, a_2GB) and a_int = (a_2A, a_1GA, a_2B, a_1GB).
inline PortMatrix<8> permutation_matrix() {
    PortMatrix<8> p = PortMatrix<8>::Zero();
    constexpr int source[8] = {0, 3, 4, 7, 1, 2, 5, 6};
    for (int row = 0; row < 8; ++row) p(row, source[row]) = 1.0;
    return p;
}

struct ComplementaryBlocks {
    PortMatrix<4> s11;
    PortMatrix<4> s12;
    PortMatrix<4> s21;
    PortMatrix<4> s22;
};

/// Block-diagonal line matrix in natural order, diag(S_A, G_A, S_B, G_B).
inline PortMatrix<8> natural_block_diagonal(const LineModel& lines) {
    PortMatrix<8> m = PortMatrix<8>::Zero();
    m.block<2, 2>(0, 0) = lines.s_in_a;
    m.block<2, 2>(2, 2) = lines.s_out_a;
    m.block<2, 2>(4, 4) = lines.s_in_b;
    m.block<2, 2>(6, 6) = lines.s_out_b;
    return m;
}

/// The four diagonal blocks of P diag(S_A, G_A, S_B, G_B) P^T, written out
/// entry by entry. Input lines face the instrument with port 1 and output
/// lines face it with port 2, so the G entries appear with swapped indices.
inline ComplementaryBlocks complementary_blocks(const LineModel& l) {
    ComplementaryBlocks b;
    b.s11 = PortMatrix<4>::Zero();
    b.s12 = PortMatrix<4>::Zero();
    b.s21 = PortMatrix<4>::Zero();
    b.s22 = PortMatrix<4>::Zero();
    const TwoPort* elems[4] = {&l.s_in_a, &l.s_out_a, &l.s_in_b, &l.s_out_b};
    for (int k = 0; k < 4; ++k) {
        const TwoPort& e = *elems[k];
        // External port index: 0 for input lines, 1 for output lines.
        const int ext = (k % 2 == 0) ? 0 : 1;
        const int in = 1 - ext;
        b.s11(k, k) = e(ext, ext);
        b.s12(k, k) = e(ext, in);
        b.s21(k, k) = e(in, ext);
        b.s22(k, k) = e(in, in);
    }
    return b;
}

namespace detail {

inline double condition_number(const PortMatrix<4>& m) {
    Eigen::JacobiSVD<PortMatrix<4>> svd(m);
    const auto& sv = svd.singularValues();
    if (sv(3) == 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / sv(3);
}

inline double spectral_radius(const PortMatrix<4>& m) {
    Eigen::ComplexEigenSolver<PortMatrix<4>> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double singular_cell_eps = 1e-12;
inline constexpr double max_condition = 1e12;

} // namespace detail

/// S_meas = S11 + S12 (S^-1 - S22)^-1 S21.
///
/// A singular cell (e.g. a perfect absorber) is shifted by 1e-12 * I before
/// inversion and the result is flagged as regularized.
inline CompositionResult compose_exact(const PortMatrix<4>& cell, const LineModel& lines) {
    if (!cell.allFinite()) throw std::invalid_argument("compose_exact: non-finite cell matrix");
    const ComplementaryBlocks b = complementary_blocks(lines);
    CompositionResult out;

    PortMatrix<4> s = cell;
    if (!(detail::condition_number(s) < detail::max_condition)) {
        s += detail::singular_cell_eps * PortMatrix<4>::Identity();
        out.regularized = true;
    }
    const PortMatrix<4> inner = s.inverse() - b.s22;
    out.condition_number = detail::condition_number(inner);
    if (!(out.condition_number < detail::max_condition)) {
        std::ostringstream msg;
        msg << "compose_exact: (S^-1 - S22) is singular (condition number " << out.condition_number << ")";
        throw SingularNetworkError(msg.str(), out.condition_number);
    }
    out.s_meas = b.s11 + b.s12 * inner.partialPivLu().solve(b.s21);
    return out;
}

/// Truncated internal-reflection expansion
///   S_meas(k) = S11 + S12 S sum_{j<k} (S22 S)^j S21,
/// so order 0 is S11 and order 1 is the single-pass S11 + S12 S S21. The
/// recorded truncation error is the largest entry of |exact - truncated|.
inline CompositionResult compose_neumann(const PortMatrix<4>& cell, const LineModel& lines, int order) {
    if (order < 0) throw std::invalid_argument("compose_neumann: order must be >= 0");
    const ComplementaryBlocks b = complementary_blocks(lines);
    const PortMatrix<4> loop = b.s22 * cell;
    const double rho = detail::spectral_radius(loop);
    if (!(rho < 1.0)) {
        std::ostringstream msg;
        msg << "compose_neumann: internal reflection series diverges (spectral radius " << rho << ")";
        throw DivergenceError(msg.str(), rho);
    }

    PortMatrix<4> sum = PortMatrix<4>::Zero();
    PortMatrix<4> term = PortMatrix<4>::Identity();
    for (int j = 0; j < order; ++j) {
        sum += term;
        term = loop * term;
    }

    CompositionResult out;
    out.order = order;
    out.s_meas = b.s11 + b.s12 * cell * sum * b.s21;
    // Exact reference via the form that needs no cell inverse.
    const PortMatrix<4> exact =
        b.s11 + b.s12 * cell * (PortMatrix<4>::Identity() - loop).partialPivLu().solve(b.s21);
    out.truncation_error = max_abs_entry(exact - out.s_meas);
    out.condition_number = 1.0 / (1.0 - rho);
    return out;
}

/// Extract the four channel coefficients from an external 4x4 matrix in
/// (A-in, A-out, B-in, B-out) order.
inline ChannelSet channels_of(const PortMatrix<4>& s) {
    ChannelSet c;
    c[Channel::AA] = s(a_out, a_in);
    c[Channel::BB] = s(b_out, b_in);
    c[Channel::AB] = s(b_out, a_in);
    c[Channel::BA] = s(a_out, b_in);
    return c;
}

/// Reflection-free measurement model with additive isolation:
///   AA: S_A21 t_AA G_A21,  AB: S_A21 (t_AB + I) G_B21, and symmetric.
inline ChannelSet simplified_forward(const ChannelSet& cell, const LineModel& l) {
    const cplx sa = l.s_in_a(1, 0);
    const cplx sb = l.s_in_b(1, 0);
    const cplx ga = l.s_out_a(1, 0);
    const cplx gb = l.s_out_b(1, 0);
    ChannelSet m;
    m[Channel::AA] = sa * cell[Channel::AA] * ga;
    m[Channel::BB] = sb * cell[Channel::BB] * gb;
    m[Channel::AB] = sa * (cell[Channel::AB] + l.isolation) * gb;
    m[Channel::BA] = sb * (cell[Channel::BA] + l.isolation) * ga;
    return m;
}

/// Isolation from the high-drive references, sqrt(t_AB t_BA / (t_AA t_BB)),
/// principal branch.
inline cplx isolation_from_hd(const ChannelSet& hd) {
    const cplx through = hd[Channel::AA] * hd[Channel::BB];
    if (std::abs(hd[Channel::AA]) == 0.0 || std::abs(hd[Channel::BB]) == 0.0 || !std::isfinite(std::abs(through)))
        throw std::invalid_argument("isolation_from_hd: through references must be nonzero");
    return std::sqrt(hd[Channel::AB] * hd[Channel::BA] / through);
}

} // namespace qrouter
