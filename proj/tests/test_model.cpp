#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "qrouter/model.hpp"

using namespace qrouter;

namespace {

CellParams measured_cell() {
    CellParams p;
    p.gamma_a = mhz(1.82);
    p.gamma_b = mhz(2.31);
    return p;
}

} // namespace

TEST(ThroughTransmission, SymmetricCouplingsHalveTransmission) {
    CellParams p;
    p.gamma_a = p.gamma_b = mhz(2.0);
    const cplx t = t_through(Channel::AA, p.omega_ge, p);
    EXPECT_NEAR(t.real(), 0.5, 1e-15);
    EXPECT_NEAR(t.imag(), 0.0, 1e-15);
}

TEST(ThroughTransmission, ResonantDipWithFittedCouplings) {
    const CellParams p = measured_cell();
    const cplx t = t_through(Channel::AA, p.omega_ge, p);
    // 1 - G_A/(G_A+G_B) = 0.559322...
    EXPECT_NEAR(t.real(), 0.559322033898305, 1e-12);
    EXPECT_NEAR(t.imag(), 0.0, 1e-12);
}

TEST(ThroughTransmission, DetunedByTotalWidth) {
    const CellParams p = measured_cell();
    const cplx t = t_through(Channel::AA, p.omega_ge + p.gamma_a + p.gamma_b, p);
    EXPECT_NEAR(t.real(), 0.7796610169491525, 1e-12);
    EXPECT_NEAR(t.imag(), -0.22033898305084748, 1e-12);
    EXPECT_NEAR(std::abs(t), 0.8101978578113301, 1e-12);
}

TEST(ThroughTransmission, RejectsNonFiniteAndInvalid) {
    CellParams p = measured_cell();
    EXPECT_THROW(t_through(Channel::AA, std::numeric_limits<double>::quiet_NaN(), p), std::invalid_argument);
    EXPECT_THROW(t_through(Channel::AB, p.omega_ge, p), std::invalid_argument);
    p.gamma_a = 0.0;
    EXPECT_THROW(t_through(Channel::AA, p.omega_ge, p), std::invalid_argument);
    p = measured_cell();
    p.phi_b = 1.6;
    EXPECT_THROW(t_through(Channel::BB, p.omega_ge, p), std::invalid_argument);
    p = measured_cell();
    p.gamma_phi = -1.0;
    EXPECT_THROW(t_cross(Channel::AB, p.omega_ge, p), std::invalid_argument);
}

TEST(CrossTransmission, PerfectSplitterAndFittedValue) {
    CellParams p;
    p.gamma_a = p.gamma_b = mhz(3.0);
    EXPECT_NEAR(std::abs(t_cross(Channel::AB, p.omega_ge, p)), 0.5, 1e-15);
    const CellParams q = measured_cell();
    EXPECT_NEAR(std::abs(t_cross(Channel::AB, q.omega_ge, q)), 0.49646842426701054, 1e-12);
}

TEST(CrossTransmission, FullyDephasedTransfersNothing) {
    CellParams p = measured_cell();
    double prev = 1.0;
    for (double g : {1e6, 1e8, 1e10, 1e12}) {
        p.gamma_phi = g;
        const double m = std::abs(t_cross(Channel::AB, p.omega_ge, p));
        EXPECT_LT(m, prev);
        prev = m;
    }
    EXPECT_LT(prev, 1e-4);
}

TEST(CrossTransmission, ReciprocalForAnyParameters) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        CellParams p;
        p.gamma_a = mhz(0.1 + 5 * u(rng));
        p.gamma_b = mhz(0.1 + 5 * u(rng));
        p.phi_a = (u(rng) - 0.5) * 3.0;
        p.phi_b = (u(rng) - 0.5) * 3.0;
        p.gamma_phi = mhz(3 * u(rng));
        p.gamma_bath = mhz(3 * u(rng));
        const double w = p.omega_ge + mhz(40 * (u(rng) - 0.5));
        EXPECT_EQ(t_cross(Channel::AB, w, p), t_cross(Channel::BA, w, p));
    }
}

TEST(CellSMatrix, LosslessIsUnitaryOverGrid) {
    const CellParams p = measured_cell();
    const double span = 10.0 * (p.gamma_a + p.gamma_b);
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        const double w = p.omega_ge - span + 2.0 * span * i / 1000.0;
        const PortMatrix<4> s = cell_smatrix(w, p);
        worst = std::max(worst, (s.adjoint() * s - PortMatrix<4>::Identity()).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(CellSMatrix, SymmetricCouplingReflectsHalf) {
    CellParams p;
    p.gamma_a = p.gamma_b = mhz(2.0);
    const PortMatrix<4> s = cell_smatrix(p.omega_ge, p);
    for (int port = 0; port < 4; ++port) EXPECT_NEAR(std::abs(s(port, port)), 0.5, 1e-15);
}

TEST(CellSMatrix, DephasingMakesMatrixContractive) {
    CellParams p = measured_cell();
    p.gamma_phi = mhz(0.5);
    for (double d : {-5.0, -1.0, 0.0, 0.7, 3.0}) {
        const PortMatrix<4> s = cell_smatrix(p.omega_ge + mhz(d), p);
        Eigen::JacobiSVD<PortMatrix<4>> svd(s);
        const auto& sv = svd.singularValues();
        // The emitter couples to a single bright mode; the three orthogonal
        // (dark) combinations pass losslessly and only the bright one loses flux.
        EXPECT_NEAR(sv(0), 1.0, 1e-14);
        EXPECT_NEAR(sv(1), 1.0, 1e-14);
        EXPECT_NEAR(sv(2), 1.0, 1e-14);
        EXPECT_LT(sv(3), 1.0 - 1e-3);
    }
}

TEST(CellSMatrix, RowFluxConservation) {
    const CellParams p = measured_cell();
    for (double d = -30.0; d <= 30.0; d += 0.37) {
        const double w = p.omega_ge + mhz(d);
        for (Channel c : {Channel::AA, Channel::BB}) {
            const double sum = std::norm(t_through(c, w, p)) + std::norm(reflection(c, w, p)) +
                               2.0 * std::norm(t_cross(Channel::AB, w, p));
            EXPECT_NEAR(sum, 1.0, 1e-13);
        }
    }
}

TEST(CellSMatrix, ResonantExtremum) {
    const CellParams p = measured_cell();
    const double t0 = std::abs(t_through(Channel::AA, p.omega_ge, p));
    const double x0 = std::abs(t_cross(Channel::AB, p.omega_ge, p));
    for (double d = -20.0; d <= 20.0; d += 0.1) {
        if (std::abs(d) < 1e-9) continue;
        const double w = p.omega_ge + mhz(d);
        EXPECT_GT(std::abs(t_through(Channel::AA, w, p)), t0);
        EXPECT_LT(std::abs(t_cross(Channel::AB, w, p)), x0);
    }
}

TEST(Efficiency, ResonantLimits) {
    CellParams p = measured_cell();
    EXPECT_NEAR(efficiency(0.0, p).real(), 1.0, 1e-15);
    p.gamma_a = p.gamma_b = p.gamma_phi = mhz(2.0);
    EXPECT_NEAR(efficiency(0.0, p).real(), 0.25, 1e-15);
    EXPECT_NEAR(efficiency(0.0, p).imag(), 0.0, 1e-15);
}

TEST(Efficiency, ImpliedDephasingForMeasuredValue) {
    // Gamma_phi = 2pi*0.21252 MHz gives E = 0.82 for the fitted couplings.
    CellParams p = measured_cell();
    p.gamma_phi = mhz(0.2125201800931881);
    EXPECT_NEAR(efficiency(0.0, p).real(), 0.82, 1e-12);
}

TEST(Efficiency, ClosedFormMatchesGeneralExpressionAndDecreases) {
    CellParams p = measured_cell();
    double prev = 2.0;
    for (double g = 0.0; g <= 20.0; g += 0.25) {
        p.gamma_phi = mhz(g);
        const cplx e = efficiency(0.0, p);
        const double closed = efficiency_resonant(p.gamma_phi, p.gamma_a, p.gamma_b);
        EXPECT_NEAR(e.real(), closed, 1e-12);
        EXPECT_NEAR(e.imag(), 0.0, 1e-12);
        EXPECT_LT(closed, prev);
        prev = closed;
    }
}

TEST(Efficiency, EqualsCoefficientRatio) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 300; ++k) {
        CellParams p;
        p.gamma_a = mhz(0.2 + 4 * u(rng));
        p.gamma_b = mhz(0.2 + 4 * u(rng));
        p.phi_a = (u(rng) - 0.5) * 0.6;
        p.phi_b = (u(rng) - 0.5) * 0.6;
        p.gamma_phi = mhz(2 * u(rng));
        p.gamma_bath = mhz(u(rng));
        const double delta = mhz(20 * (u(rng) - 0.5));
        const double w = p.omega_ge + delta;
        const cplx ratio = t_cross(Channel::AB, w, p) * t_cross(Channel::BA, w, p) /
                           (t_through(Channel::AA, w, p) * t_through(Channel::BB, w, p));
        const cplx e = efficiency(delta, p);
        EXPECT_LT(std::abs(e - ratio), 1e-12 * std::max(1.0, std::abs(ratio)));
    }
}

TEST(Efficiency, ZeroCouplingIsRejected) {
    EXPECT_THROW(efficiency_resonant(0.1, 0.0, 1.0), std::invalid_argument);
    CellParams p = measured_cell();
    p.gamma_b = 0.0;
    EXPECT_THROW(efficiency(0.0, p), std::invalid_argument);
}

TEST(FluxModel, PolynomialEvaluation) {
    const FluxModel f;
    EXPECT_DOUBLE_EQ(omega_ge_of_bias(0.0, f), ghz(6.163));
    EXPECT_NEAR(angular_to_hz(omega_ge_of_bias(0.5, f)), 6.075e9, 1e-3);
    FluxModel flat;
    flat.curvature = 0.0;
    for (double ib : {-1.0, 0.3, 2.0}) EXPECT_DOUBLE_EQ(omega_ge_of_bias(ib, flat), flat.sweet_spot_omega);
}

TEST(Thermal, BoseEinsteinOccupation) {
    const double w = ghz(6.163);
    EXPECT_EQ(n_thermal(1e-4, w), 0.0);
    EXPECT_NEAR(n_thermal(0.06, w), 0.00728187410496688, 1e-9);
    EXPECT_NEAR(n_thermal(0.10, w), 0.05477935431577193, 1e-9);
    EXPECT_THROW(n_thermal(0.0, w), std::invalid_argument);
    EXPECT_THROW(n_thermal(-1.0, w), std::invalid_argument);
}

TEST(Thermal, EfficiencyAtZeroTemperatureAndMonotonicity) {
    const ThermalCoefficients tc{mhz(0.26), mhz(10.38)};
    EXPECT_NEAR(efficiency_thermal(0.0, mhz(1.81), mhz(2.32), tc), 0.8834841152956027, 1e-12);
    const ThermalCoefficients none{0.0, 0.0};
    for (double n : {0.0, 0.3, 1.0, 5.0}) EXPECT_DOUBLE_EQ(efficiency_thermal(n, mhz(1.81), mhz(2.32), none), 1.0);
    double prev = 2.0;
    for (double n = 0.0; n <= 1.0; n += 0.01) {
        const double e = efficiency_thermal(n, mhz(1.81), mhz(2.32), tc);
        EXPECT_LT(e, prev);
        prev = e;
    }
    EXPECT_THROW(efficiency_thermal(0.1, 0.0, 1.0, tc), std::invalid_argument);
}

TEST(Thermal, SubstitutionMatchesCellEfficiency) {
    const ThermalCoefficients tc{mhz(0.26), mhz(10.38)};
    CellParams p;
    p.gamma_a = mhz(1.81);
    p.gamma_b = mhz(2.32);
    for (double n : {0.0, 0.05, 0.4}) {
        p.gamma_bath = thermal_gamma_bath(n, tc);
        p.gamma_phi = thermal_gamma_phi(n, tc);
        EXPECT_NEAR(efficiency(0.0, p).real(), efficiency_thermal(n, p.gamma_a, p.gamma_b, tc), 1e-13);
    }
}

TEST(PhotonNumber, PulseConversion) {
    const double w = ghz(6.163);
    EXPECT_EQ(photons_in_pulse(0.0, 50.0, 2e-6, w), 0.0);
    EXPECT_NEAR(photons_in_pulse(1e-6, 50.0, 2e-6, w), 4897.582932230607, 1e-6);
    EXPECT_NEAR(photons_in_pulse(2e-6, 50.0, 2e-6, w) / photons_in_pulse(1e-6, 50.0, 2e-6, w), 4.0, 1e-12);
    EXPECT_THROW(photons_in_pulse(1e-6, 0.0, 2e-6, w), std::invalid_argument);
    EXPECT_THROW(photons_in_pulse(-1e-6, 50.0, 2e-6, w), std::invalid_argument);
}

TEST(Saturation, Asymptotes) {
    const SaturationParams s{1.0, 0.44, 1.0, 3.0};
    EXPECT_DOUBLE_EQ(saturation_curve(0.0, s), 0.56);
    EXPECT_NEAR(saturation_curve(1e12, s), 1.0, 1e-11);
    EXPECT_DOUBLE_EQ(saturation_curve(3.0, s), 1.0 - 0.22);
}

TEST(Dressed, BareLinesWithoutPhotons) {
    const DressedModel m;
    const DressedLines l = dressed_lines(m.omega_ge, 0.0, m);
    EXPECT_EQ(l.ge.red, m.omega_ge);
    EXPECT_EQ(l.ge.blue, m.omega_ge);
    EXPECT_EQ(l.ef.red, m.omega_ef);
    EXPECT_EQ(l.ef.blue, m.omega_ef);
}

TEST(Dressed, ResonantShifts) {
    const DressedModel m;
    const DressedLines l = dressed_lines(m.omega_ge, 100.0, m);
    EXPECT_NEAR(l.ef.red - m.omega_ef, -mhz(8.1), 1e-9 * mhz(8.1));
    EXPECT_NEAR(l.ef.blue - m.omega_ef, mhz(3.9), 1e-9 * mhz(3.9));
    EXPECT_NEAR(l.ge.red - m.omega_ge, -mhz(8.1), 1e-9 * mhz(8.1));
}

TEST(Dressed, EvenInDetuningAndMonotoneInN) {
    const DressedModel m;
    for (double d : {0.3, 2.0, 7.5}) {
        const DressedLines up = dressed_lines(m.omega_ge + mhz(d), 50.0, m);
        const DressedLines dn = dressed_lines(m.omega_ge - mhz(d), 50.0, m);
        EXPECT_DOUBLE_EQ(up.ef.red, dn.ef.red);
        EXPECT_DOUBLE_EQ(up.ef.blue, dn.ef.blue);
    }
    double prev_red = m.omega_ef + 1.0, prev_blue = m.omega_ef - 1.0;
    for (double n = 0.0; n <= 400.0; n += 10.0) {
        const DressedLines l = dressed_lines(m.omega_ge + mhz(1.0), n, m);
        EXPECT_LT(l.ef.red, prev_red);
        EXPECT_GT(l.ef.blue, prev_blue);
        prev_red = l.ef.red;
        prev_blue = l.ef.blue;
    }
    EXPECT_THROW(dressed_lines(m.omega_ge, -1.0, m), std::invalid_argument);
}
