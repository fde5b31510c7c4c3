#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qrouter/calibration.hpp"
#include "qrouter/estimation.hpp"
#include "qrouter/synth.hpp"

using namespace qrouter;

namespace {

constexpr double pi = std::numbers::pi;

CampaignConfig base_config() {
    CampaignConfig c;
    c.cell.phi_a = -0.06 * pi;
    c.cell.phi_b = 0.05 * pi;
    c.seed = 7;
    return c;
}

double max_abs_diff(const ChannelSpectrum& a, const ChannelSpectrum& b) {
    double worst = 0.0;
    for (Channel c : all_channels)
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.trace(c)[i] - b.trace(c)[i]));
    return worst;
}

double sigma_max(const TwoPort& m) {
    Eigen::JacobiSVD<TwoPort> svd(m);
    return svd.singularValues()(0);
}

} // namespace

TEST(Splitmix, KnownSequenceAndStreamsDiffer) {
    // Reference value of splitmix64 with state 0 after one increment.
    EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
    EXPECT_NE(derive_seed(1, stream::meas_noise, 0), derive_seed(1, stream::hd_noise, 0));
    EXPECT_NE(derive_seed(1, stream::meas_noise, 0), derive_seed(1, stream::meas_noise, 1));
}

TEST(Lines, SameSeedIsIdentical) {
    const LineSpec s;
    const LineNetwork a = gen_lines(s, 3);
    const LineNetwork b = gen_lines(s, 3);
    const LineNetwork c = gen_lines(s, 4);
    const double w = ghz(6.16);
    EXPECT_EQ(a.at(w).s_in_a, b.at(w).s_in_a);
    EXPECT_EQ(a.isolation, b.isolation);
    EXPECT_NE(a.at(w).s_in_a, c.at(w).s_in_a);
}

TEST(Lines, ZeroReflectionGivesPlainAttenuators) {
    LineSpec s;
    s.reflection_bound = 0.0;
    const LineModel l = gen_lines(s, 11).at(ghz(6.17));
    for (const TwoPort* m : {&l.s_in_a, &l.s_out_a, &l.s_in_b, &l.s_out_b}) {
        EXPECT_EQ((*m)(0, 0), cplx(0.0));
        EXPECT_EQ((*m)(1, 1), cplx(0.0));
        EXPECT_EQ((*m)(0, 1), (*m)(1, 0));
    }
}

TEST(Lines, PassiveAcrossTheBand) {
    LineSpec s;
    s.reflection_bound = 0.2;
    s.ripple_db = 0.5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const LineNetwork net = gen_lines(s, seed);
        for (double f : linear_grid(6.0e9, 6.3e9, 31)) {
            const LineModel l = net.at(hz_to_angular(f));
            for (const TwoPort* m : {&l.s_in_a, &l.s_out_a, &l.s_in_b, &l.s_out_b}) EXPECT_LE(sigma_max(*m), 1.0);
        }
    }
}

TEST(Lines, LevelsAndJitter) {
    LineSpec s;
    s.ripple_db = 0.0;
    s.reflection_bound = 0.0;
    s.jitter_db = 1.0;
    const LineModel l = gen_lines(s, 5).at(ghz(6.163));
    const double aa = amplitude_to_db(std::abs(l.s_in_a(1, 0) * l.s_out_a(1, 0)));
    const double bb = amplitude_to_db(std::abs(l.s_in_b(1, 0) * l.s_out_b(1, 0)));
    EXPECT_NEAR(aa, -30.0, 1e-9);
    EXPECT_NEAR(aa - bb, 1.0, 1e-9);
    EXPECT_NEAR(amplitude_to_db(std::abs(l.isolation)), -20.0, 1e-9);
}

TEST(Lines, InvalidSpecsAreRejected) {
    LineSpec s;
    s.reflection_bound = 0.3;
    EXPECT_THROW(gen_lines(s, 0), ConfigError);
    s = {};
    s.isolation_db = -5.0;
    EXPECT_THROW(gen_lines(s, 0), ConfigError);
    s = {};
    s.through_db = 0.0;
    s.ripple_db = 1.0;
    EXPECT_THROW(gen_lines(s, 0), ConfigError);
}

TEST(Spectrum, DeterministicForASeed) {
    const CampaignConfig c = base_config();
    const SyntheticSpectrum a = gen_spectrum(c);
    const SyntheticSpectrum b = gen_spectrum(c);
    EXPECT_EQ(a.meas, b.meas);
    EXPECT_EQ(a.hd, b.hd);
    CampaignConfig d = c;
    d.seed = 8;
    EXPECT_NE(gen_spectrum(d).meas, a.meas);
}

TEST(Spectrum, NoiselessIdealLinesReproduceTheModel) {
    CampaignConfig c = base_config();
    c.noise_sigma = {0, 0, 0, 0};
    c.lines.through_db = 0.0;
    c.lines.jitter_db = 0.0;
    c.lines.ripple_db = 0.0;
    c.lines.reflection_bound = 0.0;
    c.lines.max_delay_s = 0.0;
    c.lines.isolation_db = -80.0; // the cross calibration needs a nonzero reference
    const SyntheticSpectrum s = gen_spectrum(c);
    const LineModel l = s.lines.at(c.cell.omega_ge);
    // Only constant line phases remain; they cancel in the calibrated data.
    const ChannelSpectrum cal = calibrate_responses(s.meas, s.hd);
    for (std::size_t i = 0; i < cal.size(); i += 40) {
        const ChannelSet want = cell_coefficients(s.meas.omega(i), c.cell);
        for (Channel ch : all_channels) EXPECT_LT(std::abs(cal.trace(ch)[i] - want[ch]), 1e-9);
    }
    EXPECT_NEAR(std::abs(l.s_in_a(1, 0)), 1.0, 1e-12);
}

TEST(Spectrum, ResonantLevelsFollowTheLines) {
    CampaignConfig c = base_config();
    c.noise_sigma = {0, 0, 0, 0};
    c.lines.ripple_db = 0.0;
    c.lines.reflection_bound = 0.0;
    const SyntheticSpectrum s = gen_spectrum(c);
    // Off resonance the through channel sits at the line level and the cross
    // channel at line level + isolation.
    EXPECT_NEAR(amplitude_to_db(std::abs(s.meas.trace(Channel::AA).front())), -30.0, 0.1);
    const double cross = amplitude_to_db(std::abs(s.meas.trace(Channel::AB).front()));
    EXPECT_GT(cross, -52.0);
    EXPECT_LT(cross, -48.0);
}

TEST(Spectrum, NoiseScalesWithSigma) {
    CampaignConfig c = base_config();
    CampaignConfig quiet = c;
    quiet.noise_sigma = {0, 0, 0, 0};
    const SyntheticSpectrum ref = gen_spectrum(quiet);
    c.noise_sigma = {1e-3, 1e-3, 1e-3, 1e-3};
    const double d1 = max_abs_diff(gen_spectrum(c).meas, ref.meas);
    c.noise_sigma = {1e-2, 1e-2, 1e-2, 1e-2};
    const double d2 = max_abs_diff(gen_spectrum(c).meas, ref.meas);
    // Same normal draws, scaled by sigma.
    EXPECT_NEAR(d2 / d1, 10.0, 1e-6);
}

TEST(Spectrum, ExactForwardAgreesWithSimplifiedForMatchedLines) {
    CampaignConfig c = base_config();
    c.noise_sigma = {0, 0, 0, 0};
    c.lines.reflection_bound = 0.0;
    const SyntheticSpectrum a = gen_spectrum(c);
    c.forward = Forward::exact;
    const SyntheticSpectrum b = gen_spectrum(c);
    EXPECT_LT(max_abs_diff(a.meas, b.meas), 1e-12);
    EXPECT_LT(max_abs_diff(a.hd, b.hd), 1e-12);
}

TEST(Spectrum, CalibrateAndFitRecoversTruth) {
    const CampaignConfig c = base_config();
    const SyntheticSpectrum s = gen_spectrum(c);
    const ChannelSpectrum cal = calibrate_responses(s.meas, s.hd);
    const FourChannelFit fit = fit_four_channel(cal, initial_guess(cal));
    EXPECT_TRUE(fit.report.converged);
    EXPECT_NEAR(fit.params.gamma_a / c.cell.gamma_a, 1.0, 0.01);
    EXPECT_NEAR(fit.params.gamma_b / c.cell.gamma_b, 1.0, 0.01);
    EXPECT_NEAR(angular_to_hz(fit.params.omega_ge - c.cell.omega_ge), 0.0, 1e4);
    EXPECT_NEAR(fit.params.phi_a, c.cell.phi_a, 0.01 * pi);
    EXPECT_NEAR(fit.params.phi_b, c.cell.phi_b, 0.01 * pi);
}

TEST(Sweeps, BiasSweepMovesTheResonanceAndAddsDephasing) {
    CampaignConfig c = base_config();
    c.bias_ma = {-0.2, 0.0, 0.2};
    const auto pts = gen_bias_sweep(c);
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[0].data.meas.meta.bias_ma, -0.2);
    EXPECT_LT(pts[0].data.truth.cell.omega_ge, pts[1].data.truth.cell.omega_ge);
    EXPECT_NEAR(pts[1].data.truth.cell.gamma_phi, c.gamma_phi_zero, 1e-9);
    EXPECT_GT(pts[2].data.truth.cell.gamma_phi, c.gamma_phi_zero);
    EXPECT_NE(pts[0].data.meas.trace(Channel::AA), pts[2].data.meas.trace(Channel::AA));
}

TEST(Sweeps, TemperatureSweepRaisesDecoherence) {
    CampaignConfig c = base_config();
    c.temperatures_k = {0.05, 0.15};
    const auto pts = gen_temperature_sweep(c);
    EXPECT_GT(pts[1].data.truth.cell.decoherence_rate(), pts[0].data.truth.cell.decoherence_rate());
    EXPECT_EQ(pts[1].data.hd.meta.temperature_k, 0.15);
}

TEST(Sweeps, PowerSweepReproducesTheSaturationCurve) {
    CampaignConfig c = base_config();
    c.cell.phi_a = 0.0;
    c.cell.phi_b = 0.0;
    c.noise_sigma = {0, 0, 0, 0};
    c.grid = {angular_to_hz(c.cell.omega_ge), angular_to_hz(c.cell.omega_ge) + 1e6, 2};
    c.powers_dbm = {-150.0, -140.0, -130.0};
    c.saturation.b = c.cell.gamma_a / (c.cell.gamma_a + c.cell.gamma_b);
    for (const SweepPoint& p : gen_power_sweep(c)) {
        const ChannelSpectrum cal = calibrate_responses(p.data.meas, p.data.hd);
        const double n = photons_at_power(c, p.key);
        EXPECT_NEAR(std::abs(cal.trace(Channel::AA)[0]), saturation_curve(n, c.saturation), 1e-9);
    }
    EXPECT_NEAR(photons_at_power(c, -140.0), 1.0, 1e-12);
}

TEST(Iq, ZeroNoiseCollapsesToTheMixtureMean) {
    IqSpec spec;
    spec.sigma = 0.0;
    spec.shots = 5;
    const std::vector<double> keys{0.0, 1.0};
    const std::vector<double> p{0.0, 0.3};
    const IqClouds clouds = gen_iq_shots(keys, p, spec, 1);
    for (const cplx& z : clouds.through[1].samples)
        EXPECT_LT(std::abs(z - (0.3 * spec.z_e + 0.7 * spec.z_g + spec.dc_through)), 1e-15);
}

TEST(Iq, CrossOffsetIsTenTimesSmaller) {
    IqSpec spec;
    spec.sigma = 0.0;
    spec.shots = 1;
    const std::vector<double> keys{0.0};
    const std::vector<double> p{0.0};
    const IqClouds clouds = gen_iq_shots(keys, p, spec, 1);
    const cplx dc_t = clouds.through[0].samples[0] - spec.z_g;
    const cplx dc_c = clouds.cross[0].samples[0] - spec.z_g;
    EXPECT_NEAR(std::abs(dc_t) / std::abs(dc_c), 10.0, 1e-12);
}

TEST(Iq, PcaRecoversPopulationsWithinSlack) {
    std::vector<double> keys, p;
    for (int k = 0; k <= 60; ++k) {
        keys.push_back(2.0 * k);
        p.push_back(rabi_model(2.0 * k, 1.0, 24.0, 0.5, 150.0));
    }
    IqSpec spec;
    spec.sigma = 0.05;
    const IqClouds clouds = gen_iq_shots(keys, p, spec, 3);
    const PopulationTrace tr = pca_populations(clouds.through, 0.0);
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) worst = std::max(worst, std::abs(tr.p[k] - p[k]));
    EXPECT_LE(worst, population_slack);
}
