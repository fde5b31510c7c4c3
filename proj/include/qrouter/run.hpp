#pragma once

// Subcommand execution and run persistence.
//
// Every run writes into <out>/runs/<run_id>/ where run_id is
// "<subcommand>-<12 hex>" and the hex digits are a SHA-256 prefix over the
// subcommand, tool version, effective configuration and input digests. The
// same inputs therefore land in the same directory with byte-identical
// artifacts; only run.json carries the wall-clock creation time.
//
// Settings precedence: config file < environment (QROUTER_CONFIG,
// QROUTER_SEED, QROUTER_OUT, QROUTER_FORMAT) < command-line flag.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "calibration.hpp"
#include "config.hpp"
#include "error.hpp"
#include "estimation.hpp"
#include "io.hpp"
#include "model.hpp"
#include "synth.hpp"

namespace qrouter {

inline constexpr const char* tool_version = "0.1.0";

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"simulate",  "synth",      "calibrate",   "fit",    "sweep-bias",
                                                "sweep-temp", "sweep-power", "dressed", "report"};
    return names;
}

// --- digests -------------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError(p.string(), 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- options -------------------------------------------------------------------

struct RunOptions {
    std::string subcommand;
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::vector<std::string> inputs;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> system_env(const char* name) {
    if (const char* v = std::getenv(name); v && *v) return std::string(v);
    return std::nullopt;
}

struct ResolvedRun {
    std::string subcommand;
    RunConfig config;
    ConfigMap ini;
    std::optional<std::string> config_path;
    std::uint64_t seed = 1;
    std::filesystem::path out = ".";
    SpectrumFormat format = SpectrumFormat::csv;
    std::vector<std::string> inputs;
};

inline std::uint64_t parse_seed(const std::string& s, const std::string& origin) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError(origin + ": seed '" + s + "' is not a u64");
    return v;
}

inline ResolvedRun resolve_run(const RunOptions& o, const EnvLookup& env = system_env) {
    ResolvedRun r;
    r.subcommand = o.subcommand;
    if (std::find(subcommands().begin(), subcommands().end(), o.subcommand) == subcommands().end())
        throw ConfigError("unknown subcommand '" + o.subcommand + "'");
    r.config_path = o.config_path ? o.config_path : env("QROUTER_CONFIG");
    if (r.config_path) {
        std::ifstream in(*r.config_path);
        if (!in) throw ConfigError("cannot open config '" + *r.config_path + "'");
        r.ini = parse_ini(in, *r.config_path);
    }
    r.config = run_config_from(r.ini, r.config_path.value_or("<defaults>"));

    if (o.seed) r.seed = *o.seed;
    else if (auto e = env("QROUTER_SEED")) r.seed = parse_seed(*e, "QROUTER_SEED");
    else if (r.config.seed) r.seed = *r.config.seed;
    r.config.campaign.seed = r.seed;

    if (o.out) r.out = *o.out;
    else if (auto e = env("QROUTER_OUT")) r.out = *e;
    else if (r.config.out) r.out = *r.config.out;

    if (o.format) r.format = parse_format(*o.format);
    else if (auto e = env("QROUTER_FORMAT")) r.format = parse_format(*e);
    else if (r.config.format) r.format = *r.config.format;

    r.inputs = o.inputs;
    return r;
}

// --- run record ----------------------------------------------------------------

struct ArtifactDigest {
    std::string path;
    std::string sha256;
};

struct RunRecord {
    std::string run_id;
    std::string subcommand;
    std::string tool_version;
    std::string created_utc;
    nlohmann::json config;
    std::vector<ArtifactDigest> inputs;
    std::vector<ArtifactDigest> outputs;
    std::filesystem::path dir;
    nlohmann::json summary;
};

inline nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json j;
    j["run_id"] = r.run_id;
    j["subcommand"] = r.subcommand;
    j["tool_version"] = r.tool_version;
    j["created_utc"] = r.created_utc;
    j["config"] = r.config;
    for (const auto& [key, list] : {std::pair{"inputs", &r.inputs}, std::pair{"outputs", &r.outputs}}) {
        j[key] = nlohmann::json::array();
        for (const auto& a : *list) j[key].push_back({{"path", a.path}, {"sha256", a.sha256}});
    }
    j["summary"] = r.summary;
    return j;
}

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Configuration snapshot that identifies a run: the file's key/values plus
/// the resolved seed and format.
inline nlohmann::json config_snapshot(const ResolvedRun& r) {
    nlohmann::json j;
    j["ini"] = nlohmann::json::object();
    for (const auto& [k, v] : r.ini) j["ini"][k] = v;
    j["seed"] = r.seed;
    j["format"] = r.format == SpectrumFormat::csv ? "csv" : "s4p";
    return j;
}

inline std::string make_run_id(const std::string& subcommand, const nlohmann::json& config,
                               const std::vector<ArtifactDigest>& inputs) {
    nlohmann::json key{{"subcommand", subcommand}, {"tool_version", tool_version}, {"config", config}};
    key["inputs"] = nlohmann::json::array();
    for (const auto& a : inputs) key["inputs"].push_back(a.sha256);
    return subcommand + "-" + sha256_hex(key.dump()).substr(0, 12);
}

// --- JSON helpers --------------------------------------------------------------

inline nlohmann::json to_json(const FitReport& rep) {
    nlohmann::json j;
    j["params"] = nlohmann::json::array();
    for (const FitParam& p : rep.params) {
        nlohmann::json pj{{"name", p.name}, {"unit", p.unit}, {"value", p.value}, {"sigma", p.sigma}};
        if (p.unit == "rad/s") {
            pj["value_hz"] = angular_to_hz(p.value);
            pj["sigma_hz"] = angular_to_hz(p.sigma);
        }
        j["params"].push_back(pj);
    }
    j["residual_norm"] = rep.residual_norm;
    j["n_iter"] = rep.n_iter;
    j["converged"] = rep.converged;
    if (rep.seed) j["seed"] = *rep.seed;
    j["flags"] = rep.flags;
    return j;
}

inline nlohmann::json cell_json(const CellParams& p) {
    return {{"gamma_a_hz", angular_to_hz(p.gamma_a)},     {"gamma_b_hz", angular_to_hz(p.gamma_b)},
            {"phi_a_pi", p.phi_a / std::numbers::pi},     {"phi_b_pi", p.phi_b / std::numbers::pi},
            {"omega_ge_hz", angular_to_hz(p.omega_ge)},   {"omega_ef_hz", angular_to_hz(p.omega_ef)},
            {"gamma_phi_hz", angular_to_hz(p.gamma_phi)}, {"gamma_bath_hz", angular_to_hz(p.gamma_bath)}};
}

/// Finite doubles as numbers, everything else as null (JSON has no NaN).
inline nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

// --- subcommands -----------------------------------------------------------------

struct Artifact {
    std::string name;
    std::string content;
};

struct RunContext {
    const ResolvedRun& run;
    std::string run_id;
    std::vector<Artifact> artifacts;
    nlohmann::json summary = nlohmann::json::object();

    std::vector<std::string> header() const {
        return {"run_id: " + run_id, std::string("tool: qrouter ") + tool_version, "subcommand: " + run.subcommand};
    }

    void add(std::string name, std::string content) { artifacts.push_back({std::move(name), std::move(content)}); }

    void add_spectrum(const std::string& stem, const ChannelSpectrum& s) {
        std::ostringstream os;
        if (run.format == SpectrumFormat::csv) write_csv(os, s, header());
        else write_s4p(os, s, header());
        add(stem + std::string(format_extension(run.format)), os.str());
    }

    void add_sweep(const std::string& stem, const std::vector<ChannelSpectrum>& sweep) {
        std::ostringstream os;
        write_csv_sweep(os, sweep, header());
        add(stem + ".csv", os.str());
    }

    void add_table(const std::string& name, const Table& t) {
        std::ostringstream os;
        write_table(os, t, header());
        add(name, os.str());
    }

    void add_json(const std::string& name, nlohmann::json j) {
        j["run_id"] = run_id;
        add(name, j.dump(2) + "\n");
    }
};

namespace detail {

inline void require_inputs(const ResolvedRun& r, std::size_t lo, std::size_t hi, const char* usage) {
    if (r.inputs.size() < lo || r.inputs.size() > hi)
        throw ConfigError(r.subcommand + ": expected " + usage + ", got " + std::to_string(r.inputs.size()) + " input(s)");
}

inline ChannelSpectrum load_spectrum(const std::string& path, nlohmann::json& summary) {
    IngestReport rep;
    ChannelSpectrum s = ingest_spectrum(path, format_from_path(path), &rep);
    if (rep.dropped_rows > 0) summary["dropped_rows"][path] = rep.dropped_rows;
    return s;
}

inline std::vector<ChannelSpectrum> load_sweep(const std::string& path, nlohmann::json& summary) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    IngestReport rep;
    auto s = read_csv_sweep(in, path, &rep);
    if (rep.dropped_rows > 0) summary["dropped_rows"][path] = rep.dropped_rows;
    return s;
}

inline std::size_t nearest(const std::vector<double>& freqs_hz, double f) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < freqs_hz.size(); ++i)
        if (std::abs(freqs_hz[i] - f) < std::abs(freqs_hz[best] - f)) best = i;
    return best;
}

/// Fit window for resonant_efficiency: half the summed couplings, where |E|
/// is still well above its off-resonant tail.
inline double efficiency_window_hz(const CellParams& c) { return 0.5 * angular_to_hz(c.gamma_a + c.gamma_b); }

inline void simulate(RunContext& ctx) {
    require_inputs(ctx.run, 0, 0, "no inputs");
    const CampaignConfig& c = ctx.run.config.campaign;
    ChannelSpectrum s;
    Table t{{"freq_hz", "aa_abs", "aa_arg", "bb_abs", "bb_arg", "ab_abs", "ab_arg", "ba_abs", "ba_arg", "e_re", "e_im"}, {}};
    for (double f : c.grid.values()) {
        const ChannelSet k = cell_coefficients(hz_to_angular(f), c.cell);
        s.push_back(f, k);
        std::vector<double> row{f};
        for (Channel ch : all_channels) {
            row.push_back(std::abs(k[ch]));
            row.push_back(std::arg(k[ch]));
        }
        const cplx e = efficiency(hz_to_angular(f) - c.cell.omega_ge, c.cell);
        row.push_back(e.real());
        row.push_back(e.imag());
        t.add(std::move(row));
    }
    ctx.add_spectrum("response", s);
    ctx.add_table("table.csv", t);
    const ChannelSet res = cell_coefficients(c.cell.omega_ge, c.cell);
    ctx.summary["resonant_abs"] = {{"AA", std::abs(res[Channel::AA])},
                                   {"BB", std::abs(res[Channel::BB])},
                                   {"AB", std::abs(res[Channel::AB])},
                                   {"BA", std::abs(res[Channel::BA])}};
}

inline void synth(RunContext& ctx) {
    require_inputs(ctx.run, 0, 0, "no inputs");
    const CampaignConfig& c = ctx.run.config.campaign;
    const SyntheticSpectrum s = gen_spectrum(c);
    ctx.add_spectrum("meas", s.meas);
    ctx.add_spectrum("hd", s.hd);
    nlohmann::json truth{{"cell", cell_json(s.truth.cell)}, {"seed", c.seed}};
    truth["forward"] = c.forward == Forward::exact ? "exact" : "simplified";
    truth["noise_sigma"] = c.noise_sigma;
    ctx.add_json("truth.json", truth);
    ctx.summary["points"] = s.meas.size();
}

inline nlohmann::json circle_json(const CircleFitResult& r) {
    return {{"omega_res_hz", angular_to_hz(r.omega_res)},
            {"kappa_loaded_hz", angular_to_hz(r.kappa_loaded)},
            {"sigma_omega_res_hz", angular_to_hz(r.sigma_omega_res)},
            {"sigma_kappa_hz", angular_to_hz(r.sigma_kappa)},
            {"diameter", r.diameter},
            {"arc_span_rad", r.arc_span},
            {"sufficient_arc", r.sufficient_arc}};
}

inline void calibrate(RunContext& ctx) {
    require_inputs(ctx.run, 2, 2, "<meas> <hd>");
    const ChannelSpectrum meas = load_spectrum(ctx.run.inputs[0], ctx.summary);
    const ChannelSpectrum hd = load_spectrum(ctx.run.inputs[1], ctx.summary);
    CalibrationDiagnostics diag;
    const ChannelSpectrum cal = calibrate_responses(meas, hd, {}, &diag);
    ctx.add_spectrum("calibrated", cal);

    Table iso{{"freq_hz", "re", "im", "abs_db"}, {}};
    const std::vector<cplx> isolation = isolation_trace(hd);
    for (std::size_t i = 0; i < hd.size(); ++i)
        iso.add({hd.freqs_hz[i], isolation[i].real(), isolation[i].imag(), amplitude_to_db(std::abs(isolation[i]))});
    ctx.add_table("isolation.csv", iso);

    const CellParams& cell = ctx.run.config.campaign.cell;
    const CircleFitResult aa = circle_fit(cal.trace(Channel::AA), cal.freqs_hz);
    const CircleFitResult bb = circle_fit(cal.trace(Channel::BB), cal.freqs_hz);
    const LossBudget lb = loss_budget(aa, bb, cell.gamma_a, cell.gamma_b);
    nlohmann::json j{{"circle_aa", circle_json(aa)}, {"circle_bb", circle_json(bb)}};
    j["loss_budget"] = {{"kappa_l_mean_hz", angular_to_hz(lb.kappa_l_mean)},
                        {"kappa_i_hz", angular_to_hz(lb.kappa_i)},
                        {"uncertainty_hz", angular_to_hz(lb.uncertainty)},
                        {"over_coupled_warning", lb.over_coupled_warning},
                        {"gamma_a_hz", angular_to_hz(cell.gamma_a)},
                        {"gamma_b_hz", angular_to_hz(cell.gamma_b)}};
    j["cross_sign_flipped"] = diag.cross_sign_flipped;
    ctx.add_json("calibration.json", j);
    ctx.summary["kappa_i_hz"] = angular_to_hz(lb.kappa_i);
}

inline void fit(RunContext& ctx) {
    require_inputs(ctx.run, 1, 2, "<calibrated> or <meas> <hd>");
    ChannelSpectrum cal;
    std::optional<cplx> e_res;
    if (ctx.run.inputs.size() == 2) {
        const ChannelSpectrum meas = load_spectrum(ctx.run.inputs[0], ctx.summary);
        const ChannelSpectrum hd = load_spectrum(ctx.run.inputs[1], ctx.summary);
        cal = calibrate_responses(meas, hd);
        const CellParams& c = ctx.run.config.campaign.cell;
        e_res = resonant_efficiency(efficiency_trace(meas, hd), meas.freqs_hz, efficiency_window_hz(c)).e;
    } else {
        cal = load_spectrum(ctx.run.inputs[0], ctx.summary);
    }
    const FourChannelFit f = fit_four_channel(cal, initial_guess(cal, ctx.run.config.campaign.cell));
    nlohmann::json j = to_json(f.report);
    j["cell"] = cell_json(f.params);
    if (e_res) {
        j["efficiency_resonant"] = {{"re", e_res->real()}, {"im", e_res->imag()}};
        try {
            const GammaPhiEstimate g = gamma_phi_from_E(*e_res, f.params);
            j["gamma_phi_hz"] = angular_to_hz(g.gamma_phi);
            j["gamma_phi_clamped"] = g.clamped;
        } catch (const std::invalid_argument& e) {
            j["gamma_phi_error"] = e.what();
        }
    }
    ctx.add_json("fit.json", j);

    Table t{{"freq_hz"}, {}};
    for (Channel ch : all_channels)
        for (const char* part : {"_re", "_im", "_model_re", "_model_im"})
            t.columns.push_back(std::string(channel_name(ch)) + part);
    for (std::size_t i = 0; i < cal.size(); ++i) {
        const ChannelSet m = cell_coefficients(cal.omega(i), f.params);
        std::vector<double> row{cal.freqs_hz[i]};
        for (Channel ch : all_channels) {
            row.push_back(cal.trace(ch)[i].real());
            row.push_back(cal.trace(ch)[i].imag());
            row.push_back(m[ch].real());
            row.push_back(m[ch].imag());
        }
        t.add(std::move(row));
    }
    ctx.add_table("fit_curves.csv", t);
    ctx.summary["converged"] = f.report.converged;
    ctx.summary["cell"] = cell_json(f.params);
}

/// Measured (or synthesized) sweep: pairs of raw and high-drive spectra.
struct SweepData {
    std::vector<ChannelSpectrum> meas;
    std::vector<ChannelSpectrum> hd;
};

inline SweepData sweep_data(RunContext& ctx, const std::function<std::vector<SweepPoint>(const CampaignConfig&)>& gen,
                            const char* what) {
    SweepData d;
    if (ctx.run.inputs.empty()) {
        for (SweepPoint& p : gen(ctx.run.config.campaign)) {
            d.meas.push_back(std::move(p.data.meas));
            d.hd.push_back(std::move(p.data.hd));
        }
        if (d.meas.empty()) throw ConfigError(ctx.run.subcommand + ": config defines no " + what + " values");
        ctx.add_sweep("sweep_meas", d.meas);
        ctx.add_sweep("sweep_hd", d.hd);
    } else {
        require_inputs(ctx.run, 2, 2, "no inputs (synthesize) or <meas_sweep.csv> <hd_sweep.csv>");
        d.meas = load_sweep(ctx.run.inputs[0], ctx.summary);
        d.hd = load_sweep(ctx.run.inputs[1], ctx.summary);
        if (d.meas.size() != d.hd.size())
            throw ConfigError(ctx.run.subcommand + ": meas and hd sweeps hold different numbers of points");
    }
    return d;
}

inline void sweep_bias(RunContext& ctx) {
    const CampaignConfig& c = ctx.run.config.campaign;
    const SweepData d = sweep_data(ctx, gen_bias_sweep, "bias");
    Table grid{{"freq_hz", "bias_ma", "e_re", "e_im", "e_abs"}, {}};
    Table ridge{{"bias_ma", "ridge_freq_hz", "model_freq_hz", "e_re", "e_im", "gamma_phi_hz"}, {}};
    std::vector<double> ib, e_re, ib_ok, gphi;
    for (std::size_t k = 0; k < d.meas.size(); ++k) {
        if (!d.meas[k].meta.bias_ma) throw ConfigError("sweep-bias: spectrum without bias_ma");
        const double b = *d.meas[k].meta.bias_ma;
        const std::vector<cplx> e = efficiency_trace(d.meas[k], d.hd[k]);
        for (std::size_t i = 0; i < e.size(); ++i)
            grid.add({d.meas[k].freqs_hz[i], b, e[i].real(), e[i].imag(), std::abs(e[i])});
        const ResonantEfficiency r = resonant_efficiency(e, d.meas[k].freqs_hz, efficiency_window_hz(c.cell));
        double g = std::numeric_limits<double>::quiet_NaN();
        try {
            g = gamma_phi_from_E(r.e, c.cell).gamma_phi;
            ib_ok.push_back(b);
            gphi.push_back(g);
        } catch (const std::invalid_argument&) {
        }
        ib.push_back(b);
        e_re.push_back(r.e.real());
        ridge.add({b, r.freq_hz, angular_to_hz(omega_ge_of_bias(b, c.flux)), r.e.real(), r.e.imag(), angular_to_hz(g)});
    }
    ctx.add_table("e_grid.csv", grid);
    ctx.add_table("ridge.csv", ridge);
    nlohmann::json j;
    if (ib.size() >= 3) {
        const QuadraticFit q = fit_E_polynomial(ib, e_re);
        j["e_polynomial"] = {{"c2", q.c2}, {"c1", q.c1}, {"c0", q.c0}, {"sigma_c2", q.sigma_c2},
                             {"sigma_c1", q.sigma_c1}, {"sigma_c0", q.sigma_c0}};
    }
    if (ib_ok.size() >= 3) {
        const FluxNoiseFit fn = fit_flux_noise(ib_ok, gphi, c.flux);
        j["flux_noise"] = {{"s_i", fn.s_i},
                           {"sigma_s_i", fn.sigma_s_i},
                           {"gamma_phi0_hz", angular_to_hz(fn.gamma_phi_zero)},
                           {"sigma_gamma_phi0_hz", angular_to_hz(fn.sigma_gamma_phi_zero)}};
        ctx.summary["s_i"] = fn.s_i;
        ctx.summary["gamma_phi0_hz"] = angular_to_hz(fn.gamma_phi_zero);
    }
    j["points"] = ib.size();
    j["points_with_gamma_phi"] = ib_ok.size();
    ctx.add_json("sweep_bias.json", j);
}

inline void sweep_temp(RunContext& ctx) {
    const CampaignConfig& c = ctx.run.config.campaign;
    const SweepData d = sweep_data(ctx, gen_temperature_sweep, "temperature");
    Table t{{"temp_k", "n_th", "e_re", "e_im"}, {}};
    std::vector<double> temps, e;
    for (std::size_t k = 0; k < d.meas.size(); ++k) {
        if (!d.meas[k].meta.temperature_k) throw ConfigError("sweep-temp: spectrum without temp_k");
        const double tk = *d.meas[k].meta.temperature_k;
        const ResonantEfficiency r =
            resonant_efficiency(efficiency_trace(d.meas[k], d.hd[k]), d.meas[k].freqs_hz, efficiency_window_hz(c.cell));
        temps.push_back(tk);
        e.push_back(r.e.real());
        t.add({tk, n_thermal(tk, c.cell.omega_ge), r.e.real(), r.e.imag()});
    }
    const ThermalFit f = fit_thermal(temps, e, c.cell.gamma_a, c.cell.gamma_b, c.cell.omega_ge);
    Table model{{"temp_k", "e_model"}, {}};
    for (std::size_t k = 0; k < temps.size(); ++k)
        model.add({temps[k], efficiency_thermal(n_thermal(temps[k], c.cell.omega_ge), c.cell.gamma_a, c.cell.gamma_b, f.coeffs)});
    ctx.add_table("efficiency_vs_temperature.csv", t);
    ctx.add_table("efficiency_model.csv", model);
    nlohmann::json j = to_json(f.report);
    j["gamma1_zero_hz"] = angular_to_hz(f.coeffs.gamma1_zero);
    j["gamma_phi_zero_per_photon_hz"] = angular_to_hz(f.coeffs.gamma_phi_zero_per_photon);
    ctx.add_json("thermal_fit.json", j);
    ctx.summary["gamma1_zero_hz"] = angular_to_hz(f.coeffs.gamma1_zero);
    ctx.summary["gamma_phi_zero_per_photon_hz"] = angular_to_hz(f.coeffs.gamma_phi_zero_per_photon);
}

inline void sweep_power(RunContext& ctx) {
    const CampaignConfig& c = ctx.run.config.campaign;
    const SweepData d = sweep_data(ctx, gen_power_sweep, "power");
    Table t{{"power_dbm", "n_avg", "through_abs", "cross_abs"}, {}};
    std::vector<double> n, through;
    for (std::size_t k = 0; k < d.meas.size(); ++k) {
        if (!d.meas[k].meta.power_dbm) throw ConfigError("sweep-power: spectrum without power_dbm");
        const double p = *d.meas[k].meta.power_dbm;
        const ChannelSpectrum cal = calibrate_responses(d.meas[k], d.hd[k]);
        const std::size_t i = nearest(cal.freqs_hz, angular_to_hz(c.cell.omega_ge));
        const double nn = photons_at_power(c, p);
        n.push_back(nn);
        through.push_back(std::abs(cal.trace(Channel::AA)[i]));
        t.add({p, nn, through.back(), std::abs(cal.trace(Channel::AB)[i])});
    }
    ctx.add_table("saturation.csv", t);
    const SaturationFit f = fit_saturation(n, through);
    nlohmann::json j = to_json(f.report);
    j["a"] = f.params.a;
    j["b"] = f.params.b;
    j["c"] = f.params.c;
    j["d"] = f.params.d;
    ctx.add_json("saturation_fit.json", j);
    ctx.summary["c"] = f.params.c;
}

inline void dressed(RunContext& ctx) {
    require_inputs(ctx.run, 0, 0, "no inputs");
    const DressedSweep& d = ctx.run.config.dressed;
    Table t{{"drive_freq_hz", "photons", "ge_red_hz", "ge_blue_hz", "ef_red_hz", "ef_blue_hz"}, {}};
    for (double n : d.photons)
        for (double f : linear_grid(d.drive_start_hz, d.drive_stop_hz, d.points)) {
            const DressedLines l = dressed_lines(hz_to_angular(f), n, d.model);
            t.add({f, n, angular_to_hz(l.ge.red), angular_to_hz(l.ge.blue), angular_to_hz(l.ef.red),
                   angular_to_hz(l.ef.blue)});
        }
    ctx.add_table("dressed_lines.csv", t);
}

inline std::string format_fixed(double x, int digits) {
    std::array<char, 64> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::fixed, digits);
    return ec == std::errc{} ? std::string(buf.data(), end) : "nan";
}

/// Human-readable summary of a run directory (or its run.json).
inline std::string report_text(const std::filesystem::path& target) {
    const std::filesystem::path dir = std::filesystem::is_directory(target) ? target : target.parent_path();
    const nlohmann::json rec = nlohmann::json::parse(read_file(dir / "run.json"));
    std::ostringstream os;
    os << "run " << rec.value("run_id", "?") << " (" << rec.value("subcommand", "?") << ", qrouter "
       << rec.value("tool_version", "?") << ", " << rec.value("created_utc", "?") << ")\n";
    if (std::filesystem::exists(dir / "fit.json")) {
        const nlohmann::json fit = nlohmann::json::parse(read_file(dir / "fit.json"));
        os << "four-channel fit: " << (fit.value("converged", false) ? "converged" : "NOT converged") << " after "
           << fit.value("n_iter", 0) << " iterations, residual norm " << format_double(fit.value("residual_norm", 0.0))
           << "\n";
        for (const auto& p : fit["params"]) {
            const std::string name = p.value("name", "?");
            os << "  " << name << std::string(name.size() < 10 ? 10 - name.size() : 1, ' ') << "= ";
            if (p.value("unit", "") == "rad/s") {
                const double scale = name == "omega_ge" ? 1e9 : 1e6;
                const char* unit = name == "omega_ge" ? " GHz" : " MHz";
                os << "2pi x " << format_fixed(p.value("value_hz", 0.0) / scale, name == "omega_ge" ? 6 : 4) << " +- "
                   << format_fixed(p.value("sigma_hz", 0.0) / scale, name == "omega_ge" ? 6 : 4) << unit << "\n";
            } else {
                os << format_fixed(p.value("value", 0.0) / std::numbers::pi, 4) << " pi +- "
                   << format_fixed(p.value("sigma", 0.0) / std::numbers::pi, 4) << " pi\n";
            }
        }
        for (const auto& f : fit["flags"]) os << "  flag: " << f.get<std::string>() << "\n";
        if (fit.contains("gamma_phi_hz"))
            os << "  gamma_phi = 2pi x " << format_fixed(fit["gamma_phi_hz"].get<double>() / 1e6, 4) << " MHz\n";
    }
    if (rec.contains("summary") && !rec["summary"].empty()) os << "summary: " << rec["summary"].dump() << "\n";
    os << "outputs:\n";
    for (const auto& o : rec["outputs"]) os << "  " << o.value("path", "?") << "  " << o.value("sha256", "").substr(0, 16) << "\n";
    return os.str();
}

inline void report(RunContext& ctx) {
    require_inputs(ctx.run, 1, 1, "<run directory>");
    const std::string text = report_text(ctx.run.inputs[0]);
    ctx.add("report.txt", text);
    ctx.summary["text"] = text;
}

} // namespace detail

/// Executes a resolved run and persists it. Throws on any failure; nothing
/// is written unless the whole pipeline succeeded.
inline RunRecord run_command(const ResolvedRun& run, std::optional<std::string> created_utc = std::nullopt) {
    RunRecord rec;
    rec.subcommand = run.subcommand;
    rec.tool_version = tool_version;
    rec.created_utc = created_utc ? *created_utc : utc_now();
    rec.config = config_snapshot(run);
    for (const std::string& in : run.inputs) {
        std::filesystem::path p(in);
        // A run directory input (report) is identified by its run.json.
        if (std::filesystem::is_directory(p)) p /= "run.json";
        rec.inputs.push_back({in, sha256_hex(read_file(p))});
    }
    rec.run_id = make_run_id(run.subcommand, rec.config, rec.inputs);

    RunContext ctx{run, rec.run_id, {}, nlohmann::json::object()};
    const std::string& s = run.subcommand;
    if (s == "simulate") detail::simulate(ctx);
    else if (s == "synth") detail::synth(ctx);
    else if (s == "calibrate") detail::calibrate(ctx);
    else if (s == "fit") detail::fit(ctx);
    else if (s == "sweep-bias") detail::sweep_bias(ctx);
    else if (s == "sweep-temp") detail::sweep_temp(ctx);
    else if (s == "sweep-power") detail::sweep_power(ctx);
    else if (s == "dressed") detail::dressed(ctx);
    else if (s == "report") detail::report(ctx);
    else throw ConfigError("unknown subcommand '" + s + "'");

    rec.dir = run.out / "runs" / rec.run_id;
    std::filesystem::create_directories(rec.dir);
    for (const Artifact& a : ctx.artifacts) {
        std::ofstream out(rec.dir / a.name, std::ios::binary);
        out << a.content;
        if (!out) throw std::runtime_error("cannot write " + (rec.dir / a.name).string());
        rec.outputs.push_back({a.name, sha256_hex(a.content)});
    }
    rec.summary = ctx.summary;
    std::ofstream meta(rec.dir / "run.json", std::ios::binary);
    meta << to_json(rec).dump(2) << "\n";
    if (!meta) throw std::runtime_error("cannot write " + (rec.dir / "run.json").string());
    return rec;
}

// --- errors ------------------------------------------------------------------------

/// Exit code and machine-readable summary for an exception escaping a run.
inline std::pair<int, nlohmann::json> error_summary(const std::exception& e) {
    nlohmann::json j;
    int code = 1;
    std::string type = "error";
    if (const auto* p = dynamic_cast<const ConfigError*>(&e)) {
        (void)p;
        code = 2;
        type = "config";
    } else if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
        code = 3;
        type = "parse";
        j["line"] = p->line();
    } else if (const auto* p = dynamic_cast<const DegenerateReferenceError*>(&e)) {
        code = 4;
        type = "degenerate_reference";
        j["offending_freqs_hz"] = p->offending_freqs_hz();
    } else if (const auto* p = dynamic_cast<const SingularNetworkError*>(&e)) {
        code = 4;
        type = "singular_network";
        j["condition_number"] = number_or_null(p->condition_number());
    } else if (const auto* p = dynamic_cast<const DivergenceError*>(&e)) {
        code = 4;
        type = "divergence";
        j["spectral_radius"] = number_or_null(p->spectral_radius());
    } else if (dynamic_cast<const FitError*>(&e)) {
        code = 4;
        type = "fit";
    } else if (dynamic_cast<const std::invalid_argument*>(&e)) {
        code = 2;
        type = "invalid_argument";
    }
    j["type"] = type;
    j["message"] = e.what();
    j["exit_code"] = code;
    return {code, nlohmann::json{{"error", j}}};
}

} // namespace qrouter
