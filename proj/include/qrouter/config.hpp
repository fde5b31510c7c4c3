#pragma once

// INI run configuration. Sections and keys (rates and frequencies in Hz,
// converted to angular internally; bias in mA; temperatures in K):
//
//   [run]     seed, out, format (csv|s4p), forward (simplified|exact)
//   [cell]    gamma_a_hz, gamma_b_hz, phi_a_pi, phi_b_pi, omega_ge_hz,
//             omega_ef_hz, gamma_phi_hz, gamma_bath_hz
//   [flux]    curvature_hz_per_ma2, linear_hz_per_ma, sweet_spot_hz
//   [lines]   through_db, jitter_db, max_delay_s, ripple_db,
//             reflection_bound, isolation_db, reference_hz
//   [noise]   sigma, sigma_aa, sigma_bb, sigma_ab, sigma_ba
//   [grid]    start_hz, stop_hz, points
//   [bias]    values_ma | start_ma stop_ma points, s_i, gamma_phi0_hz
//   [thermal] temperatures_k, gamma1_zero_hz, gamma_phi_zero_per_photon_hz
//   [power]   values_dbm | start_dbm stop_dbm points, a, b, c, d,
//             reference_dbm, reference_photons
//   [dressed] lambda_red_hz, lambda_blue_hz, photons, drive_start_hz,
//             drive_stop_hz, points
//
// Lists are whitespace or comma separated. Unknown sections or keys are an
// error.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "error.hpp"
#include "io.hpp"
#include "model.hpp"
#include "synth.hpp"

namespace qrouter {

struct DressedSweep {
    DressedModel model;
    std::vector<double> photons{0.0, 25.0, 50.0, 100.0};
    double drive_start_hz = 6.10e9;
    double drive_stop_hz = 6.22e9;
    std::size_t points = 241;
};

struct RunConfig {
    CampaignConfig campaign;
    DressedSweep dressed;
    std::optional<std::uint64_t> seed; // only when set in the file
    std::optional<std::string> out;
    std::optional<SpectrumFormat> format;
};

/// Flat "section.key" -> value map of an INI text.
using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string strip_inline_comments(std::istream& is) {
    std::ostringstream out;
    std::string line;
    while (std::getline(is, line)) {
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (!quoted && (line[i] == '#' || line[i] == ';')) {
                line.resize(i);
                break;
            }
        }
        out << line << '\n';
    }
    return out.str();
}

} // namespace detail

inline ConfigMap parse_ini(std::istream& is, const std::string& source = "<config>") {
    std::istringstream clean(detail::strip_inline_comments(is));
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(clean);
    } catch (const CLI::Error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    ConfigMap out;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        std::string key;
        for (const auto& p : item.parents)
            if (p != "default") key += p + ".";
        key += item.name;
        std::string value;
        for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? " " : "") + item.inputs[k];
        if (!out.emplace(key, value).second) throw ConfigError(source + ": duplicate key '" + key + "'");
    }
    return out;
}

namespace detail {

/// Consumes keys from a ConfigMap; whatever is left over is unknown.
class KeyReader {
public:
    explicit KeyReader(ConfigMap m, std::string source) : map_(std::move(m)), source_(std::move(source)) {}

    std::optional<std::string> text(const std::string& key) {
        const auto it = map_.find(key);
        if (it == map_.end()) return std::nullopt;
        std::string v = it->second;
        map_.erase(it);
        return v;
    }

    void number(const std::string& key, double& target, double scale = 1.0) {
        if (auto v = text(key)) target = parse_number(key, *v) * scale;
    }

    void count(const std::string& key, std::size_t& target) {
        if (auto v = text(key)) {
            const double x = parse_number(key, *v);
            if (!(x >= 0.0) || x != std::floor(x)) throw ConfigError(source_ + ": " + key + " must be a whole number");
            target = static_cast<std::size_t>(x);
        }
    }

    std::optional<std::vector<double>> list(const std::string& key) {
        auto v = text(key);
        if (!v) return std::nullopt;
        for (char& c : *v)
            if (c == ',' || c == '[' || c == ']') c = ' ';
        std::vector<double> out;
        for (std::string_view tok : split_ws(*v)) out.push_back(parse_number(key, tok));
        return out;
    }

    /// `<prefix>values<suffix>` or a `start/stop/points` triple.
    std::optional<std::vector<double>> range(const std::string& section, const std::string& unit) {
        auto values = list(section + ".values_" + unit);
        auto start = text(section + ".start_" + unit);
        auto stop = text(section + ".stop_" + unit);
        auto points = text(section + ".points");
        if (values && (start || stop || points))
            throw ConfigError(source_ + ": [" + section + "] give either values_" + unit + " or start/stop/points");
        if (values) return values;
        if (!start && !stop && !points) return std::nullopt;
        if (!start || !stop || !points)
            throw ConfigError(source_ + ": [" + section + "] start_" + unit + ", stop_" + unit + " and points go together");
        const double a = parse_number(section + ".start_" + unit, *start);
        const double b = parse_number(section + ".stop_" + unit, *stop);
        const double n = parse_number(section + ".points", *points);
        if (n < 1 || n != std::floor(n)) throw ConfigError(source_ + ": " + section + ".points must be >= 1");
        std::vector<double> out;
        const auto count = static_cast<std::size_t>(n);
        for (std::size_t k = 0; k < count; ++k)
            out.push_back(count == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1));
        return out;
    }

    void finish() const {
        if (map_.empty()) return;
        std::string keys;
        for (const auto& [k, v] : map_) keys += (keys.empty() ? "" : ", ") + k;
        throw ConfigError(source_ + ": unknown key(s): " + keys);
    }

private:
    double parse_number(const std::string& key, std::string_view v) const {
        const auto x = to_double(v);
        if (!x || !std::isfinite(*x)) throw ConfigError(source_ + ": " + key + " = '" + std::string(v) + "' is not a number");
        return *x;
    }

    ConfigMap map_;
    std::string source_;
};

} // namespace detail

/// Applies a parsed INI on top of the defaults. Throws ConfigError on unknown
/// keys or bad values.
inline RunConfig run_config_from(const ConfigMap& map, const std::string& source = "<config>") {
    RunConfig rc;
    CampaignConfig& c = rc.campaign;
    detail::KeyReader r(map, source);
    const double hz = constants::two_pi;
    const double pi = std::numbers::pi;

    if (auto v = r.text("run.seed")) {
        const auto x = detail::to_double(*v);
        if (!x || *x < 0 || *x != std::floor(*x) || *x > 1.8e19) throw ConfigError(source + ": run.seed must be a u64");
        rc.seed = std::stoull(*v);
    }
    rc.out = r.text("run.out");
    if (auto v = r.text("run.format")) rc.format = parse_format(*v);
    if (auto v = r.text("run.forward")) {
        if (*v == "simplified") c.forward = Forward::simplified;
        else if (*v == "exact") c.forward = Forward::exact;
        else throw ConfigError(source + ": run.forward must be simplified or exact");
    }

    r.number("cell.gamma_a_hz", c.cell.gamma_a, hz);
    r.number("cell.gamma_b_hz", c.cell.gamma_b, hz);
    r.number("cell.phi_a_pi", c.cell.phi_a, pi);
    r.number("cell.phi_b_pi", c.cell.phi_b, pi);
    r.number("cell.omega_ge_hz", c.cell.omega_ge, hz);
    r.number("cell.omega_ef_hz", c.cell.omega_ef, hz);
    r.number("cell.gamma_phi_hz", c.cell.gamma_phi, hz);
    r.number("cell.gamma_bath_hz", c.cell.gamma_bath, hz);

    c.flux.sweet_spot_omega = c.cell.omega_ge;
    r.number("flux.curvature_hz_per_ma2", c.flux.curvature, hz);
    r.number("flux.linear_hz_per_ma", c.flux.linear, hz);
    r.number("flux.sweet_spot_hz", c.flux.sweet_spot_omega, hz);

    c.lines.reference_hz = angular_to_hz(c.cell.omega_ge);
    r.number("lines.through_db", c.lines.through_db);
    r.number("lines.jitter_db", c.lines.jitter_db);
    r.number("lines.max_delay_s", c.lines.max_delay_s);
    r.number("lines.ripple_db", c.lines.ripple_db);
    r.number("lines.reflection_bound", c.lines.reflection_bound);
    r.number("lines.isolation_db", c.lines.isolation_db);
    r.number("lines.reference_hz", c.lines.reference_hz);

    if (auto v = r.list("noise.sigma")) {
        if (v->size() != 1) throw ConfigError(source + ": noise.sigma takes one value");
        c.noise_sigma.fill(v->front());
    }
    r.number("noise.sigma_aa", c.noise_sigma[0]);
    r.number("noise.sigma_bb", c.noise_sigma[1]);
    r.number("noise.sigma_ab", c.noise_sigma[2]);
    r.number("noise.sigma_ba", c.noise_sigma[3]);

    const double f0 = angular_to_hz(c.cell.omega_ge);
    c.grid.start_hz = f0 - 20e6;
    c.grid.stop_hz = f0 + 20e6;
    r.number("grid.start_hz", c.grid.start_hz);
    r.number("grid.stop_hz", c.grid.stop_hz);
    r.count("grid.points", c.grid.points);

    if (auto v = r.range("bias", "ma")) c.bias_ma = *v;
    r.number("bias.s_i", c.s_i);
    r.number("bias.gamma_phi0_hz", c.gamma_phi_zero, hz);

    if (auto v = r.list("thermal.temperatures_k")) c.temperatures_k = *v;
    r.number("thermal.gamma1_zero_hz", c.thermal.gamma1_zero, hz);
    r.number("thermal.gamma_phi_zero_per_photon_hz", c.thermal.gamma_phi_zero_per_photon, hz);

    if (auto v = r.range("power", "dbm")) c.powers_dbm = *v;
    r.number("power.a", c.saturation.a);
    r.number("power.b", c.saturation.b);
    r.number("power.c", c.saturation.c);
    r.number("power.d", c.saturation.d);
    r.number("power.reference_dbm", c.reference_power_dbm);
    r.number("power.reference_photons", c.reference_photons);

    DressedSweep& d = rc.dressed;
    d.model.omega_ge = c.cell.omega_ge;
    d.model.omega_ef = c.cell.omega_ef;
    r.number("dressed.lambda_red_hz", d.model.lambda_red, hz);
    r.number("dressed.lambda_blue_hz", d.model.lambda_blue, hz);
    if (auto v = r.list("dressed.photons")) d.photons = *v;
    r.number("dressed.drive_start_hz", d.drive_start_hz);
    r.number("dressed.drive_stop_hz", d.drive_stop_hz);
    r.count("dressed.points", d.points);

    r.finish();
    if (rc.seed) c.seed = *rc.seed;
    validate(c);
    if (d.points < 2 || !(d.drive_stop_hz > d.drive_start_hz))
        throw ConfigError(source + ": dressed drive range needs start < stop and >= 2 points");
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return run_config_from(parse_ini(in, path), path);
}

} // namespace qrouter
