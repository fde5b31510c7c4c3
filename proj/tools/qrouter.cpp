// qrouter: simulate, synthesize, calibrate and fit basic-cell spectra.
//
//   qrouter <subcommand> [--config f.ini] [--seed N] [--out DIR] [--format csv|s4p] [inputs...]
//
// Results go to <out>/runs/<run_id>/. On failure a JSON error object is
// printed to stderr and the exit code is nonzero (2 config/usage, 3 parse,
// 4 numerical, 1 other).

#include <iostream>

#include <CLI11.hpp>

#include "qrouter/run.hpp"

namespace {

const char* describe(const std::string& sub) {
    if (sub == "simulate") return "Model coefficients of the cell on the configured grid";
    if (sub == "synth") return "Synthetic raw and high-drive spectra through random lines";
    if (sub == "calibrate") return "Calibrate raw spectra: <meas> <hd>";
    if (sub == "fit") return "Four-channel fit: <calibrated> or <meas> <hd>";
    if (sub == "sweep-bias") return "Efficiency versus flux bias and flux-noise fit";
    if (sub == "sweep-temp") return "Efficiency versus temperature and thermal fit";
    if (sub == "sweep-power") return "Through response versus drive power and saturation fit";
    if (sub == "dressed") return "Dressed transition lines versus drive frequency";
    if (sub == "report") return "Human-readable summary of a run directory";
    return "";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"qrouter: basic-cell spectroscopy toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", qrouter::tool_version);

    qrouter::RunOptions opts;
    std::string config, out, format;
    std::uint64_t seed = 0;
    auto* o_config = app.add_option("--config", config, "INI configuration file (env QROUTER_CONFIG)");
    auto* o_seed = app.add_option("--seed", seed, "Random seed (env QROUTER_SEED)");
    auto* o_out = app.add_option("--out", out, "Output root; runs go to <out>/runs/<id> (env QROUTER_OUT)");
    auto* o_format = app.add_option("--format", format, "Spectrum output format csv|s4p (env QROUTER_FORMAT)")
                         ->check(CLI::IsMember({"csv", "s4p"}));
    for (auto* o : {o_config, o_seed, o_out, o_format}) o->configurable(false);

    for (const std::string& name : qrouter::subcommands()) {
        CLI::App* sub = app.add_subcommand(name, describe(name));
        sub->add_option("inputs", opts.inputs, "Input files");
        sub->fallthrough();
        sub->callback([&opts, name] { opts.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        const auto [code, j] = qrouter::error_summary(qrouter::ConfigError(e.what()));
        std::cerr << j.dump() << "\n";
        return code;
    }
    if (o_config->count()) opts.config_path = config;
    if (o_seed->count()) opts.seed = seed;
    if (o_out->count()) opts.out = out;
    if (o_format->count()) opts.format = format;

    try {
        const qrouter::ResolvedRun run = qrouter::resolve_run(opts);
        const qrouter::RunRecord rec = qrouter::run_command(run);
        if (run.subcommand == "report") {
            std::cout << rec.summary.value("text", "");
        } else {
            nlohmann::json j{{"run_id", rec.run_id}, {"dir", rec.dir.string()}, {"summary", rec.summary}};
            j["outputs"] = nlohmann::json::array();
            for (const auto& a : rec.outputs) j["outputs"].push_back(a.path);
            std::cout << j.dump(2) << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        const auto [code, j] = qrouter::error_summary(e);
        std::cerr << j.dump() << "\n";
        return code;
    }
}
