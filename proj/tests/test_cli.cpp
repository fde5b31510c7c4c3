#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "qrouter/run.hpp"

using namespace qrouter;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("qrouter_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

fs::path write_text(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

EnvLookup fake_env(std::map<std::string, std::string> vars) {
    return [vars](const char* name) -> std::optional<std::string> {
        const auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

EnvLookup no_env() { return fake_env({}); }

RunRecord run(const std::string& sub, const fs::path& out, std::optional<fs::path> config = std::nullopt,
              std::vector<std::string> inputs = {}) {
    RunOptions o;
    o.subcommand = sub;
    if (config) o.config_path = config->string();
    o.out = out.string();
    o.inputs = std::move(inputs);
    return run_command(resolve_run(o, no_env()), "2000-01-01T00:00:00Z");
}

const char* kCell = "[cell]\ngamma_a_hz = 1.82e6\ngamma_b_hz = 2.31e6\n";

} // namespace

TEST(Sha256, KnownDigest) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Resolve, PrecedenceIsConfigThenEnvThenFlag) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", "[run]\nseed = 1\nout = from_config\nformat = csv\n");
    RunOptions o;
    o.subcommand = "synth";
    o.config_path = cfg.string();
    ResolvedRun r = resolve_run(o, no_env());
    EXPECT_EQ(r.seed, 1u);
    EXPECT_EQ(r.out, "from_config");

    const auto env = fake_env({{"QROUTER_SEED", "2"}, {"QROUTER_OUT", "from_env"}, {"QROUTER_FORMAT", "s4p"}});
    r = resolve_run(o, env);
    EXPECT_EQ(r.seed, 2u);
    EXPECT_EQ(r.out, "from_env");
    EXPECT_EQ(r.format, SpectrumFormat::s4p);
    EXPECT_EQ(r.config.campaign.seed, 2u);

    o.seed = 3;
    o.out = "from_flag";
    o.format = "csv";
    r = resolve_run(o, env);
    EXPECT_EQ(r.seed, 3u);
    EXPECT_EQ(r.out, "from_flag");
    EXPECT_EQ(r.format, SpectrumFormat::csv);
}

TEST(Resolve, ConfigPathFromEnvironment) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", "[cell]\ngamma_a_hz = 3e6\n");
    RunOptions o;
    o.subcommand = "simulate";
    const ResolvedRun r = resolve_run(o, fake_env({{"QROUTER_CONFIG", cfg.string()}}));
    EXPECT_DOUBLE_EQ(r.config.campaign.cell.gamma_a, mhz(3.0));
}

TEST(Resolve, BadSettingsAreConfigErrors) {
    TempDir tmp;
    RunOptions o;
    o.subcommand = "simulate";
    o.config_path = write_text(tmp.path() / "c.ini", "[cell]\nunknown = 1\n").string();
    EXPECT_THROW(resolve_run(o, no_env()), ConfigError);
    o.config_path.reset();
    EXPECT_THROW(resolve_run(o, fake_env({{"QROUTER_SEED", "x"}})), ConfigError);
    o.subcommand = "explode";
    EXPECT_THROW(resolve_run(o, no_env()), ConfigError);
}

TEST(Simulate, TablesMatchTheModel) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", kCell);
    const RunRecord rec = run("simulate", tmp.path(), cfg);
    const ChannelSpectrum s = ingest_spectrum((rec.dir / "response.csv").string(), SpectrumFormat::csv);
    const CellParams p = resolve_run({"simulate", cfg.string(), {}, {}, {}, {}}, no_env()).config.campaign.cell;
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const ChannelSet want = cell_coefficients(s.omega(i), p);
        for (Channel c : all_channels) worst = std::max(worst, std::abs(s.trace(c)[i] - want[c]));
    }
    EXPECT_LE(worst, 1e-12);
    EXPECT_EQ(s.size(), 401u);
    EXPECT_TRUE(fs::exists(rec.dir / "table.csv"));
}

TEST(Runs, SameInputsGiveSameIdAndBytes) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", std::string(kCell) + "[run]\nseed = 5\n");
    const RunRecord a = run("synth", tmp.path() / "a", cfg);
    const RunRecord b = run("synth", tmp.path() / "b", cfg);
    EXPECT_EQ(a.run_id, b.run_id);
    EXPECT_EQ(a.run_id.rfind("synth-", 0), 0u);
    for (const char* f : {"meas.csv", "hd.csv", "truth.json", "run.json"})
        EXPECT_EQ(read_file(a.dir / f), read_file(b.dir / f)) << f;

    RunOptions o{"synth", cfg.string(), 6, (tmp.path() / "c").string(), {}, {}};
    const RunRecord c = run_command(resolve_run(o, no_env()), "2000-01-01T00:00:00Z");
    EXPECT_NE(c.run_id, a.run_id);
}

TEST(Runs, OutputsReferenceTheRunAndDigestsVerify) {
    TempDir tmp;
    const RunRecord rec = run("synth", tmp.path());
    const nlohmann::json j = nlohmann::json::parse(read_file(rec.dir / "run.json"));
    EXPECT_EQ(j["run_id"], rec.run_id);
    EXPECT_EQ(j["tool_version"], tool_version);
    EXPECT_EQ(j["created_utc"], "2000-01-01T00:00:00Z");
    ASSERT_EQ(j["outputs"].size(), 3u);
    for (const auto& o : j["outputs"]) {
        const std::string text = read_file(rec.dir / o["path"].get<std::string>());
        EXPECT_EQ(sha256_hex(text), o["sha256"]);
        EXPECT_NE(text.find(rec.run_id), std::string::npos) << o["path"];
    }
    IngestReport rep;
    ingest_spectrum((rec.dir / "meas.csv").string(), SpectrumFormat::csv, &rep);
    EXPECT_EQ(rep.run_id, rec.run_id);
}

TEST(Runs, TouchstoneOutputRoundTrips) {
    TempDir tmp;
    RunOptions o{"synth", {}, 3, tmp.path().string(), "s4p", {}};
    const RunRecord rec = run_command(resolve_run(o, no_env()));
    const ChannelSpectrum s4p = ingest_spectrum((rec.dir / "meas.s4p").string(), SpectrumFormat::s4p);
    CampaignConfig c;
    c.seed = 3;
    EXPECT_EQ(s4p, gen_spectrum(c).meas);
}

TEST(Pipeline, SynthCalibrateFitReport) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", std::string(kCell) + "phi_a_pi = -0.06\nphi_b_pi = 0.05\n");
    const RunRecord s = run("synth", tmp.path(), cfg);
    const std::string meas = (s.dir / "meas.csv").string(), hd = (s.dir / "hd.csv").string();
    const RunRecord cal = run("calibrate", tmp.path(), cfg, {meas, hd});
    EXPECT_TRUE(fs::exists(cal.dir / "calibrated.csv"));
    EXPECT_TRUE(fs::exists(cal.dir / "isolation.csv"));

    const RunRecord f1 = run("fit", tmp.path(), cfg, {(cal.dir / "calibrated.csv").string()});
    const RunRecord f2 = run("fit", tmp.path(), cfg, {meas, hd});
    for (const RunRecord* f : {&f1, &f2}) {
        const nlohmann::json j = nlohmann::json::parse(read_file(f->dir / "fit.json"));
        EXPECT_TRUE(j["converged"].get<bool>());
        EXPECT_NEAR(j["cell"]["gamma_a_hz"].get<double>(), 1.82e6, 0.01 * 1.82e6);
        EXPECT_NEAR(j["cell"]["phi_b_pi"].get<double>(), 0.05, 0.01);
    }

    const RunRecord rep = run("report", tmp.path(), std::nullopt, {f2.dir.string()});
    const std::string text = rep.summary["text"];
    for (const char* name : {"gamma_a", "gamma_b", "omega_ge", "phi_a", "phi_b", "+-"})
        EXPECT_NE(text.find(name), std::string::npos) << name;
}

TEST(Pipeline, BiasSweepRidgeFollowsTheFluxModel) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini", std::string(kCell) +
                                                              "[grid]\nstart_hz = 6.04e9\nstop_hz = 6.19e9\npoints = 1501\n"
                                                              "[bias]\nstart_ma = -0.55\nstop_ma = 0.55\npoints = 11\n");
    const RunRecord rec = run("sweep-bias", tmp.path(), cfg);
    std::ifstream in(rec.dir / "ridge.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 'b') continue;
        const auto cells = detail::split(line, ',');
        const double ridge = *detail::to_double(cells[1]);
        const double model = *detail::to_double(cells[2]);
        EXPECT_NEAR(ridge, model, 100e3) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 11u);
    EXPECT_TRUE(rec.summary.contains("s_i"));
    // The synthesized sweep is kept so the analysis can be rerun on it.
    const RunRecord again = run("sweep-bias", tmp.path(), cfg,
                                {(rec.dir / "sweep_meas.csv").string(), (rec.dir / "sweep_hd.csv").string()});
    EXPECT_EQ(read_file(again.dir / "ridge.csv").substr(read_file(again.dir / "ridge.csv").find("bias_ma")),
              read_file(rec.dir / "ridge.csv").substr(read_file(rec.dir / "ridge.csv").find("bias_ma")));
}

TEST(Pipeline, TemperatureAndPowerSweeps) {
    TempDir tmp;
    const fs::path cfg = write_text(tmp.path() / "c.ini",
                                    std::string(kCell) + "[thermal]\ntemperatures_k = 0.02 0.05 0.08 0.11 0.14 0.17 0.2\n"
                                                         "[power]\nstart_dbm = -160\nstop_dbm = -110\npoints = 11\n");
    const RunRecord t = run("sweep-temp", tmp.path(), cfg);
    EXPECT_NEAR(t.summary["gamma1_zero_hz"].get<double>(), 0.26e6, 0.1 * 0.26e6);
    const RunRecord p = run("sweep-power", tmp.path(), cfg);
    EXPECT_NEAR(p.summary["c"].get<double>(), 1.0, 0.05);
}

TEST(Pipeline, DressedTable) {
    TempDir tmp;
    const RunRecord rec = run("dressed", tmp.path());
    EXPECT_TRUE(fs::exists(rec.dir / "dressed_lines.csv"));
}

TEST(Errors, SummaryCarriesTypeAndCode) {
    EXPECT_EQ(error_summary(ConfigError("x")).first, 2);
    const auto [code, j] = error_summary(ParseError("f.csv", 7, "bad"));
    EXPECT_EQ(code, 3);
    EXPECT_EQ(j["error"]["line"], 7);
    const auto [c2, j2] = error_summary(DegenerateReferenceError("d", {1.0, 2.0}));
    EXPECT_EQ(c2, 4);
    EXPECT_EQ(j2["error"]["offending_freqs_hz"].size(), 2u);
    EXPECT_EQ(error_summary(std::runtime_error("?")).first, 1);
}

TEST(Errors, WrongInputCountIsAConfigError) {
    TempDir tmp;
    const fs::path f = write_text(tmp.path() / "x.csv", "freq_hz,channel,re,im\n");
    EXPECT_THROW(run("calibrate", tmp.path(), std::nullopt, {f.string()}), ConfigError);
    EXPECT_THROW(run("simulate", tmp.path(), std::nullopt, {f.string()}), ConfigError);
    EXPECT_THROW(run("fit", tmp.path(), std::nullopt, {(tmp.path() / "missing.csv").string()}), ParseError);
}
