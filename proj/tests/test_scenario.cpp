#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "viscoplate/scenario.hpp"

using namespace viscoplate;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("viscoplate_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Scenario small_damped() {
    Scenario sc;
    sc.name = "small";
    sc.n = 4;
    sc.dt = 1e-2;
    sc.T = 0.5;
    sc.rho = 1.0;
    sc.k = 0.5;
    sc.sigma = 0.0;
    sc.kernel = "exp(0.5,1)";
    sc.damping = "damp-linear(1)";
    sc.u0 = "mode(1,0.5) + mode(2,0.2)";
    sc.v0 = "mode(1,0.3)";
    return sc;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(VISCOPLATE_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(ConfigParse, FullFile) {
    const auto sc = parse_scenario_text(R"(
[scenario]
name = demo
[domain]
dim = 1
n = 6
[time]
dt = 2e-3   # trailing comment
T = 1.5
[physics]
rho = 1
k = 0.25
kernel = power(0.5,2)
damping = damp-cubic(0.5)
[initial]
u0 = mode(1,0.1)
[diagnostics]
t1 = 0.5
well_a = 0.3
)");
    EXPECT_EQ(sc.name, "demo");
    EXPECT_EQ(sc.n, 6);
    EXPECT_DOUBLE_EQ(sc.dt, 2e-3);
    EXPECT_DOUBLE_EQ(sc.T, 1.5);
    EXPECT_EQ(sc.kernel, "power(0.5,2)");
    EXPECT_EQ(sc.damping, "damp-cubic(0.5)");
    ASSERT_TRUE(sc.t1 && sc.well_a);
    EXPECT_DOUBLE_EQ(*sc.t1, 0.5);
    EXPECT_EQ(sc.resolved_quad_order(), 26);
}

TEST(ConfigParse, UnknownKeyReportsLine) {
    try {
        parse_scenario_text("[physics]\nrho = 1\ndampng = damp-linear(1)\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        ASSERT_EQ(e.issues().size(), 1u);
        EXPECT_NE(e.issues()[0].find("line 3"), std::string::npos);
        EXPECT_NE(e.issues()[0].find("dampng"), std::string::npos);
    }
}

TEST(ConfigParse, CollectsEveryIssue) {
    try {
        parse_scenario_text("[physics]\nrho = x\nrho = 2\n[bogus]\nfoo\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.issues().size(), 4u);
    }
}

TEST(ConfigParse, SemanticValidation) {
    EXPECT_THROW(parse_scenario_text("[time]\ndt = -1\n"), ConfigError);
    EXPECT_THROW(parse_scenario_text("[physics]\nkernel = exp(2)\n"), ConfigError);
    EXPECT_THROW(parse_scenario_text("[domain]\nn = 4\nquad_order = 5\n"), ConfigError);
    EXPECT_THROW(parse_scenario("/nonexistent/file.cfg"), InputError);
}

TEST(ConfigParse, EffectiveConfigRoundTrip) {
    auto sc = small_damped();
    sc.t1 = 0.125;
    sc.well_a = 0.1 + 0.2; // not exactly representable in short decimal
    const auto text = effective_config(sc);
    EXPECT_EQ(parse_scenario_text(text), sc);
    const auto defaults = effective_config(Scenario{});
    EXPECT_NE(defaults.find("# default"), std::string::npos);
    EXPECT_EQ(parse_scenario_text(defaults), Scenario{});
}

TEST(ConfigParse, EveryPresetParses) {
    int count = 0;
    for (const auto& entry : fs::directory_iterator(VISCOPLATE_CONFIGS)) {
        if (entry.path().extension() != ".cfg") continue;
        EXPECT_NO_THROW(parse_scenario(entry.path())) << entry.path();
        ++count;
    }
    EXPECT_GE(count, 6);
}

TEST(ApplySetting, KernelParameterEdit) {
    Scenario sc = small_damped();
    apply_setting(sc, "kernel.b0", "0.25");
    EXPECT_EQ(parse_kernel_spec(sc.kernel).params()[0], 0.25);
    apply_setting(sc, "kernel.a", "2");
    EXPECT_EQ(parse_kernel_spec(sc.kernel).params()[1], 2.0);
    EXPECT_THROW(apply_setting(sc, "kernel.q", "2"), InputError);
    apply_setting(sc, "physics.rho", "2");
    EXPECT_EQ(sc.rho, 2.0);
    EXPECT_THROW(apply_setting(sc, "nope", "1"), InputError);
}

TEST(InitialData, ModeSpecifications) {
    const auto b = build_basis(2, 3, 1.0, 10);
    const auto g = assemble_grams(b);
    const auto c = initial_coeffs("mode(2,3,0.5) + mode(1,1,-1)", b, g);
    EXPECT_DOUBLE_EQ(c(1 * 3 + 2), 0.5);
    EXPECT_DOUBLE_EQ(c(0), -1.0);
    EXPECT_EQ(initial_coeffs("zero", b, g).squaredNorm(), 0.0);
    EXPECT_THROW(initial_coeffs("mode(4,1,1)", b, g), InputError);
}

TEST(Execute, DampedScenarioPassesEveryCheck) {
    const auto res = execute(small_damped());
    const auto& rep = res.report;
    EXPECT_EQ(rep.exit_code(), 0);
    EXPECT_EQ(rep.steps, 50u);
    EXPECT_EQ(res.records.size(), 51u);
    EXPECT_LT(rep.E_final, rep.E0);
    for (const auto& c : rep.checks) EXPECT_NE(c.verdict, Verdict::fail) << c.name << ": " << c.detail;
}

TEST(Execute, SourceAboveThresholdFailsH4) {
    auto sc = small_damped();
    sc.k = 1e6;
    const auto res = execute(sc);
    EXPECT_EQ(res.report.exit_code(), 1);
    EXPECT_FALSE(res.report.simulated);
    bool h4 = false;
    for (const auto& c : res.report.checks)
        if (c.name == "H4") h4 = c.verdict == Verdict::fail;
    EXPECT_TRUE(h4);
}

TEST(Execute, BadKernelFailsH1) {
    auto sc = small_damped();
    sc.kernel = "exp(1.5,1)";
    EXPECT_EQ(execute(sc).report.exit_code(), 1);
}

TEST(RunScenario, WritesArtifactsAndIsDeterministic) {
    const auto dir = scratch("run");
    RunOptions opt;
    opt.out = (dir / "a").string();
    opt.dump_grams = true;
    const auto a = run_scenario(small_damped(), opt);
    ASSERT_EQ(a.exit_code, 0) << a.error;
    for (const char* f : {"effective.cfg", "timeseries.csv", "report.json", "M0.csv", "M1.csv", "M2.csv"})
        EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    opt.out = (dir / "b").string();
    const auto b = run_scenario(small_damped(), opt);
    EXPECT_EQ(slurp(dir / "a" / "timeseries.csv"), slurp(dir / "b" / "timeseries.csv"));
    const auto ts = slurp(dir / "a" / "timeseries.csv");
    EXPECT_EQ(ts.substr(0, kTimeseriesHeader.size()), kTimeseriesHeader);
    const auto js = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
    EXPECT_EQ(js["exit_code"], 0);
    EXPECT_EQ(js["checks"]["monotone"]["verdict"], "pass");
    EXPECT_EQ(parse_scenario(dir / "a" / "effective.cfg").kernel, "exp(0.5,1)");
}

TEST(RunScenario, StrideThinsTimeseries) {
    const auto dir = scratch("stride");
    RunOptions opt;
    opt.out = dir.string();
    opt.stride = 10;
    ASSERT_EQ(run_scenario(small_damped(), opt).exit_code, 0);
    std::ifstream in(dir / "timeseries.csv");
    int lines = 0;
    for (std::string s; std::getline(in, s);) ++lines;
    EXPECT_EQ(lines, 1 + 6); // header + steps 0, 10, ..., 50
}

TEST(RunScenario, ExecutionErrorGivesExitTwo) {
    const auto dir = scratch("error");
    auto sc = small_damped();
    sc.u0 = "table(/nonexistent.csv)";
    RunOptions opt;
    opt.out = dir.string();
    const auto out = run_scenario(sc, opt);
    EXPECT_EQ(out.exit_code, 2);
    EXPECT_TRUE(fs::exists(dir / "error.txt"));
}

TEST(Refinement, SecondOrderRate) {
    auto sc = small_damped();
    sc.T = 1.0;
    sc.dt = 2e-2;
    const auto [levels, slope] = refinement_study(sc, 3);
    ASSERT_EQ(levels.size(), 3u);
    EXPECT_NEAR(slope, 2.0, 0.1);
    EXPECT_THROW(refinement_study(sc, 1), InputError);
}

TEST(Sweep, AxisParsing) {
    const auto ax = parse_axis("kernel=exp(0.5,1),exp(0.5,2)");
    EXPECT_EQ(ax.key, "kernel");
    ASSERT_EQ(ax.values.size(), 2u);
    EXPECT_EQ(ax.values[1], "exp(0.5,2)");
    EXPECT_THROW(parse_axis("rho"), InputError);
    EXPECT_THROW(parse_axis("bogus=1"), InputError);
    EXPECT_THROW(parse_axis("rho=1,,2"), InputError);
}

TEST(Sweep, SingleCellMatchesRun) {
    const auto dir = scratch("sweep1");
    RunOptions opt;
    opt.out = (dir / "sweep").string();
    const auto cells = sweep(small_damped(), {parse_axis("rho=1")}, opt, 1);
    ASSERT_EQ(cells.size(), 1u);
    opt.out = (dir / "single").string();
    run_scenario(small_damped(), opt);
    EXPECT_EQ(slurp(dir / "sweep" / "cell_000" / "timeseries.csv"), slurp(dir / "single" / "timeseries.csv"));
}

TEST(Sweep, ThreeCellsWithSummary) {
    const auto dir = scratch("sweep3");
    RunOptions opt;
    opt.out = dir.string();
    const auto cells = sweep(small_damped(), {parse_axis("kernel.b0=0.25,0.5,1.5")}, opt, 3);
    ASSERT_EQ(cells.size(), 3u);
    EXPECT_EQ(cells[0].outcome.exit_code, 0);
    EXPECT_EQ(cells[1].outcome.exit_code, 0);
    EXPECT_EQ(cells[2].outcome.exit_code, 1); // b0 = 1.5 gives l < 0
    std::ifstream in(dir / "summary.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "cell,kernel.b0,exit_code,E0,E_final,decay_exponent,fit_c,overshoot,max_rate_residual");
    int rows = 0;
    for (std::string s; std::getline(in, s);) ++rows;
    EXPECT_EQ(rows, 3);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    {
        std::ofstream cfg(dir / "ok.cfg");
        cfg << effective_config(small_damped());
    }
    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "[physics]\ndampng = damp-linear(1)\n";
    }
    auto k_high = small_damped();
    k_high.k = 1e6;
    {
        std::ofstream cfg(dir / "high.cfg");
        cfg << effective_config(k_high);
    }
    const std::string out = " --out " + (dir / "o").string();
    EXPECT_EQ(run_cli("run " + (dir / "ok.cfg").string() + out), 0);
    EXPECT_TRUE(fs::exists(dir / "o" / "report.json"));
    EXPECT_EQ(run_cli("run " + (dir / "bad.cfg").string() + out), 2);
    EXPECT_EQ(run_cli("run " + (dir / "high.cfg").string() + out), 1);
    EXPECT_EQ(run_cli("sweep " + (dir / "ok.cfg").string() + " --axis rho=0,1" + out), 0);
    EXPECT_TRUE(fs::exists(dir / "o" / "summary.csv"));
    EXPECT_NE(run_cli("frobnicate"), 0);
}
