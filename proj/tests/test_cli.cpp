#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mase/report.hpp"

using namespace mase;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = MASE_DATA_DIR;
const std::string kCliPath = MASE_CLI_PATH;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("mase_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig toy_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.dataset = kDataDir + "/toy_cohort.csv";
    cfg.schema = kDataDir + "/toy_schema.json";
    cfg.learners = "linear";
    cfg.out_dir = out_dir;
    return cfg;
}

nlohmann::json small_sim_dgp() {
    return {{"n", 150}, {"p", 4}, {"beta", {1.0, 1.0}}};
}

}  // namespace

TEST_CASE("run config parsing and defaults") {
    RunConfig cfg = RunConfig::from_json(nlohmann::json::object());
    CHECK(cfg.run_baselines);
    CHECK(cfg.bootstrap_B == 0);
    CHECK(cfg.replications == 100);
    CHECK(cfg.methods == std::vector<std::string>{"mase", "msm_lm", "ice_lm"});
    CHECK(cfg.learners == "default");
    CHECK(cfg.trim_lo == doctest::Approx(0.01));
    CHECK(cfg.trim_hi == doctest::Approx(0.99));
    CHECK(cfg.alpha == doctest::Approx(0.05));
    CHECK(cfg.seed == 1);
    CHECK(cfg.out_dir == "out");

    CHECK_THROWS_AS(RunConfig::from_json({{"mystery_knob", 3}}), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_json({{"alpha", 1.5}}), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_json({{"trim_lo", 0.5}, {"trim_hi", 0.2}}),
                    std::invalid_argument);
    RunConfig bad;
    bad.learners = "neural";
    CHECK_THROWS_AS(bad.mase_config(), std::invalid_argument);

    // round trip through to_json preserves everything from_json accepts
    RunConfig cfg2 = RunConfig::from_json(cfg.to_json());
    CHECK(cfg2.to_json() == cfg.to_json());
}

TEST_CASE("worker resolution prefers config then environment") {
    RunConfig cfg;
    cfg.workers = 3;
    CHECK(cfg.resolved_workers() == 3);
    cfg.workers = 0;
    setenv("LONGICAUSAL_WORKERS", "5", 1);
    CHECK(cfg.resolved_workers() == 5);
    setenv("LONGICAUSAL_WORKERS", "not_a_number", 1);
    CHECK(cfg.resolved_workers() == 1);
    unsetenv("LONGICAUSAL_WORKERS");
    CHECK(cfg.resolved_workers() == 1);

    CHECK(cfg.resolved_fold_seed() != 0);
    cfg.fold_seed = 42;
    CHECK(cfg.resolved_fold_seed() == 42);
}

TEST_CASE("config hash and number formatting are stable") {
    nlohmann::json a = {{"seed", 1}, {"alpha", 0.05}};
    CHECK(config_hash(a) == config_hash(a));
    nlohmann::json b = a;
    b["seed"] = 2;
    CHECK(config_hash(a) != config_hash(b));

    CHECK(format_number(1.9599639845400536) == "1.95996");
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(-12345.678) == "-12345.7");
    CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("simulate command: csv contract and reproducibility") {
    RunConfig cfg;
    cfg.dgp = small_sim_dgp();
    cfg.replications = 3;
    cfg.learners = "linear";
    cfg.n_oracle = 100000;
    cfg.seed = 11;

    CommandOutput out1 = cmd_simulate(cfg);
    std::istringstream lines(out1.csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "method,estimation,mc_sd,relative_bias,estimated_se,coverage");
    int n_rows = 0;
    for (std::string line; std::getline(lines, line);) ++n_rows;
    CHECK(n_rows == 3);  // mase, msm_lm, ice_lm

    // identical rerun is byte identical, including across worker counts
    CommandOutput out2 = cmd_simulate(cfg);
    CHECK(out1.report.dump(2) == out2.report.dump(2));
    CHECK(out1.csv == out2.csv);
    RunConfig cfg_w = cfg;
    cfg_w.workers = 3;
    CommandOutput out3 = cmd_simulate(cfg_w);
    CHECK(out1.csv == out3.csv);

    // a different seed actually changes the result
    RunConfig cfg_s = cfg;
    cfg_s.seed = 12;
    CHECK(cmd_simulate(cfg_s).csv != out1.csv);
}

TEST_CASE("estimate command on the packaged toy cohort") {
    auto dir = fresh_dir("estimate");
    RunConfig cfg = toy_config(dir.string());
    CommandOutput out = cmd_estimate(cfg);

    std::istringstream lines(out.csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "method,outcome,ate,se,ci_lo,ci_hi");

    REQUIRE(out.report.contains("rows"));
    const auto& rows = out.report["rows"];
    REQUIRE(rows.size() == 3);  // mase + two baselines, one outcome
    const auto& mase_row = rows[0];
    CHECK(mase_row["method"] == "mase");
    double ate = mase_row["ate"].get<double>();
    double se = mase_row["se"].get<double>();
    double lo = mase_row["ci_lo"].get<double>();
    double hi = mase_row["ci_hi"].get<double>();
    CHECK(std::isfinite(ate));
    CHECK(se > 0.0);
    // the CI uses the exact normal 97.5% quantile
    CHECK(hi - ate == doctest::Approx(1.9599639845400536 * se).epsilon(1e-9));
    CHECK(ate - lo == doctest::Approx(1.9599639845400536 * se).epsilon(1e-9));
    CHECK(mase_row["theta"].size() == 3);

    CHECK(rows[1]["method"] == "msm_lm");
    CHECK(rows[2]["method"] == "ice_lm");
    CHECK(std::isfinite(rows[1]["ate"].get<double>()));

    // identical rerun is byte identical
    CommandOutput again = cmd_estimate(cfg);
    CHECK(again.report.dump(2) == out.report.dump(2));
    CHECK(again.csv == out.csv);

    write_outputs(out, dir.string(), "estimate");
    CHECK(fs::exists(dir / "estimate.json"));
    CHECK(fs::exists(dir / "estimate.csv"));
    CHECK(slurp(dir / "estimate.csv") == out.csv);
}

TEST_CASE("diagnose command: histogram and trim accounting") {
    auto dir = fresh_dir("diagnose");
    RunConfig cfg = toy_config(dir.string());
    CommandOutput out = cmd_diagnose(cfg);

    std::istringstream lines(out.csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "timepoint,bin_lo,bin_hi,count");

    int n = out.report["n_subjects"].get<int>();
    int T = out.report["n_timepoints"].get<int>();
    CHECK(T == 2);
    const auto& hists = out.report["ps_histograms"];
    REQUIRE(static_cast<int>(hists.size()) == T);
    for (const auto& row : hists) {
        REQUIRE(row.size() == 20);
        int total = 0;
        for (const auto& c : row) total += c.get<int>();
        CHECK(total == n);
    }
    const auto& trims = out.report["trim_hits"];
    REQUIRE(static_cast<int>(trims.size()) == T);
    for (const auto& h : trims) CHECK(h.get<int>() >= 0);

    // aggressive trimming is reflected in the hit counts
    RunConfig tight = cfg;
    tight.trim_lo = 0.45;
    tight.trim_hi = 0.55;
    CommandOutput tout = cmd_diagnose(tight);
    long loose = 0, strict = 0;
    for (const auto& h : trims) loose += h.get<int>();
    for (const auto& h : tout.report["trim_hits"]) strict += h.get<long>();
    CHECK(strict > loose);
    CHECK(out.report["weight_quantiles"].contains("median"));
}

TEST_CASE("cli binary: exit codes, overrides, and seed replay") {
    auto dir = fresh_dir("binary");
    auto run = [&](const std::string& args) {
        std::string cmd = kCliPath + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + (dir / "stderr.txt").string();
        int rc = std::system(cmd.c_str());
        return WEXITSTATUS(rc);
    };

    // no subcommand is a usage error
    CHECK(run("") != 0);

    // missing dataset yields a nonzero exit and machine readable error JSON
    CHECK(run("estimate --out " + (dir / "bad").string()) == 1);
    auto err = nlohmann::json::parse(slurp(dir / "stderr.txt"));
    CHECK(err.contains("error"));
    CHECK(err["command"] == "estimate");

    // simulate with a config file plus flag overrides
    nlohmann::json cfg_json = {{"dgp", small_sim_dgp()},
                               {"replications", 2},
                               {"learners", "linear"},
                               {"methods", {"mase", "ice_lm"}},
                               {"n_oracle", 100000}};
    auto cfg_path = dir / "sim.json";
    std::ofstream(cfg_path) << cfg_json.dump();
    std::string base = "simulate --config " + cfg_path.string() + " --seed 7 --trim 0.02,0.98";

    CHECK(run(base + " --out " + (dir / "run1").string()) == 0);
    CHECK(run(base + " --out " + (dir / "run2").string()) == 0);
    CHECK(fs::exists(dir / "run1" / "simulate.json"));
    std::string csv1 = slurp(dir / "run1" / "simulate.csv");
    CHECK(csv1 == slurp(dir / "run2" / "simulate.csv"));
    std::istringstream lines(csv1);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "method,estimation,mc_sd,relative_bias,estimated_se,coverage");
    int n_rows = 0;
    for (std::string line; std::getline(lines, line);) ++n_rows;
    CHECK(n_rows == 2);  // --methods override from config limited the list

    // flag overrides land in the recorded config
    auto rep = nlohmann::json::parse(slurp(dir / "run1" / "simulate.json"));
    CHECK(rep["config"]["seed"].get<int>() == 7);
    CHECK(rep["config"]["trim_lo"].get<double>() == doctest::Approx(0.02));
    CHECK(rep["command"] == "simulate");
    CHECK(rep["version"] == std::string(kVersion));

    // a different seed gives a different report
    CHECK(run("simulate --config " + cfg_path.string() + " --seed 8 --out " +
              (dir / "run3").string()) == 0);
    CHECK(slurp(dir / "run3" / "simulate.csv") != csv1);

    // malformed flag values are rejected
    CHECK(run(base + " --alpha 2.0 --out " + (dir / "bad2").string()) == 1);
    CHECK(run("simulate --config " + cfg_path.string() + " --trim 0.9,0.1 --out " +
              (dir / "bad3").string()) == 1);
}
