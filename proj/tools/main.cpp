#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mase/report.hpp"

namespace {

struct FlagOverrides {
    std::string config_path;
    std::string out_dir;
    std::string methods;
    long seed = -1;
    int workers = -1;
    double alpha = -1.0;
    std::string trim;  // "LO,HI"
};

void attach_common(CLI::App* sub, FlagOverrides& ov) {
    sub->add_option("--config", ov.config_path, "JSON run configuration");
    sub->add_option("--seed", ov.seed, "Base RNG seed (overrides config)");
    sub->add_option("--workers", ov.workers, "Worker thread count (overrides config)");
    sub->add_option("--out", ov.out_dir, "Output directory (overrides config)");
    sub->add_option("--methods", ov.methods, "Comma-separated method list (overrides config)");
    sub->add_option("--alpha", ov.alpha, "Two-sided CI level alpha (overrides config)");
    sub->add_option("--trim", ov.trim, "Propensity trim bounds LO,HI (overrides config)");
}

mase::RunConfig build_config(const FlagOverrides& ov) {
    nlohmann::json j = nlohmann::json::object();
    if (!ov.config_path.empty()) {
        std::ifstream in(ov.config_path);
        if (!in) throw std::invalid_argument("cannot open config file: " + ov.config_path);
        in >> j;
    }
    mase::RunConfig cfg = mase::RunConfig::from_json(j);
    if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
    if (ov.workers >= 0) cfg.workers = ov.workers;
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (ov.alpha >= 0.0) {
        if (!(ov.alpha > 0.0 && ov.alpha < 1.0))
            throw std::invalid_argument("--alpha must be in (0,1)");
        cfg.alpha = ov.alpha;
    }
    if (!ov.methods.empty()) {
        cfg.methods.clear();
        std::stringstream ss(ov.methods);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) cfg.methods.push_back(tok);
        }
        if (cfg.methods.empty()) throw std::invalid_argument("--methods produced an empty list");
    }
    if (!ov.trim.empty()) {
        double lo = 0.0, hi = 0.0;
        char comma = 0;
        std::stringstream ss(ov.trim);
        if (!(ss >> lo >> comma >> hi) || comma != ',')
            throw std::invalid_argument("--trim expects LO,HI");
        if (!(lo > 0.0 && lo < hi && hi < 1.0))
            throw std::invalid_argument("--trim bounds must satisfy 0 < LO < HI < 1");
        cfg.trim_lo = lo;
        cfg.trim_hi = hi;
    }
    return cfg;
}

int run_command(const FlagOverrides& ov, const std::string& name,
                mase::CommandOutput (*fn)(const mase::RunConfig&)) {
    try {
        mase::RunConfig cfg = build_config(ov);
        mase::CommandOutput out = fn(cfg);
        mase::write_outputs(out, cfg.out_dir, name);
        std::cout << out.report.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        nlohmann::json err = {{"error", e.what()}, {"command", name}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"longicausal: doubly robust estimation for time-varying treatments"};
    app.require_subcommand(1);

    FlagOverrides ov_est, ov_sim, ov_diag;
    CLI::App* est = app.add_subcommand("estimate", "Fit estimators on a wide CSV dataset");
    CLI::App* sim = app.add_subcommand("simulate", "Run a Monte Carlo benchmark");
    CLI::App* diag = app.add_subcommand("diagnose", "Propensity and weight diagnostics");
    attach_common(est, ov_est);
    attach_common(sim, ov_sim);
    attach_common(diag, ov_diag);

    CLI11_PARSE(app, argc, argv);

    if (est->parsed()) return run_command(ov_est, "estimate", mase::cmd_estimate);
    if (sim->parsed()) return run_command(ov_sim, "simulate", mase::cmd_simulate);
    return run_command(ov_diag, "diagnose", mase::cmd_diagnose);
}
