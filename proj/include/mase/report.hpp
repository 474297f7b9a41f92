#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mase/simulation.hpp"

// CLI plumbing: run configuration with documented defaults, the three
// command pipelines (estimate / simulate / diagnose), and reproducible
// JSON + CSV report emission.

namespace mase {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
    // estimate / diagnose inputs
    std::string dataset;                     // wide CSV path
    std::string schema;                      // column-role JSON path
    bool run_baselines = true;               // estimate: include msm_lm / ice_lm rows
    int bootstrap_B = 0;                     // baseline bootstrap resamples (0 = off)

    // simulate inputs
    nlohmann::json dgp = nlohmann::json::object();  // DgpSpec overrides
    int replications = 100;
    std::vector<std::string> methods = {"mase", "msm_lm", "ice_lm"};
    long n_oracle = 200000;

    // shared
    std::string learners = "default";        // "default" (stacked ML) or "linear"
    double trim_lo = 0.01, trim_hi = 0.99;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    std::uint64_t fold_seed = 0;             // 0: derived from seed
    int workers = 0;                         // 0: LONGICAUSAL_WORKERS env, else 1
    std::string out_dir = "out";

    static RunConfig from_json(const nlohmann::json& j);  // rejects unknown keys
    nlohmann::json to_json() const;

    MaseConfig mase_config() const;          // throws on unknown learners value
    TrimBounds trim() const { return {trim_lo, trim_hi}; }
    std::uint64_t resolved_fold_seed() const;
    int resolved_workers() const;            // flag > config > env > 1
};

// FNV-1a over the serialized resolved config; stable across runs.
std::uint64_t config_hash(const nlohmann::json& resolved);

// Fixed 6-significant-digit formatting, locale independent.
std::string format_number(double v);

struct CommandOutput {
    nlohmann::json report;
    std::string csv;
};

CommandOutput cmd_estimate(const RunConfig& cfg);
CommandOutput cmd_simulate(const RunConfig& cfg);
CommandOutput cmd_diagnose(const RunConfig& cfg);

// Writes <out_dir>/<stem>.json and <stem>.csv; creates the directory.
void write_outputs(const CommandOutput& out, const std::string& out_dir,
                   const std::string& stem);

}  // namespace mase
