#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mase/baselines.hpp"
#include "mase/estimator.hpp"
#include "mase/inference.hpp"
#include "mase/nuisance.hpp"

// Synthetic longitudinal DGP with time-varying confounding, regime-indexed
// counterfactual outcome tables, a Monte Carlo truth oracle, and the
// replication driver that benchmarks the estimators against it.
//
// Default mean structures (fixed and versioned so golden truths are stable):
//   lin_pi(z)  =  0.30 z0 - 0.25 z1 + 0.20 z2 - 0.15 z3 + 0.10 z4
//   lin_y(z)   =  0.40 z0 + 0.30 z1 - 0.25 z2 + 0.20 z3 - 0.10 z4
//   nl(z)      =  sum_{k=5..9} cos_coef (cos z_k - e^{-1/2})
//              + inter_coef sum_{(j,k) in {(0,5),(1,6),(2,7)}} (z_j z_k - rho^5)
// Propensity:  pi_t = logistic(lin_pi(Z_t) + gamma_ps nl(Z_t)
//                              + ps_lag_a A_{t-1} + ps_lag_y Y_{t-1})
// Outcomes:    f_y(z) = lin_y(z) + gamma_y nl(z)
//   Y_t(a_t)  = y_cur_effect a_t + kappa Y_{t-1} + f_y(Z_t) + noise   (t < T)
//   Y_T(a)    = sum_t beta_t a_t + kappa Y_{T-1} + f_y(Z_T) + noise
// Confounders: Z_1 ~ N(0, AR1(rho)); Z_t = z_carry Z_{t-1}
//              + sqrt(1 - z_carry^2) xi_t + a_shift A_{t-1} on coords {0,5}.

namespace mase {

struct DgpSpec {
    int n = 1000;
    int T = 2;
    int p = 50;                  // confounders per timepoint
    double rho = 0.5;            // within-timepoint AR(1) correlation
    double z_carry = 0.5;        // temporal coupling of consecutive Z blocks
    double a_shift = 0.5;        // exposure shift on Z_{t+1} coords {0,5}
    std::vector<double> beta = {2.5, 2.5};  // final-outcome exposure coefficients
    double y_cur_effect = 0.5;   // current exposure on intermediate outcomes
    double kappa = 0.3;          // lagged outcome carryover
    double gamma_ps = 1.0;       // nonlinearity amplitude in the propensity
    double gamma_y = 1.2;        // nonlinearity amplitude in the outcomes
    double cos_coef = 0.6;       // per-term cosine coefficient inside nl
    double inter_coef = 0.1;     // per-term interaction coefficient inside nl
    double ps_lag_a = 0.4;
    double ps_lag_y = 0.2;
    double outcome_noise = 1.0;       // final outcome noise SD
    double intermediate_noise = 0.5;  // intermediate outcome noise SD

    // Effect size split equally across the T exposure coefficients.
    static DgpSpec with_effect(double effect, int n, int p);

    void validate() const;  // throws std::invalid_argument
    nlohmann::json to_json() const;
    static DgpSpec from_json(const nlohmann::json& j);  // rejects unknown keys
};

struct SimulatedDataset {
    LongitudinalDataset data;
    // counterfactuals[t-1]: n x 2^t, column = prefix (a_1..a_t) lexicographic.
    std::vector<Matrix> counterfactuals;
    Matrix true_ps;  // n x T, true P(A_t = 1 | observed history)
};

SimulatedDataset gen_dataset(const DgpSpec& spec, std::uint64_t seed);

// True nuisance values for T = 2 specs: exact propensities and the analytic
// ICE expectations implied by the mean structures above.
NuisanceValues analytic_nuisances(const SimulatedDataset& sim, const DgpSpec& spec);

struct TruthEstimate {
    double value = 0.0;
    double se = 0.0;     // Monte Carlo SE of the truth oracle
    long n_oracle = 0;
};

// Mean of Y_T(all ones) - Y_T(all zeros) over fresh draws.
TruthEstimate true_ate(const DgpSpec& spec, long n_oracle, std::uint64_t seed);

enum class Method { mase, msm_lm, ice_lm };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct MaseConfig {
    std::vector<std::vector<LearnerSpec>> ps_grids;
    std::vector<std::vector<LearnerSpec>> ice_grids;
    TrimBounds trim;
    double alpha = 0.05;
    NuisanceOptions nuisance;

    static MaseConfig defaults();       // logistic/forest/boosting stacks
    static MaseConfig linear_only();    // logistic + linear bases (fast path)
};

struct MethodResult {
    bool ok = false;
    double ate = 0.0;
    double se = 0.0;      // NaN when not computed
    double ci_lo = 0.0, ci_hi = 0.0;
    std::string error;
};

// One full doubly-robust fit: fold split, cross-fitted nuisances, pooled
// solve, sandwich CI.
MethodResult run_mase(const LongitudinalDataset& ds, const MaseConfig& cfg,
                      std::uint64_t fold_seed, int outcome_j = 0);

struct MethodSummary {
    std::string method;
    int n_success = 0;
    int n_fail = 0;
    double mean_estimate = 0.0;
    double mc_sd = 0.0;
    double relative_bias = 0.0;   // (mean - truth) / truth
    double mean_se = 0.0;         // NaN when SEs were not computed
    double coverage = 0.0;        // NaN when CIs were not computed
};

struct McOptions {
    long n_oracle = 200000;
    double alpha = 0.05;
    int baseline_bootstrap_B = 0;  // 0 disables baseline bootstrap SEs
    int workers = 1;
};

struct MonteCarloReport {
    DgpSpec spec;
    int R = 0;
    std::uint64_t base_seed = 0;
    TruthEstimate truth;
    std::vector<MethodSummary> rows;                    // requested method order
    std::vector<std::vector<MethodResult>> replicates;  // [method][r]

    nlohmann::json to_json() const;
};

// Replication r uses dataset seed base_seed + r; deterministic for any worker
// count. Per-replication failures are recorded and excluded from aggregates.
MonteCarloReport run_monte_carlo(const DgpSpec& spec, const std::vector<Method>& methods, int R,
                                 std::uint64_t base_seed, const MaseConfig& mase_cfg,
                                 const McOptions& opts = {});

}  // namespace mase
