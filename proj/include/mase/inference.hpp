#pragma once

#include <functional>
#include <vector>

#include "mase/estimator.hpp"

// Plug-in sandwich variance for the estimating equation, the normal-theory
// ATE confidence interval, and a subject-level nonparametric bootstrap used
// by the baseline methods.

namespace mase {

struct SandwichResult {
    Matrix J_n;                 // mean score Jacobian at theta-hat
    Matrix F_n;                 // mean outer product of per-subject scores
    Matrix V_n;                 // J^-1 F J^-T, asymptotic variance of sqrt(n)(theta-hat - theta)
    double sigma_ate = 0.0;     // sqrt of the ATE contrast variance
    bool negative_variance_flag = false;
    double alpha = 0.05;
    double ci_lo = 0.0, ci_hi = 0.0;
};

// Inverse standard normal CDF via the Wichura AS 241 rational approximation
// (double-precision branch, absolute error below 1e-15 on (0,1)).
double normal_quantile(double p);

struct Interval {
    double lo = 0.0, hi = 0.0;
};

// theta-hat_ATE +/- Phi^-1(1 - alpha/2) sigma_ate / sqrt(n).
Interval ci_ate(double ate, double sigma_ate, Eigen::Index n, double alpha);

// Scores must be evaluated at theta-hat with the same nuisance values used to
// solve for it. Throws on a singular Jacobian.
SandwichResult sandwich(const std::vector<ScoreTerms>& scores, const Matrix& jacobian,
                        double ate, double alpha);

struct BootstrapResult {
    double se = 0.0;
    Interval percentile_ci;
    int failures = 0;           // resamples redrawn after an estimator error
    std::vector<double> estimates;  // length B, in resample-index order
};

// Subject-level resample of the dataset (rows with replacement).
LongitudinalDataset resample_subjects(const LongitudinalDataset& ds,
                                      const std::vector<Eigen::Index>& rows);

// `estimate` maps a dataset to a scalar ATE. Each resample index owns an
// independent seed-derived RNG stream; a failing resample is redrawn from the
// same stream up to `retry_cap` times. Deterministic per (B, seed) for any
// worker count.
BootstrapResult bootstrap_se(const std::function<double(const LongitudinalDataset&)>& estimate,
                             const LongitudinalDataset& ds, int B, std::uint64_t seed,
                             double alpha = 0.05, int workers = 1, int retry_cap = 10);

}  // namespace mase
