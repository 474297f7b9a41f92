#pragma once

#include <string>

#include "mase/inference.hpp"
#include "mase/learners.hpp"
#include "mase/nuisance.hpp"

// The comparison methods: a classic weighted MSM with per-timepoint logistic
// propensity scores (MSM-lm) and a plain linear-regression ICE g-computation
// (ICE-lm). Neither cross-fits; both target the all-ones vs all-zeros regime
// contrast, same estimand as the doubly-robust estimator.

namespace mase {

struct BaselineEstimate {
    std::string method;     // "msm_lm" or "ice_lm"
    Vector theta;           // (beta_0, ..., beta_T); for ice_lm the MSM fit to regime means
    double ate = 0.0;
    double se = 0.0;        // bootstrap, filled by the caller
    Interval ci;            // bootstrap percentile, filled by the caller
    Vector weights;         // msm_lm: per-subject cumulative inverse-probability weight
};

// Weighted least squares of Y_T^j on (1, A_1, ..., A_T) with logistic PS
// weights trimmed to `trim`. ATE = sum of the exposure coefficients.
BaselineEstimate msm_lm(const LongitudinalDataset& ds, int outcome_j = 0, TrimBounds trim = {});

// Same regression with caller-supplied subject weights (bypasses PS fitting;
// all-ones weights reduce to plain OLS).
BaselineEstimate msm_lm_with_weights(const LongitudinalDataset& ds, const Vector& weights,
                                     int outcome_j = 0);

// Backward linear-regression ICE recursion, counterfactual columns by
// feature-override; ATE = mean eta_1(all ones) - mean eta_1(all zeros).
BaselineEstimate ice_lm(const LongitudinalDataset& ds, int outcome_j = 0);

}  // namespace mase
