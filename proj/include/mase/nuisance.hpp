#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mase/dataset.hpp"
#include "mase/ensemble.hpp"

// Cross-fitted nuisance estimation. Propensity scores: one stacked classifier
// per timepoint per fold role. Iterative conditional means: a backward
// recursion where the step-(t+1) counterfactual predictions become the
// regression targets at step t, with fold roles swapped so that no subject is
// ever scored by a stack whose base models saw its fold.

namespace mase {

struct TrimBounds {
    double lo = 0.01;
    double hi = 0.99;
};

// Index of a suffix (a_t,...,a_T) in the lexicographic enumeration.
int suffix_index(const std::vector<int>& values);

struct PropensityFit {
    FoldSplit folds;
    TrimBounds trim;
    // stacks[t-1][0]: base models trained on fold_a (scores fold_b subjects);
    // stacks[t-1][1]: base models trained on fold_b (scores fold_a subjects).
    std::vector<std::array<StackedClassifier, 2>> stacks;
    Matrix prob_treated;      // n x T, cross-fitted trimmed P(A_t = 1 | history)
    Matrix prob_treated_raw;  // n x T, before trimming (diagnostics)
    Matrix prob_observed;     // n x T, trimmed probability of the observed arm
    std::vector<bool> constant_exposure_flag;  // per timepoint
};

struct IceStack {
    FoldSplit folds;
    int outcome_index = 0;
    // columns[t-1][suffix_index]: cross-fitted counterfactual predictions
    // eta_t(suffix; observed history) for all n subjects.
    std::vector<std::vector<Vector>> columns;
    // stacks[t-1][role][target_suffix_index]: the regressors behind them.
    std::vector<std::array<std::vector<StackedRegressor>, 2>> stacks;
    std::vector<std::array<bool, 2>> tuned_once;  // bookkeeping per timepoint
};

struct NuisanceOptions {
    StackOptions stack;
    bool per_suffix_tuning = false;  // re-tune base learners for every ICE suffix
};

PropensityFit fit_propensity(const LongitudinalDataset& ds, const FoldSplit& folds,
                             const std::vector<std::vector<LearnerSpec>>& base_grids,
                             TrimBounds trim = {}, const NuisanceOptions& opts = {});

// Per-subject product of inverse observed-arm probabilities over t <= upto.
Vector cumulative_weights(const PropensityFit& pf, int upto);

IceStack fit_ice(const LongitudinalDataset& ds, const FoldSplit& folds,
                 const std::vector<std::vector<LearnerSpec>>& base_grids, int outcome_j,
                 const NuisanceOptions& opts = {});

Vector eta_lookup(const IceStack& stack, int t, const TreatmentRegime& suffix,
                  const std::vector<Eigen::Index>& subjects);

// Plain per-subject nuisance values consumed by the score; either assembled
// from cross-fitted models or supplied directly (oracle tests, probes).
struct NuisanceValues {
    Matrix ps_observed;                        // n x T, in (0,1)
    std::vector<std::vector<Vector>> eta;      // eta[t-1][suffix_index], n each
    int n_timepoints() const { return static_cast<int>(eta.size()); }
};

// Throws if pf and ice were built on different fold splits.
NuisanceValues make_nuisance_values(const PropensityFit& pf, const IceStack& ice);

}  // namespace mase
