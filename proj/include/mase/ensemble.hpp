#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mase/learners.hpp"

// Stacked ensembles: base learners tuned and fit on one subject fold, a plain
// linear (logistic) meta regression fit on the other fold with the base
// predictions as features. Meta weights are unconstrained and may be negative.

namespace mase {

struct StackedModel {
    Task task = Task::regression;
    std::vector<FittedLearner> base_models;
    Vector meta_weights;            // length M (one per base model)
    double meta_intercept = 0.0;
    bool collinear_flag = false;    // meta design needed the ridge jitter badly
    bool meta_has_intercept = true;

    Vector predict(const Matrix& X) const;
    // Combination applied to precomputed base predictions (n x M).
    Vector combine(const Matrix& base_preds) const;

    nlohmann::json to_json() const;
    static StackedModel from_json(const nlohmann::json& j);
};

using StackedRegressor = StackedModel;
using StackedClassifier = StackedModel;

struct StackOptions {
    bool meta_intercept = true;
    int tune_folds = 3;
    std::uint64_t tune_seed = 0;
};

// Fits one stack: every spec group in `base_grids` contributes one tuned base
// model (grid of one = no tuning). `train` and `meta` must come from disjoint
// subject folds; fold hygiene is the caller's contract.
StackedModel fit_stacked(const std::vector<std::vector<LearnerSpec>>& base_grids,
                         const Matrix& X_train, const Vector& y_train,
                         const Matrix& X_meta, const Vector& y_meta,
                         Task task, const StackOptions& opts = {});

}  // namespace mase
