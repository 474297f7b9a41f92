#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mase/dataset.hpp"

// Base learners used by the stacking ensemble: linear / logistic / elastic-net
// regressions and depth-limited CART trees (random forest, gradient boosting).
// Every fit is a pure function of (spec, data); all randomness comes from the
// spec seed.

namespace mase {

enum class LearnerKind { linear, logistic, elastic_net, random_forest, gradient_boosting };
enum class Task { regression, classification };
enum class CvMetric { mse, log_loss };

std::string to_string(LearnerKind k);
LearnerKind learner_kind_from_string(const std::string& s);

struct LearnerSpec {
    LearnerKind kind = LearnerKind::linear;
    double lambda = 0.0;            // elastic-net penalty
    double alpha = 0.5;             // elastic-net mixing, 0 = ridge, 1 = lasso
    int max_depth = 3;
    int n_trees = 100;
    int min_leaf = 5;
    double learning_rate = 0.1;     // boosting shrinkage, in (0,1]
    double subsample = 1.0;         // boosting row fraction
    double feature_fraction = 1.0;  // per-split feature fraction (forest/boosting)
    std::uint64_t seed = 0;

    void validate() const;          // throws on out-of-range hyperparameters
    nlohmann::json to_json() const;
    static LearnerSpec from_json(const nlohmann::json& j);
};

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    double value = 0.0;             // leaf prediction
    int left = -1, right = -1;      // -1 marks a leaf
};

struct Tree {
    std::vector<TreeNode> nodes;
    double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct FittedLearner {
    LearnerSpec spec;
    Task task = Task::regression;

    // Linear family. Coefficients are reported on the original feature scale;
    // the fit-space (standardized) copies back the KKT check.
    Vector coef;
    double intercept = 0.0;
    Vector coef_std;
    double intercept_std = 0.0;
    Vector feat_mean, feat_scale;

    // Tree family.
    std::vector<Tree> trees;
    double base_score = 0.0;        // boosting initial score

    bool degenerate_target = false; // constant classification target fallback
    Eigen::Index n_features = 0;

    Vector predict(const Matrix& X) const;

    nlohmann::json to_json() const;
    static FittedLearner from_json(const nlohmann::json& j);
};

FittedLearner fit_learner(const LearnerSpec& spec, const Matrix& X, const Vector& y, Task task);

// k-fold cross-validated grid selection; ties go to the earliest grid entry.
LearnerSpec tune(const std::vector<LearnerSpec>& grid, const Matrix& X, const Vector& y,
                 Task task, int k, CvMetric metric, std::uint64_t seed);

// Max coordinate-wise violation of the elastic-net stationarity condition,
// evaluated in the standardized fit space.
double kkt_check(const FittedLearner& model, const Matrix& X, const Vector& y);

// Internal tree builder, exposed for the forest/boosting implementations.
struct TreeParams {
    int max_depth = 3;
    int min_leaf = 5;
    double feature_fraction = 1.0;
    bool gini = false;              // false: variance criterion
};
Tree build_cart(const Matrix& X, const Vector& y, const std::vector<int>& rows,
                const TreeParams& params, std::mt19937_64& rng);

double mean_squared_error(const Vector& pred, const Vector& y);
double log_loss(const Vector& prob, const Vector& y);

}  // namespace mase
