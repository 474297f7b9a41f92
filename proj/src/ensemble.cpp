#include "mase/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mase {

namespace {

constexpr double kMetaJitter = 1e-8;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double clamp_prob(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

Matrix base_prediction_matrix(const std::vector<FittedLearner>& models, const Matrix& X) {
    Matrix P(X.rows(), static_cast<Eigen::Index>(models.size()));
    for (std::size_t m = 0; m < models.size(); ++m) P.col(m) = models[m].predict(X);
    return P;
}

// Weighted least squares for the meta model; flags near-collinear designs.
void fit_meta_linear(StackedModel& stack, const Matrix& P, const Vector& y) {
    const Eigen::Index n = P.rows(), m = P.cols();
    const Eigen::Index d = m + (stack.meta_has_intercept ? 1 : 0);
    Matrix D(n, d);
    Eigen::Index off = 0;
    if (stack.meta_has_intercept) { D.col(0).setOnes(); off = 1; }
    D.rightCols(m) = P;

    Matrix G = D.transpose() * D / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    stack.collinear_flag = (lo <= kMetaJitter * std::max(1.0, hi) * 10.0);
    G.diagonal().array() += kMetaJitter;
    Vector b = D.transpose() * y / static_cast<double>(n);
    Vector w = G.ldlt().solve(b);
    stack.meta_intercept = stack.meta_has_intercept ? w(0) : 0.0;
    stack.meta_weights = w.tail(m);
    (void)off;
}

// IRLS logistic meta model over base predicted probabilities.
void fit_meta_logistic(StackedModel& stack, const Matrix& P, const Vector& y) {
    const Eigen::Index n = P.rows(), m = P.cols();
    const Eigen::Index d = m + (stack.meta_has_intercept ? 1 : 0);
    Matrix D(n, d);
    if (stack.meta_has_intercept) D.col(0).setOnes();
    D.rightCols(m) = P;

    {
        Matrix G = D.transpose() * D / static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Matrix> es(G);
        double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        stack.collinear_flag = (lo <= kMetaJitter * std::max(1.0, hi) * 10.0);
    }

    Vector beta = Vector::Zero(d);
    for (int iter = 0; iter < 100; ++iter) {
        Vector eta = D * beta;
        Vector p = eta.unaryExpr([](double v) { return sigmoid(v); });
        Vector grad = D.transpose() * (p - y) / static_cast<double>(n) + kMetaJitter * beta;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
        Vector w = (p.array() * (1.0 - p.array())).cwiseMax(1e-10);
        Matrix H = D.transpose() * w.asDiagonal() * D / static_cast<double>(n);
        H.diagonal().array() += kMetaJitter;
        beta -= H.ldlt().solve(grad);
    }
    stack.meta_intercept = stack.meta_has_intercept ? beta(0) : 0.0;
    stack.meta_weights = stack.meta_has_intercept ? beta.tail(m).eval() : beta;
}

}  // namespace

Vector StackedModel::combine(const Matrix& base_preds) const {
    if (base_preds.cols() != meta_weights.size())
        throw std::invalid_argument("stack: base prediction count mismatch");
    Vector score = (base_preds * meta_weights).array() + meta_intercept;
    if (task == Task::classification)
        for (Eigen::Index i = 0; i < score.size(); ++i)
            score(i) = clamp_prob(sigmoid(score(i)));
    return score;
}

Vector StackedModel::predict(const Matrix& X) const {
    return combine(base_prediction_matrix(base_models, X));
}

StackedModel fit_stacked(const std::vector<std::vector<LearnerSpec>>& base_grids,
                         const Matrix& X_train, const Vector& y_train,
                         const Matrix& X_meta, const Vector& y_meta,
                         Task task, const StackOptions& opts) {
    if (base_grids.empty()) throw std::invalid_argument("fit_stacked: need at least one base grid");
    if (X_train.rows() == 0 || X_meta.rows() == 0)
        throw std::invalid_argument("fit_stacked: empty fold");

    StackedModel stack;
    stack.task = task;
    stack.meta_has_intercept = opts.meta_intercept;
    CvMetric metric = (task == Task::classification) ? CvMetric::log_loss : CvMetric::mse;
    for (const auto& grid : base_grids) {
        LearnerSpec chosen = (grid.size() == 1)
                                 ? grid.front()
                                 : tune(grid, X_train, y_train, task, opts.tune_folds, metric,
                                        opts.tune_seed);
        stack.base_models.push_back(fit_learner(chosen, X_train, y_train, task));
    }

    Matrix P = base_prediction_matrix(stack.base_models, X_meta);
    if (task == Task::classification)
        fit_meta_logistic(stack, P, y_meta);
    else
        fit_meta_linear(stack, P, y_meta);
    return stack;
}

nlohmann::json StackedModel::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["task"] = (task == Task::regression) ? "regression" : "classification";
    j["meta_intercept"] = meta_intercept;
    j["meta_has_intercept"] = meta_has_intercept;
    j["collinear_flag"] = collinear_flag;
    j["meta_weights"] = std::vector<double>(meta_weights.data(),
                                            meta_weights.data() + meta_weights.size());
    nlohmann::json bases = nlohmann::json::array();
    for (const auto& b : base_models) bases.push_back(b.to_json());
    j["base_models"] = std::move(bases);
    return j;
}

StackedModel StackedModel::from_json(const nlohmann::json& j) {
    StackedModel s;
    s.task = (j.at("task").get<std::string>() == "regression") ? Task::regression
                                                               : Task::classification;
    s.meta_intercept = j.at("meta_intercept").get<double>();
    s.meta_has_intercept = j.at("meta_has_intercept").get<bool>();
    s.collinear_flag = j.at("collinear_flag").get<bool>();
    auto w = j.at("meta_weights").get<std::vector<double>>();
    s.meta_weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    for (const auto& b : j.at("base_models")) s.base_models.push_back(FittedLearner::from_json(b));
    return s;
}

}  // namespace mase
