#include "mase/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mase {

namespace {

// WLS of y on (1, A_1, ..., A_T); returns (beta_0, ..., beta_T).
Vector weighted_msm_fit(const LongitudinalDataset& ds, const Vector& w, const Vector& y) {
    const Eigen::Index n = ds.n_subjects;
    const Eigen::Index T = ds.n_timepoints;
    Matrix X(n, T + 1);
    X.col(0).setOnes();
    X.rightCols(T) = ds.exposures;
    Matrix XtWX = X.transpose() * w.asDiagonal() * X;
    Eigen::SelfAdjointEigenSolver<Matrix> es(XtWX);
    if (es.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
        throw std::runtime_error("msm_lm: degenerate weighted design");
    return XtWX.ldlt().solve(X.transpose() * (w.asDiagonal() * y));
}

BaselineEstimate msm_from_weights(const LongitudinalDataset& ds, const Vector& w, int outcome_j) {
    ds.validate();
    if (outcome_j < 0 || outcome_j >= ds.q())
        throw std::invalid_argument("msm_lm: outcome index out of range");
    BaselineEstimate est;
    est.method = "msm_lm";
    est.weights = w;
    est.theta = weighted_msm_fit(ds, w, ds.outcomes[ds.n_timepoints - 1].col(outcome_j));
    est.ate = est.theta.tail(ds.n_timepoints).sum();
    return est;
}

}  // namespace

BaselineEstimate msm_lm(const LongitudinalDataset& ds, int outcome_j, TrimBounds trim) {
    ds.validate();
    const Eigen::Index n = ds.n_subjects;
    const int T = static_cast<int>(ds.n_timepoints);

    LearnerSpec logi;
    logi.kind = LearnerKind::logistic;

    Vector w = Vector::Ones(n);
    for (int t = 1; t <= T; ++t) {
        HistoryDesign hist = build_history(ds, t, false);
        Vector target = ds.exposures.col(t - 1);
        FittedLearner model = fit_learner(logi, hist.columns, target, Task::classification);
        Vector p = model.predict(hist.columns);
        for (Eigen::Index i = 0; i < n; ++i) {
            double obs = target(i) == 1.0 ? p(i) : 1.0 - p(i);
            w(i) /= std::clamp(obs, trim.lo, trim.hi);
        }
    }
    return msm_from_weights(ds, w, outcome_j);
}

BaselineEstimate msm_lm_with_weights(const LongitudinalDataset& ds, const Vector& weights,
                                     int outcome_j) {
    if (weights.size() != ds.n_subjects)
        throw std::invalid_argument("msm_lm: weight vector length mismatch");
    if (weights.minCoeff() <= 0.0)
        throw std::invalid_argument("msm_lm: weights must be positive");
    return msm_from_weights(ds, weights, outcome_j);
}

BaselineEstimate ice_lm(const LongitudinalDataset& ds, int outcome_j) {
    ds.validate();
    if (outcome_j < 0 || outcome_j >= ds.q())
        throw std::invalid_argument("ice_lm: outcome index out of range");
    const Eigen::Index n = ds.n_subjects;
    const int T = static_cast<int>(ds.n_timepoints);

    LearnerSpec lin;
    lin.kind = LearnerKind::linear;

    // Backward recursion, whole-sample fits, suffix layout as in the nuisance
    // module: columns[t-1][suffix_index(a_t..a_T)].
    std::vector<std::vector<Vector>> columns(T);
    for (int t = T; t >= 1; --t) {
        HistoryDesign hist = build_history(ds, t, true);
        const Eigen::Index override_col = static_cast<Eigen::Index>(t - 1);  // A@t

        std::vector<Vector> targets;
        if (t == T) {
            targets.push_back(ds.outcomes[T - 1].col(outcome_j));
        } else {
            targets = columns[t];
        }
        const int n_targets = static_cast<int>(targets.size());
        columns[t - 1].assign(2 * n_targets, Vector(n));

        for (int s = 0; s < n_targets; ++s) {
            FittedLearner model = fit_learner(lin, hist.columns, targets[s], Task::regression);
            Matrix X = hist.columns;
            for (int a = 0; a <= 1; ++a) {
                X.col(override_col).setConstant(static_cast<double>(a));
                columns[t - 1][a * n_targets + s] = model.predict(X);
            }
        }
    }

    BaselineEstimate est;
    est.method = "ice_lm";
    // MSM fit to the per-regime counterfactual means; the ATE reduces to the
    // all-ones vs all-zeros mean contrast.
    const auto regimes = enumerate_regimes(T);
    MsmSpec msm{T};
    Matrix G = msm.regime_gram();
    Vector rhs = Vector::Zero(T + 1);
    for (std::size_t r = 0; r < regimes.size(); ++r)
        rhs += msm.d(regimes[r].values) * columns[0][static_cast<int>(r)].mean();
    est.theta = G.ldlt().solve(rhs);
    est.ate = columns[0].back().mean() - columns[0].front().mean();
    return est;
}

}  // namespace mase
