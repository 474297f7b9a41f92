#include "mase/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mase {

namespace {

Matrix take_rows(const Matrix& X, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = X.row(rows[i]);
    return out;
}

Vector take_rows(const Vector& v, const std::vector<Eigen::Index>& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(i) = v(rows[i]);
    return out;
}

bool is_constant(const Vector& v) {
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) != v(0)) return false;
    return true;
}

void check_folds(const LongitudinalDataset& ds, const FoldSplit& folds) {
    if (folds.fold_a.size() + folds.fold_b.size() != static_cast<std::size_t>(ds.n_subjects))
        throw std::invalid_argument("nuisance: fold split does not cover the dataset");
    if (folds.fold_a.size() < 4 || folds.fold_b.size() < 4)
        throw std::invalid_argument("nuisance: fold too small for internal CV");
}

// Tunes each grid on the training rows and returns the chosen spec per grid.
std::vector<std::vector<LearnerSpec>> tuned_singleton_grids(
    const std::vector<std::vector<LearnerSpec>>& grids, const Matrix& X, const Vector& y,
    Task task, const StackOptions& opts) {
    std::vector<std::vector<LearnerSpec>> out;
    CvMetric metric = (task == Task::classification) ? CvMetric::log_loss : CvMetric::mse;
    for (const auto& grid : grids) {
        LearnerSpec chosen = (grid.size() == 1)
                                 ? grid.front()
                                 : tune(grid, X, y, task, opts.tune_folds, metric, opts.tune_seed);
        out.push_back({chosen});
    }
    return out;
}

}  // namespace

int suffix_index(const std::vector<int>& values) {
    int idx = 0;
    for (int v : values) idx = (idx << 1) | (v & 1);
    return idx;
}

PropensityFit fit_propensity(const LongitudinalDataset& ds, const FoldSplit& folds,
                             const std::vector<std::vector<LearnerSpec>>& base_grids,
                             TrimBounds trim, const NuisanceOptions& opts) {
    check_folds(ds, folds);
    const Eigen::Index n = ds.n_subjects;
    const int T = static_cast<int>(ds.n_timepoints);

    PropensityFit pf;
    pf.folds = folds;
    pf.trim = trim;
    pf.prob_treated.resize(n, T);
    pf.prob_treated_raw.resize(n, T);
    pf.prob_observed.resize(n, T);
    pf.constant_exposure_flag.assign(T, false);

    const std::vector<Eigen::Index>* fold_rows[2] = {&folds.fold_a, &folds.fold_b};
    for (int t = 1; t <= T; ++t) {
        HistoryDesign hist = build_history(ds, t, false);
        Vector target = ds.exposures.col(t - 1);

        std::array<StackedClassifier, 2> stacks;
        for (int role = 0; role < 2; ++role) {
            const auto& train = *fold_rows[role];
            const auto& meta = *fold_rows[1 - role];
            Vector y_train = take_rows(target, train);
            if (is_constant(y_train)) pf.constant_exposure_flag[t - 1] = true;
            stacks[role] = fit_stacked(base_grids, take_rows(hist.columns, train),
                                       y_train, take_rows(hist.columns, meta),
                                       take_rows(target, meta), Task::classification, opts.stack);
        }

        // Cross-fit: fold_b subjects scored by the fold_a-trained stack and
        // vice versa.
        for (int role = 0; role < 2; ++role) {
            const auto& scored = *fold_rows[1 - role];
            Vector p = stacks[role].predict(take_rows(hist.columns, scored));
            for (std::size_t i = 0; i < scored.size(); ++i) {
                Eigen::Index subj = scored[i];
                double raw = p(i);
                double obs = ds.exposures(subj, t - 1) == 1.0 ? raw : 1.0 - raw;
                pf.prob_treated_raw(subj, t - 1) = raw;
                pf.prob_treated(subj, t - 1) = std::clamp(raw, trim.lo, trim.hi);
                pf.prob_observed(subj, t - 1) = std::clamp(obs, trim.lo, trim.hi);
            }
        }
        pf.stacks.push_back(std::move(stacks));
    }
    return pf;
}

Vector cumulative_weights(const PropensityFit& pf, int upto) {
    if (upto < 1 || upto > pf.prob_observed.cols())
        throw std::invalid_argument("cumulative_weights: upto out of range");
    Vector w = Vector::Ones(pf.prob_observed.rows());
    for (int t = 0; t < upto; ++t)
        w.array() /= pf.prob_observed.col(t).array();
    return w;
}

IceStack fit_ice(const LongitudinalDataset& ds, const FoldSplit& folds,
                 const std::vector<std::vector<LearnerSpec>>& base_grids, int outcome_j,
                 const NuisanceOptions& opts) {
    check_folds(ds, folds);
    if (outcome_j < 0 || outcome_j >= ds.q())
        throw std::invalid_argument("fit_ice: outcome index out of range");
    const Eigen::Index n = ds.n_subjects;
    const int T = static_cast<int>(ds.n_timepoints);

    IceStack ice;
    ice.folds = folds;
    ice.outcome_index = outcome_j;
    ice.columns.assign(T, {});
    ice.stacks.resize(T);
    ice.tuned_once.assign(T, {false, false});

    const std::vector<Eigen::Index>* fold_rows[2] = {&folds.fold_a, &folds.fold_b};

    // Backward over timepoints; at step t the targets are the step t+1
    // counterfactual columns (observed Y_T at step T).
    for (int t = T; t >= 1; --t) {
        HistoryDesign hist = build_history(ds, t, true);
        const Eigen::Index a_col = static_cast<Eigen::Index>(t - 1);  // A@t column position
        // build_history puts A_1..A_{t-1} first, then A_t when flagged.
        const Eigen::Index override_col = a_col;

        std::vector<Vector> targets;  // one per target suffix at t+1
        if (t == T) {
            targets.push_back(ds.outcomes[T - 1].col(outcome_j));
        } else {
            targets = ice.columns[t];  // suffixes (a_{t+1},...,a_T), lexicographic
        }
        const int n_targets = static_cast<int>(targets.size());
        ice.columns[t - 1].assign(2 * n_targets, Vector::Zero(n));

        for (int role = 0; role < 2; ++role) {
            const auto& train = *fold_rows[role];
            const auto& meta = *fold_rows[1 - role];
            Matrix X_train = take_rows(hist.columns, train);
            Matrix X_meta = take_rows(hist.columns, meta);

            // Tune on the first target suffix, then reuse the chosen specs.
            std::vector<std::vector<LearnerSpec>> grids = base_grids;
            if (!opts.per_suffix_tuning) {
                grids = tuned_singleton_grids(base_grids, X_train, take_rows(targets[0], train),
                                              Task::regression, opts.stack);
                ice.tuned_once[t - 1][role] = true;
            }

            ice.stacks[t - 1][role].clear();
            for (int s = 0; s < n_targets; ++s) {
                StackedRegressor stack =
                    fit_stacked(grids, X_train, take_rows(targets[s], train), X_meta,
                                take_rows(targets[s], meta), Task::regression, opts.stack);

                // Counterfactual columns for the subjects this stack may score
                // (the fold its base models never trained on).
                const auto& scored = *fold_rows[1 - role];
                Matrix X_scored = take_rows(hist.columns, scored);
                for (int a = 0; a <= 1; ++a) {
                    X_scored.col(override_col).setConstant(static_cast<double>(a));
                    Vector pred = stack.predict(X_scored);
                    // New suffix (a, s-bits) has index a * n_targets + s.
                    Vector& col = ice.columns[t - 1][a * n_targets + s];
                    for (std::size_t i = 0; i < scored.size(); ++i) col(scored[i]) = pred(i);
                }
                ice.stacks[t - 1][role].push_back(std::move(stack));
            }
        }
        if (static_cast<int>(ice.columns[t - 1].size()) != (1 << (T - t + 1)))
            throw std::logic_error("fit_ice: suffix bookkeeping mismatch");
    }
    return ice;
}

Vector eta_lookup(const IceStack& stack, int t, const TreatmentRegime& suffix,
                  const std::vector<Eigen::Index>& subjects) {
    const int T = static_cast<int>(stack.columns.size());
    if (t < 1 || t > T) throw std::invalid_argument("eta_lookup: t out of range");
    if (static_cast<int>(suffix.values.size()) != T - t + 1)
        throw std::invalid_argument("eta_lookup: suffix length must be T - t + 1");
    const Vector& col = stack.columns[t - 1][suffix_index(suffix.values)];
    Vector out(static_cast<Eigen::Index>(subjects.size()));
    for (std::size_t i = 0; i < subjects.size(); ++i) out(i) = col(subjects[i]);
    return out;
}

NuisanceValues make_nuisance_values(const PropensityFit& pf, const IceStack& ice) {
    if (pf.folds.seed != ice.folds.seed || pf.folds.fold_a != ice.folds.fold_a)
        throw std::invalid_argument("nuisance: propensity and ICE fits use different fold splits");
    NuisanceValues nv;
    nv.ps_observed = pf.prob_observed;
    nv.eta = ice.columns;
    return nv;
}

}  // namespace mase
