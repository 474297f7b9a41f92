#include "mase/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mase {

Vector MsmSpec::d(const std::vector<int>& regime) const {
    if (static_cast<int>(regime.size()) != T)
        throw std::invalid_argument("msm: regime length must equal T");
    Vector v(T + 1);
    v(0) = 1.0;
    for (int t = 0; t < T; ++t) v(t + 1) = static_cast<double>(regime[t]);
    return v;
}

double MsmSpec::tau(const std::vector<int>& regime, const Vector& theta) const {
    if (theta.size() != theta_dim())
        throw std::invalid_argument("msm: theta dimension mismatch");
    double v = theta(0);
    for (int t = 0; t < T; ++t) v += theta(t + 1) * regime[t];
    return v;
}

Matrix MsmSpec::regime_gram() const {
    Matrix G = Matrix::Zero(theta_dim(), theta_dim());
    for (const auto& r : enumerate_regimes(T)) {
        Vector dv = d(r.values);
        G += dv * dv.transpose();
    }
    return G;
}

Vector ScoreTerms::psi() const {
    Vector sum = Vector::Zero(terms.empty() ? 0 : terms[0].size());
    for (const auto& t : terms) sum += t;
    return sum;
}

namespace {

void check_nuisance_shape(const LongitudinalDataset& ds, const NuisanceValues& nv,
                          const MsmSpec& msm) {
    const int T = msm.T;
    if (static_cast<int>(ds.n_timepoints) != T)
        throw std::invalid_argument("scores: dataset timepoints do not match the MSM");
    if (nv.ps_observed.rows() != ds.n_subjects || nv.ps_observed.cols() != T)
        throw std::invalid_argument("scores: propensity value shape mismatch");
    if (static_cast<int>(nv.eta.size()) != T)
        throw std::invalid_argument("scores: eta level count mismatch");
    for (int t = 1; t <= T; ++t) {
        if (static_cast<int>(nv.eta[t - 1].size()) != (1 << (T - t + 1)))
            throw std::invalid_argument("scores: eta suffix count mismatch at t=" +
                                        std::to_string(t));
        for (const auto& col : nv.eta[t - 1])
            if (col.size() != ds.n_subjects)
                throw std::invalid_argument("scores: eta column length mismatch");
    }
}

}  // namespace

std::vector<ScoreTerms> compute_scores(const LongitudinalDataset& ds, const NuisanceValues& nv,
                                       const MsmSpec& msm, const Vector& theta, int outcome_j,
                                       ScoreKind kind) {
    check_nuisance_shape(ds, nv, msm);
    const int T = msm.T;
    const Eigen::Index n = ds.n_subjects;
    const int dim = msm.theta_dim();
    const Vector& y_final = ds.outcomes[T - 1].col(outcome_j);
    const auto regimes = enumerate_regimes(T);

    std::vector<ScoreTerms> out(n);
    std::vector<int> observed(T), regime_buf(T);

    for (Eigen::Index i = 0; i < n; ++i) {
        for (int t = 0; t < T; ++t) observed[t] = static_cast<int>(ds.exposures(i, t));

        ScoreTerms& st = out[i];
        st.terms.assign(T + 1, Vector::Zero(dim));

        // S_0: sum over all regimes of d(a)(eta_1(a) - tau(a; theta)).
        if (kind != ScoreKind::ipw_terminal) {
            for (std::size_t r = 0; r < regimes.size(); ++r) {
                Vector dv = msm.d(regimes[r].values);
                double resid = nv.eta[0][static_cast<int>(r)](i) - msm.tau(regimes[r].values, theta);
                st.terms[0] += dv * resid;
            }
        }
        if (kind == ScoreKind::ice_only) continue;

        // Cumulative inverse-probability weight up to each timepoint.
        double w = 1.0;
        std::vector<double> cumw(T);
        for (int t = 0; t < T; ++t) {
            w /= nv.ps_observed(i, t);
            cumw[t] = w;
        }

        // Terminal term: d(observed) w_T (Y_T - eta_T at the observed arm).
        {
            Vector dv = msm.d(observed);
            double resid = y_final(i) - nv.eta[T - 1][observed[T - 1]](i);
            st.terms[T] = dv * (cumw[T - 1] * resid);
        }
        if (kind == ScoreKind::ipw_terminal) continue;

        // Intermediate terms: for t = 1..T-1, sum over future suffixes s of
        // d(A_1..A_t, s) w_t (eta_{t+1}(s) - eta_t(A_t, s)).
        for (int t = 1; t <= T - 1; ++t) {
            const int n_suffix = 1 << (T - t);  // suffixes (a_{t+1},...,a_T)
            for (int s = 0; s < n_suffix; ++s) {
                for (int k = 0; k < t; ++k) regime_buf[k] = observed[k];
                for (int k = t; k < T; ++k)
                    regime_buf[k] = (s >> (T - 1 - k)) & 1;
                Vector dv = msm.d(regime_buf);
                double eta_next = nv.eta[t][s](i);
                double eta_cur = nv.eta[t - 1][observed[t - 1] * n_suffix + s](i);
                st.terms[t] += dv * (cumw[t - 1] * (eta_next - eta_cur));
            }
        }
    }
    return out;
}

ThetaEstimate solve_linear(const std::vector<ScoreTerms>& scores, const Vector& theta_ref,
                           const MsmSpec& msm) {
    const int dim = msm.theta_dim();
    const double n = static_cast<double>(scores.size());
    if (scores.empty()) throw std::invalid_argument("solve_linear: no scores");

    Vector mean_psi = Vector::Zero(dim);
    for (const auto& st : scores) mean_psi += st.psi();
    mean_psi /= n;

    Matrix G = msm.regime_gram();
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (lo <= 1e-12 * std::max(1.0, hi))
        throw std::runtime_error("solve_linear: singular regime Gram system");

    ThetaEstimate est;
    est.solver = SolverKind::closed_form;
    est.condition_number = hi / lo;
    // mean Psi(theta) = mean Psi(theta_ref) - G (theta - theta_ref).
    est.theta = theta_ref + G.ldlt().solve(mean_psi);
    return est;
}

ThetaEstimate solve_newton(const LongitudinalDataset& ds, const NuisanceValues& nv,
                           const MsmSpec& msm, const Vector& theta_init, double tol, int max_iter,
                           int outcome_j) {
    const int dim = msm.theta_dim();
    Matrix J = score_jacobian(msm);
    ThetaEstimate est;
    est.solver = SolverKind::newton;
    est.theta = theta_init;
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(-J);
        est.condition_number = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    }
    for (int iter = 0; iter <= max_iter; ++iter) {
        auto scores = compute_scores(ds, nv, msm, est.theta, outcome_j);
        Vector mean_psi = Vector::Zero(dim);
        for (const auto& st : scores) mean_psi += st.psi();
        mean_psi /= static_cast<double>(scores.size());
        if (mean_psi.norm() < tol) {
            est.iterations = iter;
            return est;
        }
        if (iter == max_iter) break;
        est.theta -= J.partialPivLu().solve(mean_psi);
    }
    throw std::runtime_error("solve_newton: no convergence after " + std::to_string(max_iter) +
                             " iterations");
}

ThetaEstimate crossfit_estimate(const LongitudinalDataset& ds, const FoldSplit& folds,
                                const PropensityFit& pf, const IceStack& ice, const MsmSpec& msm,
                                int outcome_j) {
    if (pf.folds.fold_a != folds.fold_a || ice.folds.fold_a != folds.fold_a)
        throw std::invalid_argument("crossfit_estimate: nuisances were fit on different folds");
    NuisanceValues nv = make_nuisance_values(pf, ice);
    Vector zero = Vector::Zero(msm.theta_dim());
    auto scores = compute_scores(ds, nv, msm, zero, outcome_j);
    return solve_linear(scores, zero, msm);
}

ThetaEstimate solve_ice_only(const LongitudinalDataset& ds, const NuisanceValues& nv,
                             const MsmSpec& msm, int outcome_j) {
    Vector zero = Vector::Zero(msm.theta_dim());
    auto scores = compute_scores(ds, nv, msm, zero, outcome_j, ScoreKind::ice_only);
    return solve_linear(scores, zero, msm);
}

ThetaEstimate solve_ipw_only(const LongitudinalDataset& ds, const Matrix& ps_observed,
                             const MsmSpec& msm, int outcome_j) {
    const int T = msm.T;
    const Eigen::Index n = ds.n_subjects;
    const Vector& y = ds.outcomes[T - 1].col(outcome_j);
    Matrix lhs = Matrix::Zero(msm.theta_dim(), msm.theta_dim());
    Vector rhs = Vector::Zero(msm.theta_dim());
    std::vector<int> observed(T);
    for (Eigen::Index i = 0; i < n; ++i) {
        double w = 1.0;
        for (int t = 0; t < T; ++t) {
            w /= ps_observed(i, t);
            observed[t] = static_cast<int>(ds.exposures(i, t));
        }
        Vector dv = msm.d(observed);
        lhs += w * dv * dv.transpose();
        rhs += w * dv * y(i);
    }
    ThetaEstimate est;
    est.solver = SolverKind::closed_form;
    Eigen::SelfAdjointEigenSolver<Matrix> es(lhs);
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (lo <= 1e-12 * std::max(1.0, hi))
        throw std::runtime_error("solve_ipw_only: degenerate weighted design");
    est.condition_number = hi / lo;
    est.theta = lhs.ldlt().solve(rhs);
    return est;
}

Matrix score_jacobian(const MsmSpec& msm) { return -msm.regime_gram(); }

ProbeResult orthogonality_probe(const LongitudinalDataset& ds, const NuisanceValues& truth,
                                const NuisancePerturbation& dir, const MsmSpec& msm,
                                const Vector& theta, const std::vector<double>& r_grid,
                                int outcome_j, ScoreKind kind) {
    if (r_grid.empty()) throw std::invalid_argument("probe: empty r grid");
    const Eigen::Index n = ds.n_subjects;
    const int dim = msm.theta_dim();

    auto perturbed = [&](double r) {
        NuisanceValues nv = truth;
        nv.ps_observed += r * dir.d_ps;
        if (nv.ps_observed.minCoeff() <= 0.0 || nv.ps_observed.maxCoeff() >= 1.0)
            throw std::invalid_argument("probe: perturbation violates positivity at r=" +
                                        std::to_string(r));
        for (std::size_t t = 0; t < nv.eta.size(); ++t)
            for (std::size_t s = 0; s < nv.eta[t].size(); ++s)
                nv.eta[t][s] += r * dir.d_eta[t][s];
        return nv;
    };

    double h = std::abs(r_grid[0]);
    for (double r : r_grid)
        if (r != 0.0) h = std::min(h, std::abs(r));
    if (h == 0.0) throw std::invalid_argument("probe: grid needs a nonzero r");
    for (double r : r_grid) perturbed(r);  // positivity check over the whole grid

    auto mean_and_se = [&](const std::vector<ScoreTerms>& scores, Vector& mean, Vector& se) {
        mean = Vector::Zero(dim);
        for (const auto& st : scores) mean += st.psi();
        mean /= static_cast<double>(n);
        Vector var = Vector::Zero(dim);
        for (const auto& st : scores) {
            Vector d0 = st.psi() - mean;
            var += d0.cwiseProduct(d0);
        }
        se = (var / static_cast<double>(n - 1) / static_cast<double>(n)).cwiseSqrt();
    };

    ProbeResult res;
    auto at_truth = compute_scores(ds, truth, msm, theta, outcome_j, kind);
    mean_and_se(at_truth, res.mean_score_at_truth, res.mean_score_se);

    auto plus = compute_scores(ds, perturbed(h), msm, theta, outcome_j, kind);
    auto minus = compute_scores(ds, perturbed(-h), msm, theta, outcome_j, kind);
    Vector mean_d = Vector::Zero(dim), var_d = Vector::Zero(dim);
    std::vector<Vector> diffs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        diffs[i] = (plus[i].psi() - minus[i].psi()) / (2.0 * h);
        mean_d += diffs[i];
    }
    mean_d /= static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector c = diffs[i] - mean_d;
        var_d += c.cwiseProduct(c);
    }
    res.derivative = mean_d;
    res.derivative_se = (var_d / static_cast<double>(n - 1) / static_cast<double>(n)).cwiseSqrt();
    return res;
}

}  // namespace mase
