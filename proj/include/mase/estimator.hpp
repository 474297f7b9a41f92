#pragma once

#include <vector>

#include "mase/dataset.hpp"
#include "mase/nuisance.hpp"

// The estimating equation: per-subject score terms S_0..S_T built from the
// cross-fitted nuisance values, the closed-form linear solve (only S_0 depends
// on theta, affinely), a Newton solver cross-check, and a Gateaux-derivative
// probe of the score's insensitivity to nuisance perturbations.

namespace mase {

// Linear marginal structural model tau(a; theta) = beta_0 + sum_t beta_t a_t,
// theta = (beta_0, beta_1, ..., beta_T).
struct MsmSpec {
    int T = 2;

    int theta_dim() const { return T + 1; }
    Vector d(const std::vector<int>& regime) const;       // (1, a_1, ..., a_T)
    double tau(const std::vector<int>& regime, const Vector& theta) const;
    Matrix regime_gram() const;                           // sum over regimes of d d^T
};

struct ScoreTerms {
    // terms[k] = S_k for k = 0..T; psi = their sum. Only S_0 depends on theta.
    std::vector<Vector> terms;
    Vector psi() const;
};

enum class ScoreKind {
    doubly_robust,   // S_0 + S_1 + ... + S_T
    ice_only,        // S_0 alone (g-computation moment)
    ipw_terminal,    // the terminal inverse-probability term alone
};

std::vector<ScoreTerms> compute_scores(const LongitudinalDataset& ds, const NuisanceValues& nv,
                                       const MsmSpec& msm, const Vector& theta, int outcome_j = 0,
                                       ScoreKind kind = ScoreKind::doubly_robust);

enum class SolverKind { closed_form, newton };

struct ThetaEstimate {
    Vector theta;
    SolverKind solver = SolverKind::closed_form;
    double condition_number = 0.0;
    int iterations = 0;

    double ate() const { return theta.tail(theta.size() - 1).sum(); }
};

// Closed form: sum_i Psi_i(theta) = 0 reduces to the fixed regime Gram system.
// `scores` may be evaluated at any reference theta.
ThetaEstimate solve_linear(const std::vector<ScoreTerms>& scores, const Vector& theta_ref,
                           const MsmSpec& msm);

ThetaEstimate solve_newton(const LongitudinalDataset& ds, const NuisanceValues& nv,
                           const MsmSpec& msm, const Vector& theta_init, double tol = 1e-10,
                           int max_iter = 100, int outcome_j = 0);

// Pooled cross-fit estimate from fitted nuisances (fold pairing validated).
ThetaEstimate crossfit_estimate(const LongitudinalDataset& ds, const FoldSplit& folds,
                                const PropensityFit& pf, const IceStack& ice, const MsmSpec& msm,
                                int outcome_j = 0);

// G-computation from the eta_1 columns alone (used by robustness contrasts).
ThetaEstimate solve_ice_only(const LongitudinalDataset& ds, const NuisanceValues& nv,
                             const MsmSpec& msm, int outcome_j = 0);

// Classic weighted estimating equation d(A) w (Y_T - tau(A; theta)) = 0 with
// supplied observed-arm probabilities (used by robustness contrasts).
ThetaEstimate solve_ipw_only(const LongitudinalDataset& ds, const Matrix& ps_observed,
                             const MsmSpec& msm, int outcome_j = 0);

// Analytic Jacobian of the mean doubly-robust score: -(regime Gram matrix).
Matrix score_jacobian(const MsmSpec& msm);

struct NuisancePerturbation {
    Matrix d_ps;                            // n x T shift of observed-arm probabilities
    std::vector<std::vector<Vector>> d_eta; // same shape as NuisanceValues::eta
};

struct ProbeResult {
    Vector mean_score_at_truth;             // mean Psi at r = 0
    Vector mean_score_se;
    Vector derivative;                      // central difference at r = 0
    Vector derivative_se;                   // MC standard error per component
};

// Evaluates the mean score along (eta*, pi*) + r (delta_eta, delta_pi) and
// returns the directional derivative at r = 0. Throws if any perturbed
// probability leaves (0, 1) on the grid.
ProbeResult orthogonality_probe(const LongitudinalDataset& ds, const NuisanceValues& truth,
                                const NuisancePerturbation& dir, const MsmSpec& msm,
                                const Vector& theta, const std::vector<double>& r_grid,
                                int outcome_j = 0,
                                ScoreKind kind = ScoreKind::doubly_robust);

}  // namespace mase
