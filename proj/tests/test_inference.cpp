#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "mase/inference.hpp"
#include "mase/nuisance.hpp"

using namespace mase;

namespace {

LongitudinalDataset make_ds(const Matrix& exposures, const Vector& y_final) {
    LongitudinalDataset ds;
    ds.n_subjects = exposures.rows();
    ds.n_timepoints = exposures.cols();
    ds.exposures = exposures;
    for (Eigen::Index t = 0; t < ds.n_timepoints; ++t) {
        ds.covariates.push_back(Matrix::Zero(ds.n_subjects, 1));
        ds.outcomes.push_back(Matrix::Zero(ds.n_subjects, 1));
    }
    ds.outcomes[ds.n_timepoints - 1].col(0) = y_final;
    ds.baseline_covariates.resize(ds.n_subjects, 0);
    return ds;
}

// Random but fixed T=2 instance with supplied nuisance values.
struct RandomFixture {
    LongitudinalDataset ds;
    NuisanceValues nv;
    MsmSpec msm{2};

    explicit RandomFixture(int n, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unif(0.2, 0.8);
        std::normal_distribution<double> gauss;
        Matrix A(n, 2);
        Vector y(n);
        nv.ps_observed.resize(n, 2);
        nv.eta.assign(2, {});
        nv.eta[0].assign(4, Vector(n));
        nv.eta[1].assign(2, Vector(n));
        for (int i = 0; i < n; ++i) {
            A(i, 0) = (i % 2);
            A(i, 1) = (i / 2) % 2;
            y(i) = gauss(rng);
            nv.ps_observed(i, 0) = unif(rng);
            nv.ps_observed(i, 1) = unif(rng);
            for (int s = 0; s < 4; ++s) nv.eta[0][s](i) = gauss(rng);
            for (int s = 0; s < 2; ++s) nv.eta[1][s](i) = gauss(rng);
        }
        ds = make_ds(A, y);
    }
};

struct LinearDgp {
    double b1 = 1.0, b2 = 2.0;
    LongitudinalDataset ds;

    void generate(int n, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss;
        std::uniform_real_distribution<double> unif;
        ds.n_subjects = n;
        ds.n_timepoints = 2;
        ds.exposures.resize(n, 2);
        Vector z1(n), z2(n), y1(n), y2(n);
        for (int i = 0; i < n; ++i) {
            z1(i) = gauss(rng);
            double p1 = 1.0 / (1.0 + std::exp(-0.8 * z1(i)));
            double a1 = unif(rng) < p1 ? 1.0 : 0.0;
            y1(i) = 0.5 * a1 + 0.7 * z1(i) + 0.3 * gauss(rng);
            z2(i) = 0.6 * z1(i) + 0.4 * a1 + 0.5 * gauss(rng);
            double p2 = 1.0 / (1.0 + std::exp(-(0.5 * z2(i) + 0.4 * a1)));
            double a2 = unif(rng) < p2 ? 1.0 : 0.0;
            y2(i) = b1 * a1 + b2 * a2 + 0.8 * z2(i) + 0.3 * y1(i) + 0.3 * gauss(rng);
            ds.exposures(i, 0) = a1;
            ds.exposures(i, 1) = a2;
        }
        ds.covariates = {z1, z2};
        ds.outcomes = {y1, y2};
        ds.baseline_covariates.resize(n, 0);
        ds.validate();
    }
};

double ci_width_at(int n, std::uint64_t seed) {
    LinearDgp dgp;
    dgp.generate(n, seed);
    auto folds = split_folds(dgp.ds, seed + 1);
    LearnerSpec lin;
    lin.kind = LearnerKind::linear;
    LearnerSpec logi;
    logi.kind = LearnerKind::logistic;
    auto pf = fit_propensity(dgp.ds, folds, {{logi}});
    auto ice = fit_ice(dgp.ds, folds, {{lin}}, 0, {});
    MsmSpec msm{2};
    auto est = crossfit_estimate(dgp.ds, folds, pf, ice, msm);
    auto scores = compute_scores(dgp.ds, make_nuisance_values(pf, ice), msm, est.theta);
    auto sw = sandwich(scores, score_jacobian(msm), est.ate(), 0.05);
    return sw.ci_hi - sw.ci_lo;
}

}  // namespace

TEST_CASE("normal quantile accuracy") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.5) == 0.0);
    CHECK(normal_quantile(0.84) == doctest::Approx(0.994457883209753).epsilon(1e-12));
    // Tail branch and symmetry.
    CHECK(normal_quantile(1e-9) == doctest::Approx(-5.9978070150076865).epsilon(1e-9));
    for (double p : {0.001, 0.025, 0.2, 0.77, 0.9999})
        CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1.0 - p)).epsilon(1e-12));
    CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
    CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("ci arithmetic") {
    // sigma_ate / sqrt(n) = 0.5 with n = 4.
    auto ci = ci_ate(2.0, 1.0, 4, 0.05);
    CHECK(ci.lo == doctest::Approx(1.0200).epsilon(1e-4));
    CHECK(ci.hi == doctest::Approx(2.9800).epsilon(1e-4));

    auto degenerate = ci_ate(2.0, 0.0, 4, 0.05);
    CHECK(degenerate.lo == 2.0);
    CHECK(degenerate.hi == 2.0);

    auto wider = ci_ate(2.0, 1.0, 4, 0.05);
    auto narrower = ci_ate(2.0, 1.0, 4, 0.32);
    CHECK(narrower.hi - narrower.lo < wider.hi - wider.lo);
    CHECK(narrower.hi + narrower.lo == doctest::Approx(wider.hi + wider.lo));

    CHECK_THROWS_AS(ci_ate(0.0, 1.0, 4, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ci_ate(0.0, 1.0, 4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ci_ate(0.0, -1.0, 4, 0.05), std::invalid_argument);
}

TEST_CASE("sandwich with identity-scale Jacobian reduces to the outer product") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    std::vector<ScoreTerms> scores(40);
    Matrix F_expected = Matrix::Zero(3, 3);
    for (auto& st : scores) {
        Vector psi(3);
        for (int k = 0; k < 3; ++k) psi(k) = gauss(rng);
        st.terms = {psi};
        F_expected += psi * psi.transpose();
    }
    F_expected /= 40.0;

    auto sw = sandwich(scores, -Matrix::Identity(3, 3), 0.0, 0.05);
    CHECK((sw.F_n - F_expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((sw.V_n - F_expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((sw.F_n - sw.F_n.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((sw.V_n - sw.V_n.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    // sigma^2 = V_22 + V_33 + 2 V_23.
    double expected_var = F_expected(1, 1) + F_expected(2, 2) + 2.0 * F_expected(1, 2);
    CHECK(sw.sigma_ate == doctest::Approx(std::sqrt(expected_var)).epsilon(1e-12));
    CHECK_FALSE(sw.negative_variance_flag);

    CHECK_THROWS_AS(sandwich(scores, Matrix::Zero(3, 3), 0.0, 0.05), std::runtime_error);
}

TEST_CASE("analytic Jacobian matches central finite differences") {
    RandomFixture fx(30, 17);
    Matrix J = score_jacobian(fx.msm);
    Vector theta(3);
    theta << 0.4, -0.3, 1.1;
    const double h = 1e-5;
    auto mean_score = [&](const Vector& th) {
        auto scores = compute_scores(fx.ds, fx.nv, fx.msm, th);
        Vector m = Vector::Zero(3);
        for (const auto& st : scores) m += st.psi();
        return Vector((m / static_cast<double>(scores.size())).eval());
    };
    Matrix J_fd(3, 3);
    for (int k = 0; k < 3; ++k) {
        Vector tp = theta, tm = theta;
        tp(k) += h;
        tm(k) -= h;
        J_fd.col(k) = (mean_score(tp) - mean_score(tm)) / (2.0 * h);
    }
    CHECK((J - J_fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sandwich is invariant to subject ordering") {
    RandomFixture fx(50, 23);
    Vector theta = Vector::Zero(3);
    auto scores = compute_scores(fx.ds, fx.nv, fx.msm, theta);
    auto sw = sandwich(scores, score_jacobian(fx.msm), 0.0, 0.05);

    std::mt19937_64 rng(99);
    std::shuffle(scores.begin(), scores.end(), rng);
    auto sw_perm = sandwich(scores, score_jacobian(fx.msm), 0.0, 0.05);
    CHECK((sw.V_n - sw_perm.V_n).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(sw.sigma_ate == doctest::Approx(sw_perm.sigma_ate).epsilon(1e-12));
}

TEST_CASE("ci width shrinks like one over sqrt n") {
    double w1 = ci_width_at(500, 301);
    double w2 = ci_width_at(2000, 302);
    double w3 = ci_width_at(8000, 303);
    double slope = std::log(w3 / w1) / std::log(8000.0 / 500.0);
    CHECK(slope < -0.35);
    CHECK(slope > -0.65);
    CHECK(w1 > w2);
    CHECK(w2 > w3);
}

TEST_CASE("bootstrap basics") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> gauss;
    int n = 300;
    Matrix A = Matrix::Zero(n, 1);
    Vector y(n);
    for (int i = 0; i < n; ++i) y(i) = 1.5 + gauss(rng);
    auto ds = make_ds(A, y);

    SUBCASE("constant estimator has zero SE") {
        auto res = bootstrap_se([](const LongitudinalDataset&) { return 3.14; }, ds, 100, 1);
        CHECK(res.se == 0.0);
        CHECK(res.percentile_ci.lo == 3.14);
        CHECK(res.percentile_ci.hi == 3.14);
        CHECK(res.failures == 0);
    }

    SUBCASE("mean estimator SE tracks sigma over sqrt n") {
        auto mean_est = [](const LongitudinalDataset& d) {
            return d.outcomes[0].col(0).mean();
        };
        auto res = bootstrap_se(mean_est, ds, 400, 2);
        double expected = std::sqrt(y.squaredNorm() / n - std::pow(y.mean(), 2)) / std::sqrt(n);
        CHECK(res.se == doctest::Approx(expected).epsilon(0.25));
        CHECK(res.percentile_ci.lo < y.mean());
        CHECK(res.percentile_ci.hi > y.mean());
    }

    SUBCASE("deterministic per seed and worker count") {
        auto mean_est = [](const LongitudinalDataset& d) {
            return d.outcomes[0].col(0).mean();
        };
        auto r1 = bootstrap_se(mean_est, ds, 120, 9, 0.05, 1);
        auto r2 = bootstrap_se(mean_est, ds, 120, 9, 0.05, 3);
        CHECK(r1.estimates == r2.estimates);
        CHECK(r1.se == r2.se);
        auto r3 = bootstrap_se(mean_est, ds, 120, 10, 0.05, 1);
        CHECK(r1.estimates != r3.estimates);
    }

    SUBCASE("failures are retried and counted") {
        int calls = 0;
        auto flaky = [&calls](const LongitudinalDataset& d) {
            if (++calls % 7 == 0) throw std::runtime_error("singular");
            return d.outcomes[0].col(0).mean();
        };
        auto res = bootstrap_se(flaky, ds, 100, 4);
        CHECK(res.failures > 0);
        CHECK(res.estimates.size() == 100);

        auto broken = [](const LongitudinalDataset&) -> double {
            throw std::runtime_error("always");
        };
        CHECK_THROWS_AS(bootstrap_se(broken, ds, 100, 4), std::runtime_error);
    }

    SUBCASE("B below 100 rejected") {
        CHECK_THROWS_AS(bootstrap_se([](const LongitudinalDataset&) { return 0.0; }, ds, 99, 1),
                        std::invalid_argument);
    }
}
