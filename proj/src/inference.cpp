#include "mase/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

namespace mase {

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    double pos = p * (static_cast<double>(v.size()) - 1.0);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

double normal_quantile(double p) {
    // Wichura, Applied Statistics 37 (1988), algorithm AS 241 (PPND16).
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        value = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                      2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                    3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                  4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
                (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                      1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                    6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                  2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                      1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                    2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                  5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
                (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                      1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                    1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                  5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -value : value;
}

Interval ci_ate(double ate, double sigma_ate, Eigen::Index n, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ci_ate: alpha must be in (0,1)");
    if (sigma_ate < 0.0) throw std::invalid_argument("ci_ate: negative standard error");
    double half = normal_quantile(1.0 - alpha / 2.0) * sigma_ate / std::sqrt(static_cast<double>(n));
    return {ate - half, ate + half};
}

SandwichResult sandwich(const std::vector<ScoreTerms>& scores, const Matrix& jacobian,
                        double ate, double alpha) {
    if (scores.empty()) throw std::invalid_argument("sandwich: no scores");
    const double n = static_cast<double>(scores.size());
    const Eigen::Index dim = jacobian.rows();

    SandwichResult out;
    out.J_n = jacobian;
    out.alpha = alpha;

    out.F_n = Matrix::Zero(dim, dim);
    for (const auto& st : scores) {
        Vector psi = st.psi();
        out.F_n += psi * psi.transpose();
    }
    out.F_n /= n;

    Eigen::PartialPivLU<Matrix> lu(jacobian);
    if (std::abs(lu.determinant()) < 1e-12)
        throw std::runtime_error("sandwich: singular Jacobian");
    Matrix J_inv = lu.inverse();
    out.V_n = J_inv * out.F_n * J_inv.transpose();

    // ATE contrast c = (0, 1, ..., 1).
    Vector c = Vector::Ones(dim);
    c(0) = 0.0;
    double var = c.dot(out.V_n * c);
    if (var < 0.0) {
        out.negative_variance_flag = true;
        var = 0.0;
    }
    out.sigma_ate = std::sqrt(var);

    Interval ci = ci_ate(ate, out.sigma_ate, scores.size(), alpha);
    out.ci_lo = ci.lo;
    out.ci_hi = ci.hi;
    return out;
}

LongitudinalDataset resample_subjects(const LongitudinalDataset& ds,
                                      const std::vector<Eigen::Index>& rows) {
    LongitudinalDataset out;
    out.n_subjects = static_cast<Eigen::Index>(rows.size());
    out.n_timepoints = ds.n_timepoints;
    out.exposures.resize(out.n_subjects, ds.exposures.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.exposures.row(i) = ds.exposures.row(rows[i]);
    for (const auto& Z : ds.covariates) {
        Matrix Zr(out.n_subjects, Z.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) Zr.row(i) = Z.row(rows[i]);
        out.covariates.push_back(std::move(Zr));
    }
    for (const auto& Y : ds.outcomes) {
        Matrix Yr(out.n_subjects, Y.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) Yr.row(i) = Y.row(rows[i]);
        out.outcomes.push_back(std::move(Yr));
    }
    out.baseline_covariates.resize(out.n_subjects, ds.baseline_covariates.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.baseline_covariates.row(i) = ds.baseline_covariates.row(rows[i]);
    return out;
}

BootstrapResult bootstrap_se(const std::function<double(const LongitudinalDataset&)>& estimate,
                             const LongitudinalDataset& ds, int B, std::uint64_t seed,
                             double alpha, int workers, int retry_cap) {
    if (B < 100) throw std::invalid_argument("bootstrap_se: B must be at least 100");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("bootstrap_se: alpha must be in (0,1)");
    const Eigen::Index n = ds.n_subjects;

    BootstrapResult res;
    res.estimates.assign(B, 0.0);
    std::vector<int> fail_counts(B, 0);

    auto run_one = [&](int b) {
        // One RNG stream per resample index; retries draw the next resample
        // from the same stream.
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        for (int attempt = 0; attempt <= retry_cap; ++attempt) {
            std::vector<Eigen::Index> rows(n);
            for (Eigen::Index i = 0; i < n; ++i) rows[i] = pick(rng);
            try {
                res.estimates[b] = estimate(resample_subjects(ds, rows));
                return;
            } catch (const std::exception&) {
                ++fail_counts[b];
            }
        }
        throw std::runtime_error("bootstrap_se: resample " + std::to_string(b) +
                                 " failed beyond the retry cap");
    };

    workers = std::max(1, workers);
    if (workers == 1) {
        for (int b = 0; b < B; ++b) run_one(b);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr err;
        std::mutex err_mu;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int b = next.fetch_add(1); b < B; b = next.fetch_add(1)) {
                    try {
                        run_one(b);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!err) err = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& th : pool) th.join();
        if (err) std::rethrow_exception(err);
    }

    for (int c : fail_counts) res.failures += c;

    auto [mn, mx] = std::minmax_element(res.estimates.begin(), res.estimates.end());
    if (*mn == *mx) {
        res.se = 0.0;  // constant estimator, exactly
    } else {
        double mean = 0.0;
        for (double e : res.estimates) mean += e;
        mean /= B;
        double ss = 0.0;
        for (double e : res.estimates) ss += (e - mean) * (e - mean);
        res.se = std::sqrt(ss / (B - 1));
    }
    res.percentile_ci = {quantile(res.estimates, alpha / 2.0),
                         quantile(res.estimates, 1.0 - alpha / 2.0)};
    return res;
}

}  // namespace mase
