#include "mase/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <random>
#include <set>
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

double logistic(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Fixed sparse linear mean structures (see header).
const double kLinPi[5] = {0.30, -0.25, 0.20, -0.15, 0.10};
const double kLinY[5] = {0.40, 0.30, -0.25, 0.20, -0.10};
const int kPairs[3][2] = {{0, 5}, {1, 6}, {2, 7}};

double lin_pi(const Vector& z) {
    double s = 0.0;
    for (int k = 0; k < std::min<int>(5, z.size()); ++k) s += kLinPi[k] * z(k);
    return s;
}

double lin_y(const Vector& z) {
    double s = 0.0;
    for (int k = 0; k < std::min<int>(5, z.size()); ++k) s += kLinY[k] * z(k);
    return s;
}

double nl(const Vector& z, const DgpSpec& spec) {
    const double cos_center = std::exp(-0.5);
    const double rho5 = std::pow(spec.rho, 5);
    double s = 0.0;
    for (int k = 5; k < std::min<int>(10, z.size()); ++k)
        s += spec.cos_coef * (std::cos(z(k)) - cos_center);
    for (const auto& pr : kPairs)
        if (pr[1] < z.size()) s += spec.inter_coef * (z(pr[0]) * z(pr[1]) - rho5);
    return s;
}

// Conditional mean of nl(Z') where Z' | Z has mean mu and independent fresh
// component variance s2 per coordinate with AR(1) cross-correlation rho.
double nl_conditional(const Vector& mu, double s2, const DgpSpec& spec) {
    const double cos_center = std::exp(-0.5);
    const double rho5 = std::pow(spec.rho, 5);
    double s = 0.0;
    for (int k = 5; k < std::min<int>(10, mu.size()); ++k)
        s += spec.cos_coef * (std::cos(mu(k)) * std::exp(-0.5 * s2) - cos_center);
    for (const auto& pr : kPairs)
        if (pr[1] < mu.size()) s += spec.inter_coef * (mu(pr[0]) * mu(pr[1]) + s2 * rho5 - rho5);
    return s;
}

// AR(1) transform of an iid standard normal draw.
Vector ar1(const Vector& xi, double rho) {
    Vector z(xi.size());
    double scale = std::sqrt(1.0 - rho * rho);
    z(0) = xi(0);
    for (Eigen::Index k = 1; k < xi.size(); ++k) z(k) = rho * z(k - 1) + scale * xi(k);
    return z;
}

struct SubjectPaths {
    std::vector<std::vector<Vector>> zcf;  // [t-1][prefix of length t-1]
    std::vector<std::vector<double>> ycf;  // [t-1][prefix of length t]
    std::vector<int> a;                    // observed exposures
    std::vector<double> pi;                // true P(A_t = 1 | observed history)
    int final_prefix = 0;
};

SubjectPaths draw_subject(const DgpSpec& spec, std::mt19937_64& rng) {
    const int T = spec.T, p = spec.p;
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unif;

    // All noise drawn up front in a fixed order.
    std::vector<Vector> xi(T);
    std::vector<double> eps(T), u(T);
    for (int t = 0; t < T; ++t) {
        xi[t].resize(p);
        for (int k = 0; k < p; ++k) xi[t](k) = gauss(rng);
        eps[t] = gauss(rng);
        u[t] = unif(rng);
    }

    SubjectPaths sp;
    sp.zcf.resize(T);
    sp.ycf.resize(T);

    // Counterfactual confounder tree: the same fresh noise feeds every branch.
    double carry_scale = std::sqrt(1.0 - spec.z_carry * spec.z_carry);
    sp.zcf[0] = {ar1(xi[0], spec.rho)};
    for (int t = 2; t <= T; ++t) {
        Vector fresh = ar1(xi[t - 1], spec.rho);
        int n_prefix = 1 << (t - 1);
        sp.zcf[t - 1].resize(n_prefix);
        for (int pr = 0; pr < n_prefix; ++pr) {
            int a_prev = pr & 1;
            Vector z = spec.z_carry * sp.zcf[t - 2][pr >> 1] + carry_scale * fresh;
            z(0) += spec.a_shift * a_prev;
            if (p > 5) z(5) += spec.a_shift * a_prev;
            sp.zcf[t - 1][pr] = std::move(z);
        }
    }

    // Counterfactual outcomes along every prefix.
    for (int t = 1; t <= T; ++t) {
        int n_prefix = 1 << t;
        sp.ycf[t - 1].resize(n_prefix);
        for (int pr = 0; pr < n_prefix; ++pr) {
            int a_t = pr & 1;
            const Vector& z = sp.zcf[t - 1][pr >> 1];
            double mean = lin_y(z) + spec.gamma_y * nl(z, spec);
            if (t >= 2) mean += spec.kappa * sp.ycf[t - 2][pr >> 1];
            if (t == T) {
                for (int j = 1; j <= T; ++j) mean += spec.beta[j - 1] * ((pr >> (T - j)) & 1);
                mean += spec.outcome_noise * eps[t - 1];
            } else {
                mean += spec.y_cur_effect * a_t + spec.intermediate_noise * eps[t - 1];
            }
            sp.ycf[t - 1][pr] = mean;
        }
    }

    // Observed path.
    sp.a.resize(T);
    sp.pi.resize(T);
    int prefix = 0;
    for (int t = 1; t <= T; ++t) {
        const Vector& z = sp.zcf[t - 1][prefix];
        double s = lin_pi(z) + spec.gamma_ps * nl(z, spec);
        if (t >= 2) {
            s += spec.ps_lag_a * sp.a[t - 2];
            s += spec.ps_lag_y * sp.ycf[t - 2][prefix];
        }
        sp.pi[t - 1] = logistic(s);
        sp.a[t - 1] = u[t - 1] < sp.pi[t - 1] ? 1 : 0;
        prefix = (prefix << 1) | sp.a[t - 1];
    }
    sp.final_prefix = prefix;
    return sp;
}

}  // namespace

DgpSpec DgpSpec::with_effect(double effect, int n, int p) {
    DgpSpec spec;
    spec.n = n;
    spec.p = p;
    spec.beta.assign(spec.T, effect / spec.T);
    return spec;
}

void DgpSpec::validate() const {
    if (n < 1) throw std::invalid_argument("dgp: n must be positive");
    if (T < 1) throw std::invalid_argument("dgp: T must be positive");
    if (p < 1) throw std::invalid_argument("dgp: p must be positive");
    if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("dgp: rho must be in (-1,1)");
    if (!(z_carry >= 0.0 && z_carry < 1.0))
        throw std::invalid_argument("dgp: z_carry must be in [0,1)");
    if (static_cast<int>(beta.size()) != T)
        throw std::invalid_argument("dgp: beta must have one coefficient per timepoint");
    for (double b : beta)
        if (!std::isfinite(b)) throw std::invalid_argument("dgp: beta must be finite");
    if (!(outcome_noise > 0.0)) throw std::invalid_argument("dgp: outcome_noise must be positive");
    if (intermediate_noise < 0.0)
        throw std::invalid_argument("dgp: intermediate_noise must be nonnegative");
    if (gamma_ps < 0.0 || gamma_y < 0.0)
        throw std::invalid_argument("dgp: nonlinearity amplitudes must be nonnegative");
}

nlohmann::json DgpSpec::to_json() const {
    return {{"n", n},
            {"T", T},
            {"p", p},
            {"rho", rho},
            {"z_carry", z_carry},
            {"a_shift", a_shift},
            {"beta", beta},
            {"y_cur_effect", y_cur_effect},
            {"kappa", kappa},
            {"gamma_ps", gamma_ps},
            {"gamma_y", gamma_y},
            {"cos_coef", cos_coef},
            {"inter_coef", inter_coef},
            {"ps_lag_a", ps_lag_a},
            {"ps_lag_y", ps_lag_y},
            {"outcome_noise", outcome_noise},
            {"intermediate_noise", intermediate_noise}};
}

DgpSpec DgpSpec::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "n",         "T",        "p",        "rho",          "z_carry",
        "a_shift",   "beta",     "y_cur_effect", "kappa",    "gamma_ps",
        "gamma_y",   "ps_lag_a", "ps_lag_y", "outcome_noise", "intermediate_noise",
        "cos_coef",  "inter_coef"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw std::invalid_argument("dgp: unknown config key '" + item.key() + "'");
    DgpSpec spec;
    spec.n = j.value("n", spec.n);
    spec.T = j.value("T", spec.T);
    spec.p = j.value("p", spec.p);
    spec.rho = j.value("rho", spec.rho);
    spec.z_carry = j.value("z_carry", spec.z_carry);
    spec.a_shift = j.value("a_shift", spec.a_shift);
    if (j.contains("beta")) spec.beta = j.at("beta").get<std::vector<double>>();
    else spec.beta.assign(spec.T, 5.0 / spec.T);
    spec.y_cur_effect = j.value("y_cur_effect", spec.y_cur_effect);
    spec.kappa = j.value("kappa", spec.kappa);
    spec.gamma_ps = j.value("gamma_ps", spec.gamma_ps);
    spec.gamma_y = j.value("gamma_y", spec.gamma_y);
    spec.cos_coef = j.value("cos_coef", spec.cos_coef);
    spec.inter_coef = j.value("inter_coef", spec.inter_coef);
    spec.ps_lag_a = j.value("ps_lag_a", spec.ps_lag_a);
    spec.ps_lag_y = j.value("ps_lag_y", spec.ps_lag_y);
    spec.outcome_noise = j.value("outcome_noise", spec.outcome_noise);
    spec.intermediate_noise = j.value("intermediate_noise", spec.intermediate_noise);
    spec.validate();
    return spec;
}

SimulatedDataset gen_dataset(const DgpSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int n = spec.n, T = spec.T, p = spec.p;
    std::mt19937_64 rng(seed);

    SimulatedDataset sim;
    sim.data.n_subjects = n;
    sim.data.n_timepoints = T;
    sim.data.exposures.resize(n, T);
    sim.data.covariates.assign(T, Matrix(n, p));
    sim.data.outcomes.assign(T, Matrix(n, 1));
    sim.data.baseline_covariates.resize(n, 0);
    sim.counterfactuals.clear();
    for (int t = 1; t <= T; ++t) sim.counterfactuals.push_back(Matrix(n, 1 << t));
    sim.true_ps.resize(n, T);

    for (int i = 0; i < n; ++i) {
        SubjectPaths sp = draw_subject(spec, rng);
        int prefix = 0;
        for (int t = 1; t <= T; ++t) {
            sim.data.exposures(i, t - 1) = sp.a[t - 1];
            sim.data.covariates[t - 1].row(i) = sp.zcf[t - 1][prefix].transpose();
            prefix = (prefix << 1) | sp.a[t - 1];
            sim.data.outcomes[t - 1](i, 0) = sp.ycf[t - 1][prefix];
            sim.true_ps(i, t - 1) = sp.pi[t - 1];
            for (int pr = 0; pr < (1 << t); ++pr) sim.counterfactuals[t - 1](i, pr) = sp.ycf[t - 1][pr];
        }
    }
    sim.data.validate();
    return sim;
}

NuisanceValues analytic_nuisances(const SimulatedDataset& sim, const DgpSpec& spec) {
    if (spec.T != 2)
        throw std::invalid_argument("analytic_nuisances: implemented for T = 2 specs");
    const Eigen::Index n = sim.data.n_subjects;
    const double s2 = 1.0 - spec.z_carry * spec.z_carry;

    NuisanceValues nv;
    nv.ps_observed.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int t = 0; t < 2; ++t) {
            double pi = sim.true_ps(i, t);
            nv.ps_observed(i, t) = sim.data.exposures(i, t) == 1.0 ? pi : 1.0 - pi;
        }

    nv.eta.assign(2, {});
    nv.eta[0].assign(4, Vector(n));
    nv.eta[1].assign(2, Vector(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double a1_obs = sim.data.exposures(i, 0);
        double y1 = sim.data.outcomes[0](i, 0);
        Vector z1 = sim.data.covariates[0].row(i).transpose();
        Vector z2 = sim.data.covariates[1].row(i).transpose();

        // eta_2(a2): everything at t = 2 is observed.
        double base2 = spec.beta[0] * a1_obs + spec.kappa * y1 + lin_y(z2) +
                       spec.gamma_y * nl(z2, spec);
        for (int a2 = 0; a2 <= 1; ++a2) nv.eta[1][a2](i) = base2 + spec.beta[1] * a2;

        // eta_1(a1, a2): integrate Y_1 and Z_2 forward from Z_1.
        for (int a1 = 0; a1 <= 1; ++a1) {
            double ey1 = spec.y_cur_effect * a1 + lin_y(z1) + spec.gamma_y * nl(z1, spec);
            Vector mu = spec.z_carry * z1;
            mu(0) += spec.a_shift * a1;
            if (mu.size() > 5) mu(5) += spec.a_shift * a1;
            double ef = lin_y(mu) + spec.gamma_y * nl_conditional(mu, s2, spec);
            for (int a2 = 0; a2 <= 1; ++a2)
                nv.eta[0][2 * a1 + a2](i) =
                    spec.beta[0] * a1 + spec.beta[1] * a2 + spec.kappa * ey1 + ef;
        }
    }
    return nv;
}

TruthEstimate true_ate(const DgpSpec& spec, long n_oracle, std::uint64_t seed) {
    spec.validate();
    if (n_oracle < 100000) throw std::invalid_argument("true_ate: n_oracle must be at least 1e5");
    std::mt19937_64 rng(seed);
    double sum = 0.0, sumsq = 0.0;
    const int last = spec.T - 1;
    const int ones = (1 << spec.T) - 1;
    for (long i = 0; i < n_oracle; ++i) {
        SubjectPaths sp = draw_subject(spec, rng);
        double contrast = sp.ycf[last][ones] - sp.ycf[last][0];
        sum += contrast;
        sumsq += contrast * contrast;
    }
    TruthEstimate out;
    out.n_oracle = n_oracle;
    out.value = sum / static_cast<double>(n_oracle);
    double var = std::max(0.0, sumsq / n_oracle - out.value * out.value) *
                 static_cast<double>(n_oracle) / static_cast<double>(n_oracle - 1);
    out.se = std::sqrt(var / static_cast<double>(n_oracle));
    return out;
}

std::string to_string(Method m) {
    switch (m) {
        case Method::mase: return "mase";
        case Method::msm_lm: return "msm_lm";
        case Method::ice_lm: return "ice_lm";
    }
    throw std::logic_error("unknown method");
}

Method method_from_string(const std::string& s) {
    if (s == "mase") return Method::mase;
    if (s == "msm_lm") return Method::msm_lm;
    if (s == "ice_lm") return Method::ice_lm;
    throw std::invalid_argument("unknown method '" + s + "'");
}

MaseConfig MaseConfig::defaults() {
    MaseConfig cfg;
    LearnerSpec logi;
    logi.kind = LearnerKind::logistic;
    LearnerSpec lin;
    lin.kind = LearnerKind::linear;

    LearnerSpec forest;
    forest.kind = LearnerKind::random_forest;
    forest.n_trees = 60;
    forest.max_depth = 4;
    forest.min_leaf = 10;
    forest.feature_fraction = 0.25;
    forest.seed = 17;

    LearnerSpec boost;
    boost.kind = LearnerKind::gradient_boosting;
    boost.n_trees = 80;
    boost.max_depth = 2;
    boost.learning_rate = 0.1;
    boost.subsample = 0.8;
    boost.feature_fraction = 0.25;
    boost.seed = 29;

    cfg.ps_grids = {{logi}, {boost}};
    cfg.ice_grids = {{lin}, {boost}};
    return cfg;
}

MaseConfig MaseConfig::linear_only() {
    MaseConfig cfg;
    LearnerSpec logi;
    logi.kind = LearnerKind::logistic;
    LearnerSpec lin;
    lin.kind = LearnerKind::linear;
    cfg.ps_grids = {{logi}};
    cfg.ice_grids = {{lin}};
    return cfg;
}

MethodResult run_mase(const LongitudinalDataset& ds, const MaseConfig& cfg,
                      std::uint64_t fold_seed, int outcome_j) {
    MethodResult res;
    try {
        FoldSplit folds = split_folds(ds, fold_seed);
        PropensityFit pf = fit_propensity(ds, folds, cfg.ps_grids, cfg.trim, cfg.nuisance);
        IceStack ice = fit_ice(ds, folds, cfg.ice_grids, outcome_j, cfg.nuisance);
        MsmSpec msm{static_cast<int>(ds.n_timepoints)};
        ThetaEstimate est = crossfit_estimate(ds, folds, pf, ice, msm, outcome_j);
        auto scores =
            compute_scores(ds, make_nuisance_values(pf, ice), msm, est.theta, outcome_j);
        SandwichResult sw = sandwich(scores, score_jacobian(msm), est.ate(), cfg.alpha);
        res.ok = true;
        res.ate = est.ate();
        res.se = sw.sigma_ate / std::sqrt(static_cast<double>(ds.n_subjects));
        res.ci_lo = sw.ci_lo;
        res.ci_hi = sw.ci_hi;
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    return res;
}

nlohmann::json MonteCarloReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows)
        rows_json.push_back({{"method", row.method},
                             {"n_success", row.n_success},
                             {"n_fail", row.n_fail},
                             {"mean_estimate", row.mean_estimate},
                             {"mc_sd", row.mc_sd},
                             {"relative_bias", row.relative_bias},
                             {"mean_se", row.mean_se},
                             {"coverage", row.coverage}});
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& per_method : replicates) {
        nlohmann::json col = nlohmann::json::array();
        for (const auto& r : per_method)
            col.push_back({{"ok", r.ok},
                           {"ate", r.ate},
                           {"se", r.se},
                           {"ci_lo", r.ci_lo},
                           {"ci_hi", r.ci_hi},
                           {"error", r.error}});
        reps.push_back(col);
    }
    return {{"spec", spec.to_json()},
            {"R", R},
            {"base_seed", base_seed},
            {"truth", {{"value", truth.value}, {"se", truth.se}, {"n_oracle", truth.n_oracle}}},
            {"methods", rows_json},
            {"replicates", reps}};
}

MonteCarloReport run_monte_carlo(const DgpSpec& spec, const std::vector<Method>& methods, int R,
                                 std::uint64_t base_seed, const MaseConfig& mase_cfg,
                                 const McOptions& opts) {
    spec.validate();
    if (R < 2) throw std::invalid_argument("run_monte_carlo: R must be at least 2");
    if (methods.empty()) throw std::invalid_argument("run_monte_carlo: no methods requested");

    MonteCarloReport report;
    report.spec = spec;
    report.R = R;
    report.base_seed = base_seed;
    report.truth = true_ate(spec, opts.n_oracle, mix_seed(base_seed, 0xacedULL));
    report.replicates.assign(methods.size(), std::vector<MethodResult>(R));

    const bool boot = opts.baseline_bootstrap_B >= 100;

    auto run_replication = [&](int r) {
        SimulatedDataset sim = gen_dataset(spec, base_seed + static_cast<std::uint64_t>(r));
        for (std::size_t m = 0; m < methods.size(); ++m) {
            MethodResult& out = report.replicates[m][r];
            try {
                switch (methods[m]) {
                    case Method::mase:
                        out = run_mase(sim.data, mase_cfg,
                                       mix_seed(base_seed + static_cast<std::uint64_t>(r),
                                                0xf01dULL));
                        break;
                    case Method::msm_lm:
                    case Method::ice_lm: {
                        const bool is_msm = methods[m] == Method::msm_lm;
                        auto handle = [&](const LongitudinalDataset& d) {
                            return is_msm ? msm_lm(d).ate : ice_lm(d).ate;
                        };
                        out.ate = handle(sim.data);
                        out.ok = true;
                        if (boot) {
                            auto bs = bootstrap_se(
                                handle, sim.data, opts.baseline_bootstrap_B,
                                mix_seed(base_seed + static_cast<std::uint64_t>(r), 0xb0 + m),
                                opts.alpha);
                            out.se = bs.se;
                            out.ci_lo = bs.percentile_ci.lo;
                            out.ci_hi = bs.percentile_ci.hi;
                        } else {
                            out.se = std::nan("");
                            out.ci_lo = std::nan("");
                            out.ci_hi = std::nan("");
                        }
                        break;
                    }
                }
            } catch (const std::exception& e) {
                out = {};
                out.error = e.what();
            }
        }
    };

    int workers = std::max(1, opts.workers);
    if (workers == 1) {
        for (int r = 0; r < R; ++r) run_replication(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < R; r = next.fetch_add(1)) run_replication(r);
            });
        for (auto& th : pool) th.join();
    }

    // Fixed-order aggregation over replicate index.
    for (std::size_t m = 0; m < methods.size(); ++m) {
        MethodSummary row;
        row.method = to_string(methods[m]);
        double sum = 0.0, se_sum = 0.0;
        int se_count = 0, cover_count = 0, ci_count = 0;
        std::vector<double> ates;
        for (int r = 0; r < R; ++r) {
            const MethodResult& res = report.replicates[m][r];
            if (!res.ok) {
                ++row.n_fail;
                continue;
            }
            ++row.n_success;
            sum += res.ate;
            ates.push_back(res.ate);
            if (std::isfinite(res.se)) {
                se_sum += res.se;
                ++se_count;
            }
            if (std::isfinite(res.ci_lo) && std::isfinite(res.ci_hi)) {
                ++ci_count;
                if (res.ci_lo <= report.truth.value && report.truth.value <= res.ci_hi)
                    ++cover_count;
            }
        }
        if (row.n_success > 0) {
            row.mean_estimate = sum / row.n_success;
            double ss = 0.0;
            for (double a : ates) ss += (a - row.mean_estimate) * (a - row.mean_estimate);
            row.mc_sd = row.n_success > 1 ? std::sqrt(ss / (row.n_success - 1)) : 0.0;
            row.relative_bias = (row.mean_estimate - report.truth.value) / report.truth.value;
        }
        row.mean_se = se_count > 0 ? se_sum / se_count : std::nan("");
        row.coverage = ci_count > 0 ? static_cast<double>(cover_count) / ci_count : std::nan("");
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace mase
