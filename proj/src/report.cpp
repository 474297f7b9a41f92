#include "mase/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mase {

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double vec_quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    double pos = p * (static_cast<double>(v.size()) - 1.0);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

nlohmann::json weight_summary(const Vector& w) {
    std::vector<double> v(w.data(), w.data() + w.size());
    return {{"min", format_number(vec_quantile(v, 0.0))},
            {"q05", format_number(vec_quantile(v, 0.05))},
            {"q25", format_number(vec_quantile(v, 0.25))},
            {"median", format_number(vec_quantile(v, 0.5))},
            {"q75", format_number(vec_quantile(v, 0.75))},
            {"q95", format_number(vec_quantile(v, 0.95))},
            {"max", format_number(vec_quantile(v, 1.0))}};
}

LongitudinalDataset load_input(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw std::invalid_argument("config: dataset path is required");
    if (cfg.schema.empty()) throw std::invalid_argument("config: schema path is required");
    auto schema = ColumnSchema::from_json_file(cfg.schema);
    auto ds = load_wide_csv(cfg.dataset, schema);
    ds.validate();
    return ds;
}

nlohmann::json base_report(const RunConfig& cfg, const char* command) {
    nlohmann::json resolved = cfg.to_json();
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(config_hash(resolved)));
    return {{"tool", "longicausal"},
            {"version", kVersion},
            {"command", command},
            {"config", resolved},
            {"config_hash", hash}};
}

}  // namespace

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::uint64_t config_hash(const nlohmann::json& resolved) {
    std::string s = resolved.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "dataset",     "schema",  "run_baselines", "bootstrap_B", "dgp",
        "replications", "methods", "n_oracle",     "learners",    "trim_lo",
        "trim_hi",     "alpha",   "seed",          "fold_seed",   "workers",
        "out_dir"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw std::invalid_argument("config: unknown key '" + item.key() + "'");
    RunConfig cfg;
    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.schema = j.value("schema", cfg.schema);
    cfg.run_baselines = j.value("run_baselines", cfg.run_baselines);
    cfg.bootstrap_B = j.value("bootstrap_B", cfg.bootstrap_B);
    if (j.contains("dgp")) cfg.dgp = j.at("dgp");
    cfg.replications = j.value("replications", cfg.replications);
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.n_oracle = j.value("n_oracle", cfg.n_oracle);
    cfg.learners = j.value("learners", cfg.learners);
    cfg.trim_lo = j.value("trim_lo", cfg.trim_lo);
    cfg.trim_hi = j.value("trim_hi", cfg.trim_hi);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.fold_seed = j.value("fold_seed", cfg.fold_seed);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw std::invalid_argument("config: alpha must be in (0,1)");
    if (!(cfg.trim_lo > 0.0 && cfg.trim_lo < cfg.trim_hi && cfg.trim_hi < 1.0))
        throw std::invalid_argument("config: trim bounds must satisfy 0 < lo < hi < 1");
    return cfg;
}

nlohmann::json RunConfig::to_json() const {
    return {{"dataset", dataset},
            {"schema", schema},
            {"run_baselines", run_baselines},
            {"bootstrap_B", bootstrap_B},
            {"dgp", dgp},
            {"replications", replications},
            {"methods", methods},
            {"n_oracle", n_oracle},
            {"learners", learners},
            {"trim_lo", trim_lo},
            {"trim_hi", trim_hi},
            {"alpha", alpha},
            {"seed", seed},
            {"fold_seed", fold_seed},
            {"workers", workers},
            {"out_dir", out_dir}};
}

MaseConfig RunConfig::mase_config() const {
    MaseConfig cfg;
    if (learners == "default") cfg = MaseConfig::defaults();
    else if (learners == "linear") cfg = MaseConfig::linear_only();
    else throw std::invalid_argument("config: learners must be 'default' or 'linear'");
    cfg.trim = trim();
    cfg.alpha = alpha;
    return cfg;
}

std::uint64_t RunConfig::resolved_fold_seed() const {
    return fold_seed != 0 ? fold_seed : mix_seed(seed, 0xf01dULL);
}

int RunConfig::resolved_workers() const {
    if (workers > 0) return workers;
    if (const char* env = std::getenv("LONGICAUSAL_WORKERS")) {
        int w = std::atoi(env);
        if (w > 0) return w;
    }
    return 1;
}

CommandOutput cmd_estimate(const RunConfig& cfg) {
    LongitudinalDataset ds = load_input(cfg);
    const int T = static_cast<int>(ds.n_timepoints);
    MaseConfig mc = cfg.mase_config();

    FoldSplit folds = split_folds(ds, cfg.resolved_fold_seed());
    PropensityFit pf = fit_propensity(ds, folds, mc.ps_grids, mc.trim, mc.nuisance);
    Vector w = cumulative_weights(pf, T);

    int trim_hits = 0;
    for (Eigen::Index i = 0; i < pf.prob_treated_raw.rows(); ++i)
        for (int t = 0; t < T; ++t) {
            double raw = pf.prob_treated_raw(i, t);
            if (raw < mc.trim.lo || raw > mc.trim.hi) ++trim_hits;
        }

    MsmSpec msm{T};
    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream csv;
    csv << "method,outcome,ate,se,ci_lo,ci_hi\n";

    auto add_row = [&](const std::string& method, int j, double ate, double se, double lo,
                       double hi, nlohmann::json extra) {
        extra["method"] = method;
        extra["outcome"] = j;
        extra["ate"] = ate;
        extra["se"] = se;
        extra["ci_lo"] = lo;
        extra["ci_hi"] = hi;
        rows.push_back(extra);
        csv << method << ',' << j << ',' << format_number(ate) << ',' << format_number(se) << ','
            << format_number(lo) << ',' << format_number(hi) << '\n';
    };

    for (int j = 0; j < ds.q(); ++j) {
        IceStack ice = fit_ice(ds, folds, mc.ice_grids, j, mc.nuisance);
        ThetaEstimate est = crossfit_estimate(ds, folds, pf, ice, msm, j);
        auto scores = compute_scores(ds, make_nuisance_values(pf, ice), msm, est.theta, j);
        SandwichResult sw = sandwich(scores, score_jacobian(msm), est.ate(), cfg.alpha);
        double se = sw.sigma_ate / std::sqrt(static_cast<double>(ds.n_subjects));

        nlohmann::json theta = nlohmann::json::array();
        for (Eigen::Index k = 0; k < est.theta.size(); ++k) theta.push_back(est.theta(k));
        add_row("mase", j, est.ate(), se, sw.ci_lo, sw.ci_hi,
                {{"theta", theta},
                 {"solver", "closed_form"},
                 {"condition_number", est.condition_number},
                 {"negative_variance_flag", sw.negative_variance_flag}});

        if (cfg.run_baselines) {
            for (const char* method : {"msm_lm", "ice_lm"}) {
                bool is_msm = std::string(method) == "msm_lm";
                auto handle = [&](const LongitudinalDataset& d) {
                    return is_msm ? msm_lm(d, j, mc.trim).ate : ice_lm(d, j).ate;
                };
                double ate = handle(ds);
                double bse = std::nan(""), lo = std::nan(""), hi = std::nan("");
                if (cfg.bootstrap_B >= 100) {
                    auto bs = bootstrap_se(handle, ds, cfg.bootstrap_B,
                                           mix_seed(cfg.seed, is_msm ? 0xb001 : 0xb002),
                                           cfg.alpha, cfg.resolved_workers());
                    bse = bs.se;
                    lo = bs.percentile_ci.lo;
                    hi = bs.percentile_ci.hi;
                }
                add_row(method, j, ate, bse, lo, hi, nlohmann::json::object());
            }
        }
    }

    CommandOutput out;
    out.report = base_report(cfg, "estimate");
    out.report["n_subjects"] = ds.n_subjects;
    out.report["n_timepoints"] = T;
    out.report["fold_seed_used"] = cfg.resolved_fold_seed();
    out.report["propensity"] = {{"trim_hits", trim_hits},
                                {"weight_quantiles", weight_summary(w)}};
    out.report["rows"] = rows;
    out.csv = csv.str();
    return out;
}

CommandOutput cmd_simulate(const RunConfig& cfg) {
    DgpSpec spec = DgpSpec::from_json(cfg.dgp);
    std::vector<Method> methods;
    for (const auto& name : cfg.methods) methods.push_back(method_from_string(name));

    McOptions opts;
    opts.n_oracle = cfg.n_oracle;
    opts.alpha = cfg.alpha;
    opts.baseline_bootstrap_B = cfg.bootstrap_B;
    opts.workers = cfg.resolved_workers();

    MonteCarloReport rep =
        run_monte_carlo(spec, methods, cfg.replications, cfg.seed, cfg.mase_config(), opts);

    std::ostringstream csv;
    csv << "method,estimation,mc_sd,relative_bias,estimated_se,coverage\n";
    for (const auto& row : rep.rows)
        csv << row.method << ',' << format_number(row.mean_estimate) << ','
            << format_number(row.mc_sd) << ',' << format_number(row.relative_bias) << ','
            << format_number(row.mean_se) << ',' << format_number(row.coverage) << '\n';

    CommandOutput out;
    out.report = base_report(cfg, "simulate");
    out.report["result"] = rep.to_json();
    out.csv = csv.str();
    return out;
}

CommandOutput cmd_diagnose(const RunConfig& cfg) {
    LongitudinalDataset ds = load_input(cfg);
    const int T = static_cast<int>(ds.n_timepoints);
    MaseConfig mc = cfg.mase_config();

    FoldSplit folds = split_folds(ds, cfg.resolved_fold_seed());
    PropensityFit pf = fit_propensity(ds, folds, mc.ps_grids, mc.trim, mc.nuisance);
    Vector w = cumulative_weights(pf, T);

    const int bins = 20;
    std::ostringstream csv;
    csv << "timepoint,bin_lo,bin_hi,count\n";
    nlohmann::json hist_json = nlohmann::json::array();
    nlohmann::json trim_json = nlohmann::json::array();
    for (int t = 0; t < T; ++t) {
        std::vector<int> counts(bins, 0);
        int hits = 0;
        for (Eigen::Index i = 0; i < ds.n_subjects; ++i) {
            double raw = pf.prob_treated_raw(i, t);
            int b = std::min(bins - 1, static_cast<int>(raw * bins));
            b = std::max(0, b);
            ++counts[b];
            if (raw < mc.trim.lo || raw > mc.trim.hi) ++hits;
        }
        nlohmann::json row = nlohmann::json::array();
        for (int b = 0; b < bins; ++b) {
            csv << (t + 1) << ',' << format_number(b / static_cast<double>(bins)) << ','
                << format_number((b + 1) / static_cast<double>(bins)) << ',' << counts[b] << '\n';
            row.push_back(counts[b]);
        }
        hist_json.push_back(row);
        trim_json.push_back(hits);
    }

    CommandOutput out;
    out.report = base_report(cfg, "diagnose");
    out.report["n_subjects"] = ds.n_subjects;
    out.report["n_timepoints"] = T;
    out.report["ps_histograms"] = hist_json;
    out.report["trim_hits"] = trim_json;
    out.report["weight_quantiles"] = weight_summary(w);
    out.csv = csv.str();
    return out;
}

void write_outputs(const CommandOutput& out, const std::string& out_dir,
                   const std::string& stem) {
    std::filesystem::create_directories(out_dir);
    std::ofstream js(std::filesystem::path(out_dir) / (stem + ".json"), std::ios::binary);
    js << out.report.dump(2) << '\n';
    std::ofstream cs(std::filesystem::path(out_dir) / (stem + ".csv"), std::ios::binary);
    cs << out.csv;
    if (!js || !cs) throw std::runtime_error("report: failed writing outputs to " + out_dir);
}

}  // namespace mase
