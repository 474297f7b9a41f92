#include "mase/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mase {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kRidgeJitter = 1e-8;

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Column-wise mean/SD standardization; constant columns get scale 1.
void standardize_stats(const Matrix& X, Vector& mean, Vector& scale) {
    const double n = static_cast<double>(X.rows());
    mean = X.colwise().mean();
    scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        double var = (X.col(j).array() - mean(j)).square().sum() / n;
        scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
}

Matrix apply_standardize(const Matrix& X, const Vector& mean, const Vector& scale) {
    Matrix Z = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        Z.col(j) = (X.col(j).array() - mean(j)) / scale(j);
    return Z;
}

void to_original_scale(FittedLearner& m) {
    m.coef.resize(m.coef_std.size());
    double shift = 0.0;
    for (Eigen::Index j = 0; j < m.coef_std.size(); ++j) {
        m.coef(j) = m.coef_std(j) / m.feat_scale(j);
        shift += m.coef(j) * m.feat_mean(j);
    }
    m.intercept = m.intercept_std - shift;
}

void fit_linear(FittedLearner& m, const Matrix& X, const Vector& y) {
    Matrix Z = apply_standardize(X, m.feat_mean, m.feat_scale);
    const double ybar = y.mean();
    Vector yc = y.array() - ybar;
    Matrix G = Z.transpose() * Z / static_cast<double>(X.rows());
    G.diagonal().array() += kRidgeJitter;
    Vector b = Z.transpose() * yc / static_cast<double>(X.rows());
    m.coef_std = G.ldlt().solve(b);
    m.intercept_std = ybar;
    to_original_scale(m);
}

void fit_logistic(FittedLearner& m, const Matrix& X, const Vector& y) {
    const Eigen::Index n = X.rows(), d = X.cols();
    double ybar = y.mean();
    if (ybar <= 0.0 || ybar >= 1.0) {
        // Constant target: intercept-only model, flagged for the caller.
        m.degenerate_target = true;
        m.coef_std = Vector::Zero(d);
        double p = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
        m.intercept_std = std::log(p / (1.0 - p));
        to_original_scale(m);
        return;
    }
    Matrix Z(n, d + 1);
    Z.col(0).setOnes();
    Z.rightCols(d) = apply_standardize(X, m.feat_mean, m.feat_scale);

    Vector beta = Vector::Zero(d + 1);
    beta(0) = std::log(ybar / (1.0 - ybar));
    for (int iter = 0; iter < 100; ++iter) {
        Vector eta = Z * beta;
        Vector p = eta.unaryExpr([](double v) { return sigmoid(v); });
        Vector grad = Z.transpose() * (p - y) / static_cast<double>(n) + kRidgeJitter * beta;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
        Vector w = (p.array() * (1.0 - p.array())).cwiseMax(1e-10);
        Matrix H = Z.transpose() * w.asDiagonal() * Z / static_cast<double>(n);
        H.diagonal().array() += kRidgeJitter;
        Vector step = H.ldlt().solve(grad);
        // Halve on divergence of the penalized deviance.
        auto loss = [&](const Vector& b) {
            Vector e = Z * b;
            double ll = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                ll += y(i) * e(i) - std::log1p(std::exp(e(i)));
            return -ll / static_cast<double>(n) + 0.5 * kRidgeJitter * b.squaredNorm();
        };
        double cur = loss(beta);
        double scale = 1.0;
        Vector cand = beta - step;
        for (int h = 0; h < 20 && loss(cand) > cur + 1e-12; ++h) {
            scale *= 0.5;
            cand = beta - scale * step;
        }
        beta = cand;
    }
    m.intercept_std = beta(0);
    m.coef_std = beta.tail(d);
    to_original_scale(m);
}

double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

void fit_elastic_net(FittedLearner& m, const Matrix& X, const Vector& y) {
    const Eigen::Index n = X.rows(), d = X.cols();
    const double lambda = m.spec.lambda, alpha = m.spec.alpha;
    Matrix Z = apply_standardize(X, m.feat_mean, m.feat_scale);
    const double ybar = y.mean();
    Vector yc = y.array() - ybar;

    Vector col_sq(d);
    for (Eigen::Index j = 0; j < d; ++j) col_sq(j) = Z.col(j).squaredNorm() / static_cast<double>(n);

    Vector beta = Vector::Zero(d);
    Vector resid = yc;  // yc - Z*beta
    const double l1 = lambda * alpha, l2 = lambda * (1.0 - alpha);
    for (int sweep = 0; sweep < 10000; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            double old = beta(j);
            double rho = Z.col(j).dot(resid) / static_cast<double>(n) + col_sq(j) * old;
            double updated = soft_threshold(rho, l1) / (col_sq(j) + l2 + (col_sq(j) == 0.0 ? 1.0 : 0.0));
            if (updated != old) {
                resid += Z.col(j) * (old - updated);
                beta(j) = updated;
                max_delta = std::max(max_delta, std::abs(updated - old));
            }
        }
        if (max_delta < 1e-7) break;
    }
    m.coef_std = beta;
    m.intercept_std = ybar;
    to_original_scale(m);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    // splitmix64 step on the combined value
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void fit_random_forest(FittedLearner& m, const Matrix& X, const Vector& y) {
    const Eigen::Index n = X.rows();
    TreeParams params;
    params.max_depth = m.spec.max_depth;
    params.min_leaf = m.spec.min_leaf;
    params.feature_fraction = m.spec.feature_fraction;
    params.gini = (m.task == Task::classification);
    m.trees.reserve(m.spec.n_trees);
    for (int b = 0; b < m.spec.n_trees; ++b) {
        std::mt19937_64 rng(derive_seed(m.spec.seed, static_cast<std::uint64_t>(b)));
        std::vector<int> rows(n);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
        for (Eigen::Index i = 0; i < n; ++i) rows[i] = pick(rng);
        m.trees.push_back(build_cart(X, y, rows, params, rng));
    }
}

void fit_gradient_boosting(FittedLearner& m, const Matrix& X, const Vector& y) {
    const Eigen::Index n = X.rows();
    TreeParams params;
    params.max_depth = m.spec.max_depth;
    params.min_leaf = m.spec.min_leaf;
    params.feature_fraction = m.spec.feature_fraction;
    params.gini = false;  // trees always fit gradients by least squares

    const bool classify = (m.task == Task::classification);
    if (classify) {
        double p = std::clamp(y.mean(), 1e-6, 1.0 - 1e-6);
        m.base_score = std::log(p / (1.0 - p));
    } else {
        m.base_score = y.mean();
    }
    Vector score = Vector::Constant(n, m.base_score);
    std::vector<int> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);

    m.trees.reserve(m.spec.n_trees);
    for (int round = 0; round < m.spec.n_trees; ++round) {
        std::mt19937_64 rng(derive_seed(m.spec.seed, 0x6262ULL + round));
        Vector resid(n);
        if (classify) {
            for (Eigen::Index i = 0; i < n; ++i) resid(i) = y(i) - sigmoid(score(i));
        } else {
            resid = y - score;
        }
        std::vector<int> rows;
        if (m.spec.subsample < 1.0) {
            int keep = std::max(1, static_cast<int>(std::floor(m.spec.subsample * n)));
            std::vector<int> shuffled = all_rows;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            rows.assign(shuffled.begin(), shuffled.begin() + keep);
            std::sort(rows.begin(), rows.end());
        } else {
            rows = all_rows;
        }
        Tree tree = build_cart(X, resid, rows, params, rng);
        if (classify) {
            // Newton leaf values for logistic loss: sum(resid) / sum(p(1-p)).
            std::vector<double> num(tree.nodes.size(), 0.0), den(tree.nodes.size(), 0.0);
            for (int r : rows) {
                int idx = 0;
                while (tree.nodes[idx].left != -1)
                    idx = (X(r, tree.nodes[idx].feature) <= tree.nodes[idx].threshold)
                              ? tree.nodes[idx].left
                              : tree.nodes[idx].right;
                double p = sigmoid(score(r));
                num[idx] += resid(r);
                den[idx] += std::max(p * (1.0 - p), 1e-12);
            }
            for (std::size_t k = 0; k < tree.nodes.size(); ++k)
                if (tree.nodes[k].left == -1)
                    tree.nodes[k].value = std::clamp(num[k] / std::max(den[k], 1e-12), -4.0, 4.0);
        }
        for (Eigen::Index i = 0; i < n; ++i)
            score(i) += m.spec.learning_rate * tree.predict_row(X.row(i));
        m.trees.push_back(std::move(tree));
    }
}

}  // namespace

std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::linear: return "linear";
        case LearnerKind::logistic: return "logistic";
        case LearnerKind::elastic_net: return "elastic_net";
        case LearnerKind::random_forest: return "random_forest";
        case LearnerKind::gradient_boosting: return "gradient_boosting";
    }
    return "?";
}

LearnerKind learner_kind_from_string(const std::string& s) {
    if (s == "linear") return LearnerKind::linear;
    if (s == "logistic") return LearnerKind::logistic;
    if (s == "elastic_net") return LearnerKind::elastic_net;
    if (s == "random_forest") return LearnerKind::random_forest;
    if (s == "gradient_boosting") return LearnerKind::gradient_boosting;
    throw std::invalid_argument("unknown learner kind: " + s);
}

void LearnerSpec::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("learner spec: lambda must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("learner spec: alpha must be in [0,1]");
    if (max_depth < 1) throw std::invalid_argument("learner spec: max_depth must be >= 1");
    if (learning_rate <= 0.0 || learning_rate > 1.0)
        throw std::invalid_argument("learner spec: learning_rate must be in (0,1]");
    if (n_trees < 1) throw std::invalid_argument("learner spec: n_trees must be >= 1");
    if (min_leaf < 1) throw std::invalid_argument("learner spec: min_leaf must be >= 1");
    if (subsample <= 0.0 || subsample > 1.0)
        throw std::invalid_argument("learner spec: subsample must be in (0,1]");
    if (feature_fraction <= 0.0 || feature_fraction > 1.0)
        throw std::invalid_argument("learner spec: feature_fraction must be in (0,1]");
}

nlohmann::json LearnerSpec::to_json() const {
    return {
        {"kind", to_string(kind)},       {"lambda", lambda},
        {"alpha", alpha},                {"max_depth", max_depth},
        {"n_trees", n_trees},            {"min_leaf", min_leaf},
        {"learning_rate", learning_rate},{"subsample", subsample},
        {"feature_fraction", feature_fraction}, {"seed", seed},
    };
}

LearnerSpec LearnerSpec::from_json(const nlohmann::json& j) {
    LearnerSpec s;
    s.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    s.lambda = j.value("lambda", 0.0);
    s.alpha = j.value("alpha", 0.5);
    s.max_depth = j.value("max_depth", 3);
    s.n_trees = j.value("n_trees", 100);
    s.min_leaf = j.value("min_leaf", 5);
    s.learning_rate = j.value("learning_rate", 0.1);
    s.subsample = j.value("subsample", 1.0);
    s.feature_fraction = j.value("feature_fraction", 1.0);
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
}

FittedLearner fit_learner(const LearnerSpec& spec, const Matrix& X, const Vector& y, Task task) {
    spec.validate();
    if (X.rows() != y.size()) throw std::invalid_argument("fit_learner: X/y row mismatch");
    if (X.rows() < 2) throw std::invalid_argument("fit_learner: need at least 2 rows");
    if (task == Task::classification)
        for (Eigen::Index i = 0; i < y.size(); ++i)
            if (y(i) != 0.0 && y(i) != 1.0)
                throw std::invalid_argument("fit_learner: classification target must be binary");

    FittedLearner m;
    m.spec = spec;
    m.task = task;
    m.n_features = X.cols();
    standardize_stats(X, m.feat_mean, m.feat_scale);

    switch (spec.kind) {
        case LearnerKind::linear:
            if (task == Task::classification)
                throw std::invalid_argument("linear learner is regression-only; use logistic");
            fit_linear(m, X, y);
            break;
        case LearnerKind::logistic:
            if (task == Task::regression)
                throw std::invalid_argument("logistic learner is classification-only");
            fit_logistic(m, X, y);
            break;
        case LearnerKind::elastic_net:
            if (task == Task::classification)
                throw std::invalid_argument("elastic_net learner is regression-only");
            fit_elastic_net(m, X, y);
            break;
        case LearnerKind::random_forest:
            fit_random_forest(m, X, y);
            break;
        case LearnerKind::gradient_boosting:
            fit_gradient_boosting(m, X, y);
            break;
    }
    return m;
}

Vector FittedLearner::predict(const Matrix& X) const {
    if (X.cols() != n_features)
        throw std::invalid_argument("predict: feature count mismatch");
    const Eigen::Index n = X.rows();
    Vector out(n);
    switch (spec.kind) {
        case LearnerKind::linear:
        case LearnerKind::elastic_net:
            out = (X * coef).array() + intercept;
            break;
        case LearnerKind::logistic: {
            Vector eta = (X * coef).array() + intercept;
            for (Eigen::Index i = 0; i < n; ++i) out(i) = clamp_prob(sigmoid(eta(i)));
            break;
        }
        case LearnerKind::random_forest: {
            out.setZero();
            for (const Tree& t : trees)
                for (Eigen::Index i = 0; i < n; ++i) out(i) += t.predict_row(X.row(i));
            out /= static_cast<double>(trees.size());
            if (task == Task::classification)
                for (Eigen::Index i = 0; i < n; ++i) out(i) = clamp_prob(out(i));
            break;
        }
        case LearnerKind::gradient_boosting: {
            out.setConstant(base_score);
            for (const Tree& t : trees)
                for (Eigen::Index i = 0; i < n; ++i)
                    out(i) += spec.learning_rate * t.predict_row(X.row(i));
            if (task == Task::classification)
                for (Eigen::Index i = 0; i < n; ++i) out(i) = clamp_prob(sigmoid(out(i)));
            break;
        }
    }
    return out;
}

double mean_squared_error(const Vector& pred, const Vector& y) {
    return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

double log_loss(const Vector& prob, const Vector& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double p = clamp_prob(prob(i));
        s -= y(i) * std::log(p) + (1.0 - y(i)) * std::log(1.0 - p);
    }
    return s / static_cast<double>(y.size());
}

LearnerSpec tune(const std::vector<LearnerSpec>& grid, const Matrix& X, const Vector& y,
                 Task task, int k, CvMetric metric, std::uint64_t seed) {
    if (grid.empty()) throw std::invalid_argument("tune: empty grid");
    if (k < 2) throw std::invalid_argument("tune: need k >= 2 folds");
    const Eigen::Index n = X.rows();

    std::vector<int> fold_of(n);
    {
        std::vector<Eigen::Index> idx(n);
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (Eigen::Index i = 0; i < n; ++i) fold_of[idx[i]] = static_cast<int>(i % k);
    }

    double best_score = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double total = 0.0;
        for (int f = 0; f < k; ++f) {
            std::vector<Eigen::Index> tr, te;
            for (Eigen::Index i = 0; i < n; ++i)
                (fold_of[i] == f ? te : tr).push_back(i);
            Matrix Xtr(tr.size(), X.cols()), Xte(te.size(), X.cols());
            Vector ytr(tr.size()), yte(te.size());
            for (std::size_t i = 0; i < tr.size(); ++i) { Xtr.row(i) = X.row(tr[i]); ytr(i) = y(tr[i]); }
            for (std::size_t i = 0; i < te.size(); ++i) { Xte.row(i) = X.row(te[i]); yte(i) = y(te[i]); }
            FittedLearner m = fit_learner(grid[g], Xtr, ytr, task);
            Vector pred = m.predict(Xte);
            total += (metric == CvMetric::mse) ? mean_squared_error(pred, yte) : log_loss(pred, yte);
        }
        double avg = total / k;
        if (avg < best_score - 1e-12) {
            best_score = avg;
            best_idx = g;
        }
    }
    return grid[best_idx];
}

double kkt_check(const FittedLearner& model, const Matrix& X, const Vector& y) {
    if (model.spec.kind != LearnerKind::elastic_net)
        throw std::invalid_argument("kkt_check: model is not an elastic net");
    const Eigen::Index n = X.rows(), d = X.cols();
    if (d == 0) return 0.0;
    Matrix Z = apply_standardize(X, model.feat_mean, model.feat_scale);
    Vector yc = y.array() - y.mean();
    const Vector& beta = model.coef_std;
    Vector grad = Z.transpose() * (Z * beta - yc) / static_cast<double>(n) +
                  model.spec.lambda * (1.0 - model.spec.alpha) * beta;
    const double l1 = model.spec.lambda * model.spec.alpha;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        double v;
        if (beta(j) > 0.0) v = std::abs(grad(j) + l1);
        else if (beta(j) < 0.0) v = std::abs(grad(j) - l1);
        else v = std::max(0.0, std::abs(grad(j)) - l1);
        worst = std::max(worst, v);
    }
    return worst;
}

nlohmann::json FittedLearner::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["spec"] = spec.to_json();
    j["task"] = (task == Task::regression) ? "regression" : "classification";
    j["n_features"] = n_features;
    j["degenerate_target"] = degenerate_target;
    j["intercept"] = intercept;
    j["intercept_std"] = intercept_std;
    j["base_score"] = base_score;
    auto vec = [](const Vector& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    j["coef"] = vec(coef);
    j["coef_std"] = vec(coef_std);
    j["feat_mean"] = vec(feat_mean);
    j["feat_scale"] = vec(feat_scale);
    nlohmann::json jtrees = nlohmann::json::array();
    for (const Tree& t : trees) {
        nlohmann::json jt = nlohmann::json::array();
        for (const TreeNode& nd : t.nodes)
            jt.push_back({nd.feature, nd.threshold, nd.value, nd.left, nd.right});
        jtrees.push_back(std::move(jt));
    }
    j["trees"] = std::move(jtrees);
    return j;
}

FittedLearner FittedLearner::from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw std::invalid_argument("fitted learner: unsupported format version");
    FittedLearner m;
    m.spec = LearnerSpec::from_json(j.at("spec"));
    m.task = (j.at("task").get<std::string>() == "regression") ? Task::regression
                                                               : Task::classification;
    m.n_features = j.at("n_features").get<Eigen::Index>();
    m.degenerate_target = j.at("degenerate_target").get<bool>();
    m.intercept = j.at("intercept").get<double>();
    m.intercept_std = j.at("intercept_std").get<double>();
    m.base_score = j.at("base_score").get<double>();
    auto vec = [](const nlohmann::json& a) {
        std::vector<double> v = a.get<std::vector<double>>();
        return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    m.coef = vec(j.at("coef"));
    m.coef_std = vec(j.at("coef_std"));
    m.feat_mean = vec(j.at("feat_mean"));
    m.feat_scale = vec(j.at("feat_scale"));
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& nd : jt) {
            TreeNode node;
            node.feature = nd.at(0).get<int>();
            node.threshold = nd.at(1).get<double>();
            node.value = nd.at(2).get<double>();
            node.left = nd.at(3).get<int>();
            node.right = nd.at(4).get<int>();
            t.nodes.push_back(node);
        }
        m.trees.push_back(std::move(t));
    }
    return m;
}

}  // namespace mase
