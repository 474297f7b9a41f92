#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mase/learners.hpp"

// Depth-limited CART. Split thresholds are midpoints between consecutive
// distinct sorted values; ties between equally good splits go to the lowest
// feature index (then the lowest threshold).

namespace mase {

double Tree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int idx = 0;
    while (nodes[idx].left != -1)
        idx = (x(nodes[idx].feature) <= nodes[idx].threshold) ? nodes[idx].left : nodes[idx].right;
    return nodes[idx].value;
}

namespace {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// Impurity gain of splitting `rows` on `feature` at the best midpoint.
// Variance criterion: gain = sumL^2/nL + sumR^2/nR - sum^2/n (SSE reduction).
// Gini with 0/1 targets reduces to the same expression up to scale, so one
// scan covers both; `gini` only switches the leaf handling upstream.
Split best_split_on_feature(const Matrix& X, const Vector& y, const std::vector<int>& rows,
                            int feature, int min_leaf,
                            std::vector<std::pair<double, double>>& scratch) {
    scratch.clear();
    for (int r : rows) scratch.emplace_back(X(r, feature), y(r));
    std::sort(scratch.begin(), scratch.end());

    const int n = static_cast<int>(scratch.size());
    double total = 0.0;
    for (const auto& [v, t] : scratch) total += t;

    Split best;
    double sum_left = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        sum_left += scratch[i].second;
        if (scratch[i].first == scratch[i + 1].first) continue;
        int n_left = i + 1, n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        double sum_right = total - sum_left;
        double gain = sum_left * sum_left / n_left + sum_right * sum_right / n_right -
                      total * total / n;
        if (gain > best.gain + 1e-15 ||
            (best.feature == -1 && gain > 0.0)) {
            best.feature = feature;
            best.threshold = 0.5 * (scratch[i].first + scratch[i + 1].first);
            best.gain = gain;
        }
    }
    return best;
}

struct Builder {
    const Matrix& X;
    const Vector& y;
    TreeParams params;
    std::mt19937_64& rng;
    Tree tree;
    std::vector<std::pair<double, double>> scratch;
    std::vector<int> feature_pool;

    int grow(std::vector<int>& rows, int depth) {
        int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        double mean = 0.0;
        for (int r : rows) mean += y(r);
        mean /= static_cast<double>(rows.size());
        tree.nodes[node_id].value = mean;

        if (depth >= params.max_depth ||
            static_cast<int>(rows.size()) < 2 * params.min_leaf)
            return node_id;

        const int d = static_cast<int>(X.cols());
        int m = d;
        if (params.feature_fraction < 1.0) {
            m = std::max(1, static_cast<int>(std::ceil(params.feature_fraction * d)));
        }
        Split best;
        if (m == d) {
            for (int f = 0; f < d; ++f) {
                Split s = best_split_on_feature(X, y, rows, f, params.min_leaf, scratch);
                if (s.feature != -1 && s.gain > best.gain + 1e-15) best = s;
                else if (best.feature == -1 && s.feature != -1) best = s;
            }
        } else {
            // Partial Fisher-Yates draw of m distinct features; candidates are
            // examined in ascending index order to keep the tie-break rule.
            feature_pool.resize(d);
            std::iota(feature_pool.begin(), feature_pool.end(), 0);
            for (int i = 0; i < m; ++i) {
                std::uniform_int_distribution<int> pick(i, d - 1);
                std::swap(feature_pool[i], feature_pool[pick(rng)]);
            }
            std::sort(feature_pool.begin(), feature_pool.begin() + m);
            for (int i = 0; i < m; ++i) {
                Split s = best_split_on_feature(X, y, rows, feature_pool[i], params.min_leaf, scratch);
                if (s.feature != -1 && s.gain > best.gain + 1e-15) best = s;
                else if (best.feature == -1 && s.feature != -1) best = s;
            }
        }
        if (best.feature == -1 || best.gain <= 1e-12) return node_id;

        std::vector<int> left_rows, right_rows;
        left_rows.reserve(rows.size());
        right_rows.reserve(rows.size());
        for (int r : rows)
            (X(r, best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
        rows.clear();
        rows.shrink_to_fit();

        tree.nodes[node_id].feature = best.feature;
        tree.nodes[node_id].threshold = best.threshold;
        int left = grow(left_rows, depth + 1);
        int right = grow(right_rows, depth + 1);
        tree.nodes[node_id].left = left;
        tree.nodes[node_id].right = right;
        return node_id;
    }
};

}  // namespace

Tree build_cart(const Matrix& X, const Vector& y, const std::vector<int>& rows,
                const TreeParams& params, std::mt19937_64& rng) {
    Builder b{X, y, params, rng, {}, {}, {}};
    std::vector<int> root_rows = rows;
    b.grow(root_rows, 0);
    return std::move(b.tree);
}

}  // namespace mase
