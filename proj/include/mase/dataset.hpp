#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

// Longitudinal data model: n subjects observed at T visits, each visit
// carrying a binary exposure A_t, a covariate block Z_t, and outcome(s) Y_t.
// Everything downstream (history design matrices, regime enumeration, fold
// splits) lives here so that all estimators consume the same representation.

namespace mase {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LongitudinalDataset {
    Eigen::Index n_subjects = 0;
    Eigen::Index n_timepoints = 0;          // T >= 1
    Matrix exposures;                       // n x T, entries in {0,1}
    std::vector<Matrix> covariates;         // T blocks, n x p_t
    std::vector<Matrix> outcomes;           // T blocks, n x q
    Matrix baseline_covariates;             // n x p0 (may have 0 columns)

    Eigen::Index p(Eigen::Index t) const { return covariates[t - 1].cols(); }
    Eigen::Index q() const { return outcomes.empty() ? 0 : outcomes[0].cols(); }

    // Throws std::invalid_argument on any structural violation.
    void validate() const;
};

struct TreatmentRegime {
    std::vector<int> values;                // length T (or suffix length)
    int start_time = 1;                     // 1 for full regimes, t for suffixes

    int size() const { return static_cast<int>(values.size()); }
    bool operator==(const TreatmentRegime& o) const {
        return values == o.values && start_time == o.start_time;
    }
};

struct FoldSplit {
    std::vector<Eigen::Index> fold_a;
    std::vector<Eigen::Index> fold_b;
    std::uint64_t seed = 0;
};

struct HistoryDesign {
    Matrix columns;                         // n x d design matrix
    std::vector<std::string> labels;        // one per column, e.g. "A@1", "Z@2:3", "Y@1:1"
};

struct ColumnSchema {
    // Maps each CSV header to a role. Indices are 1-based timepoints.
    // Built from a JSON document of the form {"A_1": "exposure@1", ...}.
    struct Entry {
        enum class Role { Exposure, Covariate, Outcome, Baseline } role;
        int timepoint = 0;                  // 0 for baseline
    };
    std::vector<std::pair<std::string, Entry>> entries;

    static ColumnSchema from_json_file(const std::string& path);
    static ColumnSchema from_json_text(const std::string& text);
};

LongitudinalDataset load_wide_csv(const std::string& path, const ColumnSchema& schema);

// Writes one row per subject with 17-significant-digit values so that a
// reload reproduces every matrix bit-for-bit.
void save_wide_csv(const LongitudinalDataset& ds, const std::string& path);

// History features available just before (or including) the exposure at t:
// (A_1..A_{t-1}, Z_1..Z_t, Y_1..Y_{t-1}) [+ A_t when include_current_exposure].
HistoryDesign build_history(const LongitudinalDataset& ds, int t,
                            bool include_current_exposure);

std::vector<TreatmentRegime> enumerate_regimes(int T);
std::vector<TreatmentRegime> enumerate_suffixes(int T, int t);

FoldSplit split_folds(const LongitudinalDataset& ds, std::uint64_t seed);

}  // namespace mase
