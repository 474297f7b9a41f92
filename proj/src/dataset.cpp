#include "mase/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mase {

void LongitudinalDataset::validate() const {
    if (n_timepoints < 1) throw std::invalid_argument("dataset: T must be >= 1");
    if (exposures.rows() != n_subjects || exposures.cols() != n_timepoints)
        throw std::invalid_argument("dataset: exposure matrix shape mismatch");
    if (static_cast<Eigen::Index>(covariates.size()) != n_timepoints ||
        static_cast<Eigen::Index>(outcomes.size()) != n_timepoints)
        throw std::invalid_argument("dataset: per-timepoint block count mismatch");
    for (Eigen::Index t = 0; t < n_timepoints; ++t) {
        if (covariates[t].rows() != n_subjects)
            throw std::invalid_argument("dataset: covariate block row mismatch");
        if (outcomes[t].rows() != n_subjects)
            throw std::invalid_argument("dataset: outcome block row mismatch");
        if (outcomes[t].cols() != outcomes[0].cols())
            throw std::invalid_argument("dataset: outcome dimension varies over time");
    }
    if (baseline_covariates.rows() != 0 && baseline_covariates.rows() != n_subjects)
        throw std::invalid_argument("dataset: baseline block row mismatch");
    for (Eigen::Index i = 0; i < n_subjects; ++i)
        for (Eigen::Index t = 0; t < n_timepoints; ++t) {
            double a = exposures(i, t);
            if (a != 0.0 && a != 1.0)
                throw std::invalid_argument("dataset: non-binary exposure at subject " +
                                            std::to_string(i) + ", time " + std::to_string(t + 1));
        }
    auto check_finite = [](const Matrix& m, const char* what) {
        if (!m.allFinite())
            throw std::invalid_argument(std::string("dataset: non-finite value in ") + what);
    };
    check_finite(exposures, "exposures");
    for (const auto& m : covariates) check_finite(m, "covariates");
    for (const auto& m : outcomes) check_finite(m, "outcomes");
    check_finite(baseline_covariates, "baseline covariates");
}

ColumnSchema ColumnSchema::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ColumnSchema schema;
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string role = it.value().get<std::string>();
        Entry e;
        if (role == "baseline") {
            e.role = Entry::Role::Baseline;
        } else {
            auto at = role.find('@');
            if (at == std::string::npos)
                throw std::invalid_argument("schema: bad role '" + role + "' for column " + it.key());
            std::string kind = role.substr(0, at);
            e.timepoint = std::stoi(role.substr(at + 1));
            if (e.timepoint < 1)
                throw std::invalid_argument("schema: timepoint must be >= 1 in '" + role + "'");
            if (kind == "exposure") e.role = Entry::Role::Exposure;
            else if (kind == "covariate") e.role = Entry::Role::Covariate;
            else if (kind == "outcome") e.role = Entry::Role::Outcome;
            else throw std::invalid_argument("schema: unknown role kind '" + kind + "'");
        }
        schema.entries.emplace_back(it.key(), e);
    }
    return schema;
}

ColumnSchema ColumnSchema::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("schema: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') { out.push_back(cur); cur.clear(); }
        else if (c != '\r') cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& s, const std::string& col, std::size_t row) {
    if (s.empty())
        throw std::invalid_argument("csv: missing cell in column '" + col + "', row " +
                                    std::to_string(row));
    double v;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::invalid_argument("csv: cannot parse '" + s + "' in column '" + col + "'");
    return v;
}

}  // namespace

LongitudinalDataset load_wide_csv(const std::string& path, const ColumnSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("csv: cannot open " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) throw std::invalid_argument("csv: empty file " + path);
    std::vector<std::string> headers = split_csv_line(header_line);

    std::map<std::string, ColumnSchema::Entry> role_of;
    for (const auto& [name, e] : schema.entries) role_of[name] = e;
    std::vector<ColumnSchema::Entry> col_roles;
    for (const auto& h : headers) {
        auto it = role_of.find(h);
        if (it == role_of.end())
            throw std::invalid_argument("csv: unmapped column '" + h + "'");
        col_roles.push_back(it->second);
    }

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != headers.size())
            throw std::invalid_argument("csv: row " + std::to_string(rows.size() + 1) +
                                        " has " + std::to_string(cells.size()) + " cells, expected " +
                                        std::to_string(headers.size()));
        std::vector<double> vals(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            vals[c] = parse_cell(cells[c], headers[c], rows.size() + 1);
        rows.push_back(std::move(vals));
    }
    Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    if (n == 0) throw std::invalid_argument("csv: no data rows in " + path);

    int T = 0;
    for (const auto& e : col_roles)
        if (e.timepoint > T) T = e.timepoint;
    if (T == 0) throw std::invalid_argument("csv: schema declares no timepoints");

    // Column indices grouped by role/timepoint, in header order.
    std::vector<int> expo_col(T, -1);
    std::vector<std::vector<int>> cov_cols(T), out_cols(T);
    std::vector<int> base_cols;
    for (std::size_t c = 0; c < col_roles.size(); ++c) {
        const auto& e = col_roles[c];
        switch (e.role) {
            case ColumnSchema::Entry::Role::Exposure:
                if (expo_col[e.timepoint - 1] != -1)
                    throw std::invalid_argument("csv: duplicate exposure column for t=" +
                                                std::to_string(e.timepoint));
                expo_col[e.timepoint - 1] = static_cast<int>(c);
                break;
            case ColumnSchema::Entry::Role::Covariate:
                cov_cols[e.timepoint - 1].push_back(static_cast<int>(c));
                break;
            case ColumnSchema::Entry::Role::Outcome:
                out_cols[e.timepoint - 1].push_back(static_cast<int>(c));
                break;
            case ColumnSchema::Entry::Role::Baseline:
                base_cols.push_back(static_cast<int>(c));
                break;
        }
    }
    for (int t = 0; t < T; ++t)
        if (expo_col[t] == -1)
            throw std::invalid_argument("csv: no exposure column for t=" + std::to_string(t + 1));

    LongitudinalDataset ds;
    ds.n_subjects = n;
    ds.n_timepoints = T;
    ds.exposures.resize(n, T);
    for (int t = 0; t < T; ++t)
        for (Eigen::Index i = 0; i < n; ++i) ds.exposures(i, t) = rows[i][expo_col[t]];
    for (int t = 0; t < T; ++t) {
        Matrix Z(n, static_cast<Eigen::Index>(cov_cols[t].size()));
        for (std::size_t c = 0; c < cov_cols[t].size(); ++c)
            for (Eigen::Index i = 0; i < n; ++i) Z(i, c) = rows[i][cov_cols[t][c]];
        ds.covariates.push_back(std::move(Z));
        Matrix Y(n, static_cast<Eigen::Index>(out_cols[t].size()));
        for (std::size_t c = 0; c < out_cols[t].size(); ++c)
            for (Eigen::Index i = 0; i < n; ++i) Y(i, c) = rows[i][out_cols[t][c]];
        ds.outcomes.push_back(std::move(Y));
    }
    ds.baseline_covariates.resize(n, static_cast<Eigen::Index>(base_cols.size()));
    for (std::size_t c = 0; c < base_cols.size(); ++c)
        for (Eigen::Index i = 0; i < n; ++i) ds.baseline_covariates(i, c) = rows[i][base_cols[c]];

    ds.validate();
    return ds;
}

void save_wide_csv(const LongitudinalDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("csv: cannot write " + path);
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::vector<std::string> headers;
    for (int t = 1; t <= ds.n_timepoints; ++t) headers.push_back("A_" + std::to_string(t));
    for (int t = 1; t <= ds.n_timepoints; ++t)
        for (Eigen::Index c = 0; c < ds.covariates[t - 1].cols(); ++c)
            headers.push_back("Z_" + std::to_string(t) + "_" + std::to_string(c + 1));
    for (int t = 1; t <= ds.n_timepoints; ++t)
        for (Eigen::Index c = 0; c < ds.outcomes[t - 1].cols(); ++c)
            headers.push_back("Y_" + std::to_string(t) + "_" + std::to_string(c + 1));
    for (Eigen::Index c = 0; c < ds.baseline_covariates.cols(); ++c)
        headers.push_back("B_" + std::to_string(c + 1));
    for (std::size_t c = 0; c < headers.size(); ++c)
        out << (c ? "," : "") << headers[c];
    out << "\n";
    for (Eigen::Index i = 0; i < ds.n_subjects; ++i) {
        bool first = true;
        auto emit = [&](double v) { out << (first ? "" : ","); first = false; out << fmt(v); };
        for (int t = 0; t < ds.n_timepoints; ++t) emit(ds.exposures(i, t));
        for (int t = 0; t < ds.n_timepoints; ++t)
            for (Eigen::Index c = 0; c < ds.covariates[t].cols(); ++c) emit(ds.covariates[t](i, c));
        for (int t = 0; t < ds.n_timepoints; ++t)
            for (Eigen::Index c = 0; c < ds.outcomes[t].cols(); ++c) emit(ds.outcomes[t](i, c));
        for (Eigen::Index c = 0; c < ds.baseline_covariates.cols(); ++c)
            emit(ds.baseline_covariates(i, c));
        out << "\n";
    }
}

// Canonical JSON schema matching save_wide_csv headers.
// (Kept in sync with the header naming above; used by round-trip tests and tools.)
HistoryDesign build_history(const LongitudinalDataset& ds, int t, bool include_current_exposure) {
    if (t < 1 || t > ds.n_timepoints)
        throw std::invalid_argument("build_history: t out of range");
    HistoryDesign hd;
    Eigen::Index cols = 0;
    cols += t - 1;                                      // A_1..A_{t-1}
    for (int k = 1; k <= t; ++k) cols += ds.p(k);       // Z_1..Z_t
    cols += (t - 1) * ds.q();                           // Y_1..Y_{t-1}
    if (include_current_exposure) cols += 1;
    hd.columns.resize(ds.n_subjects, cols);

    Eigen::Index c = 0;
    for (int k = 1; k <= t - 1; ++k) {
        hd.columns.col(c) = ds.exposures.col(k - 1);
        hd.labels.push_back("A@" + std::to_string(k));
        ++c;
    }
    if (include_current_exposure) {
        hd.columns.col(c) = ds.exposures.col(t - 1);
        hd.labels.push_back("A@" + std::to_string(t));
        ++c;
    }
    for (int k = 1; k <= t; ++k) {
        const Matrix& Z = ds.covariates[k - 1];
        for (Eigen::Index j = 0; j < Z.cols(); ++j) {
            hd.columns.col(c) = Z.col(j);
            hd.labels.push_back("Z@" + std::to_string(k) + ":" + std::to_string(j + 1));
            ++c;
        }
    }
    for (int k = 1; k <= t - 1; ++k) {
        const Matrix& Y = ds.outcomes[k - 1];
        for (Eigen::Index j = 0; j < Y.cols(); ++j) {
            hd.columns.col(c) = Y.col(j);
            hd.labels.push_back("Y@" + std::to_string(k) + ":" + std::to_string(j + 1));
            ++c;
        }
    }
    return hd;
}

std::vector<TreatmentRegime> enumerate_regimes(int T) {
    return enumerate_suffixes(T, 1);
}

std::vector<TreatmentRegime> enumerate_suffixes(int T, int t) {
    if (T < 1 || t < 1 || t > T)
        throw std::invalid_argument("enumerate_suffixes: t out of range");
    int len = T - t + 1;
    std::vector<TreatmentRegime> out;
    out.reserve(std::size_t{1} << len);
    for (unsigned mask = 0; mask < (1u << len); ++mask) {
        TreatmentRegime r;
        r.start_time = t;
        r.values.resize(len);
        for (int k = 0; k < len; ++k)
            r.values[k] = (mask >> (len - 1 - k)) & 1;  // lexicographic order
        out.push_back(std::move(r));
    }
    return out;
}

FoldSplit split_folds(const LongitudinalDataset& ds, std::uint64_t seed) {
    if (ds.n_subjects < 4) throw std::invalid_argument("split_folds: need n >= 4");
    std::vector<Eigen::Index> idx(ds.n_subjects);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    FoldSplit fs;
    fs.seed = seed;
    Eigen::Index half = ds.n_subjects / 2;
    fs.fold_a.assign(idx.begin(), idx.begin() + half);
    fs.fold_b.assign(idx.begin() + half, idx.end());
    std::sort(fs.fold_a.begin(), fs.fold_a.end());
    std::sort(fs.fold_b.begin(), fs.fold_b.end());
    return fs;
}

}  // namespace mase
