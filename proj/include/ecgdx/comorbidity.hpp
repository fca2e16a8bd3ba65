#pragma once

// Cross-disease association analysis over model risk scores: Spearman
// rank-correlation matrix, mutual-information network with Spearman signs,
// weighted degree, and plot-ready exports.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgdx/stats.hpp"
#include "ecgdx/util.hpp"

namespace ecgdx::comorb {

// ---------------- domain types ----------------

struct RiskMatrix {
    std::vector<std::string> diseases;      // column labels (canonical codes)
    std::vector<std::string> subject_ids;   // row labels
    std::vector<double> values;             // n_subjects x n_diseases, row-major

    std::size_t n_subjects() const { return subject_ids.size(); }
    std::size_t n_diseases() const { return diseases.size(); }

    double at(std::size_t s, std::size_t d) const { return values[s * diseases.size() + d]; }

    std::vector<double> column(std::size_t d) const {
        std::vector<double> col(n_subjects());
        for (std::size_t s = 0; s < col.size(); ++s) col[s] = at(s, d);
        return col;
    }

    void validate() const {
        if (diseases.empty() || subject_ids.empty())
            throw std::invalid_argument("risk matrix is empty");
        if (values.size() != n_subjects() * n_diseases())
            throw std::invalid_argument("risk matrix storage mismatch");
        for (double v : values)
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite risk score");
    }
};

struct Edge {
    std::size_t a = 0;
    std::size_t b = 0;   // a < b
    double weight = 0.0; // mutual information, bits
    int sign = 1;        // sign of the Spearman correlation
};

struct AssociationNetwork {
    std::vector<std::string> nodes;
    std::vector<Edge> edges;
};

// ---------------- Spearman ----------------

// Pearson correlation of mid-ranks (average ranks on ties).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("spearman: need equal-length inputs of size >= 3");
    const auto rx = stats::mid_ranks(x);
    const auto ry = stats::mid_ranks(y);
    return stats::pearson(rx, ry);  // throws "constant input" on zero rank variance
}

// Pairwise Spearman over all column pairs; ranks computed once per column.
// Constant columns poison their row/column with NaN; the diagonal stays 1.
inline std::vector<double> spearman_matrix(const RiskMatrix& m) {
    m.validate();
    if (m.n_subjects() < 3) throw std::invalid_argument("spearman_matrix: need >= 3 subjects");
    const std::size_t k = m.n_diseases();
    std::vector<std::vector<double>> ranks(k);
    std::vector<bool> constant(k, false);
    for (std::size_t d = 0; d < k; ++d) {
        const auto col = m.column(d);
        ranks[d] = stats::mid_ranks(col);
        constant[d] = std::all_of(col.begin(), col.end(),
                                  [&](double v) { return v == col.front(); });
    }
    std::vector<double> out(k * k, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < k; ++i) {
        out[i * k + i] = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            if (constant[i] || constant[j]) continue;
            const double r = stats::pearson(ranks[i], ranks[j]);
            out[i * k + j] = r;
            out[j * k + i] = r;
        }
    }
    return out;
}

// ---------------- mutual information ----------------

// Equal-frequency binning by rank order; ties resolve by original index so
// the assignment is deterministic.
inline std::vector<int> equal_frequency_bins(const std::vector<double>& x, int n_bins) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<int> bins(n);
    for (std::size_t i = 0; i < n; ++i) {
        int b = static_cast<int>((i * static_cast<std::size_t>(n_bins)) / n);
        if (b >= n_bins) b = n_bins - 1;
        bins[order[i]] = b;
    }
    return bins;
}

// Plug-in MI in bits over equal-frequency bins of both variables.
inline double mutual_information(const std::vector<double>& x, const std::vector<double>& y,
                                 int n_bins = 10) {
    if (x.size() != y.size()) throw std::invalid_argument("mi: length mismatch");
    if (n_bins < 2) throw std::invalid_argument("mi: need at least 2 bins");
    if (x.size() < static_cast<std::size_t>(n_bins))
        throw std::invalid_argument("mi: need at least n_bins samples");
    const auto bx = equal_frequency_bins(x, n_bins);
    const auto by = equal_frequency_bins(y, n_bins);
    const std::size_t n = x.size();

    std::vector<double> joint(static_cast<std::size_t>(n_bins) * n_bins, 0.0);
    std::vector<double> px(n_bins, 0.0), py(n_bins, 0.0);
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        joint[static_cast<std::size_t>(bx[i]) * n_bins + by[i]] += w;
        px[bx[i]] += w;
        py[by[i]] += w;
    }
    double mi = 0.0;
    for (int i = 0; i < n_bins; ++i)
        for (int j = 0; j < n_bins; ++j) {
            const double p = joint[static_cast<std::size_t>(i) * n_bins + j];
            if (p <= 0.0) continue;
            mi += p * std::log2(p / (px[i] * py[j]));
        }
    return std::max(mi, 0.0);
}

// ---------------- network ----------------

// Edges keep pairs whose MI reaches mi_floor; weights are MI, signs come
// from Spearman. NaN Spearman (constant column) keeps sign +1.
inline AssociationNetwork build_network(const RiskMatrix& m, int n_bins, double mi_floor) {
    m.validate();
    const std::size_t k = m.n_diseases();
    const auto rho = spearman_matrix(m);
    AssociationNetwork net;
    net.nodes = m.diseases;
    std::vector<std::vector<double>> cols(k);
    for (std::size_t d = 0; d < k; ++d) cols[d] = m.column(d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double mi = mutual_information(cols[i], cols[j], n_bins);
            if (mi < mi_floor) continue;
            const double r = rho[i * k + j];
            net.edges.push_back({i, j, mi, (std::isnan(r) || r >= 0.0) ? 1 : -1});
        }
    return net;
}

// Default edge floor: the 90th percentile of off-diagonal MI values, which
// keeps the rendered graph sparse.
inline double default_mi_floor(const RiskMatrix& m, int n_bins) {
    const std::size_t k = m.n_diseases();
    std::vector<double> mis;
    std::vector<std::vector<double>> cols(k);
    for (std::size_t d = 0; d < k; ++d) cols[d] = m.column(d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            mis.push_back(mutual_information(cols[i], cols[j], n_bins));
    if (mis.empty()) return 0.0;
    std::sort(mis.begin(), mis.end());
    const double pos = 0.9 * static_cast<double>(mis.size() - 1);
    const auto i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    return i0 + 1 < mis.size() ? mis[i0] * (1.0 - frac) + mis[i0 + 1] * frac : mis.back();
}

inline std::vector<double> weighted_degree(const AssociationNetwork& net) {
    std::vector<double> degree(net.nodes.size(), 0.0);
    for (const auto& e : net.edges) {
        degree[e.a] += e.weight;
        degree[e.b] += e.weight;
    }
    return degree;
}

// ---------------- exports ----------------

inline const char* chapter_color(char chapter) {
    // fixed palette keyed by ICD chapter letter
    static const char* palette[] = {"#4c78a8", "#f58518", "#e45756", "#72b7b2", "#54a24b",
                                    "#eeca3b", "#b279a2", "#ff9da6", "#9d755d", "#bab0ac"};
    if (chapter < 'A' || chapter > 'Z') return "#888888";
    return palette[(chapter - 'A') % 10];
}

// Heatmap CSV: header row of codes, then one row per disease. Values with 6
// significant digits; undefined entries render as nan.
inline void export_heatmap_csv(const RiskMatrix& m, const std::vector<double>& matrix,
                               const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    const std::size_t k = m.n_diseases();
    std::vector<std::string> header = {"disease"};
    header.insert(header.end(), m.diseases.begin(), m.diseases.end());
    os << csv_row(header);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<std::string> row = {m.diseases[i]};
        for (std::size_t j = 0; j < k; ++j) row.push_back(fmt_sig(matrix[i * k + j], 6));
        os << csv_row(row);
    }
}

// Chord-diagram JSON: nodes with chapter color keys, edges with weight and
// sign.
inline void export_chord_json(const AssociationNetwork& net, const std::string& path) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& code : net.nodes) {
        const char chapter = code.empty() ? '?' : code[0];
        j["nodes"].push_back({{"code", code},
                              {"chapter", std::string(1, chapter)},
                              {"color", chapter_color(chapter)}});
    }
    j["edges"] = nlohmann::json::array();
    for (const auto& e : net.edges)
        j["edges"].push_back({{"a", net.nodes[e.a]},
                              {"b", net.nodes[e.b]},
                              {"weight", std::stod(fmt_sig(e.weight, 6))},
                              {"sign", e.sign}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

// Scatter CSV for one disease pair, one row per subject.
inline void export_scatter_csv(const RiskMatrix& m, const std::string& disease_x,
                               const std::string& disease_y, const std::string& path) {
    const auto find = [&](const std::string& code) {
        const auto it = std::find(m.diseases.begin(), m.diseases.end(), code);
        if (it == m.diseases.end()) throw std::invalid_argument("unknown disease code: " + code);
        return static_cast<std::size_t>(it - m.diseases.begin());
    };
    const std::size_t dx = find(disease_x);
    const std::size_t dy = find(disease_y);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << csv_row({"subject_id", disease_x, disease_y});
    for (std::size_t s = 0; s < m.n_subjects(); ++s)
        os << csv_row({m.subject_ids[s], fmt_sig(m.at(s, dx), 6), fmt_sig(m.at(s, dy), 6)});
}

}  // namespace ecgdx::comorb
