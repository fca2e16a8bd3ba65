#pragma once

// Multi-label classification evaluation: rank-based AUROC, confusion-matrix
// metrics, percentile-bootstrap confidence intervals and Youden operating
// thresholds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/util.hpp"

namespace ecgdx::metrics {

struct ScoreLabelPairs {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return scores.size(); }

    void validate() const {
        if (scores.size() != labels.size())
            throw std::invalid_argument("scores/labels length mismatch");
        if (scores.empty()) throw std::invalid_argument("empty sample");
        for (double s : scores)
            if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
    }

    std::size_t positives() const {
        std::size_t n = 0;
        for (auto y : labels) n += y ? 1 : 0;
        return n;
    }
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

// Mann-Whitney AUROC via mid-ranks: ties between a positive and a negative
// count one half. O(n log n).
inline double auroc(const ScoreLabelPairs& data) {
    data.validate();
    const std::size_t n = data.size();
    const std::size_t n_pos = data.positives();
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("undefined AUROC: single class");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && data.scores[order[j]] == data.scores[order[i]]) ++j;
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (data.labels[order[k]]) rank_sum_pos += mid_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Prediction is positive iff score >= threshold.
inline ConfusionCounts confusion_at(const ScoreLabelPairs& data, double threshold) {
    data.validate();
    ConfusionCounts c;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool pred = data.scores[i] >= threshold;
        if (data.labels[i]) {
            pred ? ++c.tp : ++c.fn;
        } else {
            pred ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

inline double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) throw std::invalid_argument("sensitivity undefined: no positives");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0) throw std::invalid_argument("specificity undefined: no negatives");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

// Harmonic mean of precision and recall; 0 when TP = 0.
inline double f1(const ConfusionCounts& c) {
    if (c.tp == 0) return 0.0;
    const double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    return 2.0 * p * r / (p + r);
}

// ---------------- bootstrap ----------------

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap over index resamples with replacement. Resamples on
// which the metric is undefined (throws) are redrawn, capped at
// 10 * n_resamples attempts in total. Each resample draws from its own
// counter-derived stream, so execution order cannot change the result.
inline Interval bootstrap_ci(const std::function<double(const ScoreLabelPairs&)>& metric,
                             const ScoreLabelPairs& data, std::size_t n_resamples, double alpha,
                             std::uint64_t seed) {
    data.validate();
    if (n_resamples < 100) throw std::invalid_argument("bootstrap needs >= 100 resamples");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");

    const std::size_t n = data.size();
    std::vector<double> values;
    values.reserve(n_resamples);
    const std::size_t max_attempts = 10 * n_resamples;
    std::size_t attempts = 0;
    ScoreLabelPairs resample;
    resample.scores.resize(n);
    resample.labels.resize(n);
    while (values.size() < n_resamples) {
        if (attempts >= max_attempts) throw std::runtime_error("degenerate data: bootstrap cap exhausted");
        Rng rng(derive_seed(seed, attempts));
        ++attempts;
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(n));
            resample.scores[i] = data.scores[j];
            resample.labels[i] = data.labels[j];
        }
        try {
            values.push_back(metric(resample));
        } catch (const std::invalid_argument&) {
            // undefined on this resample; redraw
        }
    }

    std::sort(values.begin(), values.end());
    auto percentile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto i0 = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i0);
        if (i0 + 1 >= values.size()) return values.back();
        return values[i0] * (1.0 - frac) + values[i0 + 1] * frac;
    };
    return {percentile(alpha / 2.0), percentile(1.0 - alpha / 2.0)};
}

// ---------------- operating threshold ----------------

struct ThresholdPick {
    double threshold = 0.0;
    double youden_j = 0.0;  // sensitivity + specificity - 1 at the threshold
};

// Threshold maximizing Youden's J over the observed scores; ties resolve to
// the lowest threshold. A pick with j <= 0 signals inverted or uninformative
// scores and deserves a warning at the reporting layer.
inline ThresholdPick youden_threshold(const ScoreLabelPairs& data) {
    data.validate();
    const std::size_t n = data.size();
    const std::size_t n_pos = data.positives();
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("youden threshold undefined: single class");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });

    // Sweep candidates from the lowest score upward. With threshold at
    // sorted value s_k, everything below s_k is predicted negative.
    ThresholdPick best;
    bool first = true;
    std::size_t pos_below = 0, neg_below = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && data.scores[order[j]] == data.scores[order[i]]) ++j;
        const double threshold = data.scores[order[i]];
        const double sens = static_cast<double>(n_pos - pos_below) / static_cast<double>(n_pos);
        const double spec = static_cast<double>(neg_below) / static_cast<double>(n_neg);
        const double jstat = sens + spec - 1.0;
        if (first || jstat > best.youden_j) {
            best = {threshold, jstat};
            first = false;
        }
        for (std::size_t k = i; k < j; ++k) {
            if (data.labels[order[k]]) ++pos_below;
            else ++neg_below;
        }
        i = j;
    }
    return best;
}

}  // namespace ecgdx::metrics
