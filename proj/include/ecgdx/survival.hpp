#pragma once

// Risk-tertile prognostic analysis: product-limit survival curves, the
// two-sample log-rank test, binary-exposure Cox proportional hazards with
// Breslow tie handling, and the per-disease report combining them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/stats.hpp"
#include "ecgdx/util.hpp"

namespace ecgdx::surv {

// ---------------- domain types ----------------

enum class RiskGroup { kLow = 0, kMedium = 1, kHigh = 2 };

inline const char* risk_group_name(RiskGroup g) {
    switch (g) {
        case RiskGroup::kLow: return "low";
        case RiskGroup::kMedium: return "medium";
        default: return "high";
    }
}

struct SurvivalRecord {
    std::string subject_id;
    double time = 0.0;  // follow-up, years
    bool event = false; // true = incident disease, false = censored

    void validate() const {
        if (!(time >= 0.0) || !std::isfinite(time))
            throw std::invalid_argument("follow-up time must be finite and >= 0");
    }
};

struct SurvivalCurve {
    std::vector<double> times;          // distinct event times, ascending
    std::vector<double> survival;       // S just after each event time
    std::vector<std::size_t> at_risk;   // n_i at each event time
    std::vector<std::size_t> events;    // d_i at each event time

    // Step-function evaluation; S(0) = 1 and the last value carries forward.
    double survival_at(double t) const {
        double s = 1.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (times[i] > t) break;
            s = survival[i];
        }
        return s;
    }
};

struct LogRankResult {
    double chi_square = 0.0;
    double p_value = 1.0;
    bool zero_variance = false;
};

struct CoxFit {
    double beta = 0.0;
    double hr = 1.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int iterations = 0;
    bool converged = false;
};

// ---------------- tertiles ----------------

// Cut at the empirical 1/3 and 2/3 quantiles; boundary ties fall into the
// lower group. Rank-based, so any strictly increasing transform of the
// scores yields the same assignment.
inline std::vector<RiskGroup> assign_tertiles(const std::vector<double>& scores) {
    const std::size_t n = scores.size();
    if (n < 3) throw std::invalid_argument("tertiles need at least 3 subjects");
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw std::invalid_argument("degenerate scores");
    const double q1 = sorted[(n + 2) / 3 - 1];      // ceil(n/3) - 1
    const double q2 = sorted[(2 * n + 2) / 3 - 1];  // ceil(2n/3) - 1
    std::vector<RiskGroup> groups(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (scores[i] <= q1) groups[i] = RiskGroup::kLow;
        else if (scores[i] <= q2) groups[i] = RiskGroup::kMedium;
        else groups[i] = RiskGroup::kHigh;
    }
    return groups;
}

// ---------------- Kaplan-Meier ----------------

inline SurvivalCurve kaplan_meier(const std::vector<SurvivalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("kaplan_meier: empty input");
    for (const auto& r : records) r.validate();

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].time < records[b].time;
    });

    SurvivalCurve curve;
    double s = 1.0;
    std::size_t at_risk = records.size();
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = records[order[i]].time;
        std::size_t d = 0, c = 0;
        std::size_t j = i;
        while (j < order.size() && records[order[j]].time == t) {
            records[order[j]].event ? ++d : ++c;
            ++j;
        }
        if (d > 0) {
            s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
            curve.times.push_back(t);
            curve.survival.push_back(s);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(d);
        }
        at_risk -= d + c;
        i = j;
    }
    return curve;
}

// ---------------- log-rank ----------------

// Two-sample test: sum (O - E) and hypergeometric variance over distinct
// event times, chi-square with 1 df.
inline LogRankResult log_rank(const std::vector<SurvivalRecord>& group_a,
                              const std::vector<SurvivalRecord>& group_b) {
    if (group_a.empty() || group_b.empty())
        throw std::invalid_argument("log_rank: both groups must be non-empty");
    std::size_t total_events = 0;
    for (const auto& r : group_a) total_events += r.event;
    for (const auto& r : group_b) total_events += r.event;
    if (total_events == 0) throw std::invalid_argument("log_rank: no events");

    std::vector<double> event_times;
    for (const auto& r : group_a)
        if (r.event) event_times.push_back(r.time);
    for (const auto& r : group_b)
        if (r.event) event_times.push_back(r.time);
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    double observed_minus_expected = 0.0;
    double variance = 0.0;
    for (double t : event_times) {
        std::size_t n1 = 0, n2 = 0, d1 = 0, d2 = 0;
        for (const auto& r : group_a) {
            if (r.time >= t) ++n1;
            if (r.event && r.time == t) ++d1;
        }
        for (const auto& r : group_b) {
            if (r.time >= t) ++n2;
            if (r.event && r.time == t) ++d2;
        }
        const std::size_t n = n1 + n2;
        const std::size_t d = d1 + d2;
        if (n < 2 || d == 0) continue;
        const double fn = static_cast<double>(n);
        const double e1 = static_cast<double>(d) * static_cast<double>(n1) / fn;
        observed_minus_expected += static_cast<double>(d1) - e1;
        variance += static_cast<double>(d) * (static_cast<double>(n1) / fn) *
                    (static_cast<double>(n2) / fn) *
                    (static_cast<double>(n - d) / (fn - 1.0));
    }

    LogRankResult result;
    if (variance <= 0.0) {
        result.zero_variance = true;
        result.chi_square = 0.0;
        result.p_value = 1.0;
        return result;
    }
    result.chi_square = observed_minus_expected * observed_minus_expected / variance;
    result.p_value = std::max(stats::chi2_sf_1df(result.chi_square), 1e-300);
    return result;
}

// ---------------- Cox (binary exposure) ----------------

namespace detail {

struct RiskTable {
    // Per distinct event time: events and at-risk counts split by exposure.
    std::vector<std::size_t> d_total, d_exposed, n_exposed, n_unexposed;
};

inline RiskTable build_risk_table(const std::vector<SurvivalRecord>& records,
                                  const std::vector<int>& exposure) {
    std::vector<double> event_times;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].event) event_times.push_back(records[i].time);
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    RiskTable table;
    for (double t : event_times) {
        std::size_t d = 0, d1 = 0, n1 = 0, n0 = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].time >= t) exposure[i] ? ++n1 : ++n0;
            if (records[i].event && records[i].time == t) {
                ++d;
                if (exposure[i]) ++d1;
            }
        }
        table.d_total.push_back(d);
        table.d_exposed.push_back(d1);
        table.n_exposed.push_back(n1);
        table.n_unexposed.push_back(n0);
    }
    return table;
}

}  // namespace detail

// Breslow partial log-likelihood for a binary covariate.
inline double cox_breslow_loglik(const std::vector<SurvivalRecord>& records,
                                 const std::vector<int>& exposure, double beta) {
    auto table = detail::build_risk_table(records, exposure);
    double ll = 0.0;
    const double eb = std::exp(beta);
    for (std::size_t k = 0; k < table.d_total.size(); ++k) {
        const double denom = static_cast<double>(table.n_unexposed[k]) +
                             static_cast<double>(table.n_exposed[k]) * eb;
        ll += beta * static_cast<double>(table.d_exposed[k]) -
              static_cast<double>(table.d_total[k]) * std::log(denom);
    }
    return ll;
}

// Newton-Raphson fit; converged when |delta beta| < 1e-8 (100 iteration
// cap). SE from the inverse observed information; CI = exp(beta +- 1.96 SE).
inline CoxFit cox_binary(const std::vector<SurvivalRecord>& records,
                         const std::vector<int>& exposure) {
    if (records.size() != exposure.size())
        throw std::invalid_argument("cox: exposure length mismatch");
    for (const auto& r : records) r.validate();
    bool any0 = false, any1 = false;
    std::size_t events = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (exposure[i] ? any1 : any0) = true;
        events += records[i].event;
    }
    if (!any0 || !any1) throw std::invalid_argument("cox: both exposure levels required");
    if (events == 0) throw std::invalid_argument("cox: no events");

    const auto table = detail::build_risk_table(records, exposure);
    CoxFit fit;
    double beta = 0.0;
    for (int iter = 1; iter <= 100; ++iter) {
        double score = 0.0, info = 0.0;
        const double eb = std::exp(beta);
        for (std::size_t k = 0; k < table.d_total.size(); ++k) {
            const double n0 = static_cast<double>(table.n_unexposed[k]);
            const double n1 = static_cast<double>(table.n_exposed[k]);
            const double d = static_cast<double>(table.d_total[k]);
            const double denom = n0 + n1 * eb;
            const double frac = n1 * eb / denom;
            score += static_cast<double>(table.d_exposed[k]) - d * frac;
            info += d * frac * (1.0 - frac);
        }
        if (info <= 0.0) throw std::runtime_error("non-identifiable: flat partial likelihood");
        const double delta = score / info;
        beta += delta;
        fit.iterations = iter;
        if (std::abs(beta) > 30.0)
            throw std::runtime_error("non-identifiable: monotone partial likelihood");
        if (std::abs(delta) < 1e-8) {
            fit.converged = true;
            fit.se = 1.0 / std::sqrt(info);
            break;
        }
    }
    fit.beta = beta;
    fit.hr = std::exp(beta);
    if (!fit.converged) {
        // keep the last information estimate for the SE
        double info = 0.0;
        const double eb = std::exp(beta);
        for (std::size_t k = 0; k < table.d_total.size(); ++k) {
            const double n0 = static_cast<double>(table.n_unexposed[k]);
            const double n1 = static_cast<double>(table.n_exposed[k]);
            const double frac = n1 * eb / (n0 + n1 * eb);
            info += static_cast<double>(table.d_total[k]) * frac * (1.0 - frac);
        }
        fit.se = info > 0.0 ? 1.0 / std::sqrt(info) : 0.0;
    }
    fit.ci_lo = std::exp(beta - 1.96 * fit.se);
    fit.ci_hi = std::exp(beta + 1.96 * fit.se);
    return fit;
}

// ---------------- per-disease report ----------------

struct TertileReport {
    std::size_t group_size[3] = {0, 0, 0};
    double survival_10y[3] = {1.0, 1.0, 1.0};
    SurvivalCurve curves[3];
    LogRankResult high_vs_low;
    CoxFit cox_high_vs_low;
};

// Renders "HR = 2.08 (95% CI 1.95-2.22)".
inline std::string format_hr(const CoxFit& fit) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "HR = %.2f (95%% CI %.2f-%.2f)", fit.hr, fit.ci_lo,
                  fit.ci_hi);
    return buf;
}

// Exact p, floored at 1e-300; "<0.001" for human-readable output.
inline std::string format_p(double p) {
    if (p < 0.001) return "<0.001";
    return fmt_sig(p, 3);
}

// Tertiles from the scores, a Kaplan-Meier curve per tertile, log-rank and
// Cox for high vs low. The 10-year survival reads the step function at ten
// years (administrative truncation for that statistic only).
inline TertileReport survival_report(const std::vector<double>& scores,
                                     const std::vector<SurvivalRecord>& outcomes) {
    if (scores.size() != outcomes.size())
        throw std::invalid_argument("survival_report: scores/outcomes length mismatch");
    const auto groups = assign_tertiles(scores);

    TertileReport report;
    std::vector<SurvivalRecord> split[3];
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto g = static_cast<std::size_t>(groups[i]);
        split[g].push_back(outcomes[i]);
        ++report.group_size[g];
    }
    for (std::size_t g = 0; g < 3; ++g) {
        if (split[g].empty()) continue;
        report.curves[g] = kaplan_meier(split[g]);
        report.survival_10y[g] = report.curves[g].survival_at(10.0);
    }

    const auto& high = split[static_cast<std::size_t>(RiskGroup::kHigh)];
    const auto& low = split[static_cast<std::size_t>(RiskGroup::kLow)];
    report.high_vs_low = log_rank(high, low);

    std::vector<SurvivalRecord> pooled = low;
    std::vector<int> exposure(low.size(), 0);
    pooled.insert(pooled.end(), high.begin(), high.end());
    exposure.insert(exposure.end(), high.size(), 1);
    report.cox_high_vs_low = cox_binary(pooled, exposure);
    return report;
}

}  // namespace ecgdx::surv
