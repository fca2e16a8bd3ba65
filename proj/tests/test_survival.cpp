#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ecgdx/survival.hpp"
#include "ecgdx/util.hpp"

using namespace ecgdx;
using namespace ecgdx::surv;

namespace {

SurvivalRecord rec(double time, bool event) { return {"", time, event}; }

// Independent Breslow partial likelihood: brute force over subjects.
double breslow_loglik_oracle(const std::vector<SurvivalRecord>& records,
                             const std::vector<int>& exposure, double beta) {
    double ll = 0.0;
    std::vector<double> times;
    for (const auto& r : records)
        if (r.event) times.push_back(r.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (double t : times) {
        double denom = 0.0;
        for (std::size_t j = 0; j < records.size(); ++j)
            if (records[j].time >= t) denom += std::exp(beta * exposure[j]);
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].event && records[i].time == t)
                ll += beta * exposure[i] - std::log(denom);
    }
    return ll;
}

double grid_search_beta(const std::vector<SurvivalRecord>& records,
                        const std::vector<int>& exposure) {
    double best_beta = -5.0, best_ll = -1e300;
    for (double b = -5.0; b <= 5.0 + 1e-12; b += 1e-4) {
        const double ll = breslow_loglik_oracle(records, exposure, b);
        if (ll > best_ll) {
            best_ll = ll;
            best_beta = b;
        }
    }
    return best_beta;
}

}  // namespace

TEST_CASE("chi-square survival function") {
    SECTION("erfc identity on reference points") {
        for (double x : {0.1, 1.0, 3.84, 10.0})
            REQUIRE(stats::chi2_sf_1df(x) ==
                    Catch::Approx(std::erfc(std::sqrt(x / 2.0))).margin(1e-10));
    }
    SECTION("p at the 3.84 critical value is 0.050") {
        REQUIRE(stats::chi2_sf_1df(3.84) == Catch::Approx(0.050).margin(1e-3));
    }
}

TEST_CASE("assign_tertiles") {
    SECTION("nine distinct scores split 3/3/3") {
        std::vector<double> scores = {4, 1, 7, 2, 9, 5, 3, 8, 6};
        auto g = assign_tertiles(scores);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] <= 3) REQUIRE(g[i] == RiskGroup::kLow);
            else if (scores[i] <= 6) REQUIRE(g[i] == RiskGroup::kMedium);
            else REQUIRE(g[i] == RiskGroup::kHigh);
        }
    }
    SECTION("boundary ties fall into the lower group") {
        std::vector<double> scores = {1, 2, 2, 2, 5, 6};
        auto g = assign_tertiles(scores);
        std::size_t low = 0;
        for (auto v : g) low += v == RiskGroup::kLow;
        REQUIRE(low == 4);  // the tied 2s all land low
    }
    SECTION("all-identical scores rejected") {
        REQUIRE_THROWS_WITH(assign_tertiles({1.0, 1.0, 1.0}), "degenerate scores");
    }
    SECTION("invariant under strictly increasing transforms") {
        Rng rng(5);
        std::vector<double> scores(100);
        for (auto& s : scores) s = rng.normal();
        auto g1 = assign_tertiles(scores);
        std::vector<double> warped = scores;
        for (auto& s : warped) s = std::atan(2.0 * s) * 3.0 + 10.0;
        auto g2 = assign_tertiles(warped);
        REQUIRE(g1 == g2);
    }
}

TEST_CASE("kaplan_meier") {
    SECTION("no events means flat survival") {
        auto curve = kaplan_meier({rec(1, false), rec(2, false), rec(3, false)});
        REQUIRE(curve.times.empty());
        REQUIRE(curve.survival_at(100.0) == 1.0);
    }
    SECTION("all events: product limit steps") {
        auto curve = kaplan_meier({rec(1, true), rec(2, true), rec(3, true)});
        REQUIRE(curve.times == std::vector<double>{1, 2, 3});
        REQUIRE(curve.survival[0] == Catch::Approx(2.0 / 3.0));
        REQUIRE(curve.survival[1] == Catch::Approx(1.0 / 3.0));
        REQUIRE(curve.survival[2] == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("censoring shrinks the risk set") {
        auto curve = kaplan_meier({rec(1, true), rec(2, false), rec(3, true)});
        REQUIRE(curve.times == std::vector<double>{1, 3});
        REQUIRE(curve.survival[0] == Catch::Approx(2.0 / 3.0));
        REQUIRE(curve.survival[1] == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(curve.survival_at(1.5) == Catch::Approx(2.0 / 3.0));
        REQUIRE(curve.at_risk == std::vector<std::size_t>{3, 1});
    }
    SECTION("monotone non-increasing, S(0) = 1, and matches the empirical "
            "survival function without censoring") {
        Rng rng(6);
        std::vector<SurvivalRecord> records;
        for (int i = 0; i < 200; ++i) records.push_back(rec(rng.exponential(0.5), true));
        auto curve = kaplan_meier(records);
        REQUIRE(curve.survival_at(0.0) <= 1.0);
        double prev = 1.0;
        for (double s : curve.survival) {
            REQUIRE(s <= prev + 1e-15);
            prev = s;
        }
        for (double t : {0.5, 1.0, 2.0}) {
            double surviving = 0.0;
            for (const auto& r : records) surviving += r.time > t ? 1.0 : 0.0;
            REQUIRE(curve.survival_at(t) == Catch::Approx(surviving / 200.0).margin(1e-12));
        }
    }
}

TEST_CASE("log_rank") {
    SECTION("identical groups give statistic 0 and p 1") {
        std::vector<SurvivalRecord> g = {rec(1, true), rec(2, false), rec(3, true)};
        auto r = log_rank(g, g);
        REQUIRE(r.chi_square == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(r.p_value == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("hand-computed O/E/V table") {
        // A: 1(event), 3(event); B: 2(event), 4(censored)
        // t=1: n1=2,n2=2,d=1(A): E=1/2,  V=1/4
        // t=2: n1=1,n2=2,d=1(B): E=1/3,  V=2/9
        // t=3: n1=1,n2=1,d=1(A): E=1/2,  V=1/4
        // sum(O-E) = 1/2 - 1/3 + 1/2 = 2/3 ; sum V = 13/18 ; chi2 = 8/13
        std::vector<SurvivalRecord> a = {rec(1, true), rec(3, true)};
        std::vector<SurvivalRecord> b = {rec(2, true), rec(4, false)};
        auto r = log_rank(a, b);
        REQUIRE(r.chi_square == Catch::Approx(8.0 / 13.0).margin(1e-12));
        REQUIRE(r.p_value ==
                Catch::Approx(std::erfc(std::sqrt(8.0 / 13.0 / 2.0))).margin(1e-10));
    }
    SECTION("symmetric in its two groups") {
        Rng rng(7);
        std::vector<SurvivalRecord> a, b;
        for (int i = 0; i < 40; ++i) a.push_back(rec(rng.exponential(1.0), rng.bernoulli(0.7)));
        for (int i = 0; i < 30; ++i) b.push_back(rec(rng.exponential(2.0), rng.bernoulli(0.7)));
        auto r1 = log_rank(a, b);
        auto r2 = log_rank(b, a);
        REQUIRE(r1.chi_square == Catch::Approx(r2.chi_square).margin(1e-10));
        REQUIRE(r1.chi_square >= 0.0);
    }
    SECTION("zero variance reports p = 1 with a warning flag") {
        // Every subject dies at the same time: no information.
        std::vector<SurvivalRecord> a = {rec(1, true)};
        std::vector<SurvivalRecord> b = {rec(1, true)};
        auto r = log_rank(a, b);
        REQUIRE(r.zero_variance);
        REQUIRE(r.p_value == 1.0);
    }
}

TEST_CASE("cox_binary") {
    SECTION("identical event-time distributions give HR near 1") {
        std::vector<SurvivalRecord> records;
        std::vector<int> exposure;
        for (int i = 1; i <= 20; ++i) {
            records.push_back(rec(i, true));
            exposure.push_back(0);
            records.push_back(rec(i, true));
            exposure.push_back(1);
        }
        auto fit = cox_binary(records, exposure);
        REQUIRE(fit.converged);
        REQUIRE(std::abs(fit.beta) < 1e-6);
        REQUIRE(fit.hr == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(fit.ci_lo <= fit.hr);
        REQUIRE(fit.hr <= fit.ci_hi);
    }
    SECTION("matches the grid-search oracle on tiny instances") {
        Rng rng(8);
        int tested = 0;
        while (tested < 12) {
            std::vector<SurvivalRecord> records;
            std::vector<int> exposure;
            const int n = 5 + static_cast<int>(rng.uniform_int(2));
            for (int i = 0; i < n; ++i) {
                records.push_back(rec(std::round(rng.uniform(1.0, 8.0)), rng.bernoulli(0.8)));
                exposure.push_back(rng.bernoulli(0.5) ? 1 : 0);
            }
            CoxFit fit;
            try {
                fit = cox_binary(records, exposure);
            } catch (const std::exception&) {
                continue;  // degenerate draw (separation or single level)
            }
            if (!fit.converged || std::abs(fit.beta) > 4.5) continue;
            const double grid = grid_search_beta(records, exposure);
            REQUIRE(fit.beta == Catch::Approx(grid).margin(1e-3));
            ++tested;
        }
    }
    SECTION("complete separation is rejected") {
        // All exposed subjects fail first, unexposed all censored later.
        std::vector<SurvivalRecord> records = {rec(1, true), rec(1, true), rec(5, false),
                                               rec(5, false)};
        std::vector<int> exposure = {1, 1, 0, 0};
        REQUIRE_THROWS_AS(cox_binary(records, exposure), std::runtime_error);
    }
    SECTION("recovers a planted hazard ratio of 2 at n = 5000") {
        Rng rng(9);
        std::vector<SurvivalRecord> records;
        std::vector<int> exposure;
        for (int i = 0; i < 5000; ++i) {
            const int x = rng.bernoulli(0.5) ? 1 : 0;
            const double rate = 0.05 * (x ? 2.0 : 1.0);
            double t = rng.exponential(rate);
            bool event = true;
            if (t > 10.0) {
                t = 10.0;
                event = false;
            }
            records.push_back(rec(t, event));
            exposure.push_back(x);
        }
        auto fit = cox_binary(records, exposure);
        REQUIRE(fit.converged);
        REQUIRE(fit.hr >= 1.7);
        REQUIRE(fit.hr <= 2.3);
    }
}

TEST_CASE("survival_report") {
    Rng rng(10);
    const int n = 900;
    std::vector<double> scores(n);
    std::vector<SurvivalRecord> outcomes(n);
    for (int i = 0; i < n; ++i) {
        const double risk = rng.normal();
        scores[i] = risk;
        const double rate = 0.04 * std::exp(0.8 * risk);
        double t = rng.exponential(rate);
        bool event = true;
        if (t > 12.0) {
            t = 12.0;
            event = false;
        }
        outcomes[i] = rec(t, event);
    }

    auto report = survival_report(scores, outcomes);
    SECTION("high tertile curve sits at or below the low tertile curve") {
        const auto& high = report.curves[2];
        const auto& low = report.curves[0];
        for (std::size_t i = 0; i < high.times.size(); ++i)
            REQUIRE(high.survival[i] <= low.survival_at(high.times[i]) + 1e-12);
        REQUIRE(report.survival_10y[2] < report.survival_10y[0]);
        REQUIRE(report.cox_high_vs_low.hr > 1.0);
        REQUIRE(report.high_vs_low.p_value < 0.001);
    }
    SECTION("report numbers are invariant under monotone score transforms") {
        std::vector<double> warped = scores;
        for (auto& s : warped) s = std::exp(s / 2.0);
        auto report2 = survival_report(warped, outcomes);
        REQUIRE(report2.cox_high_vs_low.hr == report.cox_high_vs_low.hr);
        REQUIRE(report2.high_vs_low.chi_square == report.high_vs_low.chi_square);
        REQUIRE(report2.survival_10y[1] == report.survival_10y[1]);
    }
    SECTION("formatting mirrors the reporting style") {
        CoxFit fit;
        fit.hr = 2.08;
        fit.ci_lo = 1.95;
        fit.ci_hi = 2.22;
        REQUIRE(format_hr(fit) == "HR = 2.08 (95% CI 1.95-2.22)");
        REQUIRE(format_p(0.0004) == "<0.001");
        REQUIRE(format_p(0.043) == "0.043");
    }
}

TEST_CASE("no-signal scores give roughly uniform log-rank p-values") {
    Rng rng(11);
    int below_half = 0;
    const int trials = 60;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = 240;
        std::vector<double> scores(n);
        std::vector<SurvivalRecord> outcomes(n);
        for (int i = 0; i < n; ++i) {
            scores[i] = rng.normal();
            double t = rng.exponential(0.08);
            bool event = true;
            if (t > 10.0) {
                t = 10.0;
                event = false;
            }
            outcomes[i] = rec(t, event);
        }
        auto report = survival_report(scores, outcomes);
        below_half += report.high_vs_low.p_value < 0.5 ? 1 : 0;
    }
    // Under the null p is uniform; a binomial bound at alpha = 0.01 allows
    // [30 - 15, 30 + 15] successes out of 60 (a crude Kolmogorov-style check).
    REQUIRE(below_half >= 15);
    REQUIRE(below_half <= 45);
}
