#pragma once

// Small statistical primitives shared by the survival and comorbidity
// analyses: regularized incomplete gamma, the chi-square(1) survival
// function, and mid-ranks with tie averaging.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ecgdx::stats {

// Regularized upper incomplete gamma Q(a, x): series for x < a+1, Lentz
// continued fraction otherwise.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q domain");
    if (x == 0.0) return 1.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // P(a,x) by series, Q = 1 - P
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        const double p = sum * std::exp(-x + a * std::log(x) - lg);
        return 1.0 - p;
    }
    // modified Lentz for the continued fraction of Q
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - lg) * h;
}

// P(X > x) for X ~ chi-square with 1 degree of freedom. Equivalent to
// erfc(sqrt(x/2)), which the tests use as an independent identity.
inline double chi2_sf_1df(double x) {
    if (x < 0.0) throw std::invalid_argument("chi2_sf_1df: negative statistic");
    if (x == 0.0) return 1.0;
    return gamma_q(0.5, x / 2.0);
}

// Mid-ranks (1-based, ties averaged).
inline std::vector<double> mid_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && x[order[j]] == x[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mid;
        i = j;
    }
    return ranks;
}

inline double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

// Pearson correlation; throws when either side has zero variance.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson: need equal-length inputs");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw std::invalid_argument("constant input");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace ecgdx::stats
