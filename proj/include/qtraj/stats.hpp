// stats.hpp — small numerical-statistics utilities shared by the feedback
// analysis and the test suites: fixed-frequency sinusoid fitting, exact
// binomial tails, and a Kolmogorov-Smirnov statistic.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "qtraj/errors.hpp"

namespace qtraj {

struct SinusoidFit {
    double a_sin = 0.0;     // coefficient of sin(omega t)
    double b_cos = 0.0;     // coefficient of cos(omega t)
    double amplitude = 0.0; // sqrt(a² + b²)
    double phase = 0.0;     // y ≈ amplitude · cos(omega t - phase)
    double residual_rms = 0.0;
    std::size_t n = 0;
};

// Least-squares fit of y(t) ≈ a·sin(omega t) + b·cos(omega t) over
// indices [begin, end). Amplitude and phase are free, frequency is fixed.
inline SinusoidFit fit_sinusoid(const std::vector<double>& t, const std::vector<double>& y,
                                double omega, std::size_t begin, std::size_t end) {
    if (t.size() != y.size()) throw error("fit_sinusoid: t and y must have equal length");
    if (end > t.size()) end = t.size();
    if (begin + 8 > end) throw error("fit_sinusoid: window too short");
    double ss = 0.0, sc = 0.0, cc = 0.0, sy = 0.0, cy = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const double s = std::sin(omega * t[i]);
        const double c = std::cos(omega * t[i]);
        ss += s * s;
        sc += s * c;
        cc += c * c;
        sy += s * y[i];
        cy += c * y[i];
    }
    const double det = ss * cc - sc * sc;
    if (std::abs(det) < 1e-12 * (ss + cc) * (ss + cc))
        throw statistics_error("fit_sinusoid: design matrix is singular (window too short "
                               "relative to the period?)");
    SinusoidFit f;
    f.n = end - begin;
    f.a_sin = (cc * sy - sc * cy) / det;
    f.b_cos = (ss * cy - sc * sy) / det;
    f.amplitude = std::hypot(f.a_sin, f.b_cos);
    f.phase = std::atan2(f.a_sin, f.b_cos);
    double res2 = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const double model = f.a_sin * std::sin(omega * t[i]) + f.b_cos * std::cos(omega * t[i]);
        res2 += (y[i] - model) * (y[i] - model);
    }
    f.residual_rms = std::sqrt(res2 / static_cast<double>(f.n));
    return f;
}

inline double log_binomial_coefficient(std::size_t n, std::size_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

// P(X >= k) for X ~ Binomial(n, p), exact summation in log space.
inline double binomial_sf(std::size_t k, std::size_t n, double p) {
    if (k == 0) return 1.0;
    if (k > n) return 0.0;
    const double lp = std::log(p), lq = std::log1p(-p);
    double sum = 0.0;
    for (std::size_t j = k; j <= n; ++j) {
        const double lterm = log_binomial_coefficient(n, j) + static_cast<double>(j) * lp +
                             static_cast<double>(n - j) * lq;
        sum += std::exp(lterm);
    }
    return std::min(1.0, sum);
}

// Kolmogorov-Smirnov distance between a sample and a reference CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw error("ks_statistic: empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double F = cdf(samples[i]);
        d = std::max(d, std::abs(F - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - F));
    }
    return d;
}

// Asymptotic KS critical value at significance alpha (two-sided):
// c(alpha)/sqrt(n) with c = sqrt(-ln(alpha/2)/2).
inline double ks_critical(double alpha, std::size_t n) {
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

// Standard normal CDF.
inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

}  // namespace qtraj
