#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace sfldp::stats {

struct MeanSE {
    double mean = 0.0;
    double stderr = 0.0;
    double variance = 0.0;
    std::size_t n = 0;
};

inline MeanSE mean_se(std::span<const double> x) {
    MeanSE r;
    r.n = x.size();
    if (r.n == 0) return r;
    double s = 0.0;
    for (double v : x) s += v;
    r.mean = s / r.n;
    if (r.n > 1) {
        double ss = 0.0;
        for (double v : x) ss += (v - r.mean) * (v - r.mean);
        r.variance = ss / (r.n - 1);
        r.stderr = std::sqrt(r.variance / r.n);
    }
    return r;
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
};

/// Weighted least squares y = intercept + slope x with weights w_i = 1 / var_i.
inline LinearFit weighted_linear_fit(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    if (x.size() != y.size() || x.size() != w.size() || x.size() < 2)
        throw std::invalid_argument("weighted_linear_fit: need matching inputs with at least two points");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    const double det = sw * sxx - sx * sx;
    if (!(std::abs(det) > 0.0)) throw std::invalid_argument("weighted_linear_fit: degenerate abscissae");
    LinearFit f;
    f.slope = (sw * sxy - sx * sy) / det;
    f.intercept = (sxx * sy - sx * sxy) / det;
    f.slope_stderr = std::sqrt(sw / det);
    return f;
}

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    std::vector<double> w(x.size(), 1.0);
    LinearFit f = weighted_linear_fit(x, y, w);
    // rescale the slope error by the residual variance for unit weights
    if (x.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - f.intercept - f.slope * x[i];
            rss += r * r;
        }
        f.slope_stderr *= std::sqrt(rss / (x.size() - 2));
    }
    return f;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    const double na = a.size(), nb = b.size();
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(i / na - j / nb));
    }
    return d;
}

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Wilson score interval for a binomial proportion at normal quantile z.
inline Interval wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
    if (n == 0) return {0.0, 1.0};
    const double p = double(hits) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct Shape {
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double skewness_se = 0.0;
    double kurtosis_se = 0.0;
};

/// Sample skewness and excess kurtosis with their large-sample Gaussian standard errors.
inline Shape shape(std::span<const double> x) {
    const MeanSE m = mean_se(x);
    Shape s;
    const double n = x.size();
    if (n < 4 || m.variance <= 0.0) return s;
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x) {
        const double d = v - m.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.skewness = m3 / std::pow(m2, 1.5);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    s.skewness_se = std::sqrt(6.0 / n);
    s.kurtosis_se = std::sqrt(24.0 / n);
    return s;
}

}  // namespace sfldp::stats
