#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace testutil {

inline double chi2_quantile(double dof, double p) {
    return boost::math::quantile(boost::math::chi_squared(dof), p);
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = nd(gen);
    return v;
}

// Composite trapezoid on `points` uniform intervals of [a, b].
template <class F>
double trapezoid(F&& f, double a, double b, int points) {
    const double h = (b - a) / points;
    double s = 0.5 * (f(a) + f(b));
    for (int j = 1; j < points; ++j) s += f(a + j * h);
    return s * h;
}

}  // namespace testutil
