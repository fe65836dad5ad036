#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace sfldp {

/**
 * @brief Dirichlet sine eigenbasis of A = d^2/dx^2 on (0, L), truncated to N modes.
 *
 * Modes are numbered 1..N. Mode i has eigenvalue (i pi / L)^2 of -A and
 * normalized eigenfunction sqrt(2/L) sin(i pi x / L).
 */
struct BasisSpec {
    double length = std::numbers::pi;
    int n_modes = 32;

    void validate() const {
        if (!(length > 0.0) || !std::isfinite(length))
            throw std::invalid_argument("BasisSpec: domain length must be positive and finite");
        if (n_modes < 1) throw std::invalid_argument("BasisSpec: n_modes must be >= 1");
    }

    // Eigenvalue of -A for mode i (1-based).
    double eigenvalue(int i) const {
        const double k = i * std::numbers::pi / length;
        return k * k;
    }

    Eigen::VectorXd eigenvalues() const {
        Eigen::VectorXd ev(n_modes);
        for (int i = 0; i < n_modes; ++i) ev[i] = eigenvalue(i + 1);
        return ev;
    }

    double basis_function(int i, double x) const {
        return std::sqrt(2.0 / length) * std::sin(i * std::numbers::pi * x / length);
    }

    // Coefficient of e_i carried by the unnormalized function sin(i pi x / L).
    double sine_scale() const { return std::sqrt(length / 2.0); }

    friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

/// A function on (0, L) stored as its coefficients in the sine eigenbasis.
class SpectralField {
public:
    explicit SpectralField(BasisSpec basis)
        : basis_(basis), coeffs_(Eigen::VectorXd::Zero(basis.n_modes)) {
        basis_.validate();
    }

    SpectralField(BasisSpec basis, Eigen::VectorXd coeffs) : basis_(basis), coeffs_(std::move(coeffs)) {
        basis_.validate();
        if (coeffs_.size() != basis_.n_modes)
            throw std::invalid_argument("SpectralField: coefficient count does not match basis");
    }

    /// amplitude * e_i (1-based mode index).
    static SpectralField mode(BasisSpec basis, int i, double amplitude = 1.0) {
        SpectralField f(basis);
        if (i < 1 || i > basis.n_modes) throw std::out_of_range("SpectralField::mode: index out of range");
        f.coeffs_[i - 1] = amplitude;
        return f;
    }

    const BasisSpec& basis() const { return basis_; }
    const Eigen::VectorXd& coeffs() const { return coeffs_; }
    Eigen::VectorXd& coeffs() { return coeffs_; }
    int size() const { return basis_.n_modes; }

    double coeff(int i) const { return coeffs_[i - 1]; }

    /// L^2(0, L) norm; Parseval in the orthonormal basis.
    double norm() const { return coeffs_.norm(); }

    /// ||u||_alpha = ||(-A)^{alpha/2} u||_0.
    double norm_alpha(double alpha) const {
        double s = 0.0;
        for (int i = 0; i < size(); ++i) s += std::pow(basis_.eigenvalue(i + 1), alpha) * coeffs_[i] * coeffs_[i];
        return std::sqrt(s);
    }

    double inner(const SpectralField& other) const {
        check_same(other);
        return coeffs_.dot(other.coeffs_);
    }

    double evaluate(double x) const {
        double s = 0.0;
        for (int i = 0; i < size(); ++i) s += coeffs_[i] * basis_.basis_function(i + 1, x);
        return s;
    }

    SpectralField& operator+=(const SpectralField& o) {
        check_same(o);
        coeffs_ += o.coeffs_;
        return *this;
    }
    SpectralField& operator-=(const SpectralField& o) {
        check_same(o);
        coeffs_ -= o.coeffs_;
        return *this;
    }
    SpectralField& operator*=(double s) {
        coeffs_ *= s;
        return *this;
    }

    friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
    friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
    friend SpectralField operator*(double s, SpectralField a) { return a *= s; }
    friend SpectralField operator*(SpectralField a, double s) { return a *= s; }

private:
    void check_same(const SpectralField& o) const {
        if (!(basis_ == o.basis_)) throw std::invalid_argument("SpectralField: basis mismatch");
    }

    BasisSpec basis_;
    Eigen::VectorXd coeffs_;
};

/**
 * @brief Projection of a pointwise function onto the truncated basis.
 *
 * coeff_i = int_0^L f(x) e_i(x) dx by composite Simpson on 8N+1 uniform points.
 * Throws std::domain_error if any coefficient comes out non-finite.
 */
inline SpectralField project(const std::function<double(double)>& f, const BasisSpec& basis) {
    basis.validate();
    const int intervals = 8 * basis.n_modes;
    const double h = basis.length / intervals;
    Eigen::VectorXd values(intervals + 1);
    for (int j = 0; j <= intervals; ++j) values[j] = f(j * h);

    Eigen::VectorXd c(basis.n_modes);
    for (int i = 1; i <= basis.n_modes; ++i) {
        double s = 0.0;
        for (int j = 0; j <= intervals; ++j) {
            const double w = (j == 0 || j == intervals) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
            s += w * values[j] * basis.basis_function(i, j * h);
        }
        c[i - 1] = s * h / 3.0;
        if (!std::isfinite(c[i - 1])) throw std::domain_error("project: non-finite quadrature result");
    }
    return SpectralField(basis, std::move(c));
}

inline SpectralField apply_A(const SpectralField& u) {
    Eigen::VectorXd c = u.coeffs();
    for (int i = 0; i < u.size(); ++i) c[i] *= -u.basis().eigenvalue(i + 1);
    return SpectralField(u.basis(), std::move(c));
}

/// (I - A)^{-1} u.
inline SpectralField apply_resolvent(const SpectralField& u) {
    Eigen::VectorXd c = u.coeffs();
    for (int i = 0; i < u.size(); ++i) c[i] /= 1.0 + u.basis().eigenvalue(i + 1);
    return SpectralField(u.basis(), std::move(c));
}

/// e^{At} u, t >= 0.
inline SpectralField semigroup_apply(const SpectralField& u, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("semigroup_apply: t must be nonnegative");
    Eigen::VectorXd c = u.coeffs();
    for (int i = 0; i < u.size(); ++i) c[i] *= std::exp(-u.basis().eigenvalue(i + 1) * t);
    return SpectralField(u.basis(), std::move(c));
}

/**
 * @brief Pseudo-spectral transform pair on M = 4N interior collocation points.
 *
 * Points x_j = j L / (M + 1), j = 1..M. The discrete sine transform is exactly
 * orthogonal on these points, so `to_coeffs(to_values(c)) == c`, and products
 * formed in physical space are de-aliased by truncation back to N modes.
 */
class Collocation {
public:
    explicit Collocation(const BasisSpec& basis) : basis_(basis) {
        basis.validate();
        const int n = basis.n_modes;
        const int m = 4 * n;
        synth_.resize(m, n);
        for (int j = 1; j <= m; ++j) {
            const double x = j * basis.length / (m + 1);
            for (int i = 1; i <= n; ++i) synth_(j - 1, i - 1) = basis.basis_function(i, x);
        }
        analysis_ = (basis.length / (m + 1)) * synth_.transpose();
    }

    const BasisSpec& basis() const { return basis_; }
    int n_points() const { return static_cast<int>(synth_.rows()); }

    Eigen::VectorXd to_values(const Eigen::VectorXd& coeffs) const { return synth_ * coeffs; }
    Eigen::VectorXd to_coeffs(const Eigen::VectorXd& values) const { return analysis_ * values; }

    const Eigen::MatrixXd& synthesis() const { return synth_; }
    const Eigen::MatrixXd& analysis() const { return analysis_; }

private:
    BasisSpec basis_;
    Eigen::MatrixXd synth_;     // M x N, values = synth * coeffs
    Eigen::MatrixXd analysis_;  // N x M, coeffs = analysis * values
};

/// Shared, immutable collocation tables keyed by basis.
inline const Collocation& collocation_for(const BasisSpec& basis) {
    static std::mutex mutex;
    static std::map<std::pair<double, int>, std::unique_ptr<Collocation>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{basis.length, basis.n_modes}];
    if (!slot) slot = std::make_unique<Collocation>(basis);
    return *slot;
}

/// Applies fn pointwise in physical space and projects the result back.
template <class Fn>
Eigen::VectorXd pointwise(const Collocation& colloc, const Eigen::VectorXd& coeffs, Fn&& fn) {
    Eigen::VectorXd values = colloc.to_values(coeffs);
    for (Eigen::Index j = 0; j < values.size(); ++j) values[j] = fn(values[j]);
    return colloc.to_coeffs(values);
}

template <class Fn>
SpectralField pointwise(const SpectralField& u, Fn&& fn) {
    const Collocation& colloc = collocation_for(u.basis());
    return SpectralField(u.basis(), pointwise(colloc, u.coeffs(), std::forward<Fn>(fn)));
}

}  // namespace sfldp
