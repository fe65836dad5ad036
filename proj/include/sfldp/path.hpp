#pragma once

#include "sfldp/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sfldp {

/// Uniform grid t_k = k T / n_steps, k = 0..n_steps.
struct TimeGrid {
    double T = 1.0;
    int n_steps = 100;

    void validate() const {
        if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("TimeGrid: T must be positive");
        if (n_steps < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double dt() const { return T / n_steps; }
    double time(int k) const { return k * dt(); }
    int n_nodes() const { return n_steps + 1; }

    /// Grid with the given horizon whose step does not exceed max_dt.
    static TimeGrid with_max_step(double T, double max_dt) {
        return TimeGrid{T, std::max(1, static_cast<int>(std::ceil(T / max_dt - 1e-9)))};
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/**
 * @brief Time-discretized trajectory in H: one SpectralField per grid node.
 *
 * Stored as an N x (n_steps + 1) matrix, column k holding the coefficients at t_k.
 */
class PathH {
public:
    PathH(TimeGrid grid, BasisSpec basis)
        : grid_(grid), basis_(basis), data_(Eigen::MatrixXd::Zero(basis.n_modes, grid.n_nodes())) {
        grid_.validate();
        basis_.validate();
    }

    PathH(TimeGrid grid, BasisSpec basis, Eigen::MatrixXd data) : grid_(grid), basis_(basis), data_(std::move(data)) {
        grid_.validate();
        basis_.validate();
        if (data_.rows() != basis_.n_modes || data_.cols() != grid_.n_nodes())
            throw std::invalid_argument("PathH: data shape does not match grid and basis");
    }

    const TimeGrid& grid() const { return grid_; }
    const BasisSpec& basis() const { return basis_; }
    int n_nodes() const { return grid_.n_nodes(); }

    const Eigen::MatrixXd& data() const { return data_; }
    Eigen::MatrixXd& data() { return data_; }

    auto node(int k) const { return data_.col(k); }
    auto node(int k) { return data_.col(k); }

    SpectralField at(int k) const { return SpectralField(basis_, data_.col(k)); }
    void set(int k, const SpectralField& f) { data_.col(k) = f.coeffs(); }

    double sup_norm() const { return data_.colwise().norm().maxCoeff(); }

    bool compatible(const PathH& o) const { return grid_ == o.grid_ && basis_ == o.basis_; }

private:
    TimeGrid grid_;
    BasisSpec basis_;
    Eigen::MatrixXd data_;
};

/// rho_{0T}(u, v) = max over nodes of ||u(t) - v(t)||_0.
inline double rho(const PathH& u, const PathH& v) {
    if (!u.compatible(v)) throw std::invalid_argument("rho: paths live on different grids or bases");
    return (u.data() - v.data()).colwise().norm().maxCoeff();
}

/// Control h in L^2(0, T; H), sampled at grid nodes.
class ControlPath {
public:
    ControlPath(TimeGrid grid, BasisSpec basis) : path_(grid, basis) {}
    ControlPath(TimeGrid grid, BasisSpec basis, Eigen::MatrixXd data) : path_(grid, basis, std::move(data)) {}

    const TimeGrid& grid() const { return path_.grid(); }
    const BasisSpec& basis() const { return path_.basis(); }
    const Eigen::MatrixXd& data() const { return path_.data(); }
    Eigen::MatrixXd& data() { return path_.data(); }
    auto node(int k) const { return path_.node(k); }

    /// 1/2 int_0^T ||h||_0^2 dt by the trapezoid rule.
    double energy() const {
        const Eigen::VectorXd sq = path_.data().colwise().squaredNorm().transpose();
        const Eigen::Index n = sq.size();
        double s = 0.5 * (sq[0] + sq[n - 1]);
        for (Eigen::Index k = 1; k + 1 < n; ++k) s += sq[k];
        return 0.5 * s * path_.grid().dt();
    }

private:
    PathH path_;
};

}  // namespace sfldp
