#pragma once

#include "sfldp/averaging.hpp"
#include "sfldp/deviation.hpp"
#include "sfldp/errors.hpp"
#include "sfldp/path.hpp"
#include "sfldp/slowfast.hpp"
#include "sfldp/spectral.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sfldp {

inline constexpr double infinite_action = std::numeric_limits<double>::infinity();

inline bool is_infinite_action(double v) { return std::isinf(v); }

/// Sublevel set K_T(r) = {phi : I(phi) <= r}.
struct LevelSet {
    double r = 0.0;
    bool contains(double action) const { return action <= r; }
};

namespace detail {

/// Second-order time derivative: centered inside, one-sided three-point at both ends.
inline Eigen::MatrixXd time_derivative(const Eigen::MatrixXd& X, double dt) {
    const Eigen::Index n = X.cols();
    if (n < 3) throw std::invalid_argument("time_derivative: need at least 3 nodes");
    Eigen::MatrixXd D(X.rows(), n);
    D.col(0) = (-3.0 * X.col(0) + 4.0 * X.col(1) - X.col(2)) / (2.0 * dt);
    for (Eigen::Index k = 1; k + 1 < n; ++k) D.col(k) = (X.col(k + 1) - X.col(k - 1)) / (2.0 * dt);
    D.col(n - 1) = (3.0 * X.col(n - 1) - 4.0 * X.col(n - 2) + X.col(n - 3)) / (2.0 * dt);
    return D;
}

/// Transpose of time_derivative applied to G (columns are nodes).
inline Eigen::MatrixXd time_derivative_transpose(const Eigen::MatrixXd& G, double dt) {
    const Eigen::Index n = G.cols();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(G.rows(), n);
    const double c = 1.0 / (2.0 * dt);
    out.col(0) += -3.0 * c * G.col(0);
    out.col(1) += 4.0 * c * G.col(0);
    out.col(2) += -c * G.col(0);
    for (Eigen::Index k = 1; k + 1 < n; ++k) {
        out.col(k + 1) += c * G.col(k);
        out.col(k - 1) -= c * G.col(k);
    }
    out.col(n - 1) += 3.0 * c * G.col(n - 1);
    out.col(n - 2) += -4.0 * c * G.col(n - 1);
    out.col(n - 3) += c * G.col(n - 1);
    return out;
}

inline Eigen::VectorXd trapezoid_weights(int n_nodes, double dt) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n_nodes, dt);
    w[0] = w[n_nodes - 1] = 0.5 * dt;
    return w;
}

inline double kernel_tolerance(const Eigen::MatrixXd& path) {
    return 1e-8 * std::max(path.colwise().norm().maxCoeff(), 1.0);
}

/**
 * A grid path whose action roughly doubles when the step is halved carries a
 * jump between nodes: the discrete action of a step discontinuity grows like
 * 1/dt while that of a smooth path converges.
 */
inline bool looks_discontinuous(double fine, double coarse) { return fine > 1.5 * coarse + 1e-12; }

inline Eigen::MatrixXd every_other_node(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd Y(X.rows(), (X.cols() + 1) / 2);
    for (Eigen::Index k = 0; k < Y.cols(); ++k) Y.col(k) = X.col(2 * k);
    return Y;
}

/// Pseudo-inverse of a symmetric PSD square root together with the kernel projector.
struct RangeInverse {
    Eigen::MatrixXd pinv;
    Eigen::MatrixXd kernel;  // columns span the null space
};

inline RangeInverse range_inverse(const Eigen::MatrixXd& sqrtB) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sqrtB + sqrtB.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues();
    const double cut = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const Eigen::Index n = ev.size();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> ker;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(ev[i]) > cut)
            inv[i] = 1.0 / ev[i];
        else
            ker.push_back(i);
    }
    RangeInverse r;
    r.pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    r.kernel.resize(n, static_cast<Eigen::Index>(ker.size()));
    for (std::size_t j = 0; j < ker.size(); ++j) r.kernel.col(j) = es.eigenvectors().col(ker[j]);
    return r;
}

}  // namespace detail

/**
 * Exponential-Euler solve of phi' = A phi + fbar(phi) + sqrtB h with h taken at
 * the left node of each step.
 */
inline PathH skeleton_solve(const ControlPath& h, const SpectralField& u0, const CovOperator& cov,
                            const DriftEvaluator& drift) {
    const BasisSpec& b = u0.basis();
    if (!(h.basis() == b) || !(cov.basis() == b)) throw std::invalid_argument("skeleton_solve: basis mismatch");
    const TimeGrid& grid = h.grid();
    const int n = b.n_modes;
    const double dt = grid.dt();
    Eigen::VectorXd decay(n), gain(n);
    for (int i = 0; i < n; ++i) {
        decay[i] = std::exp(-b.eigenvalue(i + 1) * dt);
        gain[i] = detail::decay_integral(b.eigenvalue(i + 1), dt);
    }
    PathH out(grid, b);
    Eigen::VectorXd phi = u0.coeffs();
    out.node(0) = phi;
    for (int k = 1; k <= grid.n_steps; ++k) {
        phi = decay.cwiseProduct(phi) + gain.cwiseProduct(drift(phi) + cov.sqrtB() * h.node(k - 1));
        if (!phi.allFinite()) throw BlowUpError("skeleton solution became non-finite", grid.time(k));
        out.node(k) = phi;
    }
    return out;
}

namespace detail {

// Explicit example action without discontinuity screening. Uses its own sine
// quadrature on 16N interior points rather than the shared collocation tables.
inline double action_explicit_raw(const Eigen::MatrixXd& X, const TimeGrid& grid, const SystemSpec& spec) {
    const BasisSpec& b = spec.basis;
    const int n = b.n_modes;
    const int m = 16 * n;
    const double h = b.length / (m + 1);
    Eigen::MatrixXd E(m, n);
    for (int j = 1; j <= m; ++j)
        for (int i = 1; i <= n; ++i) E(j - 1, i - 1) = std::sqrt(2.0 / b.length) * std::sin(i * std::numbers::pi * j / (m + 1));

    const double dt = X.cols() > 1 ? grid.T / (X.cols() - 1) : grid.dt();
    const Eigen::MatrixXd Xdot = time_derivative(X, dt);
    const Eigen::VectorXd w = trapezoid_weights(static_cast<int>(X.cols()), dt);
    const double tol = kernel_tolerance(X);
    double total = 0.0;
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        const Eigen::VectorXd vals = (E * X.col(k)).array().sin().matrix() * spec.lambda;
        const Eigen::VectorXd reaction = h * (E.transpose() * vals);
        for (int i = 0; i < n; ++i) {
            const double lam = b.eigenvalue(i + 1);
            const double r = Xdot(i, k) + lam * X(i, k) - reaction[i] + X(i, k) / (1.0 + lam);
            const double noise = std::abs(spec.sigma) * std::sqrt(spec.q.q[i]);
            if (noise == 0.0) {
                if (std::abs(r) > tol) return infinite_action;
                continue;
            }
            const double y = (1.0 + lam) * r / noise;
            total += 0.5 * w[k] * y * y;
        }
    }
    return total;
}

template <class RawAction>
double screened_action(const Eigen::MatrixXd& X, RawAction&& raw) {
    const double fine = raw(X);
    if (is_infinite_action(fine)) return fine;
    // screening needs an even number of steps and at least three coarse nodes
    if ((X.cols() - 1) % 2 == 0 && X.cols() >= 5) {
        const double coarse = raw(every_other_node(X));
        if (!is_infinite_action(coarse) && looks_discontinuous(fine, coarse)) return infinite_action;
    }
    return fine;
}

}  // namespace detail

/**
 * Closed-form example action
 * 1/2 int || (I - A) / (sigma sqrt(Q)) [phi' - A phi - lambda sin phi + (I - A)^{-1} phi] ||^2 dt.
 * Returns infinite_action when a noiseless mode carries residual or the grid path
 * has a jump.
 */
inline double action_explicit(const PathH& phi, const SystemSpec& spec) {
    if (!spec.is_example()) throw std::invalid_argument("action_explicit: example reaction only");
    if (!(phi.basis() == spec.basis)) throw std::invalid_argument("action_explicit: basis mismatch");
    spec.validate();
    return detail::screened_action(phi.data(), [&](const Eigen::MatrixXd& X) {
        return detail::action_explicit_raw(X, phi.grid(), spec);
    });
}

namespace detail {

/// Residual phi' - A phi - drift_k with drift_k = fbar(psi_k), node by node.
inline Eigen::MatrixXd skeleton_residual(const Eigen::MatrixXd& X, const Eigen::MatrixXd& drift_at_nodes,
                                         const Eigen::VectorXd& lam, double dt) {
    Eigen::MatrixXd R = time_derivative(X, dt);
    R += lam.asDiagonal() * X;
    R -= drift_at_nodes;
    return R;
}

inline double control_energy(const Eigen::MatrixXd& R, const RangeInverse& inv, const Eigen::VectorXd& w,
                             double tol) {
    if (inv.kernel.cols() > 0 && (inv.kernel.transpose() * R).cwiseAbs().maxCoeff() > tol) return infinite_action;
    const Eigen::MatrixXd H = inv.pinv * R;
    return 0.5 * (H.colwise().squaredNorm().transpose().cwiseProduct(w)).sum();
}

inline Eigen::MatrixXd drift_nodes(const Eigen::MatrixXd& X, const DriftEvaluator& drift) {
    Eigen::MatrixXd F(X.rows(), X.cols());
    for (Eigen::Index k = 0; k < X.cols(); ++k) F.col(k) = drift(X.col(k));
    return F;
}

}  // namespace detail

/**
 * I(phi) = inf { 1/2 int ||h||^2 : phi solves the skeleton equation }.
 * The control is recovered node by node as sqrtB^+ (phi' - A phi - fbar(phi));
 * a residual component in the kernel of sqrtB makes the set of controls empty.
 */
inline double action_infimum(const PathH& phi, const CovOperator& cov, const DriftEvaluator& drift) {
    if (!(phi.basis() == cov.basis())) throw std::invalid_argument("action_infimum: basis mismatch");
    const detail::RangeInverse inv = detail::range_inverse(cov.sqrtB());
    const Eigen::VectorXd lam = phi.basis().eigenvalues();
    return detail::screened_action(phi.data(), [&](const Eigen::MatrixXd& X) {
        const double dt = phi.grid().T / (X.cols() - 1);
        const Eigen::MatrixXd R = detail::skeleton_residual(X, detail::drift_nodes(X, drift), lam, dt);
        return detail::control_energy(R, inv, detail::trapezoid_weights(static_cast<int>(X.cols()), dt),
                                      detail::kernel_tolerance(X));
    });
}

/// The control h realizing action_infimum (zero on the kernel of sqrtB).
inline ControlPath recover_control(const PathH& phi, const CovOperator& cov, const DriftEvaluator& drift) {
    const detail::RangeInverse inv = detail::range_inverse(cov.sqrtB());
    const Eigen::MatrixXd R = detail::skeleton_residual(phi.data(), detail::drift_nodes(phi.data(), drift),
                                                        phi.basis().eigenvalues(), phi.grid().dt());
    return ControlPath(phi.grid(), phi.basis(), inv.pinv * R);
}

/**
 * Action with the drift frozen along psi: the residual is phi' - A phi - fbar(psi(t)).
 * B does not depend on the state here, so only the drift is frozen. action_frozen(phi, phi)
 * equals action_infimum(phi).
 */
inline double action_frozen(const PathH& phi, const PathH& psi, const CovOperator& cov, const DriftEvaluator& drift) {
    if (!phi.compatible(psi)) throw std::invalid_argument("action_frozen: phi and psi live on different grids");
    const detail::RangeInverse inv = detail::range_inverse(cov.sqrtB());
    const Eigen::VectorXd lam = phi.basis().eigenvalues();
    const Eigen::MatrixXd F = detail::drift_nodes(psi.data(), drift);
    const double dt = phi.grid().dt();
    const Eigen::MatrixXd R = detail::skeleton_residual(phi.data(), F, lam, dt);
    return detail::control_energy(R, inv, detail::trapezoid_weights(phi.n_nodes(), dt),
                                  detail::kernel_tolerance(phi.data()));
}

/**
 * @brief Discrete action over paths with fixed endpoints, with its exact gradient.
 *
 * J(X) = 1/2 sum_k w_k || M r_k ||^2, r = D X + Lambda X - fbar(X), M = sqrtB^{-1}.
 * The gradient with respect to interior nodes is D^T G + (Lambda - fbar'(x_k))^T g_k,
 * g_k = w_k M^T M r_k; endpoint columns of the gradient are zero.
 */
class ActionFunctional {
public:
    ActionFunctional(const TimeGrid& grid, const CovOperator& cov, const DriftEvaluator& drift)
        : grid_(grid), drift_(drift), lam_(cov.basis().eigenvalues()) {
        grid.validate();
        if (grid.n_steps < 2) throw std::invalid_argument("ActionFunctional: need at least 2 steps");
        if (!drift.differentiable()) throw std::invalid_argument("ActionFunctional: needs the analytic drift");
        const detail::RangeInverse inv = detail::range_inverse(cov.sqrtB());
        if (inv.kernel.cols() > 0)
            throw std::invalid_argument("ActionFunctional: sqrtB must be invertible on the retained modes");
        metric_ = inv.pinv.transpose() * inv.pinv;
        w_ = detail::trapezoid_weights(grid.n_nodes(), grid.dt());
    }

    const TimeGrid& grid() const { return grid_; }
    const Eigen::MatrixXd& metric() const { return metric_; }

    Eigen::MatrixXd residual(const Eigen::MatrixXd& X) const {
        return detail::skeleton_residual(X, detail::drift_nodes(X, drift_), lam_, grid_.dt());
    }

    double value(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd R = residual(X);
        double s = 0.0;
        for (Eigen::Index k = 0; k < R.cols(); ++k) s += 0.5 * w_[k] * R.col(k).dot(metric_ * R.col(k));
        return s;
    }

    Eigen::MatrixXd gradient(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd R = residual(X);
        Eigen::MatrixXd G = metric_ * R;
        for (Eigen::Index k = 0; k < G.cols(); ++k) G.col(k) *= w_[k];
        Eigen::MatrixXd grad = detail::time_derivative_transpose(G, grid_.dt());
        for (Eigen::Index k = 0; k < X.cols(); ++k)
            grad.col(k) += lam_.cwiseProduct(G.col(k)) - drift_.jacobian_transpose_apply(X.col(k), G.col(k));
        grad.col(0).setZero();
        grad.col(X.cols() - 1).setZero();
        return grad;
    }

    const Eigen::VectorXd& weights() const { return w_; }
    const Eigen::VectorXd& eigenvalues() const { return lam_; }
    const DriftEvaluator& drift() const { return drift_; }

private:
    TimeGrid grid_;
    DriftEvaluator drift_;
    Eigen::VectorXd lam_;
    Eigen::MatrixXd metric_;
    Eigen::VectorXd w_;
};

struct MinimizeOptions {
    int max_iters = 5000;
    double grad_tol = 1e-8;       // on the preconditioned gradient norm relative to max(1, action)
    double rel_tol = 1e-12;       // relative action decrease below which the run is considered stalled
    double armijo = 1e-4;
    double shrink = 0.5;
    int max_backtracks = 40;
};

struct InstantonResult {
    PathH path;
    ControlPath control;
    double action = 0.0;
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
};

/**
 * @brief Minimum-action path between fixed endpoints on the given grid.
 *
 * Gradient descent with Armijo backtracking on the interior nodes, started
 * from linear interpolation. The descent direction is the gradient scaled by a
 * fixed per-mode preconditioner built from the linear part of the residual
 * (time derivative plus lambda_i + 1/(1 + lambda_i) - lambda); without it the
 * stiff high modes make plain descent stall. Returns the best iterate.
 */
inline InstantonResult minimize_action(const SpectralField& u_start, const SpectralField& u_end, double T,
                                       int n_steps, const CovOperator& cov, const DriftEvaluator& drift,
                                       const MinimizeOptions& opt = {}, const PathH* initial = nullptr) {
    const BasisSpec& b = u_start.basis();
    const TimeGrid grid{T, n_steps};
    ActionFunctional J(grid, cov, drift);
    const int n = b.n_modes, nodes = grid.n_nodes(), interior = nodes - 2;
    const double dt = grid.dt();

    Eigen::MatrixXd X(n, nodes);
    if (initial) {
        if (!(initial->grid() == grid) || !(initial->basis() == b))
            throw std::invalid_argument("minimize_action: initial path does not match grid");
        X = initial->data();
        X.col(0) = u_start.coeffs();
        X.col(nodes - 1) = u_end.coeffs();
    } else {
        for (int k = 0; k < nodes; ++k) {
            const double s = double(k) / (nodes - 1);
            X.col(k) = (1 - s) * u_start.coeffs() + s * u_end.coeffs();
        }
    }

    // per-mode preconditioner: m_i * L^T W L restricted to interior nodes
    Eigen::MatrixXd Dm = Eigen::MatrixXd::Zero(nodes, nodes);
    {
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nodes, nodes);
        Dm = detail::time_derivative(I, dt);  // row k of D X^T ... applied to a scalar series
    }
    std::vector<Eigen::LLT<Eigen::MatrixXd>> precond;
    precond.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double kappa = J.eigenvalues()[i] + drift.resolvent_diag()[i] - drift.spec().lambda;
        // scalar series x (length nodes): residual = x Dm + kappa x, i.e. L = Dm^T + kappa I acting on columns
        Eigen::MatrixXd L = Dm.transpose() + kappa * Eigen::MatrixXd::Identity(nodes, nodes);
        const Eigen::MatrixXd Li = L.middleCols(1, interior);
        Eigen::MatrixXd H = J.metric()(i, i) * Li.transpose() * J.weights().asDiagonal() * Li;
        H.diagonal().array() += 1e-12 * H.diagonal().maxCoeff();
        precond.emplace_back(H);
    }
    auto precondition = [&](const Eigen::MatrixXd& grad) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, nodes);
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd gi = grad.row(i).segment(1, interior).transpose();
            d.row(i).segment(1, interior) = precond[i].solve(gi).transpose();
        }
        return d;
    };

    double f = J.value(X);
    InstantonResult res{PathH(grid, b, X), ControlPath(grid, b), f, 0, false, 0.0};
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        const Eigen::MatrixXd g = J.gradient(X);
        const Eigen::MatrixXd d = precondition(g);
        const double gd = (g.array() * d.array()).sum();
        res.grad_norm = std::sqrt(std::max(gd, 0.0));
        if (res.grad_norm <= opt.grad_tol * std::max(1.0, std::sqrt(std::abs(f)))) {
            res.converged = true;
            break;
        }
        double step = 1.0, f_new = f;
        Eigen::MatrixXd X_new;
        bool accepted = false;
        for (int bt = 0; bt < opt.max_backtracks; ++bt) {
            X_new = X - step * d;
            f_new = J.value(X_new);
            if (std::isfinite(f_new) && f_new <= f - opt.armijo * step * gd) {
                accepted = true;
                break;
            }
            step *= opt.shrink;
        }
        if (!accepted) break;
        const double decrease = f - f_new;
        X = std::move(X_new);
        f = f_new;
        if (decrease <= opt.rel_tol * std::max(std::abs(f), 1e-300)) {
            res.converged = true;
            ++it;
            break;
        }
    }
    res.iterations = it;
    res.path = PathH(grid, b, X);
    res.action = f;
    res.control = recover_control(res.path, cov, drift);
    return res;
}

}  // namespace sfldp
