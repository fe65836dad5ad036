#pragma once

#include "sfldp/averaging.hpp"
#include "sfldp/errors.hpp"
#include "sfldp/parallel.hpp"
#include "sfldp/path.hpp"
#include "sfldp/slowfast.hpp"
#include "sfldp/stats.hpp"
#include "sfldp/stochastic.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfldp {

/**
 * @brief Covariance operator B of the deviation noise, stored with a symmetric square root.
 *
 * B = sqrtB sqrtB^T on the truncated basis. The analytic example form is the
 * diagonal sqrtB = (I - A)^{-1} sigma sqrt(Q).
 */
class CovOperator {
public:
    enum class Mode { analytic_example, empirical };

    static CovOperator analytic(const SystemSpec& spec) {
        if (!spec.is_example()) throw std::invalid_argument("CovOperator::analytic: only for the example reaction");
        const int n = spec.basis.n_modes;
        CovOperator c;
        c.mode_ = Mode::analytic_example;
        c.basis_ = spec.basis;
        c.sqrt_ = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            c.sqrt_(i, i) = spec.sigma * std::sqrt(spec.q.q[i]) / (1.0 + spec.basis.eigenvalue(i + 1));
        c.B_ = c.sqrt_ * c.sqrt_.transpose();
        c.diagonal_ = true;
        return c;
    }

    /// Symmetrizes B, clips negative eigenvalues at zero and takes the symmetric square root.
    static CovOperator from_matrix(const BasisSpec& basis, const Eigen::MatrixXd& B, Mode mode = Mode::empirical) {
        if (B.rows() != basis.n_modes || B.cols() != basis.n_modes)
            throw std::invalid_argument("CovOperator: matrix shape does not match basis");
        CovOperator c;
        c.mode_ = mode;
        c.basis_ = basis;
        const Eigen::MatrixXd sym = 0.5 * (B + B.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
        Eigen::VectorXd ev = es.eigenvalues();
        c.raw_min_eigenvalue_ = ev.minCoeff();
        if (ev.minCoeff() < 0.0) {
            c.clipped_ = true;
            c.warnings_.push_back("B estimate not PSD (min eigenvalue " + std::to_string(ev.minCoeff()) +
                                  "); clipped at 0");
            ev = ev.cwiseMax(0.0);
        }
        c.sqrt_ = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
        c.B_ = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        c.diagonal_ = c.B_.isDiagonal(0.0);
        return c;
    }

    Mode mode() const { return mode_; }
    const BasisSpec& basis() const { return basis_; }
    const Eigen::MatrixXd& sqrtB() const { return sqrt_; }
    const Eigen::MatrixXd& B() const { return B_; }
    bool is_diagonal() const { return diagonal_; }
    bool clipped() const { return clipped_; }
    double raw_min_eigenvalue() const { return raw_min_eigenvalue_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Per-entry standard errors (empirical estimates only; zero otherwise).
    const Eigen::MatrixXd& stderr() const { return stderr_; }
    double aggregate_stderr() const { return stderr_.size() ? stderr_.norm() : 0.0; }

    int lag_count() const { return lags_; }
    double lag_horizon() const { return lag_horizon_; }

    /// Smallest eigenvalue of B restricted to the modes marked active (H5 constant c0).
    double min_eigenvalue_active(const std::vector<bool>& active) const {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(active.size()); ++i)
            if (active[i]) idx.push_back(i);
        if (idx.empty()) return 0.0;
        Eigen::MatrixXd sub(idx.size(), idx.size());
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = 0; b < idx.size(); ++b) sub(a, b) = B_(idx[a], idx[b]);
        return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sub, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    }

    static std::vector<bool> active_modes(const QSpec& q) {
        std::vector<bool> a;
        for (double v : q.q) a.push_back(v > 0.0);
        return a;
    }

private:
    friend CovOperator B_empirical_impl(const SpectralField&, const SystemSpec&, double, int, RngStream&, double,
                                        int, double);

    Mode mode_ = Mode::analytic_example;
    BasisSpec basis_;
    Eigen::MatrixXd sqrt_;
    Eigen::MatrixXd B_;
    Eigen::MatrixXd stderr_;
    bool diagonal_ = false;
    bool clipped_ = false;
    double raw_min_eigenvalue_ = 0.0;
    int lags_ = 0;
    double lag_horizon_ = 0.0;
    std::vector<std::string> warnings_;
};

/// z^eps = (u^eps - u) / sqrt(eps), node by node.
inline PathH z_epsilon_path(const PathH& u_eps, const PathH& u_avg, double eps) {
    if (!u_eps.compatible(u_avg)) throw std::invalid_argument("z_epsilon_path: grid or basis mismatch");
    if (!(eps > 0.0)) throw std::invalid_argument("z_epsilon_path: eps must be positive");
    return PathH(u_eps.grid(), u_eps.basis(), (u_eps.data() - u_avg.data()) / std::sqrt(eps));
}

struct BEmpiricalOptions {
    double sample_interval = 0.02;  // fast time units at eps = 1
    int n_segments = 20;            // batches for standard errors
    double truncation = 1e-3;       // stop the lag sum once |trace C(lag)| < truncation * trace C(0)
};

inline CovOperator B_empirical_impl(const SpectralField& u, const SystemSpec& spec_in, double lag_horizon,
                                    int n_samples, RngStream& rng, double sample_interval, int n_segments,
                                    double truncation) {
    SystemSpec spec = spec_in;
    spec.epsilon = 1.0;
    spec.validate();
    const int n = spec.basis.n_modes;
    const Reaction reaction = spec.reaction();
    const double slowest = spec.basis.eigenvalue(1) + reaction.fast_damping;
    if (!(lag_horizon >= 5.0 / slowest))
        throw std::invalid_argument("B_empirical: lag horizon must cover several mixing times");
    const int max_lag = static_cast<int>(std::ceil(lag_horizon / sample_interval));
    const int seg_len = n_samples / n_segments;
    if (n_segments < 2 || seg_len < 10 * max_lag)
        throw std::invalid_argument("B_empirical: segments must be at least ten lag horizons long");

    // one long stationary run, burn-in of 15 mixing times
    const FastSamples fs = frozen_fast_stationary(u, spec, 15.0 / slowest, seg_len * n_segments, rng, sample_interval);
    const Collocation& colloc = collocation_for(spec.basis);
    Eigen::MatrixXd F(n, fs.samples.cols());
    for (Eigen::Index s = 0; s < fs.samples.cols(); ++s)
        F.col(s) = reaction.slow_drift(colloc, u.coeffs(), fs.samples.col(s));
    F.colwise() -= F.rowwise().mean();

    // lag cut from the pooled autocovariance trace
    const double c0 = F.cwiseAbs2().sum() / F.cols();
    int lags = max_lag;
    for (int l = 1; l <= max_lag; ++l) {
        const double cl =
            (F.leftCols(F.cols() - l).array() * F.rightCols(F.cols() - l).array()).sum() / (F.cols() - l);
        if (std::abs(cl) < truncation * c0) {
            lags = l;
            break;
        }
    }

    std::vector<Eigen::MatrixXd> seg(n_segments);
    for (int s = 0; s < n_segments; ++s) {
        const Eigen::MatrixXd X = F.middleCols(s * seg_len, seg_len);
        Eigen::MatrixXd B = X * X.transpose() / double(seg_len);
        for (int l = 1; l <= lags; ++l) {
            const Eigen::MatrixXd C =
                X.rightCols(seg_len - l) * X.leftCols(seg_len - l).transpose() / double(seg_len - l);
            // trapezoid in lag: the last retained lag gets half weight
            const double w = (l == lags) ? 0.5 : 1.0;
            B += w * (C + C.transpose());
        }
        seg[s] = B * sample_interval;
    }
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, n);
    for (const auto& b : seg) mean += b;
    mean /= n_segments;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(n, n);
    for (const auto& b : seg) var += (b - mean).cwiseAbs2();
    var /= double(n_segments - 1);

    CovOperator c = CovOperator::from_matrix(spec.basis, mean, CovOperator::Mode::empirical);
    c.stderr_ = (var / n_segments).cwiseSqrt();
    c.lags_ = lags;
    c.lag_horizon_ = lags * sample_interval;
    if (!fs.burn_in_ok) c.warnings_.push_back("fast sampler flagged insufficient burn-in");
    return c;
}

/**
 * @brief B(u) = 2 int_0^inf E[(f(u, eta_t) - fbar) (f(u, eta_0) - fbar)^T] dt from one stationary run.
 *
 * eta is the frozen fast process at eps = 1. Lag sums use the trapezoid rule on
 * the sample spacing and stop once the autocovariance trace drops below
 * `truncation` of its lag-0 value (or at lag_horizon). The run is split into
 * segments; the estimate is the segment mean and its standard errors come from
 * the segment spread.
 */
inline CovOperator B_empirical(const SpectralField& u, const SystemSpec& spec, double lag_horizon, int n_samples,
                               RngStream& rng, const BEmpiricalOptions& opt = {}) {
    return B_empirical_impl(u, spec, lag_horizon, n_samples, rng, opt.sample_interval, opt.n_segments, opt.truncation);
}

namespace detail {

/**
 * Exact covariance of int_0^dt e^{-K(dt-s)} S dW(s) for diagonal K:
 * G_ij = (S S^T)_ij (1 - e^{-(k_i + k_j) dt}) / (k_i + k_j). Returns a square root of G.
 */
inline Eigen::MatrixXd ou_noise_factor(const Eigen::MatrixXd& B, const Eigen::VectorXd& rates, double dt) {
    const Eigen::Index n = B.rows();
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) G(i, j) = B(i, j) * decay_integral(rates[i] + rates[j], dt);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/**
 * @brief Linear Gaussian limit z' = A z + fbar'(u_avg(t)) z + sqrtB dW on u_avg's grid.
 *
 * The diagonal part A - (I - A)^{-1} and the noise are integrated exactly over
 * each step; the pointwise part P(lambda cos(u_avg) .) is explicit at the left node.
 * Replica r draws from RngStream(seed, r), so batched and single-path runs agree.
 */
class DeviationLimit {
public:
    DeviationLimit(const PathH& u_avg, const CovOperator& cov, const DriftEvaluator& drift)
        : u_avg_(u_avg) {
        if (!(cov.basis() == u_avg.basis())) throw std::invalid_argument("DeviationLimit: basis mismatch");
        const BasisSpec& b = u_avg.basis();
        const int n = b.n_modes;
        const double dt = u_avg.grid().dt();
        rates_.resize(n);
        for (int i = 0; i < n; ++i) rates_[i] = b.eigenvalue(i + 1) + drift.resolvent_diag()[i];
        decay_ = (-rates_ * dt).array().exp().matrix();
        gain_.resize(n);
        for (int i = 0; i < n; ++i) gain_[i] = detail::decay_integral(rates_[i], dt);
        noise_ = detail::ou_noise_factor(cov.B(), rates_, dt);
        const Collocation& colloc = collocation_for(b);
        cosines_.resize(colloc.n_points(), u_avg.n_nodes());
        const double lam = drift.spec().lambda;
        for (int k = 0; k < u_avg.n_nodes(); ++k)
            cosines_.col(k) = (colloc.to_values(u_avg.node(k)).array().cos() * lam).matrix();
        colloc_ = &colloc;
    }

    /// Advances a block of replicas (one per column) from node k to k + 1.
    void step(Eigen::MatrixXd& Z, int k, const Eigen::MatrixXd& xi) const {
        Eigen::MatrixXd vals = colloc_->synthesis() * Z;
        vals.array().colwise() *= cosines_.col(k).array();
        const Eigen::MatrixXd explicit_part = colloc_->analysis() * vals;
        Z = decay_.asDiagonal() * Z + gain_.asDiagonal() * explicit_part + noise_ * xi;
    }

    PathH simulate(RngStream& rng, const Eigen::VectorXd* z0 = nullptr) const {
        const int n = u_avg_.basis().n_modes;
        PathH out(u_avg_.grid(), u_avg_.basis());
        Eigen::MatrixXd Z = z0 ? Eigen::MatrixXd(*z0) : Eigen::MatrixXd::Zero(n, 1);
        out.node(0) = Z.col(0);
        Eigen::MatrixXd xi(n, 1);
        for (int k = 0; k < u_avg_.grid().n_steps; ++k) {
            rng.fill_normal(xi.col(0));
            step(Z, k, xi);
            if (!Z.allFinite()) throw BlowUpError("deviation limit became non-finite", u_avg_.grid().time(k + 1));
            out.node(k + 1) = Z.col(0);
        }
        return out;
    }

    /// z(T) for n_replicas independent replicas started at zero, as columns.
    Eigen::MatrixXd terminal_samples(int n_replicas, std::uint64_t seed, int block = 256) const {
        const int n = u_avg_.basis().n_modes;
        Eigen::MatrixXd out(n, n_replicas);
        for (int start = 0; start < n_replicas; start += block) {
            const int m = std::min(block, n_replicas - start);
            std::vector<RngStream> streams;
            streams.reserve(m);
            for (int r = 0; r < m; ++r) streams.emplace_back(seed, std::uint64_t(start + r));
            Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, m), xi(n, m);
            for (int k = 0; k < u_avg_.grid().n_steps; ++k) {
                for (int r = 0; r < m; ++r) streams[r].fill_normal(xi.col(r));
                step(Z, k, xi);
            }
            if (!Z.allFinite()) throw BlowUpError("deviation limit became non-finite", u_avg_.grid().T);
            out.middleCols(start, m) = Z;
        }
        return out;
    }

private:
    PathH u_avg_;
    const Collocation* colloc_ = nullptr;
    Eigen::VectorXd rates_, decay_, gain_;
    Eigen::MatrixXd noise_;
    Eigen::MatrixXd cosines_;
};

inline PathH simulate_dev_limit(const PathH& u_avg, const CovOperator& cov, const DriftEvaluator& drift,
                                RngStream& rng) {
    return DeviationLimit(u_avg, cov, drift).simulate(rng);
}

/**
 * @brief du = [A u + fbar(u)] dt + sqrt(eps) sqrtB dW with B frozen.
 *
 * Exponential Euler for the drift; the stochastic convolution with e^{A t} is
 * sampled exactly per step.
 */
inline PathH simulate_avg_plus_dev(const SpectralField& u0, const DriftEvaluator& drift, const CovOperator& cov,
                                   const TimeGrid& grid, RngStream& rng) {
    grid.validate();
    const SystemSpec& spec = drift.spec();
    const int n = spec.basis.n_modes;
    const double dt = grid.dt();
    const Eigen::VectorXd lam = spec.basis.eigenvalues();
    Eigen::VectorXd decay(n), gain(n);
    for (int i = 0; i < n; ++i) {
        decay[i] = std::exp(-lam[i] * dt);
        gain[i] = detail::decay_integral(lam[i], dt);
    }
    const Eigen::MatrixXd noise = std::sqrt(spec.epsilon) * detail::ou_noise_factor(cov.B(), lam, dt);
    PathH out(grid, spec.basis);
    Eigen::VectorXd u = u0.coeffs(), xi(n);
    out.node(0) = u;
    for (int k = 1; k <= grid.n_steps; ++k) {
        rng.fill_normal(xi);
        u = decay.cwiseProduct(u) + gain.cwiseProduct(drift(u)) + noise * xi;
        if (!u.allFinite()) throw BlowUpError("averaged-plus-deviation path became non-finite", grid.time(k));
        out.node(k) = u;
    }
    return out;
}

/**
 * z^eps(T) = (u^eps(T) - u_avg(T)) / sqrt(eps) for independent replicas (columns).
 * Grid step eps/20; the averaged path uses 4 substeps per step. Replica r uses
 * RngStream(seed, r). Also returns the averaged path for building the limit.
 */
struct TerminalDeviation {
    Eigen::MatrixXd z;
    PathH u_avg;
};

inline TerminalDeviation terminal_deviation_samples(const SystemSpec& spec, const SpectralField& u0, double T,
                                                    int n_replicas, std::uint64_t seed, int threads = 1) {
    spec.validate();
    const TimeGrid grid = TimeGrid::with_max_step(T, spec.epsilon / 20.0);
    const DriftEvaluator drift(spec);
    PathH avg = solve_averaged(u0, drift, grid, 4);
    const SpectralField v0 = apply_resolvent(u0);
    const Eigen::VectorXd end = avg.node(grid.n_steps);
    Eigen::MatrixXd z(spec.basis.n_modes, n_replicas);
    parallel_for(n_replicas, threads, [&](int r) {
        RngStream rng(seed, std::uint64_t(r));
        Eigen::VectorXd last;
        simulate(u0, v0, spec, grid, rng, [&](int k, const Eigen::VectorXd& u, const Eigen::VectorXd&) {
            if (k == grid.n_steps) last = u;
        });
        z.col(r) = (last - end) / std::sqrt(spec.epsilon);
    });
    return {std::move(z), std::move(avg)};
}

struct PathwiseGapRow {
    double epsilon = 0.0;
    double mean_gap = 0.0;  // mean rho(u^eps, u_tilde^eps)
    double stderr = 0.0;
    double gap_over_sqrt_eps = 0.0;
};

/**
 * Same-noise comparison of the full slow component with the averaged-plus-deviation
 * model for the example. Each fast mode's exact OU increment and the Brownian
 * increment it integrates are sampled jointly; the model is driven by
 * -sqrtB dbeta, which is the sign the slow equation sees through -v.
 * Reported as a trend only.
 */
inline std::vector<PathwiseGapRow> pathwise_gap(const SystemSpec& base, const SpectralField& u0,
                                                const std::vector<double>& epsilons, double T, int n_replicas,
                                                std::uint64_t seed, int threads = 1) {
    if (!base.is_example()) throw std::invalid_argument("pathwise_gap: example reaction only");
    std::vector<PathwiseGapRow> rows;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        SystemSpec spec = base;
        spec.epsilon = epsilons[e];
        const int n = spec.basis.n_modes;
        const TimeGrid grid = TimeGrid::with_max_step(T, spec.epsilon / 20.0);
        const double dt = grid.dt();
        SlowFastIntegrator full(spec, dt);
        const DriftEvaluator drift(spec);
        const CovOperator cov = CovOperator::analytic(spec);
        Eigen::VectorXd ou_sd(n), rho(n), decay(n), gain(n);
        for (int i = 0; i < n; ++i) {
            const double lam = spec.basis.eigenvalue(i + 1);
            const double k = (lam + 1.0) / spec.epsilon;
            ou_sd[i] = std::sqrt(detail::decay_integral(2.0 * k, dt));
            rho[i] = detail::decay_integral(k, dt) / (ou_sd[i] * std::sqrt(dt));
            decay[i] = std::exp(-lam * dt);
            gain[i] = detail::decay_integral(lam, dt);
        }
        std::vector<double> gap(n_replicas);
        parallel_for(n_replicas, threads, [&](int r) {
            RngStream rng(seed, (std::uint64_t(e) << 32) | std::uint64_t(r));
            Eigen::VectorXd u = u0.coeffs(), v = apply_resolvent(u0).coeffs(), w = u0.coeffs();
            Eigen::VectorXd z1(n), z2(n), dbeta(n);
            double g = 0.0;
            for (int k = 1; k <= grid.n_steps; ++k) {
                rng.fill_normal(z1);
                rng.fill_normal(z2);
                for (int i = 0; i < n; ++i)
                    dbeta[i] = std::sqrt(dt) * (rho[i] * z1[i] + std::sqrt(std::max(0.0, 1 - rho[i] * rho[i])) * z2[i]);
                const Eigen::VectorXd fw = drift(w);
                full.step_with_noise(u, v, z1);
                w = decay.cwiseProduct(w - std::sqrt(spec.epsilon) * (cov.sqrtB() * dbeta)) + gain.cwiseProduct(fw);
                check_finite(u, w, grid.time(k));
                g = std::max(g, (u - w).norm());
            }
            gap[r] = g;
        });
        const stats::MeanSE m = stats::mean_se(gap);
        rows.push_back({spec.epsilon, m.mean, m.stderr, m.mean / std::sqrt(spec.epsilon)});
    }
    return rows;
}

}  // namespace sfldp
