#pragma once

#include "sfldp/errors.hpp"
#include "sfldp/parallel.hpp"
#include "sfldp/path.hpp"
#include "sfldp/slowfast.hpp"
#include "sfldp/spectral.hpp"
#include "sfldp/stats.hpp"
#include "sfldp/stochastic.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sfldp {

/// How the averaged drift fbar(u) = int f(u, v) mu^u(dv) is obtained.
struct AveragedDrift {
    enum class Mode { analytic_example, empirical };

    Mode mode = Mode::analytic_example;
    int n_samples = 2000;
    double burn_in = 0.0;  // 0 picks 15 eps / (lambda_1 + c)
    std::uint64_t seed = 0;

    static AveragedDrift analytic() { return {}; }
    static AveragedDrift empirical(int n_samples, std::uint64_t seed, double burn_in = 0.0) {
        return {Mode::empirical, n_samples, burn_in, seed};
    }

    void validate(const SystemSpec& spec) const {
        if (mode == Mode::analytic_example && !spec.is_example())
            throw std::invalid_argument("AveragedDrift: analytic mode only applies to the example reaction");
        if (mode == Mode::empirical && n_samples < 100)
            throw std::invalid_argument("AveragedDrift: empirical mode needs at least 100 samples");
    }
};

struct DriftEstimate {
    SpectralField value;
    Eigen::VectorXd stderr;  // zero for the analytic mode
};

namespace detail {

inline double default_burn_in(const SystemSpec& spec) {
    return 15.0 * spec.epsilon / (spec.basis.eigenvalue(1) + spec.reaction().fast_damping);
}

}  // namespace detail

/**
 * @brief Evaluates fbar on coefficient vectors, plus its Jacobian for the example.
 *
 * For the example fbar(u) = P(lambda sin Su) - (I - A)^{-1} u and
 * fbar'(u) z = P(lambda cos(Su) . Sz) - (I - A)^{-1} z.
 */
class DriftEvaluator {
public:
    DriftEvaluator(const SystemSpec& spec, AveragedDrift drift = {})
        : spec_(spec), drift_(drift), colloc_(&collocation_for(spec.basis)) {
        spec_.validate();
        drift_.validate(spec_);
        const int n = spec_.basis.n_modes;
        resolvent_.resize(n);
        for (int i = 0; i < n; ++i) resolvent_[i] = 1.0 / (1.0 + spec_.basis.eigenvalue(i + 1));
    }

    const SystemSpec& spec() const { return spec_; }
    const AveragedDrift& drift() const { return drift_; }
    bool differentiable() const { return drift_.mode == AveragedDrift::Mode::analytic_example; }

    Eigen::VectorXd operator()(const Eigen::VectorXd& u) const {
        if (differentiable()) {
            const double lam = spec_.lambda;
            return pointwise(*colloc_, u, [lam](double x) { return lam * std::sin(x); }) - resolvent_.cwiseProduct(u);
        }
        Eigen::VectorXd se;
        return estimate(u, se);
    }

    /// Monte-Carlo estimate with per-mode standard errors (empirical mode).
    Eigen::VectorXd estimate(const Eigen::VectorXd& u, Eigen::VectorXd& stderr) const {
        if (differentiable()) {
            stderr = Eigen::VectorXd::Zero(u.size());
            return (*this)(u);
        }
        RngStream rng(drift_.seed, calls_++);
        const double burn = drift_.burn_in > 0.0 ? drift_.burn_in : detail::default_burn_in(spec_);
        const FastSamples fs =
            frozen_fast_stationary(SpectralField(spec_.basis, u), spec_, burn, drift_.n_samples, rng);
        const Reaction r = spec_.reaction();
        Eigen::MatrixXd fvals(u.size(), fs.samples.cols());
        for (Eigen::Index s = 0; s < fs.samples.cols(); ++s)
            fvals.col(s) = r.slow_drift(*colloc_, u, fs.samples.col(s));
        const Eigen::VectorXd mean = fvals.rowwise().mean();
        const double n = double(fvals.cols());
        stderr = ((fvals.colwise() - mean).rowwise().squaredNorm() / (n - 1.0) / n).cwiseSqrt();
        return mean;
    }

    /// fbar'(u) z.
    Eigen::VectorXd jacobian_apply(const Eigen::VectorXd& u, const Eigen::VectorXd& z) const {
        require_jacobian();
        const Eigen::VectorXd uv = colloc_->to_values(u);
        const Eigen::VectorXd zv = colloc_->to_values(z);
        Eigen::VectorXd w(uv.size());
        for (Eigen::Index j = 0; j < uv.size(); ++j) w[j] = spec_.lambda * std::cos(uv[j]) * zv[j];
        return colloc_->to_coeffs(w) - resolvent_.cwiseProduct(z);
    }

    /// fbar'(u)^T g, built from the transposed synthesis and analysis maps.
    Eigen::VectorXd jacobian_transpose_apply(const Eigen::VectorXd& u, const Eigen::VectorXd& g) const {
        require_jacobian();
        const Eigen::VectorXd uv = colloc_->to_values(u);
        Eigen::VectorXd w = colloc_->analysis().transpose() * g;
        for (Eigen::Index j = 0; j < uv.size(); ++j) w[j] *= spec_.lambda * std::cos(uv[j]);
        return colloc_->synthesis().transpose() * w - resolvent_.cwiseProduct(g);
    }

    /// P(lambda cos(Su) . Sz): the Jacobian without the resolvent part.
    Eigen::VectorXd reaction_jacobian_apply(const Eigen::VectorXd& u, const Eigen::VectorXd& z) const {
        return jacobian_apply(u, z) + resolvent_.cwiseProduct(z);
    }

    /// Diagonal of (I - A)^{-1}.
    const Eigen::VectorXd& resolvent_diag() const { return resolvent_; }

    /// Dense fbar'(u).
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& u) const {
        require_jacobian();
        const Eigen::VectorXd uv = colloc_->to_values(u);
        Eigen::VectorXd d(uv.size());
        for (Eigen::Index j = 0; j < uv.size(); ++j) d[j] = spec_.lambda * std::cos(uv[j]);
        Eigen::MatrixXd J = colloc_->analysis() * d.asDiagonal() * colloc_->synthesis();
        J.diagonal() -= resolvent_;
        return J;
    }

private:
    void require_jacobian() const {
        if (!differentiable()) throw std::logic_error("DriftEvaluator: Jacobian only available for the analytic drift");
    }

    SystemSpec spec_;
    AveragedDrift drift_;
    const Collocation* colloc_;
    Eigen::VectorXd resolvent_;
    mutable std::uint64_t calls_ = 0;
};

inline SpectralField fbar(const SpectralField& u, const AveragedDrift& drift, const SystemSpec& spec) {
    return SpectralField(spec.basis, DriftEvaluator(spec, drift)(u.coeffs()));
}

inline DriftEstimate fbar_estimate(const SpectralField& u, const AveragedDrift& drift, const SystemSpec& spec) {
    DriftEstimate e{SpectralField(spec.basis), {}};
    Eigen::VectorXd se;
    e.value = SpectralField(spec.basis, DriftEvaluator(spec, drift).estimate(u.coeffs(), se));
    e.stderr = se;
    return e;
}

/// Exponential-Euler solve of u' = A u + fbar(u), with `substeps` inner steps per grid step.
inline PathH solve_averaged(const SpectralField& u0, const DriftEvaluator& drift, const TimeGrid& grid,
                            int substeps = 1) {
    grid.validate();
    if (substeps < 1) throw std::invalid_argument("solve_averaged: substeps must be >= 1");
    const SystemSpec& spec = drift.spec();
    const int n = spec.basis.n_modes;
    const double h = grid.dt() / substeps;
    Eigen::VectorXd decay(n), gain(n);
    for (int i = 0; i < n; ++i) {
        const double lam = spec.basis.eigenvalue(i + 1);
        decay[i] = std::exp(-lam * h);
        gain[i] = detail::decay_integral(lam, h);
    }
    PathH path(grid, spec.basis);
    Eigen::VectorXd u = u0.coeffs();
    path.node(0) = u;
    for (int k = 1; k <= grid.n_steps; ++k) {
        for (int s = 0; s < substeps; ++s) u = decay.cwiseProduct(u) + gain.cwiseProduct(drift(u));
        if (!u.allFinite()) throw BlowUpError("averaged solution became non-finite", grid.time(k));
        path.node(k) = u;
    }
    return path;
}

inline PathH solve_averaged(const SpectralField& u0, const SystemSpec& spec, const TimeGrid& grid,
                            const AveragedDrift& drift = {}, int substeps = 1) {
    return solve_averaged(u0, DriftEvaluator(spec, drift), grid, substeps);
}

struct AveragingRateConfig {
    std::vector<double> epsilons{0.1, 0.05, 0.02, 0.01};
    double T = 2.0;
    double dt_over_epsilon = 1.0 / 20.0;
    int n_replicas = 200;
    std::uint64_t seed = 1;
    int threads = 1;
    double max_blowup_fraction = 0.05;
};

struct AveragingRow {
    double epsilon = 0.0;
    double mean_error = 0.0;
    double stderr = 0.0;
    int n_ok = 0;
    int n_blowup = 0;
};

struct AveragingTable {
    std::vector<AveragingRow> rows;
    stats::LinearFit fit;  // log(mean_error) against log(epsilon)
};

/**
 * Mean sup-in-time distance between the full slow component and the averaged
 * path, for each epsilon. The averaged path is recomputed on each epsilon's
 * grid with substeps fine enough to match the smallest epsilon's step, so its
 * own discretization error stays below the smallest resolved scale.
 * v0 defaults to (I - A)^{-1} u0.
 */
inline AveragingTable averaging_error(const SystemSpec& base, const SpectralField& u0, const AveragingRateConfig& cfg,
                                      const SpectralField* v0_in = nullptr) {
    if (cfg.epsilons.size() < 2) throw std::invalid_argument("averaging_error: need at least two epsilons");
    for (std::size_t i = 1; i < cfg.epsilons.size(); ++i)
        if (!(cfg.epsilons[i] < cfg.epsilons[i - 1]))
            throw std::invalid_argument("averaging_error: epsilon list must be strictly decreasing");
    if (cfg.n_replicas < 2) throw std::invalid_argument("averaging_error: need at least two replicas");
    const SpectralField v0 = v0_in ? *v0_in : apply_resolvent(u0);
    const double dt_ref = cfg.epsilons.back() * cfg.dt_over_epsilon;

    AveragingTable table;
    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
        SystemSpec spec = base;
        spec.epsilon = cfg.epsilons[e];
        const TimeGrid grid = TimeGrid::with_max_step(cfg.T, spec.epsilon * cfg.dt_over_epsilon);
        const int sub = std::max(1, static_cast<int>(std::ceil(grid.dt() / dt_ref - 1e-9)));
        const PathH avg = solve_averaged(u0, DriftEvaluator(spec), grid, sub);

        std::vector<double> err(cfg.n_replicas, 0.0);
        std::vector<char> ok(cfg.n_replicas, 0);
        parallel_for(cfg.n_replicas, cfg.threads, [&](int r) {
            RngStream rng(cfg.seed, (std::uint64_t(e) << 32) | std::uint64_t(r));
            double d = 0.0;
            try {
                simulate(u0, v0, spec, grid, rng, [&](int k, const Eigen::VectorXd& u, const Eigen::VectorXd&) {
                    d = std::max(d, (u - avg.node(k)).norm());
                });
                err[r] = d;
                ok[r] = 1;
            } catch (const BlowUpError&) {
                ok[r] = 0;
            }
        });

        std::vector<double> good;
        for (int r = 0; r < cfg.n_replicas; ++r)
            if (ok[r]) good.push_back(err[r]);
        AveragingRow row;
        row.epsilon = spec.epsilon;
        row.n_ok = static_cast<int>(good.size());
        row.n_blowup = cfg.n_replicas - row.n_ok;
        if (row.n_blowup > cfg.max_blowup_fraction * cfg.n_replicas)
            throw BlowUpError("averaging_error: too many replica blow-ups", cfg.T);
        const stats::MeanSE m = stats::mean_se(good);
        row.mean_error = m.mean;
        row.stderr = m.stderr;
        table.rows.push_back(row);
    }

    std::vector<double> x, y, w;
    for (const AveragingRow& r : table.rows) {
        if (!(r.mean_error > 0.0)) continue;
        x.push_back(std::log(r.epsilon));
        y.push_back(std::log(r.mean_error));
        const double rel = r.stderr / r.mean_error;
        w.push_back(rel > 0.0 ? 1.0 / (rel * rel) : 1e12);
    }
    if (x.size() >= 2) table.fit = stats::weighted_linear_fit(x, y, w);
    return table;
}

}  // namespace sfldp
