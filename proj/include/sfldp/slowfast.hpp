#pragma once

#include "sfldp/errors.hpp"
#include "sfldp/path.hpp"
#include "sfldp/spectral.hpp"
#include "sfldp/stochastic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace sfldp {

/**
 * @brief Pointwise reaction pair (f, g) of the slow-fast system.
 *
 * The fast reaction is split as g(u, v) = -fast_damping * v + r(u, v); the
 * linear damping is folded into the fast linear operator A - fast_damping I
 * and integrated exactly. The default is the reaction-diffusion example
 * f(u, v) = lambda sin u - v, g(u, v) = -v + u, which is evaluated with a
 * spectral fast path. Custom reactions go through the collocation grid.
 */
struct Reaction {
    enum class Kind { example, pointwise };

    Kind kind = Kind::example;
    double lambda = 1.0;
    double fast_damping = 1.0;
    std::function<double(double, double)> f;
    std::function<double(double, double)> g;
    std::function<double(double, double)> df_du;

    static Reaction example(double lambda) {
        Reaction r;
        r.kind = Kind::example;
        r.lambda = lambda;
        r.fast_damping = 1.0;
        return r;
    }

    static Reaction custom(std::function<double(double, double)> f, std::function<double(double, double)> g,
                           std::function<double(double, double)> df_du, double fast_damping) {
        if (!f || !g) throw std::invalid_argument("Reaction::custom: f and g are required");
        Reaction r;
        r.kind = Kind::pointwise;
        r.f = std::move(f);
        r.g = std::move(g);
        r.df_du = std::move(df_du);
        r.fast_damping = fast_damping;
        return r;
    }

    double eval_f(double u, double v) const { return kind == Kind::example ? lambda * std::sin(u) - v : f(u, v); }
    double eval_g(double u, double v) const { return kind == Kind::example ? -v + u : g(u, v); }
    double eval_df_du(double u, double v) const {
        if (kind == Kind::example) return lambda * std::cos(u);
        if (!df_du) throw std::logic_error("Reaction: df_du not provided");
        return df_du(u, v);
    }

    /// f(u, v) in coefficient space.
    Eigen::VectorXd slow_drift(const Collocation& colloc, const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
        if (kind == Kind::example) {
            const double lam = lambda;
            return pointwise(colloc, u, [lam](double x) { return lam * std::sin(x); }) - v;
        }
        const Eigen::VectorXd uv = colloc.to_values(u);
        const Eigen::VectorXd vv = colloc.to_values(v);
        Eigen::VectorXd out(uv.size());
        for (Eigen::Index j = 0; j < uv.size(); ++j) out[j] = f(uv[j], vv[j]);
        return colloc.to_coeffs(out);
    }

    /// r(u, v) = g(u, v) + fast_damping v in coefficient space.
    Eigen::VectorXd fast_residual(const Collocation& colloc, const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
        if (kind == Kind::example) return u;
        const Eigen::VectorXd uv = colloc.to_values(u);
        const Eigen::VectorXd vv = colloc.to_values(v);
        Eigen::VectorXd out(uv.size());
        for (Eigen::Index j = 0; j < uv.size(); ++j) out[j] = g(uv[j], vv[j]) + fast_damping * vv[j];
        return colloc.to_coeffs(out);
    }

    bool residual_depends_on_v() const { return kind != Kind::example; }
};

/// Optional constants of the structural hypotheses; NaN means "not supplied".
struct HypothesisConstants {
    double L_f = std::numeric_limits<double>::quiet_NaN();
    double L_g = std::numeric_limits<double>::quiet_NaN();
    double a = std::numeric_limits<double>::quiet_NaN();
    double b = std::numeric_limits<double>::quiet_NaN();
    double c = std::numeric_limits<double>::quiet_NaN();
    double d = std::numeric_limits<double>::quiet_NaN();
    double e = std::numeric_limits<double>::quiet_NaN();
};

/// Full parameterization of the slow-fast system.
struct SystemSpec {
    double epsilon = 0.1;
    double sigma = 1.0;
    double lambda = 1.0;
    BasisSpec basis;
    QSpec q;
    std::optional<Reaction> custom_reaction;
    HypothesisConstants constants;

    /// Example system with q_i = i^{-2}.
    static SystemSpec example(double epsilon, double sigma, double lambda, int n_modes = 32) {
        SystemSpec s;
        s.epsilon = epsilon;
        s.sigma = sigma;
        s.lambda = lambda;
        s.basis.n_modes = n_modes;
        s.q = QSpec::decaying(n_modes);
        return s;
    }

    Reaction reaction() const { return custom_reaction ? *custom_reaction : Reaction::example(lambda); }

    bool is_example() const { return !custom_reaction || custom_reaction->kind == Reaction::Kind::example; }

    void validate() const {
        basis.validate();
        if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("SystemSpec: epsilon must be > 0");
        // sigma = 0 is accepted as the deterministic limit; the large-deviation results need sigma != 0.
        if (!std::isfinite(sigma)) throw std::invalid_argument("SystemSpec: sigma must be finite");
        if (!std::isfinite(lambda)) throw std::invalid_argument("SystemSpec: lambda must be finite");
        q.validate(basis.n_modes);
        if (!(basis.eigenvalue(1) + reaction().fast_damping > 0.0))
            throw std::invalid_argument("SystemSpec: fast linear operator is not dissipative");
    }
};

struct State {
    SpectralField u;
    SpectralField v;
    double t = 0.0;
};

/**
 * @brief Exponential (Lawson) integrator for the coupled slow-fast system.
 *
 * Slow: u' = e^{A dt} u + phi_1(A dt) dt f(u, v).
 * Fast: the linear part (A - cI)/eps, the frozen residual forcing r(u, v)/eps and
 * the Q-Wiener forcing sigma/sqrt(eps) dW are integrated exactly per mode, so
 * the fast noise carries the exact OU variance sigma^2 q_i (1 - e^{-2 k_i dt}) / (2 (lambda_i + c)).
 */
class SlowFastIntegrator {
public:
    SlowFastIntegrator(const SystemSpec& spec, double dt)
        : reaction_(spec.reaction()), colloc_(&collocation_for(spec.basis)), dt_(dt) {
        spec.validate();
        if (!(dt > 0.0)) throw std::invalid_argument("SlowFastIntegrator: dt must be positive");
        const int n = spec.basis.n_modes;
        slow_decay_.resize(n);
        slow_gain_.resize(n);
        fast_decay_.resize(n);
        fast_gain_.resize(n);
        fast_noise_.resize(n);
        for (int i = 0; i < n; ++i) {
            const double lam = spec.basis.eigenvalue(i + 1);
            slow_decay_[i] = std::exp(-lam * dt);
            slow_gain_[i] = detail::decay_integral(lam, dt);
            const double damp = lam + reaction_.fast_damping;
            const double k = damp / spec.epsilon;
            fast_decay_[i] = std::exp(-k * dt);
            fast_gain_[i] = -std::expm1(-k * dt) / damp;
            fast_noise_[i] = spec.sigma * std::sqrt(spec.q.q[i] * -std::expm1(-2.0 * k * dt) / (2.0 * damp));
        }
    }

    double dt() const { return dt_; }
    int n_modes() const { return static_cast<int>(slow_decay_.size()); }

    /// Advances (u, v) in place using the supplied standard normals for the fast noise.
    void step_with_noise(Eigen::VectorXd& u, Eigen::VectorXd& v, const Eigen::VectorXd& xi) const {
        const Eigen::VectorXd f = reaction_.slow_drift(*colloc_, u, v);
        const Eigen::VectorXd r = reaction_.fast_residual(*colloc_, u, v);
        u = slow_decay_.cwiseProduct(u) + slow_gain_.cwiseProduct(f);
        v = fast_decay_.cwiseProduct(v) + fast_gain_.cwiseProduct(r) + fast_noise_.cwiseProduct(xi);
    }

    void step(Eigen::VectorXd& u, Eigen::VectorXd& v, RngStream& rng) {
        xi_.resize(n_modes());
        rng.fill_normal(xi_);
        step_with_noise(u, v, xi_);
    }

    /// Fast equation alone with u held fixed.
    void step_frozen(const Eigen::VectorXd& u, Eigen::VectorXd& v, RngStream& rng) {
        xi_.resize(n_modes());
        rng.fill_normal(xi_);
        const Eigen::VectorXd r = reaction_.fast_residual(*colloc_, u, v);
        v = fast_decay_.cwiseProduct(v) + fast_gain_.cwiseProduct(r) + fast_noise_.cwiseProduct(xi_);
    }

    const Reaction& reaction() const { return reaction_; }
    const Collocation& collocation() const { return *colloc_; }

private:
    Reaction reaction_;
    const Collocation* colloc_;
    double dt_;
    Eigen::VectorXd slow_decay_, slow_gain_;
    Eigen::VectorXd fast_decay_, fast_gain_, fast_noise_;
    Eigen::VectorXd xi_;
};

inline void check_finite(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double t) {
    if (!u.allFinite()) throw BlowUpError("slow component became non-finite", t);
    if (!v.allFinite()) throw BlowUpError("fast component became non-finite", t);
}

/// One step of the coupled system.
inline State step(const State& state, const SystemSpec& spec, double dt, RngStream& rng) {
    SlowFastIntegrator integ(spec, dt);
    Eigen::VectorXd u = state.u.coeffs();
    Eigen::VectorXd v = state.v.coeffs();
    integ.step(u, v, rng);
    check_finite(u, v, state.t + dt);
    return State{SpectralField(spec.basis, std::move(u)), SpectralField(spec.basis, std::move(v)), state.t + dt};
}

/**
 * Runs the coupled system over the grid, calling observer(k, u, v) at every node
 * (including k = 0). Throws BlowUpError if the state becomes non-finite.
 */
template <class Observer>
void simulate(const SpectralField& u0, const SpectralField& v0, const SystemSpec& spec, const TimeGrid& grid,
              RngStream& rng, Observer&& observer) {
    grid.validate();
    SlowFastIntegrator integ(spec, grid.dt());
    Eigen::VectorXd u = u0.coeffs();
    Eigen::VectorXd v = v0.coeffs();
    observer(0, u, v);
    for (int k = 1; k <= grid.n_steps; ++k) {
        integ.step(u, v, rng);
        check_finite(u, v, grid.time(k));
        observer(k, u, v);
    }
}

inline std::pair<PathH, PathH> simulate_path(const SpectralField& u0, const SpectralField& v0, const SystemSpec& spec,
                                             const TimeGrid& grid, RngStream& rng) {
    PathH up(grid, spec.basis), vp(grid, spec.basis);
    simulate(u0, v0, spec, grid, rng, [&](int k, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
        up.node(k) = u;
        vp.node(k) = v;
    });
    return {std::move(up), std::move(vp)};
}

/// Samples of the fast component with the slow component frozen.
struct FastSamples {
    Eigen::MatrixXd samples;  // N x n_samples
    double sample_interval = 0.0;
    bool burn_in_ok = true;
    double drift_statistic = 0.0;  // sum of squared standardized half-sample mean differences

    Eigen::VectorXd mean() const { return samples.rowwise().mean(); }

    Eigen::VectorXd variance() const {
        const Eigen::MatrixXd centered = samples.colwise() - mean();
        return centered.rowwise().squaredNorm() / double(samples.cols() - 1);
    }

    Eigen::VectorXd mean_stderr() const { return (variance() / double(samples.cols())).cwiseSqrt(); }
};

/**
 * @brief Empirical stationary law of the fast equation with u frozen.
 *
 * Requires e^{-(lambda_1 + c) burn_in / eps} < 1e-6. Samples are spaced by
 * `sample_interval` (default 5 eps / (lambda_1 + c), correlation below 1%).
 * For the example reaction the frozen fast equation is linear with constant
 * forcing, so one exact step per sample interval is exact in law; custom
 * reactions substep at eps / 20.
 * The burn-in flag is cleared when the first-half and second-half sample means
 * differ by more than 3 standard errors of the aggregate chi-square statistic.
 */
inline FastSamples frozen_fast_stationary(const SpectralField& u_frozen, const SystemSpec& spec, double burn_in,
                                          int n_samples, RngStream& rng, double sample_interval = 0.0) {
    spec.validate();
    if (n_samples < 2) throw std::invalid_argument("frozen_fast_stationary: need at least 2 samples");
    const Reaction reaction = spec.reaction();
    const double slowest = spec.basis.eigenvalue(1) + reaction.fast_damping;
    if (!(std::exp(-slowest * burn_in / spec.epsilon) < 1e-6))
        throw std::invalid_argument("frozen_fast_stationary: burn-in too short for the fast relaxation time");
    if (sample_interval <= 0.0) sample_interval = 5.0 * spec.epsilon / slowest;

    int substeps = 1;
    if (reaction.residual_depends_on_v())
        substeps = std::max(1, static_cast<int>(std::ceil(sample_interval / (spec.epsilon / 20.0))));
    SlowFastIntegrator integ(spec, sample_interval / substeps);

    const Eigen::VectorXd& u = u_frozen.coeffs();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.basis.n_modes);
    const int burn_steps = static_cast<int>(std::ceil(burn_in / integ.dt()));
    for (int k = 0; k < burn_steps; ++k) integ.step_frozen(u, v, rng);

    FastSamples out;
    out.sample_interval = sample_interval;
    out.samples.resize(spec.basis.n_modes, n_samples);
    for (int s = 0; s < n_samples; ++s) {
        for (int k = 0; k < substeps; ++k) integ.step_frozen(u, v, rng);
        if (!v.allFinite()) throw BlowUpError("frozen fast component became non-finite", s * sample_interval);
        out.samples.col(s) = v;
    }

    const int half = n_samples / 2;
    if (half >= 2) {
        const Eigen::MatrixXd a = out.samples.leftCols(half);
        const Eigen::MatrixXd b = out.samples.rightCols(n_samples - half);
        const Eigen::VectorXd ma = a.rowwise().mean(), mb = b.rowwise().mean();
        const Eigen::VectorXd va = (a.colwise() - ma).rowwise().squaredNorm() / double(half - 1);
        const Eigen::VectorXd vb = (b.colwise() - mb).rowwise().squaredNorm() / double(n_samples - half - 1);
        double chi2 = 0.0;
        int dof = 0;
        for (int i = 0; i < spec.basis.n_modes; ++i) {
            const double se2 = va[i] / half + vb[i] / (n_samples - half);
            if (se2 <= 0.0) continue;
            const double d = ma[i] - mb[i];
            chi2 += d * d / se2;
            ++dof;
        }
        out.drift_statistic = chi2;
        out.burn_in_ok = chi2 <= dof + 3.0 * std::sqrt(2.0 * dof);
    }
    return out;
}

/// Numeric probes of the structural hypotheses on the reaction pair.
struct HypothesisReport {
    double lipschitz_f = 0.0;           // sampled max of |df/du|, |df/dv|
    double lipschitz_g = 0.0;           // sampled max of |dg/du|, |dg/dv|
    double lipschitz_g_residual_v = 0.0;  // sampled max of |d r / dv| after folding the damping
    double lambda_1 = 0.0;
    double fast_damping = 0.0;
    bool h1_growth = true;   // |f|^2 <= a x^2 + b y^2 + c; only evaluated when a, b, c are supplied
    bool h1_cross = true;    // f x <= a x^2 + b x y + c; same condition
    bool h2_dissipation = true;  // only evaluated when d, e are supplied
    bool h3_raw = false;     // L_g < lambda_1 with the raw Lipschitz constant
    bool h3_folded = false;  // residual Lipschitz < lambda_1 + damping
    bool h4_trace_finite = false;
    double trace_q = 0.0;
};

/**
 * Samples the reactions on the box [-box, box]^2 with central differences.
 * For the example reaction the raw H3 test sits on its boundary (L_g = 1 = lambda_1
 * for L = pi); the folded test is what the integrator relies on.
 */
inline HypothesisReport check_hypotheses(const SystemSpec& spec, double box = 5.0, int samples = 41) {
    const Reaction r = spec.reaction();
    const HypothesisConstants& k = spec.constants;
    HypothesisReport rep;
    rep.lambda_1 = spec.basis.eigenvalue(1);
    rep.fast_damping = r.fast_damping;
    const double h = 1e-5;
    for (int i = 0; i < samples; ++i) {
        for (int j = 0; j < samples; ++j) {
            const double x = -box + 2.0 * box * i / (samples - 1);
            const double y = -box + 2.0 * box * j / (samples - 1);
            const double fx = (r.eval_f(x + h, y) - r.eval_f(x - h, y)) / (2 * h);
            const double fy = (r.eval_f(x, y + h) - r.eval_f(x, y - h)) / (2 * h);
            const double gx = (r.eval_g(x + h, y) - r.eval_g(x - h, y)) / (2 * h);
            const double gy = (r.eval_g(x, y + h) - r.eval_g(x, y - h)) / (2 * h);
            rep.lipschitz_f = std::max({rep.lipschitz_f, std::abs(fx), std::abs(fy)});
            rep.lipschitz_g = std::max({rep.lipschitz_g, std::abs(gx), std::abs(gy)});
            rep.lipschitz_g_residual_v = std::max(rep.lipschitz_g_residual_v, std::abs(gy + r.fast_damping));
            const double fv = r.eval_f(x, y), gv = r.eval_g(x, y);
            if (!std::isnan(k.a) && !std::isnan(k.b) && !std::isnan(k.c)) {
                const double tol = 1e-9;
                if (fv * fv > k.a * x * x + k.b * y * y + k.c + tol) rep.h1_growth = false;
                if (fv * x > k.a * x * x + k.b * x * y + k.c + tol) rep.h1_cross = false;
            }
            if (!std::isnan(k.d) && !std::isnan(k.e)) {
                if (gv * y > -k.d * y * y + k.e * x * y + 1e-9) rep.h2_dissipation = false;
            }
        }
    }
    const double lg = std::isnan(k.L_g) ? rep.lipschitz_g : k.L_g;
    rep.h3_raw = lg < rep.lambda_1;
    rep.h3_folded = rep.lipschitz_g_residual_v < rep.lambda_1 + rep.fast_damping;
    rep.trace_q = spec.q.trace();
    rep.h4_trace_finite = std::isfinite(rep.trace_q);
    return rep;
}

}  // namespace sfldp
