#pragma once

#include "sfldp/spectral.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace sfldp {

/// Eigenvalues q_i of the trace-class covariance Q of the Wiener process.
struct QSpec {
    std::vector<double> q;

    double trace() const {
        double s = 0.0;
        for (double v : q) s += v;
        return s;
    }

    int size() const { return static_cast<int>(q.size()); }

    void validate(int n_modes) const {
        if (size() != n_modes) throw std::invalid_argument("QSpec: length does not match number of modes");
        for (double v : q)
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("QSpec: q_i must be finite and >= 0");
    }

    /// q_i = i^{-2}.
    static QSpec decaying(int n_modes) {
        QSpec s;
        for (int i = 1; i <= n_modes; ++i) s.q.push_back(1.0 / (double(i) * i));
        return s;
    }

    /// q_i = value for i <= k, zero above.
    static QSpec leading_modes(int n_modes, int k, double value = 1.0) {
        QSpec s;
        for (int i = 1; i <= n_modes; ++i) s.q.push_back(i <= k ? value : 0.0);
        return s;
    }

    static QSpec constant(int n_modes, double value) { return leading_modes(n_modes, n_modes, value); }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// (1 - e^{-rate t}) / rate, with the rate -> 0 limit.
inline double decay_integral(double rate, double t) {
    if (std::abs(rate * t) < 1e-12) return t;
    return -std::expm1(-rate * t) / rate;
}

}  // namespace detail

/**
 * @brief Reproducible Gaussian stream identified by (seed, stream_id).
 *
 * The engine state is a pure function of the pair, so replicas can run in any
 * order or on any thread and still draw identical numbers.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          engine_(detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0x632be59bd9b4e019ULL))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    double standard_normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    void fill_normal(Eigen::Ref<Eigen::VectorXd> out) {
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_(engine_);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Q-Wiener increment over dt: coefficient i is sqrt(q_i dt) xi_i.
inline SpectralField wiener_increment(const QSpec& q, const BasisSpec& basis, double dt, RngStream& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("wiener_increment: dt must be positive");
    q.validate(basis.n_modes);
    Eigen::VectorXd c(basis.n_modes);
    for (int i = 0; i < basis.n_modes; ++i) {
        const double xi = rng.standard_normal();
        c[i] = std::sqrt(q.q[i] * dt) * xi;
    }
    return SpectralField(basis, std::move(c));
}

/**
 * @brief State of the exponential memory filter Z^{-alpha} phi = int_0^inf e^{-alpha s} phi(t - s) ds.
 *
 * Driven by a constant c the value relaxes to c / alpha; driven by unit white
 * noise it is an Ornstein-Uhlenbeck process with stationary variance 1/(2 alpha).
 */
struct ExpFilterState {
    double rate = 1.0;
    double value = 0.0;
};

/**
 * Exact update over dt. Smooth input: value' = e^{-a dt} value + (1 - e^{-a dt})/a * input.
 * White-noise input: value' = e^{-a dt} value + noise_increment, where the caller
 * supplies int_t^{t+dt} e^{-a (t+dt-s)} dW(s) (see ou_increment_stddev / FilterNoiseSampler).
 */
inline ExpFilterState filter_step(ExpFilterState state, double input, double dt, bool is_white_noise,
                                  double noise_increment = 0.0) {
    if (!(state.rate > 0.0)) throw std::invalid_argument("filter_step: rate must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("filter_step: dt must be positive");
    const double decay = std::exp(-state.rate * dt);
    if (is_white_noise)
        state.value = decay * state.value + noise_increment;
    else
        state.value = decay * state.value + detail::decay_integral(state.rate, dt) * input;
    return state;
}

/// Standard deviation of int_0^dt e^{-rate (dt - s)} dW(s).
inline double ou_increment_stddev(double rate, double dt) {
    return std::sqrt(detail::decay_integral(2.0 * rate, dt));
}

/**
 * @brief Joint sampler for (dW, I_1, ..., I_k) over one step, I_j = int e^{-r_j (dt-s)} dW(s).
 *
 * All components share one Brownian path on the step, so the Wiener increment
 * and every filter update stay consistently correlated.
 */
class FilterNoiseSampler {
public:
    FilterNoiseSampler(std::vector<double> rates, double dt) : rates_(std::move(rates)), dt_(dt) {
        if (!(dt > 0.0)) throw std::invalid_argument("FilterNoiseSampler: dt must be positive");
        const int k = static_cast<int>(rates_.size());
        Eigen::MatrixXd cov(k + 1, k + 1);
        cov(0, 0) = dt;
        for (int a = 0; a < k; ++a) {
            if (!(rates_[a] > 0.0)) throw std::invalid_argument("FilterNoiseSampler: rates must be positive");
            cov(0, a + 1) = cov(a + 1, 0) = detail::decay_integral(rates_[a], dt);
            for (int b = 0; b < k; ++b) cov(a + 1, b + 1) = detail::decay_integral(rates_[a] + rates_[b], dt);
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        const Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        factor_ = es.eigenvectors() * d.asDiagonal();
    }

    double dt() const { return dt_; }
    const std::vector<double>& rates() const { return rates_; }

    /// Returns (dW, I_1, ..., I_k).
    Eigen::VectorXd sample(RngStream& rng) const {
        Eigen::VectorXd xi(factor_.cols());
        rng.fill_normal(xi);
        return factor_ * xi;
    }

private:
    std::vector<double> rates_;
    double dt_;
    Eigen::MatrixXd factor_;
};

}  // namespace sfldp
