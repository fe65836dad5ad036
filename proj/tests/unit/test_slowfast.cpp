#include "sfldp/slowfast.hpp"
#include "sfldp/stats.hpp"

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace sfldp;

namespace {

SystemSpec small_example(double eps, double sigma, double lambda, int n = 8) {
    return SystemSpec::example(eps, sigma, lambda, n);
}

}  // namespace

TEST(SystemSpec, Validation) {
    SystemSpec s = small_example(0.1, 1.0, 1.0);
    EXPECT_NO_THROW(s.validate());
    s.epsilon = 0.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = small_example(0.1, 1.0, 1.0);
    s.q = QSpec::decaying(3);
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = small_example(0.1, 0.0, 1.0);
    EXPECT_NO_THROW(s.validate());
}

TEST(Reaction, ExampleValues) {
    const Reaction r = Reaction::example(1.7);
    EXPECT_NEAR(r.eval_f(0.3, 0.2), 1.7 * std::sin(0.3) - 0.2, 1e-15);
    EXPECT_NEAR(r.eval_g(0.3, 0.2), -0.2 + 0.3, 1e-15);
    EXPECT_NEAR(r.eval_df_du(0.3, 0.2), 1.7 * std::cos(0.3), 1e-15);
}

TEST(Reaction, CustomMatchesExampleThroughCollocation) {
    const double lam = 1.3;
    Reaction custom = Reaction::custom([lam](double u, double v) { return lam * std::sin(u) - v; },
                                       [](double u, double v) { return -v + u; }, nullptr, 1.0);
    const Reaction ex = Reaction::example(lam);
    BasisSpec b{std::numbers::pi, 8};
    const Collocation& c = collocation_for(b);
    std::mt19937_64 gen(1);
    const Eigen::VectorXd u = testutil::random_vector(8, gen), v = testutil::random_vector(8, gen);
    EXPECT_LT((custom.slow_drift(c, u, v) - ex.slow_drift(c, u, v)).norm(), 1e-12);
    EXPECT_LT((custom.fast_residual(c, u, v) - ex.fast_residual(c, u, v)).norm(), 1e-12);
}

TEST(Simulate, ZeroNoiseZeroStateStaysZero) {
    const SystemSpec s = small_example(0.1, 0.0, 1.0);
    RngStream rng(1, 0);
    auto [u, v] = simulate_path(SpectralField(s.basis), SpectralField(s.basis), s, TimeGrid{1.0, 200}, rng);
    EXPECT_EQ(u.data().norm(), 0.0);
    EXPECT_EQ(v.data().norm(), 0.0);
}

TEST(Simulate, SameSeedsSamePaths) {
    const SystemSpec s = small_example(0.05, 1.0, 1.2);
    const SpectralField u0 = SpectralField::mode(s.basis, 1, 0.5);
    RngStream a(5, 9), b(5, 9);
    auto p = simulate_path(u0, apply_resolvent(u0), s, TimeGrid{0.5, 200}, a);
    auto q = simulate_path(u0, apply_resolvent(u0), s, TimeGrid{0.5, 200}, b);
    EXPECT_EQ(p.first.data(), q.first.data());
    EXPECT_EQ(p.second.data(), q.second.data());
}

TEST(Simulate, BlowUpIsReportedNotClipped) {
    SystemSpec s = small_example(0.1, 0.0, 1.0);
    s.custom_reaction = Reaction::custom([](double u, double) { return u * u * u; },
                                         [](double u, double v) { return -v + u; }, nullptr, 1.0);
    RngStream rng(1, 0);
    const SpectralField u0 = SpectralField::mode(s.basis, 1, 20.0);
    EXPECT_THROW(simulate_path(u0, SpectralField(s.basis), s, TimeGrid{5.0, 500}, rng), BlowUpError);
}

TEST(Simulate, EnergyDecaysWithoutNoiseAndReaction) {
    const SystemSpec s = small_example(0.1, 0.0, 0.0);
    std::mt19937_64 gen(3);
    const SpectralField u0(s.basis, testutil::random_vector(8, gen));
    const SpectralField v0(s.basis, testutil::random_vector(8, gen));
    RngStream rng(1, 0);
    // u' = Au - v, v' = ((A - I) v + u) / eps has the Lyapunov function |u|^2 + eps |v|^2;
    // |u|^2 alone decays once v has relaxed onto its (I - A)^{-1} u slaving.
    double prev_total = u0.norm() * u0.norm() + s.epsilon * v0.norm() * v0.norm();
    bool monotone = true;
    simulate(u0, v0, s, TimeGrid{2.0, 400}, rng, [&](int, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
        const double total = u.squaredNorm() + s.epsilon * v.squaredNorm();
        if (total > prev_total * (1 + 1e-12)) monotone = false;
        prev_total = total;
    });
    EXPECT_TRUE(monotone);

    // pure slow energy: start on the slaved manifold
    double prev = std::numeric_limits<double>::infinity();
    bool slow_monotone = true;
    RngStream rng2(1, 0);
    simulate(u0, apply_resolvent(u0), s, TimeGrid{2.0, 400}, rng2,
             [&](int, const Eigen::VectorXd& u, const Eigen::VectorXd&) {
                 if (u.squaredNorm() > prev * (1 + 1e-12)) slow_monotone = false;
                 prev = u.squaredNorm();
             });
    EXPECT_TRUE(slow_monotone);
}

TEST(FrozenFast, ZeroSlowGivesZeroMean) {
    const SystemSpec s = small_example(0.1, 1.0, 1.0, 6);
    RngStream rng(2, 0);
    const FastSamples fs = frozen_fast_stationary(SpectralField(s.basis), s, 1.0, 20000, rng);
    const Eigen::VectorXd m = fs.mean(), se = fs.mean_stderr();
    for (int i = 0; i < 6; ++i) EXPECT_LT(std::abs(m[i]), 3.0 * se[i]) << "mode " << i + 1;
    EXPECT_TRUE(fs.burn_in_ok);
}

TEST(FrozenFast, StationaryLawAtFirstMode) {
    const SystemSpec s = small_example(0.1, 1.0, 1.0, 6);
    RngStream rng(4, 0);
    const int n = 20000;
    const FastSamples fs = frozen_fast_stationary(SpectralField::mode(s.basis, 1), s, 1.0, n, rng);
    const Eigen::VectorXd m = fs.mean(), se = fs.mean_stderr(), var = fs.variance();
    EXPECT_NEAR(m[0], 0.5, 3.0 * se[0]);
    for (int i = 1; i < 6; ++i) EXPECT_NEAR(m[i], 0.0, 3.0 * se[i]);
    for (int i = 0; i < 6; ++i) {
        const double lam = s.basis.eigenvalue(i + 1);
        const double truth = s.sigma * s.sigma * s.q.q[i] / (2.0 * (1.0 + lam));
        EXPECT_NEAR(var[i], truth, 3.0 * truth * std::sqrt(2.0 / n)) << "mode " << i + 1;
    }
}

TEST(FrozenFast, BurnInPrecondition) {
    const SystemSpec s = small_example(0.1, 1.0, 1.0);
    RngStream rng(2, 0);
    EXPECT_THROW(frozen_fast_stationary(SpectralField(s.basis), s, 0.1, 100, rng), std::invalid_argument);
    EXPECT_THROW(frozen_fast_stationary(SpectralField(s.basis), s, 1.0, 1, rng), std::invalid_argument);
}

TEST(FrozenFast, StationaryLawIndependentOfEpsilon) {
    const int n = 20000;
    Eigen::VectorXd var[2];
    const double eps[2] = {1.0, 0.05};
    for (int k = 0; k < 2; ++k) {
        const SystemSpec s = small_example(eps[k], 1.0, 1.0, 4);
        RngStream rng(8, k);
        var[k] = frozen_fast_stationary(SpectralField::mode(s.basis, 2), s, 20.0 * eps[k], n, rng).variance();
    }
    for (int i = 0; i < 4; ++i) {
        const double se = std::sqrt(2.0 / n) * std::sqrt(var[0][i] * var[0][i] + var[1][i] * var[1][i]);
        EXPECT_NEAR(var[0][i], var[1][i], 3.0 * se) << "mode " << i + 1;
    }
}

TEST(FrozenFast, SynchronousCouplingDecaysAtFastRate) {
    const SystemSpec s = small_example(0.1, 1.0, 1.0, 6);
    SlowFastIntegrator integ(s, s.epsilon / 20);
    const Eigen::VectorXd u = SpectralField::mode(s.basis, 1, 0.7).coeffs();
    std::mt19937_64 gen(2);
    Eigen::VectorXd v1 = testutil::random_vector(6, gen), v2 = testutil::random_vector(6, gen);
    RngStream r1(1, 1), r2(1, 1);
    std::vector<double> t, logd;
    for (int k = 1; k <= 60; ++k) {
        integ.step_frozen(u, v1, r1);
        integ.step_frozen(u, v2, r2);
        t.push_back(k * integ.dt());
        logd.push_back(std::log((v1 - v2).norm()));
    }
    const stats::LinearFit fit = stats::linear_fit(t, logd);
    const double lg_prime = 0.0;  // the example residual does not depend on v
    EXPECT_GE(-fit.slope, (s.basis.eigenvalue(1) + 1.0 - lg_prime) / s.epsilon * (1 - 1e-9));
}

TEST(Hypotheses, ExampleSitsOnRawBoundaryButFoldedCheckPasses) {
    const SystemSpec s = small_example(0.1, 1.0, 1.0);
    const HypothesisReport r = check_hypotheses(s);
    EXPECT_NEAR(r.lipschitz_g, 1.0, 1e-6);
    EXPECT_NEAR(r.lipschitz_f, 1.0, 1e-6);
    EXPECT_FALSE(r.h3_raw);
    EXPECT_TRUE(r.h3_folded);
    EXPECT_TRUE(r.h4_trace_finite);
}

TEST(Hypotheses, SuppliedConstantsAreChecked) {
    SystemSpec s = small_example(0.1, 1.0, 1.0);
    s.constants.a = 0.5;
    s.constants.b = 0.5;
    s.constants.c = 0.1;
    EXPECT_FALSE(check_hypotheses(s).h1_growth);
    s.constants.a = 3.0;
    s.constants.b = 3.0;
    s.constants.c = 3.0;
    EXPECT_TRUE(check_hypotheses(s).h1_growth);
    // f x = x sin x - x y cannot be bounded by a x^2 + b x y + c with b > 0 (take x < 0 < y)
    EXPECT_FALSE(check_hypotheses(s).h1_cross);
    s.constants.b = -1.0;
    EXPECT_TRUE(check_hypotheses(s).h1_cross);
    s.constants.d = 0.5;
    s.constants.e = 1.0;
    EXPECT_TRUE(check_hypotheses(s).h2_dissipation);
}
