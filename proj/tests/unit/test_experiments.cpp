#include "sfldp/experiments.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>
#include <sys/wait.h>
#include <unistd.h>

using namespace sfldp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sfldp_exp_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

int cli(const std::string& args, const std::string& env = {}) {
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(SFLDP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> file_hashes(const fs::path& dir) {
    std::map<std::string, std::string> h;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) h[fs::relative(e.path(), dir).string()] = io::sha256_file(e.path());
    return h;
}

const char* small = "--set system.n_modes=6 --set mc.n_replicas=5 --set system.epsilons=0.1,0.05 --set grid.T=0.3";

}  // namespace

TEST(Cli, RerunsAreByteIdentical) {
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
    ASSERT_EQ(cli(std::string("simulate ") + small + " --out " + a.string()), 0);
    ASSERT_EQ(cli(std::string("simulate ") + small + " --out " + b.string()), 0);
    EXPECT_EQ(file_hashes(a), file_hashes(b));
    EXPECT_TRUE(io::verify_manifest(a).empty());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, ThreadCountDoesNotChangeOutput) {
    const fs::path a = scratch("thr_a"), b = scratch("thr_b");
    for (const char* kind : {"simulate", "average-rate"}) {
        fs::remove_all(a);
        fs::remove_all(b);
        ASSERT_EQ(cli(std::string(kind) + " " + small + " --threads 1 --out " + a.string()), 0) << kind;
        ASSERT_EQ(cli(std::string(kind) + " " + small + " --threads 4 --out " + b.string()), 0) << kind;
        EXPECT_EQ(file_hashes(a), file_hashes(b)) << kind;
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, SeedChangesOutputAndIsStamped) {
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    ASSERT_EQ(cli(std::string("simulate ") + small + " --seed 1 --out " + a.string()), 0);
    ASSERT_EQ(cli(std::string("simulate ") + small + " --seed 2 --out " + b.string()), 0);
    EXPECT_NE(io::sha256_file(a / "u_e0_r0.csv"), io::sha256_file(b / "u_e0_r0.csv"));
    EXPECT_EQ(io::read_csv(b / "u_e0_r0.csv").header.seed, 2u);
    EXPECT_EQ(io::read_manifest(b).seed, 2u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, ConfigFileFromEnvironmentAndFlag) {
    const fs::path dir = scratch("env");
    fs::create_directories(dir);
    io::write_file(dir / "c.ini", "[experiment]\nkind = simulate\n[system]\nn_modes = 3\n[grid]\nT = 0.2\n");
    const fs::path out = dir / "out";
    ASSERT_EQ(cli("simulate --out " + out.string(), "SFLDP_CONFIG=" + (dir / "c.ini").string()), 0);
    EXPECT_EQ(io::read_csv(out / "u_e0_r0.csv").table.rows.size(), 3u * 41u);
    EXPECT_EQ(io::read_file(out / "config.source.ini"), io::read_file(dir / "c.ini"));
    // subcommand and config kind must agree
    EXPECT_EQ(cli("deviation --config " + (dir / "c.ini").string() + " --out " + out.string()), exit_config);
    fs::remove_all(dir);
}

TEST(Cli, BinaryFormatRoundTrips) {
    const fs::path a = scratch("bin_a"), b = scratch("bin_b");
    ASSERT_EQ(cli(std::string("simulate ") + small + " --out " + a.string()), 0);
    ASSERT_EQ(cli(std::string("simulate ") + small + " --format binary --out " + b.string()), 0);
    const io::CsvTable t = io::read_csv(a / "u_e1_r2.csv").table;
    const PathH p = io::path_from_binary(io::read_file(b / "u_e1_r2.bin"));
    ASSERT_EQ(t.rows.size(), std::size_t(p.n_nodes() * p.basis().n_modes));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        EXPECT_EQ(t.rows[r][2], p.data()(int(t.rows[r][1]) - 1, int(r) / p.basis().n_modes));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, ExitCodes) {
    const fs::path d = scratch("codes");
    EXPECT_EQ(cli("simulate --set system.sigma=abc --out " + d.string()), exit_config);
    EXPECT_EQ(cli("simulate --set system.epsilon=-1 --out " + d.string()), exit_config);
    EXPECT_EQ(cli("simulate --set system.q=leading:99 --out " + d.string()), exit_config);
    EXPECT_EQ(cli("simulate --format xml --out " + d.string()), exit_config);
    EXPECT_EQ(cli("no-such-command"), exit_config);
    fs::remove_all(d);

    EXPECT_EQ(cli("ssm-compare --set ssm.lambda_prime=1000 --set ssm.steady_T=1 --set ssm.variance_T=51 --out " +
                  d.string()),
              exit_blowup);
    EXPECT_EQ(io::read_manifest(d).status, "partial");
    EXPECT_TRUE(io::verify_manifest(d).empty());
    fs::remove_all(d);

    EXPECT_EQ(cli("ldp-probe --set system.n_modes=4 --set mc.n_replicas=3 --set system.epsilons=0.2 "
                  "--set grid.T=0.2 --set probe.delta=1e-6 --out " +
                  d.string()),
              exit_underflow);
    EXPECT_EQ(io::read_manifest(d).status, "partial");
    fs::remove_all(d);
}

TEST(Cli, EveryKindWritesVerifiedManifest) {
    const fs::path d = scratch("kinds");
    const std::string common = std::string(small) +
                               " --set instanton.max_iters=50 --set system.lambda=2"
                               " --set ssm.steady_T=5 --set ssm.variance_T=60 --set ssm.variance_replicas=1";
    for (const auto& [kind, name] : experiment_kinds()) {
        fs::remove_all(d);
        const int rc = cli(std::string(name) + " " + common + " --out " + d.string());
        EXPECT_TRUE(rc == 0 || (kind == ExperimentKind::ldp_probe && rc == exit_underflow)) << name << " rc " << rc;
        const io::Manifest m = io::read_manifest(d);
        EXPECT_EQ(m.kind, name);
        EXPECT_TRUE(io::verify_manifest(d).empty()) << name;
        EXPECT_TRUE(fs::exists(d / "summary.json")) << name;
        EXPECT_EQ(m.config_hash, io::sha256_file(d / "config.ini")) << name;
    }
    fs::remove_all(d);
}

TEST(Experiments, ZeroNoiseFromZeroStaysZero) {
    io::Config c;
    c.set("system", "sigma", "0");
    c.set("system", "n_modes", "5");
    c.set("initial", "u0", "zero");
    c.set("grid", "T", "0.5");
    c.set("mc", "n_replicas", "2");
    const fs::path d = scratch("zero");
    c.set("output", "dir", d.string());
    const RunResult r = run(ExperimentConfig::from(c, ExperimentKind::simulate));
    ASSERT_EQ(r.exit_code, 0);
    for (const char* f : {"u_e0_r0.csv", "v_e0_r1.csv"})
        for (const auto& row : io::read_csv(d / f).table.rows) EXPECT_EQ(row[2], 0.0);
    fs::remove_all(d);
}

TEST(Experiments, CanonicalConfigDropsRuntimeKeys) {
    io::Config a, b;
    a.set("mc", "threads", "1");
    a.set("output", "dir", "x");
    b.set("mc", "threads", "8");
    b.set("output", "dir", "y");
    const auto ca = ExperimentConfig::from(a, ExperimentKind::simulate).canonical();
    const auto cb = ExperimentConfig::from(b, ExperimentKind::simulate).canonical();
    EXPECT_EQ(ca, cb);
    EXPECT_FALSE(ca.has("mc", "threads"));
    EXPECT_EQ(ca.get_string("experiment", "kind"), "simulate");
    // epsilon and a one-element epsilons list are the same experiment
    a.set("system", "epsilon", "0.05");
    b.set("system", "epsilons", "0.05");
    EXPECT_EQ(ExperimentConfig::from(a, ExperimentKind::simulate).canonical().hash(),
              ExperimentConfig::from(b, ExperimentKind::simulate).canonical().hash());
}

TEST(Experiments, DefaultGridResolvesSmallestEpsilon) {
    io::Config c;
    c.set("system", "epsilons", "0.1,0.02");
    c.set("grid", "T", "1");
    const ExperimentConfig e = ExperimentConfig::from(c, ExperimentKind::simulate);
    EXPECT_LE(e.grid().dt(), 0.02 / 20 + 1e-15);
    EXPECT_EQ(e.grid().T, 1.0);
}

// ---------------------------------------------------------------- ldp probe helpers

TEST(Wilson, CoverageNearNominal) {
    std::mt19937_64 gen(11);
    for (double p : {0.02, 0.2, 0.5}) {
        const int n = 200, trials = 4000;
        std::binomial_distribution<int> bin(n, p);
        int covered = 0;
        for (int t = 0; t < trials; ++t) {
            const stats::Interval ci = stats::wilson_interval(bin(gen), n);
            covered += ci.lo <= p && p <= ci.hi;
        }
        const double rate = double(covered) / trials;
        // Wilson is close to nominal for these n; allow its known small undercoverage
        EXPECT_GT(rate, 0.92) << p;
        EXPECT_LT(rate, 0.985) << p;
    }
}

TEST(LdpProbe, RowStatistics) {
    const std::vector<double> d{0.05, 0.2, 0.09, 0.5};
    const LdpProbeRow r = probe_row(d, 0.1, 0.1, 0.3, 0.15);
    EXPECT_EQ(r.hits, 2u);
    EXPECT_DOUBLE_EQ(r.p_hat, 0.5);
    EXPECT_DOUBLE_EQ(r.eps_log_p, 0.1 * std::log(0.5));
    EXPECT_DOUBLE_EQ(r.eps_log_p_se, 0.1 * std::sqrt(0.5 / 2.0));
    EXPECT_DOUBLE_EQ(r.lower_bound, -0.45);
    EXPECT_TRUE(r.lower_bound_holds);
    const LdpProbeRow z = probe_row(d, 0.01, 0.1, 0.3, 0.15);
    EXPECT_FALSE(z.reachable);
    EXPECT_TRUE(std::isinf(z.eps_log_p));
    EXPECT_TRUE(std::isfinite(z.eps_log_p_hi));
    EXPECT_LT(z.eps_log_p_hi, 0.0);
}

TEST(LdpProbe, TrendRule) {
    auto row = [](double v, double se) {
        LdpProbeRow r;
        r.reachable = true;
        r.eps_log_p = v;
        r.eps_log_p_se = se;
        return r;
    };
    EXPECT_TRUE(probe_trend_decreasing({row(-0.1, 0.01), row(-0.2, 0.01), row(-0.25, 0.01)}));
    // small uptick inside 3 combined standard errors is tolerated
    EXPECT_TRUE(probe_trend_decreasing({row(-0.1, 0.01), row(-0.2, 0.01), row(-0.19, 0.01)}));
    EXPECT_FALSE(probe_trend_decreasing({row(-0.1, 0.01), row(-0.2, 0.01), row(-0.1, 0.01)}));
    EXPECT_FALSE(probe_trend_decreasing({row(-0.3, 0.01), row(-0.2, 0.01), row(-0.1, 0.01)}));
    EXPECT_FALSE(probe_trend_decreasing({row(-0.1, 0.01)}));
}

class ProbeFixture : public ::testing::Test {
protected:
    SystemSpec spec = SystemSpec::example(0.1, 0.5, 1.0, 6);
    TimeGrid grid = TimeGrid::with_max_step(0.5, 0.1 / 20);
    PathH avg = solve_averaged(project([](double x) { return std::sin(x); }, spec.basis), DriftEvaluator(spec), grid, 4);
};

TEST_F(ProbeFixture, ZeroActionTubeIsAlmostSure) {
    EXPECT_LT(action_explicit(avg, spec), 1e-5);
    const LdpProbeResult r = ldp_probe(avg, 0.0, 1.0, 0.0, {0.1}, 200, spec, 3);
    EXPECT_EQ(r.rows[0].hits, 200u);
    EXPECT_EQ(r.rows[0].eps_log_p, 0.0);
    EXPECT_TRUE(r.all_lower_bounds_hold);
}

TEST_F(ProbeFixture, HitsMonotoneInDelta) {
    const double c = calibrate_perturbation(avg, spec, 0.2);
    const PathH phi = perturbed_path(avg, c);
    EXPECT_NEAR(action_explicit(phi, spec), 0.2, 1e-9);
    const std::vector<double> dist = tube_distances(phi, spec, 300, 5, 0);
    std::size_t prev = 0;
    for (double delta : {0.02, 0.05, 0.1, 0.2, 0.4, 1.0}) {
        const std::size_t h = probe_row(dist, delta, 0.1, 0.2, 0.1).hits;
        EXPECT_GE(h, prev) << delta;
        prev = h;
    }
    EXPECT_EQ(prev, 300u);
}

TEST_F(ProbeFixture, DeterministicAndThreadInvariant) {
    const PathH phi = perturbed_path(avg, 0.05);
    EXPECT_EQ(tube_distances(phi, spec, 40, 9, 1, 1), tube_distances(phi, spec, 40, 9, 1, 4));
    EXPECT_NE(tube_distances(phi, spec, 40, 9, 1, 1), tube_distances(phi, spec, 40, 9, 2, 1));
}

TEST_F(ProbeFixture, RejectsUnresolvedEpsilonAndTinyEpsilon) {
    EXPECT_THROW(ldp_probe(avg, 0.0, 0.1, 0.0, {0.05}, 10, spec, 1), std::invalid_argument);
    EXPECT_THROW(ldp_probe(avg, 0.0, 0.1, 0.0, {0.01}, 10, spec, 1), std::invalid_argument);
    EXPECT_THROW(ldp_probe(avg, infinite_action, 0.1, 0.0, {0.1}, 10, spec, 1), std::invalid_argument);
}
