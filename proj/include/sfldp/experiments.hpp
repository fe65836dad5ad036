#pragma once

#include "sfldp/action.hpp"
#include "sfldp/averaging.hpp"
#include "sfldp/deviation.hpp"
#include "sfldp/errors.hpp"
#include "sfldp/io.hpp"
#include "sfldp/parallel.hpp"
#include "sfldp/slowfast.hpp"
#include "sfldp/stats.hpp"
#include "sfldp/superslow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace sfldp {

// ---------------------------------------------------------------- ldp probe

struct LdpProbeRow {
    double epsilon = 0.0;
    std::size_t hits = 0;
    std::size_t n = 0;
    double p_hat = 0.0;
    stats::Interval p_ci;
    double eps_log_p = 0.0;     // -inf when there are no hits
    double eps_log_p_se = 0.0;  // delta method, eps sqrt((1 - p) / (n p))
    double eps_log_p_hi = 0.0;  // from the upper Wilson bound, always finite
    double lower_bound = 0.0;   // -(I + gamma)
    double upper_ref = 0.0;     // -(I - gamma)
    bool reachable = false;     // at least one hit
    bool lower_bound_holds = false;
};

struct LdpProbeResult {
    double action = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    std::vector<LdpProbeRow> rows;
    bool all_lower_bounds_hold = false;
    bool decreasing = false;
};

/**
 * Checks the bounded-eps trend: going to smaller eps, no step increases
 * eps log P by more than 3 combined standard errors, and the last value is
 * below the first.
 */
inline bool probe_trend_decreasing(const std::vector<LdpProbeRow>& rows) {
    if (rows.size() < 2) return false;
    for (const auto& r : rows)
        if (!r.reachable) return false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double se = std::hypot(rows[i].eps_log_p_se, rows[i - 1].eps_log_p_se);
        if (rows[i].eps_log_p - rows[i - 1].eps_log_p > 3.0 * se) return false;
    }
    return rows.back().eps_log_p < rows.front().eps_log_p;
}

/**
 * Sup-in-time distance max_k ||u^eps(t_k) - phi(t_k)|| for each replica of the
 * full system, on phi's grid. Replica r of sweep index e uses RngStream(seed, (e << 32) | r).
 */
inline std::vector<double> tube_distances(const PathH& phi, const SystemSpec& spec, int n_replicas, std::uint64_t seed,
                                          std::uint64_t sweep_index, int threads = 1) {
    const SpectralField u0 = phi.at(0);
    const SpectralField v0 = apply_resolvent(u0);
    std::vector<double> d(n_replicas, 0.0);
    parallel_for(n_replicas, threads, [&](int r) {
        RngStream rng(seed, (sweep_index << 32) | std::uint64_t(r));
        double m = 0.0;
        try {
            simulate(u0, v0, spec, phi.grid(), rng, [&](int k, const Eigen::VectorXd& u, const Eigen::VectorXd&) {
                m = std::max(m, (u - phi.node(k)).norm());
            });
        } catch (const BlowUpError&) {
            m = std::numeric_limits<double>::infinity();
        }
        d[r] = m;
    });
    return d;
}

inline LdpProbeRow probe_row(const std::vector<double>& dist, double delta, double eps, double action, double gamma) {
    LdpProbeRow row;
    row.epsilon = eps;
    row.n = dist.size();
    row.hits = static_cast<std::size_t>(std::count_if(dist.begin(), dist.end(), [&](double x) { return x <= delta; }));
    row.p_hat = row.n ? double(row.hits) / row.n : 0.0;
    row.p_ci = stats::wilson_interval(row.hits, row.n);
    row.reachable = row.hits > 0;
    row.eps_log_p = row.reachable ? eps * std::log(row.p_hat) : -std::numeric_limits<double>::infinity();
    row.eps_log_p_se = row.reachable ? eps * std::sqrt((1.0 - row.p_hat) / (row.n * row.p_hat)) : 0.0;
    row.eps_log_p_hi = eps * std::log(std::max(row.p_ci.hi, 1e-300));
    row.lower_bound = -(action + gamma);
    row.upper_ref = -(action - gamma);
    row.lower_bound_holds = row.reachable && row.eps_log_p >= row.lower_bound;
    return row;
}

/**
 * @brief Monte-Carlo estimate of P{rho_{0T}(u^eps, phi) <= delta} across eps.
 *
 * phi carries the grid used for every eps; it must resolve the smallest eps
 * (step <= eps/20). `action` is I(phi) from the action module.
 */
inline LdpProbeResult ldp_probe(const PathH& phi, double action, double delta, double gamma,
                                const std::vector<double>& epsilons, int n_replicas, const SystemSpec& base,
                                std::uint64_t seed, int threads = 1, double min_epsilon = 0.02) {
    if (!(delta > 0.0)) throw std::invalid_argument("ldp_probe: delta must be positive");
    if (!std::isfinite(action)) throw std::invalid_argument("ldp_probe: action must be finite");
    if (n_replicas < 1) throw std::invalid_argument("ldp_probe: need replicas");
    for (double e : epsilons) {
        if (e < min_epsilon) throw std::invalid_argument("ldp_probe: epsilon below the plain Monte-Carlo floor");
        if (phi.grid().dt() > e / 20.0 * (1 + 1e-9)) throw std::invalid_argument("ldp_probe: grid too coarse for epsilon");
    }
    LdpProbeResult res;
    res.action = action;
    res.delta = delta;
    res.gamma = gamma;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        SystemSpec spec = base;
        spec.epsilon = epsilons[e];
        const std::vector<double> dist = tube_distances(phi, spec, n_replicas, seed, e, threads);
        res.rows.push_back(probe_row(dist, delta, epsilons[e], action, gamma));
    }
    res.all_lower_bounds_hold =
        std::all_of(res.rows.begin(), res.rows.end(), [](const LdpProbeRow& r) { return r.lower_bound_holds; });
    res.decreasing = probe_trend_decreasing(res.rows);
    return res;
}

/// phi(t) = u_avg(t) + c (t / T) e_mode on the given grid.
inline PathH perturbed_path(const PathH& u_avg, double c, int mode = 1) {
    PathH p = u_avg;
    const TimeGrid& g = u_avg.grid();
    for (int k = 0; k < g.n_nodes(); ++k) p.data()(mode - 1, k) += c * g.time(k) / g.T;
    return p;
}

/// Skeleton path driven by the constant control h = c e_mode from u_avg(0).
inline PathH controlled_path(const PathH& u_avg, double c, const SystemSpec& spec, int mode = 1) {
    ControlPath h(u_avg.grid(), u_avg.basis());
    h.data().row(mode - 1).setConstant(c);
    return skeleton_solve(h, u_avg.at(0), CovOperator::analytic(spec), DriftEvaluator(spec));
}

enum class ProbeShape { linear, control };

inline PathH probe_path(ProbeShape shape, const PathH& u_avg, double c, const SystemSpec& spec, int mode = 1) {
    return shape == ProbeShape::linear ? perturbed_path(u_avg, c, mode) : controlled_path(u_avg, c, spec, mode);
}

/// Amplitude c with action_explicit(probe_path(c)) = target, by bisection on [0, c_max].
inline double calibrate_perturbation(const PathH& u_avg, const SystemSpec& spec, double target, int mode = 1,
                                     ProbeShape shape = ProbeShape::linear, double c_max = 10.0) {
    auto f = [&](double c) { return action_explicit(probe_path(shape, u_avg, c, spec, mode), spec) - target; };
    const double top = f(c_max);
    if (!std::isfinite(top) || top < 0.0)
        throw std::invalid_argument("calibrate_perturbation: target action out of range for this path family");
    double lo = 0.0, hi = c_max;
    for (int it = 0; it < 100 && hi - lo > 1e-12 * c_max; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------- configuration

enum class ExperimentKind { simulate, average_rate, deviation, action_eval, instanton, ssm_compare, ldp_probe };

inline const std::array<std::pair<ExperimentKind, const char*>, 7>& experiment_kinds() {
    static const std::array<std::pair<ExperimentKind, const char*>, 7> k{{{ExperimentKind::simulate, "simulate"},
                                                                          {ExperimentKind::average_rate, "average-rate"},
                                                                          {ExperimentKind::deviation, "deviation"},
                                                                          {ExperimentKind::action_eval, "action-eval"},
                                                                          {ExperimentKind::instanton, "instanton"},
                                                                          {ExperimentKind::ssm_compare, "ssm-compare"},
                                                                          {ExperimentKind::ldp_probe, "ldp-probe"}}};
    return k;
}

inline std::string to_string(ExperimentKind k) {
    for (const auto& [kind, name] : experiment_kinds())
        if (kind == k) return name;
    return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
    for (const auto& [kind, name] : experiment_kinds())
        if (s == name) return kind;
    throw ConfigError("experiment.kind", "unknown experiment '" + s + "'");
}

/**
 * @brief Parsed experiment configuration.
 *
 * Sections: experiment, system, initial, grid, mc, output, plus one section per
 * kind (deviation, action, instanton, ssm, probe). Runtime-only keys
 * (mc.threads, output.dir) are excluded from the canonical text and its hash,
 * so they never change output bytes.
 */
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::simulate;
    io::Config raw;

    std::vector<double> epsilons{0.1};
    double sigma = 1.0;
    double lambda = 1.0;
    int n_modes = 32;
    double length = std::numbers::pi;
    std::string q = "decaying";
    std::string u0 = "sin";
    double T = 1.0;
    int n_steps = 0;  // 0: derived from the smallest eps (step eps/20)
    int n_replicas = 1;
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = "out";
    std::string format = "csv";

    static ExperimentConfig from(const io::Config& c, std::optional<ExperimentKind> kind = {}) {
        ExperimentConfig e;
        e.raw = c;
        if (c.has("experiment", "kind")) {
            const ExperimentKind k = parse_kind(c.get_string("experiment", "kind"));
            if (kind && *kind != k) throw ConfigError("experiment.kind", "does not match the requested subcommand");
            e.kind = k;
        } else if (kind) {
            e.kind = *kind;
        } else {
            throw ConfigError("experiment.kind", "missing");
        }
        if (c.has("system", "epsilons"))
            e.epsilons = c.get_list("system", "epsilons");
        else if (c.has("system", "epsilon"))
            e.epsilons = {c.get_double("system", "epsilon")};
        e.sigma = c.get_double("system", "sigma", e.sigma);
        e.lambda = c.get_double("system", "lambda", e.lambda);
        e.n_modes = static_cast<int>(c.get_int("system", "n_modes", e.n_modes));
        e.length = c.get_double("system", "length", e.length);
        e.q = c.get_string("system", "q", e.q);
        e.u0 = c.get_string("initial", "u0", e.u0);
        e.T = c.get_double("grid", "T", e.T);
        e.n_steps = static_cast<int>(c.get_int("grid", "n_steps", e.n_steps));
        e.n_replicas = static_cast<int>(c.get_int("mc", "n_replicas", e.n_replicas));
        e.seed = c.get_u64("mc", "seed", e.seed);
        e.threads = static_cast<int>(c.get_int("mc", "threads", e.threads));
        e.out_dir = c.get_string("output", "dir", e.out_dir);
        e.format = c.get_string("output", "format", e.format);
        e.validate();
        return e;
    }

    void validate() const {
        for (double x : epsilons)
            if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("system.epsilon", "must be positive");
        if (!std::isfinite(sigma)) throw ConfigError("system.sigma", "must be finite");
        if (!std::isfinite(lambda)) throw ConfigError("system.lambda", "must be finite");
        if (n_modes < 1 || n_modes > 4096) throw ConfigError("system.n_modes", "must be in [1, 4096]");
        if (!(length > 0.0)) throw ConfigError("system.length", "must be positive");
        if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("grid.T", "must be positive");
        if (n_steps < 0) throw ConfigError("grid.n_steps", "must be >= 0");
        if (n_replicas < 1) throw ConfigError("mc.n_replicas", "must be >= 1");
        if (threads < 1) throw ConfigError("mc.threads", "must be >= 1");
        if (format != "csv" && format != "binary") throw ConfigError("output.format", "must be csv or binary");
        (void)qspec();
    }

    QSpec qspec() const {
        if (q == "decaying") return QSpec::decaying(n_modes);
        if (q == "ones") return QSpec::constant(n_modes, 1.0);
        if (q.rfind("leading:", 0) == 0) {
            try {
                const int k = std::stoi(q.substr(8));
                if (k < 0 || k > n_modes) throw std::out_of_range(q);
                return QSpec::leading_modes(n_modes, k);
            } catch (const std::exception&) {
            }
        }
        throw ConfigError("system.q", "expected decaying, ones or leading:K");
    }

    SystemSpec system(double eps) const {
        SystemSpec s = SystemSpec::example(eps, sigma, lambda, n_modes);
        s.basis.length = length;
        s.q = qspec();
        return s;
    }

    SystemSpec system() const { return system(epsilons.front()); }

    /// sin | zero | mode:K:AMP (coefficient AMP on e_K)
    SpectralField initial(const BasisSpec& b) const {
        if (u0 == "sin") return project([](double x) { return std::sin(x); }, b);
        if (u0 == "zero") return SpectralField(b);
        if (u0.rfind("mode:", 0) == 0) {
            const auto p = u0.find(':', 5);
            try {
                if (p == std::string::npos) throw std::invalid_argument(u0);
                const int k = std::stoi(u0.substr(5, p - 5));
                const double amp = std::stod(u0.substr(p + 1));
                return SpectralField::mode(b, k, amp);
            } catch (const std::exception&) {
            }
        }
        throw ConfigError("initial.u0", "expected sin, zero or mode:K:AMP");
    }

    TimeGrid grid() const {
        if (n_steps > 0) return TimeGrid{T, n_steps};
        return TimeGrid::with_max_step(T, *std::min_element(epsilons.begin(), epsilons.end()) / 20.0);
    }

    /// Effective configuration without runtime-only keys.
    io::Config canonical() const {
        io::Config c = raw;
        c.set("experiment", "kind", to_string(kind));
        c.set("system", "epsilons", io::format_list(epsilons));
        c.set("system", "sigma", sigma);
        c.set("system", "lambda", lambda);
        c.set("system", "n_modes", std::to_string(n_modes));
        c.set("system", "length", length);
        c.set("system", "q", q);
        c.set("initial", "u0", u0);
        c.set("grid", "T", T);
        c.set("grid", "n_steps", std::to_string(n_steps));
        c.set("mc", "n_replicas", std::to_string(n_replicas));
        c.set("mc", "seed", std::to_string(seed));
        c.set("output", "format", format);
        io::Config out;
        for (const auto& [sec, keys] : c.sections())
            for (const auto& [k, v] : keys) {
                if ((sec == "mc" && k == "threads") || (sec == "output" && k == "dir")) continue;
                if (sec == "system" && k == "epsilon") continue;
                out.set(sec, k, v);
            }
        return out;
    }
};

struct RunResult {
    int exit_code = 0;
    std::string message;
    io::fs::path dir;
};

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_blowup = 3;
inline constexpr int exit_underflow = 4;

namespace detail {

inline io::CsvTable amplitude_table(const AmplitudeTrajectory& tr) {
    io::CsvTable t{{"t", "a_sf", "a_ldp"}, {}};
    for (std::size_t k = 0; k < tr.t.size(); ++k) t.add({tr.t[k], tr.sf[k], tr.ldp[k]});
    return t;
}

inline void write_path(io::ArtifactWriter& w, const std::string& stem, const PathH& p, const std::string& format,
                       std::map<std::string, std::string> meta = {}) {
    if (format == "binary")
        w.write(stem + ".bin", io::path_to_binary(p));
    else
        w.csv(stem + ".csv", io::path_table(p), std::move(meta));
}

inline std::string fmt(double x) { return io::format_double(x); }

inline void run_simulate(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    const TimeGrid g = cfg.grid();
    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
        const SystemSpec s = cfg.system(cfg.epsilons[e]);
        const SpectralField u0 = cfg.initial(s.basis);
        std::vector<std::pair<PathH, PathH>> paths(cfg.n_replicas, {PathH(g, s.basis), PathH(g, s.basis)});
        parallel_for(cfg.n_replicas, cfg.threads, [&](int r) {
            RngStream rng(cfg.seed, (std::uint64_t(e) << 32) | std::uint64_t(r));
            paths[r] = simulate_path(u0, apply_resolvent(u0), s, g, rng);
        });
        for (int r = 0; r < cfg.n_replicas; ++r) {
            const std::string tag = "e" + std::to_string(e) + "_r" + std::to_string(r);
            write_path(w, "u_" + tag, paths[r].first, cfg.format, {{"epsilon", fmt(s.epsilon)}, {"field", "u"}});
            write_path(w, "v_" + tag, paths[r].second, cfg.format, {{"epsilon", fmt(s.epsilon)}, {"field", "v"}});
            summary.push_back({{"epsilon", s.epsilon}, {"replica", r}, {"sup_norm_u", paths[r].first.sup_norm()}});
        }
    }
    w.json("summary.json", {{"kind", "simulate"}, {"runs", summary}});
}

inline void run_average_rate(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    const SystemSpec s = cfg.system();
    AveragingRateConfig a;
    a.epsilons = cfg.epsilons;
    a.T = cfg.T;
    a.n_replicas = cfg.n_replicas;
    a.seed = cfg.seed;
    a.threads = cfg.threads;
    const AveragingTable t = averaging_error(s, cfg.initial(s.basis), a);
    io::CsvTable csv{{"epsilon", "mean_error", "stderr", "n_ok", "n_blowup"}, {}};
    for (const auto& r : t.rows) csv.add({r.epsilon, r.mean_error, r.stderr, double(r.n_ok), double(r.n_blowup)});
    w.csv("average_rate.csv", csv,
          {{"slope", fmt(t.fit.slope)}, {"intercept", fmt(t.fit.intercept)}, {"slope_stderr", fmt(t.fit.slope_stderr)}});
    w.json("summary.json",
           {{"kind", "average-rate"}, {"slope", t.fit.slope}, {"intercept", t.fit.intercept},
            {"slope_stderr", t.fit.slope_stderr}, {"reference_slope", 0.5}});
}

inline void run_deviation(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    const SystemSpec s = cfg.system();
    const SpectralField u0 = cfg.initial(s.basis);
    const int n_out = static_cast<int>(std::min<long long>(cfg.raw.get_int("deviation", "modes", 2), s.basis.n_modes));
    const std::string source = cfg.raw.get_string("deviation", "b_source", "analytic");
    const TerminalDeviation td = terminal_deviation_samples(s, u0, cfg.T, cfg.n_replicas, cfg.seed, cfg.threads);
    const DriftEvaluator drift(s);
    CovOperator cov = CovOperator::analytic(s);
    if (source == "empirical") {
        RngStream rng(cfg.seed, 0xB0B0B0B0ULL);
        const double horizon = cfg.raw.get_double("deviation", "lag_horizon", 4.0);
        const int samples = static_cast<int>(cfg.raw.get_int("deviation", "n_samples", 200000));
        cov = B_empirical(u0, s, horizon, samples, rng);
    } else if (source != "analytic") {
        throw ConfigError("deviation.b_source", "expected analytic or empirical");
    }
    const Eigen::MatrixXd lim = DeviationLimit(td.u_avg, cov, drift).terminal_samples(cfg.n_replicas, cfg.seed ^ 0x5A5AULL);
    io::CsvTable csv{{"replica"}, {}};
    for (int i = 1; i <= n_out; ++i) csv.columns.push_back("z_eps_" + std::to_string(i));
    for (int i = 1; i <= n_out; ++i) csv.columns.push_back("z_lim_" + std::to_string(i));
    for (int r = 0; r < cfg.n_replicas; ++r) {
        std::vector<double> row{double(r)};
        for (int i = 0; i < n_out; ++i) row.push_back(td.z(i, r));
        for (int i = 0; i < n_out; ++i) row.push_back(lim(i, r));
        csv.add(std::move(row));
    }
    nlohmann::ordered_json modes = nlohmann::ordered_json::array();
    for (int i = 0; i < n_out; ++i) {
        std::vector<double> a(td.z.cols()), b(lim.cols());
        for (Eigen::Index r = 0; r < td.z.cols(); ++r) a[r] = td.z(i, r);
        for (Eigen::Index r = 0; r < lim.cols(); ++r) b[r] = lim(i, r);
        const stats::MeanSE ma = stats::mean_se(a), mb = stats::mean_se(b);
        modes.push_back({{"mode", i + 1}, {"mean_eps", ma.mean}, {"var_eps", ma.variance}, {"mean_lim", mb.mean},
                         {"var_lim", mb.variance}, {"ks", stats::ks_two_sample(a, b)}});
    }
    w.csv("deviation.csv", csv, {{"epsilon", fmt(s.epsilon)}, {"T", fmt(cfg.T)}, {"b_source", source}});
    w.json("summary.json", {{"kind", "deviation"}, {"epsilon", s.epsilon}, {"b_source", source},
                            {"b_clipped", cov.clipped()}, {"modes", modes}});
}

inline void run_action_eval(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    const SystemSpec s = cfg.system();
    const DriftEvaluator drift(s);
    const CovOperator cov = CovOperator::analytic(s);
    const SpectralField u0 = cfg.initial(s.basis);
    const double c = cfg.raw.get_double("action", "perturbation", 0.1);
    const int mode = static_cast<int>(cfg.raw.get_int("action", "mode", 1));
    if (mode < 1 || mode > s.basis.n_modes) throw ConfigError("action.mode", "out of range");
    io::CsvTable csv{{"n_steps", "dt", "action_explicit", "action_infimum", "action_averaged"}, {}};
    const int base = cfg.n_steps > 0 ? cfg.n_steps : 100;
    double finest = 0.0;
    for (int f = 1; f <= 8; f *= 2) {
        const TimeGrid g{cfg.T, base * f};
        const PathH avg = solve_averaged(u0, drift, g, 20);
        const PathH phi = perturbed_path(avg, c, mode);
        finest = action_explicit(phi, s);
        csv.add({double(g.n_steps), g.dt(), finest, action_infimum(phi, cov, drift), action_explicit(avg, s)});
    }
    w.csv("action.csv", csv, {{"perturbation", fmt(c)}, {"mode", std::to_string(mode)}});
    w.json("summary.json", {{"kind", "action-eval"}, {"perturbation", c}, {"mode", mode}, {"action", finest}});
}

inline SpectralField endpoint(const std::string& spec, const ExperimentConfig& cfg, const SystemSpec& s,
                              const DriftEvaluator& drift, const std::string& field) {
    if (spec == "fixed:+" || spec == "fixed:-") {
        // Newton on A u + fbar(u) = 0 from the sin x direction
        Eigen::VectorXd u = SpectralField::mode(s.basis, 1, s.basis.sine_scale()).coeffs();
        const Eigen::VectorXd lam = s.basis.eigenvalues();
        for (int it = 0; it < 50; ++it) {
            Eigen::MatrixXd J = drift.jacobian(u);
            J.diagonal() -= lam;
            u -= J.partialPivLu().solve(drift(u) - lam.cwiseProduct(u));
        }
        if ((drift(u) - lam.cwiseProduct(u)).norm() > 1e-8 || u.norm() < 1e-6)
            throw ConfigError(field, "no nontrivial equilibrium at this lambda");
        return SpectralField(s.basis, spec == "fixed:+" ? u : Eigen::VectorXd(-u));
    }
    ExperimentConfig tmp = cfg;
    tmp.u0 = spec;
    try {
        return tmp.initial(s.basis);
    } catch (const ConfigError&) {
        throw ConfigError(field, "expected fixed:+, fixed:-, sin, zero or mode:K:AMP");
    }
}

inline void run_instanton(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    const SystemSpec s = cfg.system();
    const DriftEvaluator drift(s);
    const CovOperator cov = CovOperator::analytic(s);
    const SpectralField a = endpoint(cfg.raw.get_string("instanton", "start", "fixed:-"), cfg, s, drift, "instanton.start");
    const SpectralField b = endpoint(cfg.raw.get_string("instanton", "end", "fixed:+"), cfg, s, drift, "instanton.end");
    MinimizeOptions opt;
    opt.max_iters = static_cast<int>(cfg.raw.get_int("instanton", "max_iters", opt.max_iters));
    const int n = cfg.n_steps > 0 ? cfg.n_steps : 100;
    const InstantonResult r = minimize_action(a, b, cfg.T, n, cov, drift, opt);
    write_path(w, "instanton_path", r.path, cfg.format, {{"action", fmt(r.action)}});
    write_path(w, "instanton_control", PathH(r.control.grid(), r.control.basis(), r.control.data()), cfg.format);
    w.json("summary.json", {{"kind", "instanton"}, {"action", r.action}, {"iterations", r.iterations},
                            {"converged", r.converged}, {"grad_norm", r.grad_norm}, {"T", cfg.T}, {"n_steps", n}});
    if (!r.converged) w.note("minimizer stopped before convergence; best iterate written");
}

inline void run_ssm_compare(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    SsmCompareConfig c;
    c.params.lambda_prime = cfg.raw.get_double("ssm", "lambda_prime", c.params.lambda_prime);
    c.params.epsilon = cfg.raw.get_double("ssm", "epsilon", c.params.epsilon);
    c.params.sigma = cfg.raw.get_double("ssm", "sigma", c.params.sigma);
    c.n_modes = static_cast<int>(cfg.raw.get_int("ssm", "n_modes", c.n_modes));
    c.steady_T = cfg.raw.get_double("ssm", "steady_T", c.steady_T);
    c.variance_T = cfg.raw.get_double("ssm", "variance_T", c.variance_T);
    c.variance_replicas = static_cast<int>(cfg.raw.get_int("ssm", "variance_replicas", c.variance_replicas));
    c.seed = cfg.seed;
    const double a0 = cfg.raw.get_double("ssm", "a0", 0.1);
    const double T = cfg.raw.get_double("ssm", "T", 50.0);
    const SsmCompareReport rep = ssm_vs_full(c);

    io::CsvTable tr{{"t", "mode2_amplitude"}, {}};
    for (std::size_t k = 0; k < rep.transient_t.size(); ++k) tr.add({rep.transient_t[k], rep.transient_mode2[k]});
    w.csv("ssm_transient.csv", tr, {{"decay_rate", fmt(rep.decay_rate)}});

    RngStream rng(cfg.seed, 7);
    const AmplitudeTrajectory amp = simulate_amplitude_pair(c.params, a0, T, c.params.epsilon / 10.0, rng, 100);
    w.csv("amplitude.csv", amplitude_table(amp));

    io::CsvTable dd{{"a", "drift_difference", "bound"}, {}};
    const double lp = c.params.lambda_prime, eps = c.params.epsilon;
    for (int k = 0; k <= 200; ++k) {
        const double a = -1.0 + k / 100.0;
        dd.add({a, drift_difference(a, lp, eps), eps * (std::abs(lp) / 4 + 3.0 / 64)});
    }
    w.csv("drift_difference.csv", dd, {{"lambda_prime", fmt(lp)}, {"epsilon", fmt(eps)}});
    w.json("summary.json",
           {{"kind", "ssm-compare"}, {"decay_rate", rep.decay_rate}, {"decay_rate_stderr", rep.decay_rate_stderr},
            {"predicted_decay_rate", rep.predicted_decay_rate}, {"steady_full", rep.steady_full},
            {"fixed_point_sf", rep.fixed_point_sf}, {"fixed_point_ldp", rep.fixed_point_ldp},
            {"variance_full", rep.variance_full}, {"variance_full_se", rep.variance_full_se},
            {"variance_sf", rep.variance_sf}, {"variance_sf_se", rep.variance_sf_se},
            {"variance_consistent", rep.variance_consistent}});
}

inline int run_ldp_probe(const ExperimentConfig& cfg, io::ArtifactWriter& w) {
    const SystemSpec s = cfg.system();
    const SpectralField u0 = cfg.initial(s.basis);
    const TimeGrid g = cfg.grid();
    const PathH avg = solve_averaged(u0, DriftEvaluator(s), g, 4);
    const int mode = static_cast<int>(cfg.raw.get_int("probe", "mode", 1));
    const double target = cfg.raw.get_double("probe", "target_action", 0.3);
    const double gamma_factor = cfg.raw.get_double("probe", "gamma_factor", 0.5);
    const std::string shape_name = cfg.raw.get_string("probe", "shape", "linear");
    if (shape_name != "linear" && shape_name != "control") throw ConfigError("probe.shape", "expected linear or control");
    const ProbeShape shape = shape_name == "linear" ? ProbeShape::linear : ProbeShape::control;
    if (mode < 1 || mode > s.basis.n_modes) throw ConfigError("probe.mode", "out of range");
    const double c = target > 0.0 ? calibrate_perturbation(avg, s, target, mode, shape) : 0.0;
    const PathH phi = probe_path(shape, avg, c, s, mode);
    // delta_fraction sets the tube radius relative to the perturbation amplitude
    const double delta = cfg.raw.has("probe", "delta_fraction") ? cfg.raw.get_double("probe", "delta_fraction") * c
                                                                  : cfg.raw.get_double("probe", "delta", 0.1);
    const double I = action_explicit(phi, s);
    const LdpProbeResult r =
        ldp_probe(phi, I, delta, gamma_factor * I, cfg.epsilons, cfg.n_replicas, s, cfg.seed, cfg.threads);
    io::CsvTable csv{{"epsilon", "hits", "n", "p_hat", "p_lo", "p_hi", "eps_log_p", "eps_log_p_se", "eps_log_p_hi",
                      "lower_bound", "upper_ref", "reachable", "lower_bound_holds"},
                     {}};
    for (const auto& row : r.rows)
        csv.add({row.epsilon, double(row.hits), double(row.n), row.p_hat, row.p_ci.lo, row.p_ci.hi, row.eps_log_p,
                 row.eps_log_p_se, row.eps_log_p_hi, row.lower_bound, row.upper_ref, double(row.reachable),
                 double(row.lower_bound_holds)});
    w.csv("ldp_probe.csv", csv, {{"action", fmt(I)}, {"delta", fmt(delta)}, {"gamma", fmt(r.gamma)}});
    w.json("summary.json", {{"kind", "ldp-probe"}, {"action", I}, {"perturbation", c}, {"delta", delta},
                            {"gamma", r.gamma}, {"all_lower_bounds_hold", r.all_lower_bounds_hold},
                            {"decreasing", r.decreasing}});
    for (const auto& row : r.rows)
        if (!row.reachable) w.note("epsilon " + fmt(row.epsilon) + " out of Monte-Carlo reach; upper bound only");
    const bool none = std::none_of(r.rows.begin(), r.rows.end(), [](const LdpProbeRow& x) { return x.reachable; });
    return none ? exit_underflow : exit_ok;
}

}  // namespace detail

/**
 * Runs one experiment into cfg.out_dir: artifacts, the effective config, the
 * source config text when given, and manifest.json last. Blow-ups and
 * Monte-Carlo underflow still write a manifest, marked partial.
 */
inline RunResult run(const ExperimentConfig& cfg, const std::string& source_text = {}) {
    const io::Config canon = cfg.canonical();
    io::ArtifactWriter w(cfg.out_dir, to_string(cfg.kind), canon.hash(), cfg.seed);
    w.write("config.ini", canon.to_string());
    if (!source_text.empty()) w.write("config.source.ini", source_text);
    RunResult res{exit_ok, "ok", cfg.out_dir};
    try {
        switch (cfg.kind) {
            case ExperimentKind::simulate: detail::run_simulate(cfg, w); break;
            case ExperimentKind::average_rate: detail::run_average_rate(cfg, w); break;
            case ExperimentKind::deviation: detail::run_deviation(cfg, w); break;
            case ExperimentKind::action_eval: detail::run_action_eval(cfg, w); break;
            case ExperimentKind::instanton: detail::run_instanton(cfg, w); break;
            case ExperimentKind::ssm_compare: detail::run_ssm_compare(cfg, w); break;
            case ExperimentKind::ldp_probe:
                res.exit_code = detail::run_ldp_probe(cfg, w);
                if (res.exit_code == exit_underflow) {
                    w.mark_partial("zero hits at every epsilon");
                    res.message = "Monte-Carlo underflow: zero hits at every epsilon";
                }
                break;
        }
    } catch (const BlowUpError& e) {
        w.mark_partial(e.what());
        res = {exit_blowup, e.what(), cfg.out_dir};
    } catch (const ConfigError& e) {
        w.mark_partial(e.what());
        res = {exit_config, e.what(), cfg.out_dir};
    } catch (const std::invalid_argument& e) {
        w.mark_partial(e.what());
        res = {exit_config, e.what(), cfg.out_dir};
    }
    w.finish();
    return res;
}

}  // namespace sfldp
