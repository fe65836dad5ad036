#include "sfldp.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    std::optional<std::string> format;
    std::vector<std::string> overrides;  // section.key=value
};

sfldp::io::Config load_config(const GlobalOptions& g, std::string& source_text) {
    sfldp::io::Config c;
    if (!g.config_path.empty()) {
        try {
            source_text = sfldp::io::read_file(g.config_path);
        } catch (const std::exception& e) {
            throw sfldp::ConfigError("--config", e.what());
        }
        c = sfldp::io::Config::parse(source_text);
    }
    for (const std::string& o : g.overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw sfldp::ConfigError("--set", "expected section.key=value, got '" + o + "'");
        c.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
    }
    if (g.seed) c.set("mc", "seed", std::to_string(*g.seed));
    if (g.out) c.set("output", "dir", *g.out);
    if (g.threads) c.set("mc", "threads", std::to_string(*g.threads));
    if (g.format) c.set("output", "format", *g.format);
    return c;
}

int run_kind(sfldp::ExperimentKind kind, const GlobalOptions& g) {
    try {
        std::string source;
        const sfldp::io::Config c = load_config(g, source);
        const sfldp::ExperimentConfig cfg = sfldp::ExperimentConfig::from(c, kind);
        const sfldp::RunResult r = sfldp::run(cfg, source);
        if (r.exit_code != sfldp::exit_ok) std::cerr << "sfldp: " << r.message << "\n";
        std::cout << r.dir.string() << "\n";
        return r.exit_code;
    } catch (const sfldp::ConfigError& e) {
        std::cerr << "sfldp: config error: " << e.what() << "\n";
        return sfldp::exit_config;
    } catch (const sfldp::BlowUpError& e) {
        std::cerr << "sfldp: blow-up: " << e.what() << "\n";
        return sfldp::exit_blowup;
    } catch (const sfldp::UnderflowError& e) {
        std::cerr << "sfldp: underflow: " << e.what() << "\n";
        return sfldp::exit_underflow;
    } catch (const std::invalid_argument& e) {
        std::cerr << "sfldp: invalid parameter: " << e.what() << "\n";
        return sfldp::exit_config;
    } catch (const std::exception& e) {
        std::cerr << "sfldp: error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slow-fast stochastic reaction-diffusion experiments"};
    app.set_version_flag("--version", std::string(sfldp::io::version));
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--config", g.config_path, "INI configuration file")->envname("SFLDP_CONFIG");
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads (does not change results)");
    app.add_option("--format", g.format, "Path output format")->check(CLI::IsMember({"csv", "binary"}));
    app.add_option("--set", g.overrides, "Override a config value, section.key=value");
    app.fallthrough();

    std::optional<sfldp::ExperimentKind> chosen;
    for (const auto& [kind, name] : sfldp::experiment_kinds()) {
        auto* sub = app.add_subcommand(name);
        sub->callback([&chosen, k = kind] { chosen = k; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : sfldp::exit_config;
    }
    return run_kind(*chosen, g);
}
