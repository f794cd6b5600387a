// Command-line harness: smp --config run.ini [--output dir] [--seed n] [--threads n] [--verbose]
//                        smp --self-check

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "smp/config.hpp"
#include "smp/run.hpp"
#include "smp/selfcheck.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw smp::ConfigError("cannot read config file '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic maximum principle experiment harness"};
    std::string config_path, output_dir;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool verbose = false, self_check = false;
    auto* config_opt = app.add_option("-c,--config", config_path, "experiment config (INI)");
    auto* output_opt = app.add_option("-o,--output", output_dir, "output directory (overrides run.output)");
    auto* seed_opt = app.add_option("-s,--seed", seed, "seed (overrides run.seed)");
    app.add_option("-t,--threads", threads, "worker threads")->check(CLI::Range(1u, 1024u));
    app.add_flag("-v,--verbose", verbose, "print the report to stdout");
    app.add_flag("--self-check", self_check, "run the built-in smoke suite");
    CLI11_PARSE(app, argc, argv);

    if (self_check) {
        const int failures = smp::run_self_check(std::cout, threads);
        std::cout << (failures == 0 ? "self-check passed" : "self-check failed: " + std::to_string(failures)) << '\n';
        return failures == 0 ? smp::exit_pass : smp::exit_assertion;
    }
    if (!*config_opt) {
        std::cerr << "error: --config is required (or use --self-check)\n";
        return smp::exit_config;
    }

    smp::ExperimentConfig cfg;
    try {
        cfg = smp::parse_config(read_file(config_path));
    } catch (const smp::ConfigErrors& e) {
        for (const auto& m : e.errors()) std::cerr << "config error: " << m << '\n';
        if (*output_opt) {
            smp::RunResult r;
            r.exit_code = r.manifest.exit_code = smp::exit_config;
            r.manifest.error = e.what();
            smp::write_artifacts(output_dir, r);
        }
        return smp::exit_config;
    } catch (const smp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return smp::exit_config;
    }
    if (*seed_opt) cfg.seed = cfg.example1.seed = cfg.example2.seed = seed;
    if (*output_opt) cfg.output_dir = output_dir;

    auto result = smp::run(cfg, threads);
    try {
        smp::write_artifacts(std::filesystem::path(cfg.output_dir), result);
    } catch (const smp::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return smp::exit_config;
    }
    if (verbose) result.report.write(std::cout);
    for (const auto& c : result.report.checks)
        std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << (c.detail.empty() ? "" : " ; " + c.detail) << '\n';
    if (!result.manifest.error.empty()) std::cerr << "error: " << result.manifest.error << '\n';
    std::cout << "exit " << result.exit_code << " ; artifacts in " << cfg.output_dir << '\n';
    return result.exit_code;
}
