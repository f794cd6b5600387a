#pragma once

// Built-in smoke suite: every scenario at reduced size, plus injected faults
// and invalid configurations with their expected exit codes.

#include <ostream>
#include <string>
#include <vector>

#include "smp/config.hpp"
#include "smp/run.hpp"

namespace smp {

struct SelfCheckCase {
    std::string name;
    std::string config;
    int expected_exit;
};

inline std::vector<SelfCheckCase> self_check_cases() {
    const std::string small = "paths = 2000\nsteps = 200\nseed = 314159\n";
    auto run_block = [&](const std::string& scenario) { return "[run]\nscenario = " + scenario + "\n" + small; };
    return {
        {"example1", run_block("example1"), exit_pass},
        {"example1 zero policy", run_block("example1") + "[policy]\nopen_loop = 0, 0\n", exit_assertion},
        {"example2 scalar", run_block("example2") + "[example2]\nvariant = scalar\n", exit_pass},
        {"rates", run_block("rates"), exit_pass},
        {"rates p x2", run_block("rates") + "[faults]\np_scale = 2\n", exit_assertion},
        {"gateaux", run_block("gateaux"), exit_pass},
        {"gateaux nonlinear", run_block("gateaux") + "[example1]\nnonlinear_strength = 0.1\n", exit_pass},
        {"gateaux p x2", run_block("gateaux") + "[faults]\np_scale = 2\n", exit_assertion},
        {"pmp-check", run_block("pmp-check"), exit_pass},
        {"sufficiency", run_block("sufficiency"), exit_pass},
        {"sufficiency concave", run_block("sufficiency") + "[faults]\nconcave_cost = true\n", exit_assertion},
        {"isometry", run_block("isometry"), exit_pass},
        {"derivative-check", run_block("derivative-check"), exit_pass},
        {"derivative fault", run_block("derivative-check") + "[faults]\nwrong_derivative = drift_u\n", exit_assertion},
        {"steps = 0", "[run]\nscenario = example1\nsteps = 0\n", exit_config},
        {"ambiguous policy", run_block("example1") + "[policy]\nopen_loop = 0, 0\nfeedback = optimal\n", exit_config},
    };
}

/// Runs every case; prints one line each. Returns the number of mismatches.
inline int run_self_check(std::ostream& os, unsigned threads = default_threads()) {
    int failures = 0;
    for (const auto& c : self_check_cases()) {
        int code = exit_pass;
        std::string note;
        try {
            const auto cfg = parse_config(c.config);
            const auto r = run(cfg, threads);
            code = r.exit_code;
            note = r.manifest.error;
            for (const auto& ch : r.report.checks)
                if (!ch.passed) note += (note.empty() ? "" : "; ") + ch.name;
        } catch (const ConfigError& e) {
            code = exit_config;
            note = e.what();
        }
        const bool ok = code == c.expected_exit;
        if (!ok) ++failures;
        os << (ok ? "[PASS] " : "[FAIL] ") << c.name << " : exit " << code << " (expected " << c.expected_exit << ")";
        if (!note.empty()) os << " ; " << note;
        os << '\n';
    }
    return failures;
}

}  // namespace smp
