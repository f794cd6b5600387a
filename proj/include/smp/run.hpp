#pragma once

// Scenario dispatch, run manifest and artifact emission.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smp/config.hpp"
#include "smp/examples.hpp"
#include "smp/parallel.hpp"
#include "smp/pmp.hpp"
#include "smp/report.hpp"

namespace smp {

inline constexpr const char* tool_version = "1.0.0";

enum ExitCode : int { exit_pass = 0, exit_assertion = 1, exit_config = 2, exit_numerical = 3 };

struct RunManifest {
    std::string scenario;
    std::string config_hash;
    std::uint64_t seed = 0;
    double horizon = 0.0;
    std::size_t steps = 0;
    std::size_t paths = 0;
    std::string version = tool_version;
    unsigned threads = 1;
    double wall_seconds = 0.0;
    int exit_code = 0;
    std::string error;
    std::vector<std::string> files;

    void write(std::ostream& os) const {
        ReportSection m("manifest");
        m.set("scenario", scenario);
        m.set("config_hash", config_hash);
        m.set("seed", std::to_string(seed));
        m.set("grid.horizon", horizon);
        m.set("grid.steps", steps);
        m.set("paths", paths);
        m.set("tool_version", version);
        m.set("threads", static_cast<std::size_t>(threads));
        m.set("wall_seconds", wall_seconds);
        m.set("exit_code", exit_code);
        if (!error.empty()) m.set("error", error);
        auto& f = m.child("files");
        for (std::size_t i = 0; i < files.size(); ++i) f.set("file" + std::to_string(i), files[i]);
        m.write(os);
    }
};

struct RunResult {
    int exit_code = exit_pass;
    ScenarioReport report;
    RunManifest manifest;
};

namespace detail {

inline std::optional<ControlPolicy> example1_policy(const ExperimentConfig& cfg) {
    if (cfg.open_loop) {
        if (cfg.open_loop->size() == 1) return ControlPolicy::constant(cfg.open_loop->front());
        return ControlPolicy::open_loop(*cfg.open_loop);
    }
    if (cfg.feedback) {
        const ControlVec u = cfg.example1.optimal_control();
        return ControlPolicy::feedback([u](double, const StateVec&) { return u; });
    }
    return std::nullopt;
}

inline ScenarioReport scenario_rates(const ExperimentConfig& cfg) {
    ScenarioReport out("rates");
    const auto& c = cfg.example1;
    auto s = make_example1(c, example1_policy(cfg), AdjointMode::skip);
    const ControlVec v = s.u_star + c.probe_offset;
    const auto r = rate_experiments(s.problem, *s.candidate, c.probe_t0, v, c.eps_ladder, {c.p_scale});
    out.report.set("problem", s.problem.name);
    out.report.set("t0", c.probe_t0);
    out.report.set("v", vec_text(v));
    out.report.set("p_scale", c.p_scale);
    report_rates(out.report, r);
    std::ostringstream os;
    write_rates_csv(os, r);
    out.csv["rates.csv"] = os.str();
    out.check("sup_slope_at_least_1.5", r.slope_ok(), "slope " + format_number(r.slope));
    out.check("xi_decreasing_below_quarter", r.xi_ok(), "final/initial " + format_number(r.xi_ratio));
    return out;
}

inline ScenarioReport scenario_gateaux(const ExperimentConfig& cfg) {
    ScenarioReport out("gateaux");
    const auto& c = cfg.example1;
    auto s = make_example1(c, example1_policy(cfg), AdjointMode::skip);
    const ControlVec v = s.u_star + c.probe_offset;
    const auto g = gateaux_check(s.problem, *s.candidate, c.probe_t0, v, c.eps_ladder, {c.p_scale});
    out.report.set("problem", s.problem.name);
    out.report.set("t0", c.probe_t0);
    out.report.set("v", vec_text(v));
    out.report.set("p_scale", c.p_scale);
    report_gateaux(out.report, g);
    std::ostringstream os;
    os.precision(17);
    os << "eps,finite_difference,finite_difference_se,adjoint_side,adjoint_side_se,difference,difference_se\n";
    for (const auto& l : g.levels)
        os << l.eps << ',' << l.finite_difference.mean << ',' << l.finite_difference.se << ',' << g.adjoint_side.mean
           << ',' << g.adjoint_side.se << ',' << l.difference.mean << ',' << l.difference.se << '\n';
    out.csv["gateaux.csv"] = os.str();
    out.check("gateaux_identity", g.agrees,
              "|diff| " + format_number(std::abs(g.levels.back().difference.mean)) + ", tol " + format_number(g.tolerance));
    return out;
}

inline ScenarioReport scenario_pmp(const ExperimentConfig& cfg) {
    ScenarioReport out("pmp-check");
    const auto& c = cfg.example1;
    auto s = make_example1(c, example1_policy(cfg));
    const auto probes = probe_lattice(s.problem.control_set, c.probes_per_dim);
    const auto m = necessary_check(s.problem, *s.candidate, probes, sample_steps(s.grid, static_cast<std::size_t>(c.sample_times)),
                                   sample_paths(s.candidate->trajectories.paths(), static_cast<std::size_t>(c.sample_paths)));
    out.report.set("problem", s.problem.name);
    report_margins(out.report.child("necessary"), m);
    out.csv["margins.csv"] = margins_csv(m, s.grid);
    out.check("necessary_condition", m.passed(), "min gap " + format_number(m.min_gap));
    return out;
}

inline ScenarioReport scenario_sufficiency(const ExperimentConfig& cfg) {
    ScenarioReport out("sufficiency");
    const auto& c = cfg.example1;
    auto s = make_example1(c, example1_policy(cfg));
    const auto probes = probe_lattice(s.problem.control_set, c.probes_per_dim);
    SufficiencyOptions opt;
    opt.pairs = static_cast<std::size_t>(c.convexity_pairs);
    opt.sample_times = static_cast<std::size_t>(c.sample_times);
    opt.sample_paths = static_cast<std::size_t>(c.sample_paths);
    opt.seed = c.seed ^ 0x9E3779B97F4A7C15ull;
    const auto r = sufficient_check(s.problem, *s.candidate, probes, opt);
    out.report.set("problem", s.problem.name);
    report_sufficiency(out.report.child("sufficiency"), r);
    out.csv["margins.csv"] = margins_csv(r.margins, s.grid);
    out.check("sufficient_conditions", r.passed(), r.applicable ? "" : r.reason);
    return out;
}

inline ScenarioReport scenario_isometry(const ExperimentConfig& cfg) {
    ScenarioReport out("isometry");
    const auto& c = cfg.example1;
    const auto driver = c.driver();
    const auto grid = c.grid();
    driver.validate_on(grid);
    const auto noise = sample_increments(driver, grid, static_cast<std::size_t>(c.paths), c.seed);
    const double a = cfg.phi_scale;
    const int d = c.state_dim;
    const auto rep = verify_isometry([a, d](std::size_t, double) -> Operator { return a * Operator::Identity(d, d); },
                                     driver, noise);
    // Closed form for Phi = a I: a^2 |beta|^2 int_0^T (alpha0 + alpha1 t) dt.
    const double closed = a * a * c.beta.squaredNorm() * (c.alpha0 * c.horizon + 0.5 * c.alpha1 * c.horizon * c.horizon);
    out.report.set("phi_scale", a);
    out.report.set("lhs", rep.lhs);
    out.report.set("rhs", rep.rhs);
    out.report.set("closed_form", closed);
    out.report.set("difference", rep.difference);
    std::ostringstream os;
    os.precision(17);
    os << "lhs,lhs_se,rhs,closed_form\n" << rep.lhs.mean << ',' << rep.lhs.se << ',' << rep.rhs << ',' << closed << '\n';
    out.csv["isometry.csv"] = os.str();
    out.check("isometry_within_3se", std::abs(rep.lhs.mean - closed) <= 3.0 * rep.lhs.se,
              "|lhs - closed| " + format_number(std::abs(rep.lhs.mean - closed)) + ", 3 SE " + format_number(3.0 * rep.lhs.se));
    return out;
}

inline ScenarioReport scenario_derivatives(const ExperimentConfig& cfg) {
    ScenarioReport out("derivative-check");
    Example1Config nl = cfg.example1;
    nl.nonlinear_strength = cfg.nonlinear_check;
    const std::vector<ControlProblem> problems{example1_problem(cfg.example1), example1_problem(nl),
                                               example2_problem(cfg.example2)};
    std::ostringstream os;
    os.precision(17);
    os << "problem,drift_x,drift_u,diffusion_x,running_x,running_u,terminal_x,passed\n";
    for (const auto& pr : problems) {
        const auto probes = random_probes(pr, 64, cfg.example1.horizon, cfg.seed, 2.0);
        const auto r = finite_diff_check(pr, probes);
        auto& sec = out.report.child(pr.name);
        sec.set("probes", probes.size());
        sec.set("drift_x", r.drift_x);
        sec.set("drift_u", r.drift_u);
        sec.set("diffusion_x", r.diffusion_x);
        sec.set("running_x", r.running_x);
        sec.set("running_u", r.running_u);
        sec.set("terminal_x", r.terminal_x);
        sec.set("tolerance", r.tolerance);
        sec.set("c1_drift_x", r.c1);
        sec.set("c2_diffusion_x", r.c2);
        sec.set("c3_drift_u", r.c3);
        for (std::size_t i = 0; i < r.faults.size(); ++i) sec.set("fault" + std::to_string(i), r.faults[i]);
        os << pr.name << ',' << r.drift_x << ',' << r.drift_u << ',' << r.diffusion_x << ',' << r.running_x << ','
           << r.running_u << ',' << r.terminal_x << ',' << (r.passed() ? 1 : 0) << '\n';
        out.check("derivatives_" + pr.name, r.passed(), "max rel error " + format_number(r.max_error()));
    }
    out.csv["derivatives.csv"] = os.str();
    return out;
}

inline ScenarioReport scenario_example2(const ExperimentConfig& cfg) {
    auto res = run_example2_full(cfg.example2);
    if (cfg.trajectory_paths > 0 && res.candidate) {
        std::ostringstream t, a;
        write_trajectory_csv(t, res.candidate->trajectories, static_cast<std::size_t>(cfg.trajectory_paths));
        write_adjoint_csv(a, res.candidate->adjoint, static_cast<std::size_t>(cfg.trajectory_paths));
        res.report.csv["trajectories.csv"] = t.str();
        res.report.csv["adjoint.csv"] = a.str();
    }
    return std::move(res.report);
}

inline ScenarioReport dispatch(const ExperimentConfig& cfg) {
    const auto& s = cfg.scenario;
    if (s == "example1") return run_example1(cfg.example1, example1_policy(cfg), static_cast<std::size_t>(cfg.trajectory_paths));
    if (s == "example2") return scenario_example2(cfg);
    if (s == "rates") return scenario_rates(cfg);
    if (s == "gateaux") return scenario_gateaux(cfg);
    if (s == "pmp-check") return scenario_pmp(cfg);
    if (s == "sufficiency") return scenario_sufficiency(cfg);
    if (s == "isometry") return scenario_isometry(cfg);
    if (s == "derivative-check") return scenario_derivatives(cfg);
    throw ConfigError("unknown scenario '" + s + "'");
}

}  // namespace detail

/// Runs one scenario in memory. Module errors are mapped to exit codes with scenario context.
inline RunResult run(const ExperimentConfig& cfg, unsigned threads = default_threads()) {
    const unsigned saved = default_threads();
    set_default_threads(threads);
    RunResult r;
    r.report = ScenarioReport(cfg.scenario);
    auto& m = r.manifest;
    m.scenario = cfg.scenario;
    m.config_hash = fnv1a_hex(cfg.text);
    const bool e2 = cfg.scenario == "example2";
    m.seed = e2 ? cfg.example2.seed : cfg.example1.seed;
    m.horizon = e2 ? cfg.example2.horizon : cfg.example1.horizon;
    m.steps = static_cast<std::size_t>(e2 ? cfg.example2.steps : cfg.example1.steps);
    m.paths = static_cast<std::size_t>(e2 ? cfg.example2.paths : cfg.example1.paths);
    m.threads = threads;
    const auto start = std::chrono::steady_clock::now();
    try {
        r.report = detail::dispatch(cfg);
        r.exit_code = r.report.passed() ? exit_pass : exit_assertion;
    } catch (const NumericalError& e) {
        r.exit_code = exit_numerical;
        m.error = "scenario " + cfg.scenario + ": " + e.what();
    } catch (const Error& e) {
        r.exit_code = exit_config;
        m.error = "scenario " + cfg.scenario + ": " + e.what();
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    m.exit_code = r.exit_code;
    set_default_threads(saved);
    return r;
}

/// Writes report.txt, every CSV table and manifest.txt into `dir`.
inline void write_artifacts(const std::filesystem::path& dir, RunResult& r) {
    std::filesystem::create_directories(dir);
    auto emit = [&](const std::string& name, const std::string& body) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw Error("cannot write " + (dir / name).string());
        f << body;
        r.manifest.files.push_back(name);
    };
    {
        std::ostringstream os;
        r.report.write(os);
        emit("report.txt", os.str());
    }
    for (const auto& [name, body] : r.report.csv) emit(name, body);
    std::ofstream f(dir / "manifest.txt", std::ios::binary);
    if (!f) throw Error("cannot write " + (dir / "manifest.txt").string());
    r.manifest.files.push_back("manifest.txt");
    r.manifest.write(f);
}

}  // namespace smp
