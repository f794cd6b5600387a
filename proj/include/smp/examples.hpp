#pragma once

// Packaged problems and their scenario runners.
//
// example1: F = F~ u (+ a sin x), G = <x, beta> G~, l = |u|^2, h = <c, x>,
//           driver M = beta m with <m>_t = int alpha.
// example2: F = A x + C u + f, G = <gamma, x> G~ + D,
//           l = 1/2 <P x, x> + 1/2 <R u, u>, h = 1/2 <P1 x, x>.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smp/adjoint.hpp"
#include "smp/dynamics.hpp"
#include "smp/errors.hpp"
#include "smp/martingale.hpp"
#include "smp/pmp.hpp"
#include "smp/report.hpp"
#include "smp/stats.hpp"

namespace smp {

namespace detail {

inline std::string join_errors(const std::vector<std::string>& errs) {
    std::string out;
    for (const auto& e : errs) out += (out.empty() ? "" : "; ") + e;
    return out;
}

inline void expect_vec(std::vector<std::string>& errs, const Eigen::VectorXd& v, long n, const std::string& name) {
    if (v.size() != n) errs.push_back(name + ": expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
    else if (!v.allFinite()) errs.push_back(name + ": non-finite entry");
}

inline void expect_mat(std::vector<std::string>& errs, const Eigen::MatrixXd& m, long r, long c, const std::string& name) {
    if (m.rows() != r || m.cols() != c)
        errs.push_back(name + ": expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    else if (!m.allFinite()) errs.push_back(name + ": non-finite entry");
}

inline void expect_grid(std::vector<std::string>& errs, double horizon, long steps, long paths) {
    if (!(horizon > 0) || !std::isfinite(horizon)) errs.push_back("horizon: must be positive");
    if (steps <= 0) errs.push_back("steps: must be positive");
    if (paths <= 0) errs.push_back("paths: must be positive");
}

/// Spike window [t0, t0 + eps) must be a nonempty run of grid steps inside [0, T].
inline void expect_spike(std::vector<std::string>& errs, double t0, double eps, double horizon, long steps,
                         const std::string& name) {
    if (!(horizon > 0) || steps <= 0) return;
    const double dt = horizon / static_cast<double>(steps);
    auto on_grid = [&](double t) { return std::abs(t / dt - std::round(t / dt)) <= 1e-9 * std::max(1.0, t / dt); };
    if (!(eps > 0)) errs.push_back(name + ": eps must be positive");
    else if (t0 < 0 || t0 + eps > horizon * (1 + 1e-12)) errs.push_back(name + ": window leaves [0, T]");
    else if (!on_grid(t0) || !on_grid(eps)) errs.push_back(name + ": spike window off-grid");
}

}  // namespace detail

enum class DerivativeFault { none, drift_x, drift_u, diffusion_x, running_x, running_u, terminal_x };

inline constexpr double derivative_fault_scale = 1.01;
inline constexpr double derivative_fault_shift = 1e-2;

namespace detail {

template <class M>
auto corrupt(const M& m) {
    return (derivative_fault_scale * m.array() + derivative_fault_shift).matrix().eval();
}

}  // namespace detail

/// Corrupts the named derivative callback: g -> 1.01 g + 0.01 entrywise.
inline void inject_derivative_fault(ControlProblem& pr, DerivativeFault f) {
    switch (f) {
        case DerivativeFault::none: break;
        case DerivativeFault::drift_x: pr.drift_x = [g = pr.drift_x](double t, const StateVec& x, const ControlVec& u) -> Operator { return detail::corrupt(g(t, x, u)); }; break;
        case DerivativeFault::drift_u: pr.drift_u = [g = pr.drift_u](double t, const StateVec& x, const ControlVec& u) -> Operator { return detail::corrupt(g(t, x, u)); }; break;
        case DerivativeFault::diffusion_x: pr.diffusion_x = [g = pr.diffusion_x](double t, const StateVec& x, const StateVec& d) -> Operator { return detail::corrupt(g(t, x, d)); }; break;
        case DerivativeFault::running_x: pr.running_cost_x = [g = pr.running_cost_x](double t, const StateVec& x, const ControlVec& u) -> Eigen::VectorXd { return detail::corrupt(g(t, x, u)); }; break;
        case DerivativeFault::running_u: pr.running_cost_u = [g = pr.running_cost_u](double t, const StateVec& x, const ControlVec& u) -> Eigen::VectorXd { return detail::corrupt(g(t, x, u)); }; break;
        case DerivativeFault::terminal_x: pr.terminal_cost_x = [g = pr.terminal_cost_x](const StateVec& x) -> StateVec { return detail::corrupt(g(x)); }; break;
    }
}

// ---------------------------------------------------------------------------
// example1

struct Example1Config {
    int state_dim = 4;
    int control_dim = 2;
    Eigen::VectorXd beta, c, x0;
    Eigen::MatrixXd f_tilde, g_tilde;
    double alpha0 = 1.0, alpha1 = 0.5;  // alpha(t) = alpha0 + alpha1 t
    double horizon = 1.0;
    long steps = 400;
    long paths = 20000;
    std::uint64_t seed = 20240611;
    double control_half_width = 3.0;
    double nonlinear_strength = 0.0;  // adds a sin(x) to the drift

    // Spike family: t0 list x (u* + offset rows), window eps.
    std::vector<double> spike_t0{0.1, 0.3, 0.5, 0.7, 0.85};
    double spike_eps = 0.1;
    Eigen::MatrixXd spike_offsets;

    // Gateaux / rate spike and ladder.
    double probe_t0 = 0.3;
    Eigen::VectorXd probe_offset;
    std::vector<double> eps_ladder{0.2, 0.1, 0.05, 0.025};

    int probes_per_dim = 11;
    long sample_times = 20;
    long sample_paths = 100;
    long convexity_pairs = 1000;

    // Fault injection.
    bool concave_cost = false;
    double p_scale = 1.0;
    DerivativeFault derivative_fault = DerivativeFault::none;

    static Example1Config defaults() {
        Example1Config c;
        c.beta = Eigen::Vector4d(0.8, 0.4, 0.0, -0.4);
        c.c = Eigen::Vector4d(1.0, -0.5, 0.25, 0.5);
        c.x0 = Eigen::Vector4d(0.5, -0.2, 0.1, 0.3);
        c.f_tilde.resize(4, 2);
        c.f_tilde << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0, -0.5;
        c.g_tilde.resize(4, 4);
        c.g_tilde << 0.4, 0.1, 0.0, 0.0, 0.0, 0.4, 0.1, 0.0, 0.0, 0.0, 0.4, 0.1, 0.1, 0.0, 0.0, 0.4;
        c.spike_offsets.resize(5, 2);
        c.spike_offsets << 0.5, 0.0, 0.0, -0.75, 1.0, 1.0, -1.0, 0.5, 0.0, 0.0;
        c.probe_offset = Eigen::Vector2d(1.0, -0.5);
        return c;
    }

    std::vector<std::string> errors() const {
        std::vector<std::string> e;
        if (state_dim <= 0) e.push_back("state_dim: must be positive");
        if (control_dim <= 0) e.push_back("control_dim: must be positive");
        if (state_dim > 0 && control_dim > 0) {
            detail::expect_vec(e, beta, state_dim, "beta");
            if (beta.size() == state_dim && beta.norm() == 0) e.push_back("beta: must be nonzero");
            detail::expect_vec(e, c, state_dim, "c");
            detail::expect_vec(e, x0, state_dim, "x0");
            detail::expect_mat(e, f_tilde, state_dim, control_dim, "f_tilde");
            detail::expect_mat(e, g_tilde, state_dim, state_dim, "g_tilde");
            detail::expect_mat(e, spike_offsets, spike_offsets.rows(), control_dim, "spike_offsets");
            detail::expect_vec(e, probe_offset, control_dim, "probe_offset");
        }
        if (!(alpha0 > 0) || !(alpha0 + alpha1 * horizon > 0)) e.push_back("alpha: must stay positive on [0, T]");
        detail::expect_grid(e, horizon, steps, paths);
        if (!(control_half_width > 0)) e.push_back("control_half_width: must be positive");
        if (probes_per_dim <= 0) e.push_back("probes_per_dim: must be positive");
        if (sample_times <= 0) e.push_back("sample_times: must be positive");
        if (sample_paths <= 0) e.push_back("sample_paths: must be positive");
        if (convexity_pairs <= 0) e.push_back("convexity_pairs: must be positive");
        for (double t : spike_t0) detail::expect_spike(e, t, spike_eps, horizon, steps, "spike_t0");
        if (eps_ladder.size() < 2) e.push_back("eps_ladder: needs at least two levels");
        for (std::size_t i = 0; i < eps_ladder.size(); ++i) {
            detail::expect_spike(e, probe_t0, eps_ladder[i], horizon, steps, "eps_ladder");
            if (i > 0 && !(eps_ladder[i] < eps_ladder[i - 1])) e.push_back("eps_ladder: must be strictly decreasing");
        }
        return e;
    }
    void validate() const {
        const auto e = errors();
        if (!e.empty()) throw ConfigError(detail::join_errors(e));
    }

    MartingaleDriver driver() const {
        return MartingaleDriver(state_dim, horizon, {{beta, ScalarIntensity::affine(alpha0, alpha1, horizon)}});
    }
    PathGrid grid() const { return {horizon, static_cast<std::size_t>(steps)}; }

    /// Minimizer of v -> |v|^2 + <F~ v, c>.
    ControlVec optimal_control() const { return -0.5 * f_tilde.transpose() * c; }
    /// <c, x0> - (T/4) |F~* c|^2.
    double analytic_cost() const { return c.dot(x0) - horizon / 4.0 * (f_tilde.transpose() * c).squaredNorm(); }
};

inline ControlProblem example1_problem(const Example1Config& cfg) {
    ControlProblem pr;
    pr.name = cfg.nonlinear_strength != 0.0 ? "example1-nonlinear" : "example1";
    pr.space = {cfg.state_dim, cfg.control_dim};
    const Eigen::MatrixXd ft = cfg.f_tilde, gt = cfg.g_tilde;
    const Eigen::VectorXd beta = cfg.beta, c = cfg.c;
    const double a = cfg.nonlinear_strength;
    const double sign = cfg.concave_cost ? -1.0 : 1.0;
    pr.drift = [ft, a](double, const StateVec& x, const ControlVec& u) -> StateVec {
        StateVec f = ft * u;
        if (a != 0.0) f += a * x.array().sin().matrix();
        return f;
    };
    pr.drift_x = [a](double, const StateVec& x, const ControlVec&) -> Operator {
        return (a * x.array().cos()).matrix().asDiagonal();
    };
    pr.drift_u = [ft](double, const StateVec&, const ControlVec&) -> Operator { return ft; };
    pr.diffusion = [gt, beta](double, const StateVec& x) -> Operator { return x.dot(beta) * gt; };
    pr.diffusion_x = [gt, beta](double, const StateVec&, const StateVec& d) -> Operator { return d.dot(beta) * gt; };
    pr.running_cost = [sign](double, const StateVec&, const ControlVec& u) { return sign * u.squaredNorm(); };
    pr.running_cost_x = [](double, const StateVec& x, const ControlVec&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(x.size()); };
    pr.running_cost_u = [sign](double, const StateVec&, const ControlVec& u) -> Eigen::VectorXd { return 2.0 * sign * u; };
    pr.terminal_cost = [c](const StateVec& x) { return c.dot(x); };
    pr.terminal_cost_x = [c](const StateVec&) -> StateVec { return c; };
    pr.control_set = ControlSet::symmetric_box(cfg.control_dim, cfg.control_half_width);
    inject_derivative_fault(pr, cfg.derivative_fault);
    return pr;
}

/// Problem, noise and candidate pair for example1. The noise bundle is owned
/// here; the candidate's trajectories point into it.
struct Example1Setup {
    Example1Config config;
    ControlProblem problem;
    MartingaleDriver driver;
    PathGrid grid;
    ControlVec u_star;
    std::unique_ptr<NoiseBundle> noise;
    std::unique_ptr<CandidatePair> candidate;
};

enum class AdjointMode {
    automatic,  // explicit Y = c when the problem is linear in x, LSMC otherwise
    skip,       // leave the adjoint empty (forward-only experiments)
};

/// Samples noise, integrates the candidate (u* unless overridden) and attaches its adjoint.
inline Example1Setup make_example1(const Example1Config& cfg, std::optional<ControlPolicy> policy = {},
                                   AdjointMode mode = AdjointMode::automatic) {
    cfg.validate();
    Example1Setup s{cfg, example1_problem(cfg), cfg.driver(), cfg.grid(), cfg.optimal_control(), nullptr, nullptr};
    s.driver.validate_on(s.grid);
    s.noise = std::make_unique<NoiseBundle>(
        sample_increments(s.driver, s.grid, static_cast<std::size_t>(cfg.paths), cfg.seed));
    const ControlPolicy pol = policy ? *policy : ControlPolicy::constant(s.u_star);
    auto traj = integrate_forward(s.problem, pol, *s.noise, cfg.x0);
    AdjointSolution adj;
    if (mode == AdjointMode::automatic) {
        if (cfg.nonlinear_strength == 0.0)
            adj = solve_adjoint_explicit(s.problem, s.driver, s.grid, traj.paths());
        else
            adj = solve_adjoint_lsmc(s.problem, s.driver, traj);
    }
    s.candidate = std::make_unique<CandidatePair>(CandidatePair{std::move(traj), std::move(adj)});
    return s;
}

struct SpikeOutcome {
    SpikeSpec spec;
    Estimate gap;      // paired J(u_eps) - J(u*)
    double distance;  // |v - u*|
};

/// Paired spike costs along the candidate.
inline std::vector<SpikeOutcome> spike_costs(const ControlProblem& problem, const CandidatePair& cand,
                                             const std::vector<SpikeSpec>& specs) {
    const auto& xs = cand.trajectories;
    const auto j_star = evaluate_cost(problem, xs);
    std::vector<SpikeOutcome> out;
    for (const auto& spec : specs) {
        const std::size_t k0 = xs.grid().index_of(spec.t0);
        const auto xe = integrate_forward(problem, apply_spike(cand.policy(), spec, xs.grid()), cand.noise(),
                                          xs.state(0, 0), &xs, k0);
        const auto j_eps = evaluate_cost(problem, xe);
        std::vector<double> d(xs.paths());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = j_eps.per_path[i] - j_star.per_path[i];
        const ControlVec u0 = xs.control(0, k0);
        out.push_back({spec, estimate(d), (spec.v - u0).norm()});
    }
    return out;
}

inline std::vector<SpikeSpec> example1_spikes(const Example1Config& cfg) {
    std::vector<SpikeSpec> specs;
    const ControlVec u = cfg.optimal_control();
    for (double t0 : cfg.spike_t0)
        for (Eigen::Index r = 0; r < cfg.spike_offsets.rows(); ++r)
            specs.push_back({t0, cfg.spike_eps, u + cfg.spike_offsets.row(r).transpose()});
    return specs;
}

inline std::string vec_text(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v(i));
    return s;
}

inline void report_margins(ReportSection& sec, const MarginReport& m) {
    sec.set("evaluations", m.entries.size());
    sec.set("probes", m.probes.size());
    sec.set("min_gap", m.min_gap);
    sec.set("fraction_negative", m.fraction_negative);
    sec.set("allowance_statistical", m.allowance.statistical);
    sec.set("allowance_discretization", m.allowance.discretization);
    sec.set("tolerance", m.tolerance);
    sec.set("worst_step", m.worst.step);
    sec.set("worst_path", m.worst.path);
    if (!m.probes.empty()) sec.set("worst_probe", vec_text(m.probes[m.worst.probe]));
}

inline void report_sufficiency(ReportSection& sec, const SufficiencyReport& s) {
    sec.set("applicable", s.applicable);
    if (!s.applicable) {
        sec.set("reason", s.reason);
        return;
    }
    sec.set("pairs", s.pairs);
    sec.set("terminal_convex", s.terminal_convex);
    sec.set("hamiltonian_convex", s.hamiltonian_convex);
    sec.set("minimum_condition", s.minimum_condition);
    sec.set("verdict", s.passed() ? "pass" : "fail");
    if (s.hamiltonian_witness) {
        auto& w = sec.child("hamiltonian_witness");
        w.set("xa", vec_text(s.hamiltonian_witness->xa));
        w.set("xb", vec_text(s.hamiltonian_witness->xb));
        w.set("va", vec_text(s.hamiltonian_witness->va));
        w.set("vb", vec_text(s.hamiltonian_witness->vb));
        w.set("violation", s.hamiltonian_witness->violation);
    }
    if (s.terminal_witness) {
        auto& w = sec.child("terminal_witness");
        w.set("xa", vec_text(s.terminal_witness->xa));
        w.set("xb", vec_text(s.terminal_witness->xb));
        w.set("violation", s.terminal_witness->violation);
    }
}

inline void report_gateaux(ReportSection& sec, const GateauxReport& g) {
    sec.set("adjoint_side", g.adjoint_side);
    for (const auto& l : g.levels) {
        auto& c = sec.child("eps_" + format_number(l.eps));
        c.set("eps", l.eps);
        c.set("finite_difference", l.finite_difference);
        c.set("difference", l.difference);
    }
    sec.set("tolerance", g.tolerance);
    sec.set("agrees", g.agrees);
}

inline void report_rates(ReportSection& sec, const RateReport& r) {
    for (std::size_t i = 0; i < r.eps.size(); ++i) {
        auto& c = sec.child("eps_" + format_number(r.eps[i]));
        c.set("eps", r.eps[i]);
        c.set("sup_sq", r.sup_sq[i]);
        c.set("xi_sq", r.xi_sq[i]);
    }
    sec.set("slope", r.slope);
    sec.set("xi_decreasing", r.xi_decreasing);
    sec.set("xi_ratio", r.xi_ratio);
}

inline std::string margins_csv(const MarginReport& m, const PathGrid& grid) {
    std::ostringstream os;
    write_margins_csv(os, m, grid);
    return os.str();
}

/// Full example1 scenario: cost vs closed form, spikes, necessary and sufficient checks,
/// directional derivative and duality.
inline ScenarioReport run_example1(const Example1Config& cfg, std::optional<ControlPolicy> policy = {},
                                   std::size_t dump_paths = 0) {
    ScenarioReport out("example1");
    auto s = make_example1(cfg, policy);
    const auto& cand = *s.candidate;
    auto& root = out.report;
    root.set("state_dim", cfg.state_dim);
    root.set("control_dim", cfg.control_dim);
    root.set("paths", static_cast<std::size_t>(cfg.paths));
    root.set("steps", static_cast<std::size_t>(cfg.steps));
    root.set("horizon", cfg.horizon);
    root.set("u_star", vec_text(s.u_star));
    root.set("nonlinear_strength", cfg.nonlinear_strength);
    root.set("candidate", policy ? "override" : "u* = -1/2 F~* c");
    if (dump_paths > 0) {
        std::ostringstream os;
        write_trajectory_csv(os, cand.trajectories, dump_paths);
        out.csv["trajectories.csv"] = os.str();
    }

    const auto cost = evaluate_cost(s.problem, cand.trajectories);
    const double analytic = cfg.analytic_cost();
    {
        auto& sec = root.child("cost");
        sec.set("mc", cost.cost);
        sec.set("analytic", analytic);
        sec.set("difference", cost.cost.mean - analytic);
        const bool ok = std::abs(cost.cost.mean - analytic) <= 3.0 * cost.cost.se;
        if (cfg.nonlinear_strength == 0.0 && !cfg.concave_cost && !policy)
            out.check("cost_matches_closed_form", ok,
                      "|mc - analytic| = " + format_number(std::abs(cost.cost.mean - analytic)) + ", 3 SE = " +
                          format_number(3.0 * cost.cost.se));
    }

    const bool linear = cfg.nonlinear_strength == 0.0;
    if (!linear) root.set("optimality_checks", "skipped: constant u* is not optimal for the nonlinear variant");
    if (linear) {
        const auto spikes = spike_costs(s.problem, cand, example1_spikes(cfg));
        auto& sec = root.child("spikes");
        std::ostringstream csv;
        csv.precision(17);
        csv << "t0,eps";
        for (int j = 0; j < cfg.control_dim; ++j) csv << ",v" << j;
        csv << ",gap,gap_se,distance\n";
        std::size_t away = 0, positive = 0, nonneg = 0;
        for (const auto& o : spikes) {
            csv << o.spec.t0 << ',' << o.spec.eps;
            for (int j = 0; j < cfg.control_dim; ++j) csv << ',' << o.spec.v(j);
            csv << ',' << o.gap.mean << ',' << o.gap.se << ',' << o.distance << '\n';
            if (o.gap.mean >= -3.0 * o.gap.se) ++nonneg;
            if (o.distance >= 0.25) {
                ++away;
                if (o.gap.mean > o.gap.se) ++positive;
            }
        }
        out.csv["spikes.csv"] = csv.str();
        sec.set("specs", spikes.size());
        sec.set("not_below_minus_3se", nonneg);
        sec.set("bounded_away", away);
        sec.set("positive_beyond_1se", positive);
        out.check("spike_gaps_nonnegative", nonneg == spikes.size(),
                  std::to_string(nonneg) + "/" + std::to_string(spikes.size()));
        out.check("spike_gaps_positive", away == 0 || positive * 10 >= away * 9,
                  std::to_string(positive) + "/" + std::to_string(away));
    }

    const auto probes = probe_lattice(s.problem.control_set, cfg.probes_per_dim);
    const auto steps = sample_steps(s.grid, static_cast<std::size_t>(cfg.sample_times));
    const auto paths = sample_paths(cand.trajectories.paths(), static_cast<std::size_t>(cfg.sample_paths));
    if (linear) {
        const auto m = necessary_check(s.problem, cand, probes, steps, paths);
        report_margins(root.child("necessary"), m);
        out.csv["margins.csv"] = margins_csv(m, s.grid);
        out.check("necessary_condition", m.passed(), "min gap " + format_number(m.min_gap));

        std::size_t nearest = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < probes.size(); ++j)
            if ((probes[j] - s.u_star).norm() < best) {
                best = (probes[j] - s.u_star).norm();
                nearest = j;
            }
        bool consistent = true;
        for (std::size_t k : steps)
            for (std::size_t p : paths)
                if (hamiltonian_argmin(s.problem, cand, probes, k, p) != nearest) consistent = false;
        root.child("necessary").set("argmin_consistent", consistent);
        out.check("argmin_consistency", consistent);
    }

    if (linear) {
        SufficiencyOptions opt;
        opt.pairs = static_cast<std::size_t>(cfg.convexity_pairs);
        opt.sample_times = static_cast<std::size_t>(cfg.sample_times);
        opt.sample_paths = static_cast<std::size_t>(cfg.sample_paths);
        opt.seed = cfg.seed ^ 0x9E3779B97F4A7C15ull;
        const auto suff = sufficient_check(s.problem, cand, probes, opt);
        report_sufficiency(root.child("sufficiency"), suff);
        out.check("sufficient_conditions", suff.passed(), suff.applicable ? "" : suff.reason);
    }

    const ControlVec v = s.u_star + cfg.probe_offset;
    {
        const auto g = gateaux_check(s.problem, cand, cfg.probe_t0, v, cfg.eps_ladder, {cfg.p_scale});
        report_gateaux(root.child("gateaux"), g);
        out.check("gateaux_identity", g.agrees,
                  "|diff| = " + format_number(std::abs(g.levels.back().difference.mean)) + ", tol = " +
                      format_number(g.tolerance));
        if (linear) out.check("adjoint_derivative_nonnegative", g.adjoint_side.mean >= -3.0 * g.adjoint_side.se);
    }

    {
        const SpikeSpec spec{cfg.probe_t0, cfg.eps_ladder.back(), v};
        const auto p = integrate_variational(s.problem, cand.trajectories, cand.noise(), spec, {cfg.p_scale});
        const auto d = duality_check(s.problem, cand.trajectories, cand.adjoint, spec, p);
        auto& sec = root.child("duality");
        sec.set("lhs", d.lhs);
        sec.set("rhs", d.rhs);
        sec.set("difference", d.difference);
        out.check("duality", d.passed());
    }
    return out;
}

// ---------------------------------------------------------------------------
// example2

struct Example2Config {
    int state_dim = 2;
    int control_dim = 2;
    Eigen::MatrixXd a, c, g_tilde, d, p, r, p1;
    Eigen::VectorXd f, gamma, x0, beta, initial_control;
    double alpha0 = 1.0, alpha1 = 0.5;
    double horizon = 1.0;
    long steps = 400;
    long paths = 20000;
    std::uint64_t seed = 20240612;
    int basis_degree = 2;
    int sweeps = 3;
    double control_half_width = 10.0;
    double duality_t0 = 0.25;
    Eigen::VectorXd duality_v;
    long sample_times = 20;
    long sample_paths = 100;
    int probes_per_dim = 11;
    DerivativeFault derivative_fault = DerivativeFault::none;

    static Example2Config defaults() {
        Example2Config e;
        e.a.resize(2, 2);
        e.a << -0.4, 0.2, 0.0, -0.3;
        e.c.resize(2, 2);
        e.c << 1.0, 0.0, 0.3, 0.8;
        e.g_tilde = 0.3 * Eigen::MatrixXd::Identity(2, 2);
        e.d.resize(2, 2);
        e.d << 0.4, 0.0, 0.1, 0.3;
        e.p = Eigen::Vector2d(0.2, 0.1).asDiagonal();
        e.r = Eigen::Vector2d(1.0, 1.5).asDiagonal();
        e.p1 = Eigen::Vector2d(0.5, 0.3).asDiagonal();
        e.f = Eigen::Vector2d(0.1, -0.1);
        e.gamma = Eigen::Vector2d(0.3, 0.1);
        e.x0 = Eigen::Vector2d(1.0, -0.5);
        e.beta = Eigen::Vector2d(1.0, 0.5);
        e.initial_control = Eigen::Vector2d::Zero();
        e.duality_v = Eigen::Vector2d(0.5, -0.5);
        return e;
    }

    /// One-dimensional reduction with B = 0 and P = 0.
    static Example2Config scalar() {
        Example2Config e;
        e.state_dim = e.control_dim = 1;
        auto m = [](double x) { return Eigen::MatrixXd::Constant(1, 1, x); };
        auto v = [](double x) { return Eigen::VectorXd::Constant(1, x); };
        e.a = m(-0.3);
        e.c = m(0.8);
        e.g_tilde = m(0.0);
        e.d = m(0.5);
        e.p = m(0.0);
        e.r = m(1.0);
        e.p1 = m(0.6);
        e.f = v(0.2);
        e.gamma = v(0.0);
        e.x0 = v(1.0);
        e.beta = v(1.0);
        e.initial_control = v(0.0);
        e.duality_v = v(0.5);
        return e;
    }

    std::vector<std::string> errors() const {
        std::vector<std::string> e;
        const int n = state_dim, m = control_dim;
        if (n <= 0) e.push_back("state_dim: must be positive");
        if (m <= 0) e.push_back("control_dim: must be positive");
        if (n > 0 && m > 0) {
            detail::expect_mat(e, a, n, n, "a");
            detail::expect_mat(e, c, n, m, "c");
            detail::expect_mat(e, g_tilde, n, n, "g_tilde");
            detail::expect_mat(e, d, n, n, "d");
            detail::expect_mat(e, p, n, n, "p");
            detail::expect_mat(e, r, m, m, "r");
            detail::expect_mat(e, p1, n, n, "p1");
            detail::expect_vec(e, f, n, "f");
            detail::expect_vec(e, gamma, n, "gamma");
            detail::expect_vec(e, x0, n, "x0");
            detail::expect_vec(e, beta, n, "beta");
            if (beta.size() == n && beta.norm() == 0) e.push_back("beta: must be nonzero");
            detail::expect_vec(e, initial_control, m, "initial_control");
            detail::expect_vec(e, duality_v, m, "duality_v");
            if (r.rows() == m && r.cols() == m && r.allFinite()) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (r + r.transpose()));
                if (!((r - r.transpose()).norm() <= 1e-12 * std::max(1.0, r.norm())) || !(es.eigenvalues().minCoeff() > 0))
                    e.push_back("r: must be symmetric positive definite");
            }
        }
        if (!(alpha0 > 0) || !(alpha0 + alpha1 * horizon > 0)) e.push_back("alpha: must stay positive on [0, T]");
        detail::expect_grid(e, horizon, steps, paths);
        if (basis_degree < 0) e.push_back("basis_degree: must be >= 0");
        if (sweeps < 0) e.push_back("sweeps: must be >= 0");
        if (!(control_half_width > 0)) e.push_back("control_half_width: must be positive");
        if (sample_times <= 0) e.push_back("sample_times: must be positive");
        if (sample_paths <= 0) e.push_back("sample_paths: must be positive");
        if (probes_per_dim <= 0) e.push_back("probes_per_dim: must be positive");
        if (steps > 0 && horizon > 0) detail::expect_spike(e, duality_t0, horizon / static_cast<double>(steps), horizon, steps, "duality_t0");
        return e;
    }
    void validate() const {
        const auto e = errors();
        if (!e.empty()) throw ConfigError(detail::join_errors(e));
    }

    MartingaleDriver driver() const {
        return MartingaleDriver(state_dim, horizon, {{beta, ScalarIntensity::affine(alpha0, alpha1, horizon)}});
    }
    PathGrid grid() const { return {horizon, static_cast<std::size_t>(steps)}; }
};

inline ControlProblem example2_problem(const Example2Config& cfg) {
    ControlProblem pr;
    pr.name = "example2";
    pr.space = {cfg.state_dim, cfg.control_dim};
    const Eigen::MatrixXd A = cfg.a, C = cfg.c, Gt = cfg.g_tilde, D = cfg.d, P = cfg.p, R = cfg.r, P1 = cfg.p1;
    const Eigen::VectorXd f = cfg.f, gamma = cfg.gamma;
    pr.drift = [A, C, f](double, const StateVec& x, const ControlVec& u) -> StateVec { return A * x + C * u + f; };
    pr.drift_x = [A](double, const StateVec&, const ControlVec&) -> Operator { return A; };
    pr.drift_u = [C](double, const StateVec&, const ControlVec&) -> Operator { return C; };
    pr.diffusion = [Gt, D, gamma](double, const StateVec& x) -> Operator { return gamma.dot(x) * Gt + D; };
    pr.diffusion_x = [Gt, gamma](double, const StateVec&, const StateVec& d) -> Operator { return gamma.dot(d) * Gt; };
    pr.running_cost = [P, R](double, const StateVec& x, const ControlVec& u) {
        return 0.5 * x.dot(P * x) + 0.5 * u.dot(R * u);
    };
    pr.running_cost_x = [P](double, const StateVec& x, const ControlVec&) -> Eigen::VectorXd {
        return 0.5 * (P + P.transpose()) * x;
    };
    pr.running_cost_u = [R](double, const StateVec&, const ControlVec& u) -> Eigen::VectorXd {
        return 0.5 * (R + R.transpose()) * u;
    };
    pr.terminal_cost = [P1](const StateVec& x) { return 0.5 * x.dot(P1 * x); };
    pr.terminal_cost_x = [P1](const StateVec& x) -> StateVec { return 0.5 * (P1 + P1.transpose()) * x; };
    pr.control_set = ControlSet::symmetric_box(cfg.control_dim, cfg.control_half_width);
    inject_derivative_fault(pr, cfg.derivative_fault);
    return pr;
}

/// Policy u(t, x) = -R^{-1} C* E^[Y(t) | X(t) = x] from a fitted adjoint.
inline ControlPolicy stationary_policy(const Example2Config& cfg, std::shared_ptr<const ConditionalModel> model,
                                       const PathGrid& grid) {
    detail::require(model != nullptr, "stationary_policy: adjoint has no regression model");
    const Eigen::MatrixXd gain = -cfg.r.ldlt().solve(cfg.c.transpose());
    return ControlPolicy::feedback([gain, model, grid](double t, const StateVec& x) -> ControlVec {
        return gain * (*model)(grid.nearest_index(t), x);
    });
}

/// RMS over paths and steps k < N of |C* Y + R u|.
inline double stationarity_residual(const Example2Config& cfg, const TrajectoryBundle& traj, const AdjointSolution& adj) {
    const std::size_t n = traj.paths(), steps = traj.steps();
    std::vector<double> per(n);
    parallel_for(n, [&](std::size_t p) {
        double s = 0.0;
        for (std::size_t k = 0; k < steps; ++k)
            s += (cfg.c.transpose() * adj.y(p, k) + cfg.r * traj.control(p, k)).squaredNorm();
        per[p] = s;
    });
    double total = 0.0;
    for (double x : per) total += x;
    return std::sqrt(total / static_cast<double>(n * steps));
}

struct Example2Result {
    ScenarioReport report{"example2"};
    std::unique_ptr<NoiseBundle> noise;
    std::unique_ptr<CandidatePair> candidate;  // final sweep
    std::vector<double> residuals;             // per sweep, sweep 0 = initial policy
    std::vector<Estimate> costs;
    std::vector<Estimate> cost_changes;  // paired J_{s+1} - J_s
};

/// LSMC adjoint along a candidate policy, then policy sweeps u <- -R^{-1} C* E^[Y | X].
/// The sweep loop is an addition of this harness and is labeled as such in the report.
inline Example2Result run_example2_full(const Example2Config& cfg) {
    cfg.validate();
    Example2Result res;
    auto& out = res.report;
    const auto problem = example2_problem(cfg);
    const auto driver = cfg.driver();
    const auto grid = cfg.grid();
    driver.validate_on(grid);
    res.noise = std::make_unique<NoiseBundle>(sample_increments(driver, grid, static_cast<std::size_t>(cfg.paths), cfg.seed));
    const RegressionBasis basis{cfg.basis_degree};

    auto& root = out.report;
    root.set("state_dim", cfg.state_dim);
    root.set("control_dim", cfg.control_dim);
    root.set("paths", static_cast<std::size_t>(cfg.paths));
    root.set("steps", static_cast<std::size_t>(cfg.steps));
    root.set("basis_degree", cfg.basis_degree);
    root.set("sweeps", cfg.sweeps);
    root.set("policy_iteration", "harness addition: u <- -R^{-1} C* E[Y | X]");

    ControlPolicy policy = ControlPolicy::constant(cfg.initial_control);
    std::optional<CostReport> prev_cost;
    std::ostringstream csv;
    csv.precision(17);
    csv << "sweep,residual,cost,cost_se,change,change_se,n_ratio\n";
    for (int s = 0; s <= cfg.sweeps; ++s) {
        auto traj = integrate_forward(problem, policy, *res.noise, cfg.x0);
        auto adj = solve_adjoint_lsmc(problem, driver, traj, basis);
        const double resid = stationarity_residual(cfg, traj, adj);
        auto cost = evaluate_cost(problem, traj);
        Estimate change;
        if (prev_cost) {
            std::vector<double> d(traj.paths());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = cost.per_path[i] - prev_cost->per_path[i];
            change = estimate(d);
            res.cost_changes.push_back(change);
        }
        res.residuals.push_back(resid);
        res.costs.push_back(cost.cost);
        auto& sec = root.child("sweep_" + std::to_string(s));
        sec.set("residual", resid);
        sec.set("cost", cost.cost);
        if (prev_cost) sec.set("cost_change", change);
        sec.set("n_ratio", adj.diagnostics().n_ratio());
        for (std::size_t w = 0; w < adj.diagnostics().warnings.size(); ++w)
            sec.set("warning_" + std::to_string(w), adj.diagnostics().warnings[w]);
        csv << s << ',' << resid << ',' << cost.cost.mean << ',' << cost.cost.se << ',' << change.mean << ','
            << change.se << ',' << adj.diagnostics().n_ratio() << '\n';
        if (s < cfg.sweeps) policy = stationary_policy(cfg, adj.conditional_model(), grid);
        prev_cost = std::move(cost);
        if (s == cfg.sweeps)
            res.candidate = std::make_unique<CandidatePair>(CandidatePair{std::move(traj), std::move(adj)});
    }
    out.csv["sweeps.csv"] = csv.str();

    const double ratio = res.residuals.front() > 0 ? res.residuals.back() / res.residuals.front() : 0.0;
    root.set("residual_ratio", ratio);
    if (cfg.sweeps > 0)
        out.check("stationarity_residual_decay", ratio < 0.05 || res.residuals.back() <= 1e-12,
                  "final/initial = " + format_number(ratio));
    for (std::size_t i = 0; i < res.cost_changes.size(); ++i) {
        const auto& c = res.cost_changes[i];
        out.check("cost_nonincreasing_sweep_" + std::to_string(i + 1), c.mean <= 2.0 * c.se,
                  "change " + format_number(c.mean) + ", 2 SE = " + format_number(2.0 * c.se));
    }

    const auto& cand = *res.candidate;
    {
        const SpikeSpec spec{cfg.duality_t0, grid.dt(), cfg.duality_v};
        const auto p = integrate_variational(problem, cand.trajectories, cand.noise(), spec);
        const auto d = duality_check(problem, cand.trajectories, cand.adjoint, spec, p);
        auto& sec = root.child("duality");
        sec.set("lhs", d.lhs);
        sec.set("rhs", d.rhs);
        sec.set("difference", d.difference);
        out.check("duality", d.passed());
    }
    {
        // Budget from the measured stationarity defect: H(v) - H(u) >= -1/2 |R^{-1/2}(C*Y + R u)|^2.
        const double rinv = cfg.r.ldlt().solve(Eigen::MatrixXd::Identity(cfg.control_dim, cfg.control_dim)).norm();
        Allowance allow{0.5 * rinv * res.residuals.back() * res.residuals.back(), 0.0};
        const auto probes = probe_lattice(problem.control_set, cfg.probes_per_dim);
        const auto m = necessary_check(problem, cand, probes, sample_steps(grid, static_cast<std::size_t>(cfg.sample_times)),
                                       sample_paths(cand.trajectories.paths(), static_cast<std::size_t>(cfg.sample_paths)), allow);
        report_margins(root.child("necessary"), m);
        out.csv["margins.csv"] = margins_csv(m, grid);
        root.child("necessary").set("reported_only", true);
    }
    return res;
}

inline ScenarioReport run_example2(const Example2Config& cfg) { return std::move(run_example2_full(cfg).report); }

}  // namespace smp
