#pragma once

// Numerical checks of the maximum principle along a candidate pair:
// Hamiltonian margins (necessary condition), convexity plus minimum condition
// (sufficient conditions), the directional-derivative identity for spikes and
// the small-spike convergence rates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smp/adjoint.hpp"
#include "smp/dynamics.hpp"
#include "smp/hilbert.hpp"
#include "smp/martingale.hpp"
#include "smp/parallel.hpp"
#include "smp/stats.hpp"

namespace smp {

/// Candidate optimal pair with its adjoint, all on one noise bundle.
struct CandidatePair {
    TrajectoryBundle trajectories;
    AdjointSolution adjoint;

    const ControlPolicy& policy() const { return *trajectories.policy(); }
    const NoiseBundle& noise() const { return *trajectories.noise(); }
    const StateVec initial_state() const { return trajectories.state(0, 0); }
};

/// Uniform lattice over the declared control set, capped in total size.
/// Balls are covered by the lattice of their bounding box restricted to the ball.
inline std::vector<ControlVec> probe_lattice(const ControlSet& set, int points_per_dim = 11, std::size_t cap = 10000) {
    if (set.kind() == ControlSet::Kind::finite) return set.points();
    const int m = set.dim();
    int n = std::max(points_per_dim, 1);
    while (n > 1 && std::pow(static_cast<double>(n), m) > static_cast<double>(cap)) --n;
    std::vector<ControlVec> out;
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    for (;;) {
        ControlVec v(m);
        for (int j = 0; j < m; ++j) {
            const double frac = n == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(j)]) / (n - 1);
            v(j) = set.lower()(j) + frac * (set.upper()(j) - set.lower()(j));
        }
        if (set.contains(v, 1e-12)) out.push_back(v);
        int j = 0;
        while (j < m && ++idx[static_cast<std::size_t>(j)] == n) idx[static_cast<std::size_t>(j++)] = 0;
        if (j == m) break;
    }
    return out;
}

/// `count` grid steps spread evenly over [0, steps).
inline std::vector<std::size_t> sample_steps(const PathGrid& grid, std::size_t count) {
    count = std::min(count, grid.steps);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(i * grid.steps / count);
    return out;
}

/// `count` path indices strided over [0, paths).
inline std::vector<std::size_t> sample_paths(std::size_t paths, std::size_t count) {
    count = std::min(count, paths);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(i * paths / count);
    return out;
}

/// Error budget attached to a pass/fail decision.
struct Allowance {
    double statistical = 0.0;
    double discretization = 0.0;
    double total() const { return statistical + discretization; }
};

struct MarginEntry {
    std::size_t step = 0;
    std::size_t path = 0;
    std::size_t probe = 0;
    double gap = 0.0;  // H(v) - H(u*)
};

struct MarginReport {
    std::vector<MarginEntry> entries;
    std::vector<ControlVec> probes;
    double min_gap = std::numeric_limits<double>::infinity();
    double fraction_negative = 0.0;
    Allowance allowance;
    double tolerance = 1e-8;
    MarginEntry worst;

    bool passed() const { return min_gap >= -tolerance; }
};

/// Hamiltonian gaps H(v) - H(u*) at sampled (step, path, probe) triples.
inline MarginReport necessary_check(const ControlProblem& problem, const CandidatePair& cand,
                                    std::span<const ControlVec> probes, std::span<const std::size_t> steps,
                                    std::span<const std::size_t> paths, Allowance allowance = {}) {
    problem.validate();
    for (const auto& v : probes)
        detail::require(problem.control_set.contains(v), "necessary_check: probe outside the control set");
    const PathGrid& grid = cand.trajectories.grid();
    MarginReport rep;
    rep.probes.assign(probes.begin(), probes.end());
    rep.allowance = allowance;
    rep.tolerance = std::max(1e-8, 3.0 * allowance.total());
    const std::size_t np = paths.size(), nv = probes.size();
    rep.entries.resize(steps.size() * np * nv);
    parallel_for(steps.size() * np, [&](std::size_t job) {
        const std::size_t k = steps[job / np], p = paths[job % np];
        detail::require(k < grid.steps, "necessary_check: sample step must be < steps");
        HamiltonianArgs a{grid.time(k), cand.trajectories.state(p, k), cand.trajectories.control(p, k),
                          cand.adjoint.y(p, k), cand.adjoint.zq(p, k)};
        const Operator& qs = cand.adjoint.q_sqrt(k);
        const double h_star = hamiltonian(problem, qs, a);
        for (std::size_t j = 0; j < nv; ++j) {
            a.u = probes[j];
            rep.entries[job * nv + j] = {k, p, j, hamiltonian(problem, qs, a) - h_star};
        }
    });
    std::size_t negative = 0;
    for (const auto& e : rep.entries) {
        if (e.gap < rep.min_gap) {
            rep.min_gap = e.gap;
            rep.worst = e;
        }
        if (e.gap < 0) ++negative;
    }
    rep.fraction_negative = rep.entries.empty() ? 0.0 : static_cast<double>(negative) / static_cast<double>(rep.entries.size());
    return rep;
}

/// Probe of v -> H(t_k, X*, v, Y*, Z*Q^{1/2}) returning the index of its minimizer.
inline std::size_t hamiltonian_argmin(const ControlProblem& problem, const CandidatePair& cand,
                                      std::span<const ControlVec> probes, std::size_t step, std::size_t path) {
    HamiltonianArgs a{cand.trajectories.grid().time(step), cand.trajectories.state(path, step), ControlVec(),
                      cand.adjoint.y(path, step), cand.adjoint.zq(path, step)};
    std::size_t best = 0;
    double best_h = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < probes.size(); ++j) {
        a.u = probes[j];
        const double h = hamiltonian(problem, cand.adjoint.q_sqrt(step), a);
        if (h < best_h) {
            best_h = h;
            best = j;
        }
    }
    return best;
}

inline void write_margins_csv(std::ostream& os, const MarginReport& rep, const PathGrid& grid) {
    os.precision(17);
    os << "t,path,v_index,delta_h\n";
    for (const auto& e : rep.entries) os << grid.time(e.step) << ',' << e.path << ',' << e.probe << ',' << e.gap << '\n';
}

struct ConvexityWitness {
    StateVec xa, xb;
    ControlVec va, vb;
    double violation = 0.0;  // f(mid) - (f(a) + f(b))/2
};

struct SufficiencyReport {
    bool applicable = true;
    std::string reason;
    bool terminal_convex = false;     // (i) h midpoint-convex (U convex is a precondition)
    bool hamiltonian_convex = false;  // (ii) (x, v) -> H jointly midpoint-convex
    bool minimum_condition = false;   // (iii) min over probes attained at u*
    std::optional<ConvexityWitness> terminal_witness, hamiltonian_witness;
    MarginReport margins;
    std::size_t pairs = 0;

    bool passed() const { return applicable && terminal_convex && hamiltonian_convex && minimum_condition; }
};

struct SufficiencyOptions {
    std::size_t pairs = 1000;
    std::uint64_t seed = 11;
    std::size_t sample_times = 20;
    std::size_t sample_paths = 100;
    Allowance allowance;
};

/// Convexity of U, of h and of (x, v) -> H along the candidate's adjoint,
/// plus the minimum condition on probes.
inline SufficiencyReport sufficient_check(const ControlProblem& problem, const CandidatePair& cand,
                                          std::span<const ControlVec> probes, const SufficiencyOptions& opt = {}) {
    problem.validate();
    SufficiencyReport rep;
    rep.pairs = opt.pairs;
    if (!problem.control_set.convex()) {
        rep.applicable = false;
        rep.reason = "inapplicable: control set is not convex";
        return rep;
    }
    const auto& traj = cand.trajectories;
    const PathGrid& grid = traj.grid();
    const int d = problem.space.state_dim, m = problem.space.control_dim;

    // Spread of the candidate states sets the perturbation scale.
    double spread = 0.0;
    {
        const auto ps = sample_paths(traj.paths(), 200);
        for (std::size_t p : ps) spread += (traj.state(p, grid.steps) - traj.state(p, 0)).squaredNorm();
        spread = std::sqrt(spread / static_cast<double>(ps.size()) / d);
    }
    const double scale = 1.0 + spread;

    auto engine = path_engine(opt.seed, 0, 0x5CF);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto pick = [&](std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(unif(engine) * static_cast<double>(n))); };
    auto random_state = [&](std::size_t p, std::size_t k) {
        StateVec x = traj.state(p, k);
        for (int i = 0; i < d; ++i) x(i) += scale * normal(engine);
        return x;
    };
    const auto& cs = problem.control_set;
    auto random_control = [&] {
        for (;;) {
            ControlVec v(m);
            for (int j = 0; j < m; ++j) v(j) = cs.lower()(j) + unif(engine) * (cs.upper()(j) - cs.lower()(j));
            if (cs.contains(v)) return v;
        }
    };

    rep.terminal_convex = true;
    rep.hamiltonian_convex = true;
    for (std::size_t i = 0; i < opt.pairs; ++i) {
        const std::size_t p = pick(traj.paths()), k = pick(grid.steps);
        const StateVec xa = random_state(p, k), xb = random_state(p, k);
        const ControlVec va = random_control(), vb = random_control();

        const double ha = problem.terminal_cost(xa), hb = problem.terminal_cost(xb);
        const double hm = problem.terminal_cost(0.5 * (xa + xb));
        const double viol_h = hm - 0.5 * (ha + hb);
        if (viol_h > 1e-10 * (1.0 + std::abs(ha) + std::abs(hb))) {
            rep.terminal_convex = false;
            if (!rep.terminal_witness || viol_h > rep.terminal_witness->violation)
                rep.terminal_witness = ConvexityWitness{xa, xb, va, vb, viol_h};
        }

        HamiltonianArgs a{grid.time(k), xa, va, cand.adjoint.y(p, k), cand.adjoint.zq(p, k)};
        const Operator& qs = cand.adjoint.q_sqrt(k);
        const double h_a = hamiltonian(problem, qs, a);
        a.x = xb;
        a.u = vb;
        const double h_b = hamiltonian(problem, qs, a);
        a.x = 0.5 * (xa + xb);
        a.u = 0.5 * (va + vb);
        const double h_m = hamiltonian(problem, qs, a);
        const double viol = h_m - 0.5 * (h_a + h_b);
        if (viol > 1e-10 * (1.0 + std::abs(h_a) + std::abs(h_b))) {
            rep.hamiltonian_convex = false;
            if (!rep.hamiltonian_witness || viol > rep.hamiltonian_witness->violation)
                rep.hamiltonian_witness = ConvexityWitness{xa, xb, va, vb, viol};
        }
    }

    const auto steps = sample_steps(grid, opt.sample_times);
    const auto paths = sample_paths(traj.paths(), opt.sample_paths);
    rep.margins = necessary_check(problem, cand, probes, steps, paths, opt.allowance);
    rep.minimum_condition = rep.margins.passed();
    return rep;
}

struct GateauxFaults {
    double p_scale = 1.0;
};

struct GateauxReport {
    struct Level {
        double eps = 0.0;
        Estimate finite_difference;  // (J(u_eps) - J(u*)) / eps
        Estimate difference;         // paired: finite difference - adjoint side
    };
    std::vector<Level> levels;  // the two smallest eps, largest first
    Estimate adjoint_side;      // E[<h_x(X*(T)), p(T)> + zeta(T)]
    double tolerance = 0.0;
    bool agrees = false;
};

/// Common-random-number finite difference of J against the variational formula.
/// Agreement at the smallest eps: |mean difference| <= 3 SE + bias_frac * eps * |adjoint side|.
inline GateauxReport gateaux_check(const ControlProblem& problem, const CandidatePair& cand, double t0,
                                   const ControlVec& v, std::span<const double> eps_ladder,
                                   const GateauxFaults& faults = {}, double bias_frac = 0.1) {
    detail::require(!eps_ladder.empty(), "gateaux_check: empty eps ladder");
    std::vector<double> eps(eps_ladder.begin(), eps_ladder.end());
    std::sort(eps.begin(), eps.end());
    if (eps.size() > 2) eps.resize(2);
    std::reverse(eps.begin(), eps.end());

    const auto& xs = cand.trajectories;
    const NoiseBundle& noise = cand.noise();
    const PathGrid& grid = xs.grid();
    const SpikeSpec base{t0, eps.back(), v};
    const auto p = integrate_variational(problem, xs, noise, base, {faults.p_scale});
    const auto zeta = integrate_zeta(problem, xs, p, base);
    const std::size_t n = xs.paths();
    std::vector<double> adj(n);
    parallel_for(n, [&](std::size_t i) {
        adj[i] = problem.terminal_cost_x(xs.state(i, grid.steps)).dot(p.state(i, grid.steps)) + zeta.terminal(i);
    });
    GateauxReport rep;
    rep.adjoint_side = estimate(adj);
    const auto j_star = evaluate_cost(problem, xs);
    const std::size_t k0 = grid.index_of(t0);
    for (double e : eps) {
        const SpikeSpec spec{t0, e, v};
        const auto xe = integrate_forward(problem, apply_spike(cand.policy(), spec, grid), noise, xs.state(0, 0), &xs, k0);
        const auto j_eps = evaluate_cost(problem, xe);
        std::vector<double> fd(n), diff(n);
        for (std::size_t i = 0; i < n; ++i) {
            fd[i] = (j_eps.per_path[i] - j_star.per_path[i]) / e;
            diff[i] = fd[i] - adj[i];
        }
        rep.levels.push_back({e, estimate(fd), estimate(diff)});
    }
    const auto& last = rep.levels.back();
    rep.tolerance = 3.0 * last.difference.se + bias_frac * last.eps * std::abs(rep.adjoint_side.mean);
    rep.agrees = std::abs(last.difference.mean) <= rep.tolerance;
    return rep;
}

struct RateReport {
    std::vector<double> eps;
    std::vector<Estimate> sup_sq;  // E sup_t |X_eps - X*|^2
    std::vector<Estimate> xi_sq;   // E |xi_eps(T)|^2
    double slope = std::numeric_limits<double>::quiet_NaN();
    bool xi_decreasing = false;
    double xi_ratio = std::numeric_limits<double>::quiet_NaN();  // last / first

    bool slope_ok(double min_slope = 1.5) const { return slope >= min_slope; }
    bool xi_ok() const { return xi_decreasing && xi_ratio < 0.25; }
    bool passed() const { return slope_ok() && xi_ok(); }
};

/// Spike convergence experiments on a strictly decreasing eps ladder with one common bundle.
inline RateReport rate_experiments(const ControlProblem& problem, const CandidatePair& cand, double t0,
                                   const ControlVec& v, std::span<const double> eps_ladder,
                                   const VariationalFaults& faults = {}) {
    detail::require(eps_ladder.size() >= 2, "rate_experiments: ladder needs >= 2 levels");
    for (std::size_t i = 1; i < eps_ladder.size(); ++i)
        detail::require(eps_ladder[i] < eps_ladder[i - 1], "rate_experiments: ladder must be strictly decreasing");
    const auto& xs = cand.trajectories;
    const NoiseBundle& noise = cand.noise();
    const PathGrid& grid = xs.grid();
    const std::size_t n = xs.paths(), k0 = grid.index_of(t0);
    const auto p = integrate_variational(problem, xs, noise, SpikeSpec{t0, eps_ladder.back(), v}, faults);

    RateReport rep;
    rep.eps.assign(eps_ladder.begin(), eps_ladder.end());
    for (double e : eps_ladder) {
        const SpikeSpec spec{t0, e, v};
        const auto xe = integrate_forward(problem, apply_spike(cand.policy(), spec, grid), noise, xs.state(0, 0), &xs, k0);
        std::vector<double> sup(n), xi(n);
        parallel_for(n, [&](std::size_t i) {
            double s = 0.0;
            for (std::size_t k = k0; k <= grid.steps; ++k) s = std::max(s, (xe.state(i, k) - xs.state(i, k)).squaredNorm());
            sup[i] = s;
            xi[i] = ((xe.state(i, grid.steps) - xs.state(i, grid.steps)) / e - p.state(i, grid.steps)).squaredNorm();
        });
        rep.sup_sq.push_back(estimate(sup));
        rep.xi_sq.push_back(estimate(xi));
    }
    std::vector<double> sups;
    for (const auto& e : rep.sup_sq) sups.push_back(e.mean);
    if (std::all_of(sups.begin(), sups.end(), [](double s) { return s > 0; })) rep.slope = loglog_slope(rep.eps, sups);
    rep.xi_decreasing = true;
    for (std::size_t i = 1; i < rep.xi_sq.size(); ++i)
        if (!(rep.xi_sq[i].mean < rep.xi_sq[i - 1].mean)) rep.xi_decreasing = false;
    if (rep.xi_sq.front().mean > 0) rep.xi_ratio = rep.xi_sq.back().mean / rep.xi_sq.front().mean;
    return rep;
}

inline void write_rates_csv(std::ostream& os, const RateReport& rep) {
    os.precision(17);
    os << "eps,sup_sq,sup_sq_se,xi_sq,xi_sq_se\n";
    for (std::size_t i = 0; i < rep.eps.size(); ++i)
        os << rep.eps[i] << ',' << rep.sup_sq[i].mean << ',' << rep.sup_sq[i].se << ',' << rep.xi_sq[i].mean << ','
           << rep.xi_sq[i].se << '\n';
}

}  // namespace smp
