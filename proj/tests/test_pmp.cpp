#include <gtest/gtest.h>

#include <sstream>

#include "smp/examples.hpp"

using namespace smp;

namespace {

Example1Config small_example1(long steps = 200, long paths = 2000) {
    auto cfg = Example1Config::defaults();
    cfg.steps = steps;
    cfg.paths = paths;
    return cfg;
}

// |v|^2 - |u|^2 + <F~(v - u), c> for the constant adjoint Y = c.
double example1_gap(const Example1Config& cfg, const ControlVec& v, const ControlVec& u) {
    return v.squaredNorm() - u.squaredNorm() + (cfg.f_tilde * (v - u)).dot(cfg.c);
}

}  // namespace

TEST(ProbeLattice, BoxGrid) {
    const auto set = ControlSet::symmetric_box(2, 3.0);
    const auto probes = probe_lattice(set, 11);
    EXPECT_EQ(probes.size(), 121u);
    for (const auto& v : probes) EXPECT_TRUE(set.contains(v));
    EXPECT_EQ(probes.front(), ControlVec::Constant(2, -3.0));
    EXPECT_EQ(probes.back(), ControlVec::Constant(2, 3.0));
}

TEST(ProbeLattice, CapShrinksDensity) {
    const auto probes = probe_lattice(ControlSet::symmetric_box(5, 1.0), 11, 10000);
    EXPECT_LE(probes.size(), 10000u);
    EXPECT_EQ(probes.size(), 7776u);  // 6^5
}

TEST(ProbeLattice, BallAndFinite) {
    const auto ball = ControlSet::ball(ControlVec::Zero(2), 1.0);
    const auto probes = probe_lattice(ball, 11);
    EXPECT_LT(probes.size(), 121u);
    for (const auto& v : probes) EXPECT_TRUE(ball.contains(v));
    const auto fin = ControlSet::finite({ControlVec::Constant(1, 0.0), ControlVec::Constant(1, 2.0)});
    EXPECT_EQ(probe_lattice(fin).size(), 2u);
}

TEST(Necessary, Example1ClosedFormMargins) {
    const auto s = make_example1(small_example1(200, 500));
    const auto probes = probe_lattice(s.problem.control_set, 11);
    const auto steps = sample_steps(s.grid, 20);
    const auto paths = sample_paths(500, 100);
    const auto rep = necessary_check(s.problem, *s.candidate, probes, steps, paths);
    EXPECT_EQ(rep.entries.size(), 20u * 100u * 121u);
    double min_expect = std::numeric_limits<double>::infinity();
    for (const auto& e : rep.entries) {
        const ControlVec& v = probes[e.probe];
        const double expect = (v + 0.5 * s.config.f_tilde.transpose() * s.config.c).squaredNorm();
        EXPECT_NEAR(e.gap, expect, 1e-12);
        EXPECT_NEAR(e.gap, example1_gap(s.config, v, s.u_star), 1e-12);
        min_expect = std::min(min_expect, expect);
    }
    EXPECT_GE(rep.min_gap, -1e-8);
    EXPECT_NEAR(rep.min_gap, min_expect, 1e-12);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.tolerance, 1e-8);
}

TEST(Necessary, ZeroPolicyHasNegativeMargins) {
    const auto cfg = small_example1(200, 200);
    const auto s = make_example1(cfg, ControlPolicy::constant(ControlVec::Zero(2)));
    const auto probes = probe_lattice(s.problem.control_set, 11);
    const auto rep = necessary_check(s.problem, *s.candidate, probes, sample_steps(s.grid, 5), sample_paths(200, 10));
    EXPECT_FALSE(rep.passed());
    EXPECT_GT(rep.fraction_negative, 0.0);
    // nearest lattice point to -F~*c / 2 gives the most negative gap
    const ControlVec target = -0.5 * cfg.f_tilde.transpose() * cfg.c;
    std::size_t nearest = 0;
    for (std::size_t j = 1; j < probes.size(); ++j)
        if ((probes[j] - target).norm() < (probes[nearest] - target).norm()) nearest = j;
    EXPECT_EQ(rep.worst.probe, nearest);
    EXPECT_NEAR(rep.min_gap, example1_gap(cfg, probes[nearest], ControlVec::Zero(2)), 1e-12);
    EXPECT_LT(rep.min_gap, 0.0);
}

TEST(Necessary, CandidateOnlyProbeGivesZero) {
    const auto s = make_example1(small_example1(200, 100));
    const std::vector<ControlVec> probes{s.u_star};
    const auto rep = necessary_check(s.problem, *s.candidate, probes, sample_steps(s.grid, 10), sample_paths(100, 10));
    for (const auto& e : rep.entries) EXPECT_EQ(e.gap, 0.0);
    EXPECT_EQ(rep.min_gap, 0.0);
}

TEST(Necessary, RejectsProbeOutsideSet) {
    const auto s = make_example1(small_example1(200, 100));
    const std::vector<ControlVec> probes{ControlVec::Constant(2, 10.0)};
    const std::vector<std::size_t> steps{0}, paths{0};
    EXPECT_THROW(necessary_check(s.problem, *s.candidate, probes, steps, paths), PreconditionError);
}

TEST(Necessary, ArgminIsNearestProbe) {
    const auto s = make_example1(small_example1(200, 100));
    const auto probes = probe_lattice(s.problem.control_set, 11);
    const ControlVec target = -0.5 * s.config.f_tilde.transpose() * s.config.c;
    std::size_t nearest = 0;
    for (std::size_t j = 1; j < probes.size(); ++j)
        if ((probes[j] - target).norm() < (probes[nearest] - target).norm()) nearest = j;
    for (std::size_t k : sample_steps(s.grid, 20))
        for (std::size_t p : sample_paths(100, 10)) EXPECT_EQ(hamiltonian_argmin(s.problem, *s.candidate, probes, k, p), nearest);
}

TEST(Necessary, MarginsCsv) {
    const auto s = make_example1(small_example1(200, 100));
    const std::vector<ControlVec> probes{s.u_star, ControlVec::Zero(2)};
    const auto rep = necessary_check(s.problem, *s.candidate, probes, sample_steps(s.grid, 2), sample_paths(100, 2));
    std::ostringstream os;
    write_margins_csv(os, rep, s.grid);
    const std::string out = os.str();
    EXPECT_EQ(out.substr(0, out.find('\n')), "t,path,v_index,delta_h");
    EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 1 + 8);
}

TEST(Sufficient, Example1Passes) {
    const auto s = make_example1(small_example1(200, 500));
    const auto probes = probe_lattice(s.problem.control_set, 11);
    const auto rep = sufficient_check(s.problem, *s.candidate, probes);
    EXPECT_TRUE(rep.applicable);
    EXPECT_TRUE(rep.terminal_convex);
    EXPECT_TRUE(rep.hamiltonian_convex);
    EXPECT_TRUE(rep.minimum_condition);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.pairs, 1000u);
}

TEST(Sufficient, LinearTerminalHoldsWithEquality) {
    const auto s = make_example1(small_example1(200, 100));
    const auto rep = sufficient_check(s.problem, *s.candidate, probe_lattice(s.problem.control_set, 5));
    EXPECT_TRUE(rep.terminal_convex);
    if (rep.terminal_witness) {
        EXPECT_LE(std::abs(rep.terminal_witness->violation), 1e-12);
    }
}

TEST(Sufficient, ConcaveRunningCostFailsConvexity) {
    auto cfg = small_example1(200, 500);
    cfg.concave_cost = true;
    const auto s = make_example1(cfg);
    const auto rep = sufficient_check(s.problem, *s.candidate, probe_lattice(s.problem.control_set, 11));
    EXPECT_TRUE(rep.terminal_convex);
    EXPECT_FALSE(rep.hamiltonian_convex);
    EXPECT_FALSE(rep.passed());
    ASSERT_TRUE(rep.hamiltonian_witness.has_value());
    // explicit concavity witness: -|u|^2 at the midpoint exceeds the chord by |va - vb|^2 / 4
    const auto& w = *rep.hamiltonian_witness;
    EXPECT_NEAR(w.violation, 0.25 * (w.va - w.vb).squaredNorm(), 1e-9 * (1 + w.violation));
    EXPECT_GT(w.violation, 0.0);
}

TEST(Sufficient, NonConvexSetIsInapplicable) {
    auto s = make_example1(small_example1(200, 100));
    auto pr = s.problem;
    pr.control_set = ControlSet::finite({s.u_star, ControlVec::Zero(2)});
    const auto rep = sufficient_check(pr, *s.candidate, probe_lattice(pr.control_set));
    EXPECT_FALSE(rep.applicable);
    EXPECT_NE(rep.reason.find("inapplicable"), std::string::npos);
    EXPECT_FALSE(rep.passed());
}

TEST(Gateaux, CandidateValueGivesZero) {
    const auto s = make_example1(small_example1(200, 500));
    const std::vector<double> ladder{0.05, 0.025};
    const auto rep = gateaux_check(s.problem, *s.candidate, 0.3, s.u_star, ladder);
    EXPECT_EQ(rep.adjoint_side.mean, 0.0);
    for (const auto& l : rep.levels) EXPECT_EQ(l.finite_difference.mean, 0.0);
    EXPECT_TRUE(rep.agrees);
}

TEST(Gateaux, Example1Agrees) {
    const auto cfg = small_example1(200, 4000);
    const auto s = make_example1(cfg);
    const ControlVec v = s.u_star + cfg.probe_offset;
    const auto rep = gateaux_check(s.problem, *s.candidate, cfg.probe_t0, v, cfg.eps_ladder);
    ASSERT_EQ(rep.levels.size(), 2u);
    EXPECT_EQ(rep.levels.back().eps, 0.025);
    // Y = c and l_x = 0: E<c, p(T)> + zeta = <c, F~(v - u*)> + |v|^2 - |u*|^2 up to sampling error
    EXPECT_NEAR(rep.adjoint_side.mean, example1_gap(cfg, v, s.u_star), 4 * rep.adjoint_side.se + 1e-12);
    EXPECT_TRUE(rep.agrees) << rep.levels.back().difference.mean << " tol " << rep.tolerance;
    EXPECT_GE(rep.adjoint_side.mean, -3 * rep.adjoint_side.se);
}

TEST(Gateaux, DoubledVariationalProcessFlagged) {
    const auto cfg = small_example1(200, 4000);
    const auto s = make_example1(cfg);
    const ControlVec v = s.u_star + cfg.probe_offset;
    const auto rep = gateaux_check(s.problem, *s.candidate, cfg.probe_t0, v, cfg.eps_ladder, {2.0});
    EXPECT_FALSE(rep.agrees);
}

TEST(Rates, CandidateValueGivesZeros) {
    const auto s = make_example1(small_example1(200, 200));
    const auto rep = rate_experiments(s.problem, *s.candidate, 0.3, s.u_star, s.config.eps_ladder);
    for (const auto& e : rep.sup_sq) EXPECT_EQ(e.mean, 0.0);
    for (const auto& e : rep.xi_sq) EXPECT_EQ(e.mean, 0.0);
    EXPECT_TRUE(std::isnan(rep.slope));
    EXPECT_FALSE(rep.passed());
}

TEST(Rates, Example1Ladder) {
    const auto cfg = small_example1(200, 4000);
    const auto s = make_example1(cfg, {}, AdjointMode::skip);
    const auto rep = rate_experiments(s.problem, *s.candidate, cfg.probe_t0, s.u_star + cfg.probe_offset, cfg.eps_ladder);
    EXPECT_GE(rep.slope, 1.5);
    EXPECT_TRUE(rep.xi_decreasing);
    EXPECT_LT(rep.xi_ratio, 0.25);
    EXPECT_TRUE(rep.passed());
    std::ostringstream os;
    write_rates_csv(os, rep);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "eps,sup_sq,sup_sq_se,xi_sq,xi_sq_se");
}

TEST(Rates, WrongInitialConditionBreaksXi) {
    const auto cfg = small_example1(200, 4000);
    const auto s = make_example1(cfg, {}, AdjointMode::skip);
    const auto rep =
        rate_experiments(s.problem, *s.candidate, cfg.probe_t0, s.u_star + cfg.probe_offset, cfg.eps_ladder, {2.0});
    EXPECT_FALSE(rep.xi_ok());
}

TEST(Rates, RejectsNonDecreasingLadder) {
    const auto s = make_example1(small_example1(200, 50), {}, AdjointMode::skip);
    const std::vector<double> bad{0.05, 0.1};
    EXPECT_THROW(rate_experiments(s.problem, *s.candidate, 0.3, s.u_star, bad), PreconditionError);
}

TEST(Example1, ZeroTerminalWeight) {
    auto cfg = small_example1(200, 200);
    cfg.c.setZero();
    const auto s = make_example1(cfg);
    EXPECT_EQ(s.u_star, ControlVec::Zero(2));
    EXPECT_EQ(cfg.analytic_cost(), 0.0);
    const auto j = evaluate_cost(s.problem, s.candidate->trajectories);
    EXPECT_EQ(j.cost.mean, 0.0);
}

TEST(Example1, AnalyticCostMatchesDeterministicExpectation) {
    // E<c, X(T)> follows dE[X] = F~ u* dt since the martingale term has mean zero.
    const auto cfg = Example1Config::defaults();
    const ControlVec u = cfg.optimal_control();
    const double expect = u.squaredNorm() * cfg.horizon + cfg.c.dot(cfg.x0 + cfg.f_tilde * u * cfg.horizon);
    EXPECT_NEAR(cfg.analytic_cost(), expect, 1e-15);
}

TEST(Example1, SpikeGapsNonNegative) {
    const auto cfg = small_example1(200, 2000);
    const auto s = make_example1(cfg, {}, AdjointMode::skip);
    const auto specs = example1_spikes(cfg);
    EXPECT_EQ(specs.size(), 25u);
    for (const auto& o : spike_costs(s.problem, *s.candidate, specs)) {
        EXPECT_GE(o.gap.mean, -3 * o.gap.se);
        // with Y = c the gap is deterministic to first order: eps |v - u*|^2
        EXPECT_NEAR(o.gap.mean, o.spec.eps * (o.spec.v - s.u_star).squaredNorm(), 4 * o.gap.se + 1e-12);
    }
}

TEST(Example1, ScenarioReportPasses) {
    const auto rep = run_example1(small_example1(200, 2000));
    for (const auto& c : rep.checks) EXPECT_TRUE(c.passed) << c.name << " ; " << c.detail;
    EXPECT_TRUE(rep.passed());
    EXPECT_TRUE(rep.csv.count("margins.csv"));
    EXPECT_TRUE(rep.csv.count("spikes.csv"));
}

TEST(Example2, TrivialWeightsGiveZeroAdjoint) {
    auto cfg = Example2Config::defaults();
    cfg.steps = 100;
    cfg.paths = 2000;
    cfg.p.setZero();
    cfg.p1.setZero();
    cfg.f.setZero();
    cfg.sweeps = 1;
    auto res = run_example2_full(cfg);
    const auto& cand = *res.candidate;
    for (std::size_t p = 0; p < 2000; p += 97)
        for (std::size_t k = 0; k <= 100; ++k) {
            EXPECT_LT(cand.adjoint.y(p, k).norm(), 1e-12);
            if (k < 100) {
                EXPECT_LT(cand.trajectories.control(p, k).norm(), 1e-12);
            }
        }
    for (double r : res.residuals) EXPECT_LT(r, 1e-12);
}

TEST(Example2, SweepsReduceResidualAndCost) {
    auto cfg = Example2Config::defaults();
    cfg.steps = 100;
    cfg.paths = 4000;
    auto res = run_example2_full(cfg);
    ASSERT_EQ(res.residuals.size(), 4u);
    EXPECT_LT(res.residuals.back(), 0.05 * res.residuals.front());
    for (const auto& d : res.cost_changes) EXPECT_LE(d.mean, 2 * d.se);
    for (const auto& c : res.report.checks) EXPECT_TRUE(c.passed) << c.name << " ; " << c.detail;
}

TEST(Example2, InvalidConfigNamesField) {
    auto cfg = Example2Config::defaults();
    cfg.r(0, 0) = -1.0;
    try {
        cfg.validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("r:"), std::string::npos);
    }
}
