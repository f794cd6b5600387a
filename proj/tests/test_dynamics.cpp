#include <gtest/gtest.h>

#include <sstream>

#include "smp/examples.hpp"

using namespace smp;

namespace {

ControlProblem trivial_problem(int d, int m) {
    ControlProblem pr;
    pr.name = "trivial";
    pr.space = {d, m};
    pr.drift = [d](double, const StateVec&, const ControlVec&) -> StateVec { return StateVec::Zero(d); };
    pr.drift_x = [d](double, const StateVec&, const ControlVec&) -> Operator { return Operator::Zero(d, d); };
    pr.drift_u = [d, m](double, const StateVec&, const ControlVec&) -> Operator { return Operator::Zero(d, m); };
    pr.diffusion = [d](double, const StateVec&) -> Operator { return Operator::Zero(d, d); };
    pr.diffusion_x = [d](double, const StateVec&, const StateVec&) -> Operator { return Operator::Zero(d, d); };
    pr.running_cost = [](double, const StateVec&, const ControlVec&) { return 0.0; };
    pr.running_cost_x = [d](double, const StateVec&, const ControlVec&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(d); };
    pr.running_cost_u = [m](double, const StateVec&, const ControlVec&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(m); };
    pr.terminal_cost = [](const StateVec&) { return 0.0; };
    pr.terminal_cost_x = [d](const StateVec&) -> StateVec { return StateVec::Zero(d); };
    pr.control_set = ControlSet::symmetric_box(m, 5.0);
    return pr;
}

StateVec v1(double x) { return StateVec::Constant(1, x); }

MartingaleDriver unit_driver(int d) {
    return MartingaleDriver(d, 1.0, {{StateVec::Ones(d), ScalarIntensity::constant(1.0)}});
}

// Coarse bundle whose increments are sums of `factor` consecutive fine increments.
NoiseBundle coarsen(const NoiseBundle& fine, std::size_t factor) {
    PathGrid g(fine.grid().horizon, fine.steps() / factor);
    NoiseBundle c(fine.state_dim(), g, fine.paths(), fine.seed());
    for (std::size_t p = 0; p < fine.paths(); ++p)
        for (std::size_t k = 0; k < g.steps; ++k) {
            auto dm = c.increment(p, k);
            dm.setZero();
            for (std::size_t j = 0; j < factor; ++j) dm += fine.increment(p, k * factor + j);
        }
    return c;
}

Example2Config small_example2(long steps, long paths) {
    auto cfg = Example2Config::defaults();
    cfg.steps = steps;
    cfg.paths = paths;
    return cfg;
}

}  // namespace

TEST(ControlSet, Membership) {
    const auto box = ControlSet::symmetric_box(2, 1.0);
    EXPECT_TRUE(box.contains(ControlVec::Constant(2, 1.0)));
    EXPECT_FALSE(box.contains(ControlVec::Constant(2, 1.1)));
    EXPECT_FALSE(box.contains(ControlVec::Constant(3, 0.0)));
    const auto ball = ControlSet::ball(ControlVec::Zero(2), 1.0);
    EXPECT_TRUE(ball.contains(ControlVec::Constant(2, 0.7)));
    EXPECT_FALSE(ball.contains(ControlVec::Constant(2, 0.8)));
    const auto fin = ControlSet::finite({v1(0.0), v1(1.0)});
    EXPECT_TRUE(fin.contains(v1(1.0)));
    EXPECT_FALSE(fin.contains(v1(0.5)));
    EXPECT_FALSE(fin.convex());
}

TEST(Forward, ZeroCoefficientsKeepInitialState) {
    const auto pr = trivial_problem(3, 1);
    const auto noise = sample_increments(unit_driver(3), PathGrid(1.0, 20), 5, 1);
    const StateVec x0 = StateVec::LinSpaced(3, 1.0, 3.0);
    const auto traj = integrate_forward(pr, ControlPolicy::constant(v1(0.0)), noise, x0);
    for (std::size_t p = 0; p < 5; ++p)
        for (std::size_t k = 0; k <= 20; ++k) EXPECT_EQ(StateVec(traj.state(p, k)), x0);
}

TEST(Forward, DeterministicOde) {
    auto pr = trivial_problem(1, 1);
    pr.drift = [](double, const StateVec&, const ControlVec& u) -> StateVec { return u; };
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 64), 3, 1);
    const auto traj = integrate_forward(pr, ControlPolicy::constant(v1(1.0)), noise, v1(0.25));
    for (std::size_t k = 0; k <= 64; ++k) EXPECT_EQ(traj.state(2, k)(0), 0.25 + noise.grid().time(k));
}

TEST(Forward, EulerMaruyamaStep) {
    auto pr = trivial_problem(1, 1);
    pr.drift = [](double, const StateVec& x, const ControlVec& u) -> StateVec { return -x + u; };
    pr.diffusion = [](double, const StateVec& x) -> Operator { return Operator::Constant(1, 1, 0.5 + 0.1 * x(0)); };
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 10), 2, 3);
    const auto traj = integrate_forward(pr, ControlPolicy::constant(v1(0.5)), noise, v1(1.0));
    for (std::size_t p = 0; p < 2; ++p) {
        double x = 1.0;
        for (std::size_t k = 0; k < 10; ++k) {
            x = x + (-x + 0.5) * 0.1 + (0.5 + 0.1 * x) * noise.increment(p, k)(0);
            EXPECT_NEAR(traj.state(p, k + 1)(0), x, 1e-15);
        }
    }
}

TEST(Forward, BlowUpReportsPathAndStep) {
    auto pr = trivial_problem(1, 1);
    pr.drift = [](double, const StateVec& x, const ControlVec&) -> StateVec { return 1e200 * x.cwiseAbs2(); };
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 10), 2, 1);
    try {
        integrate_forward(pr, ControlPolicy::constant(v1(0.0)), noise, v1(1.0));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("path 0"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Forward, RejectsPolicyOutsideControlSet) {
    const auto pr = trivial_problem(1, 1);
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 10), 2, 1);
    EXPECT_THROW(integrate_forward(pr, ControlPolicy::constant(v1(6.0)), noise, v1(0.0)), PreconditionError);
    EXPECT_THROW(integrate_forward(pr, ControlPolicy::open_loop({v1(0.0), v1(0.0)}), noise, v1(0.0)), PreconditionError);
}

TEST(Forward, CouplingIsBitIdentical) {
    const auto cfg = small_example2(50, 200);
    const auto pr = example2_problem(cfg);
    const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 5);
    const auto pol = ControlPolicy::constant(ControlVec::Constant(2, 0.3));
    const auto a = integrate_forward(pr, pol, noise, cfg.x0);
    set_default_threads(3);
    const auto b = integrate_forward(pr, pol, noise, cfg.x0);
    set_default_threads(1);
    ASSERT_EQ(a.raw().size(), b.raw().size());
    EXPECT_EQ(std::memcmp(a.raw().data(), b.raw().data(), a.raw().size_bytes()), 0);
}

TEST(Forward, StrongConvergenceUnderRefinement) {
    const auto cfg = small_example2(1024, 400);
    const auto pr = example2_problem(cfg);
    const auto fine = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 17);
    const auto pol = ControlPolicy::constant(ControlVec::Constant(2, 0.2));
    const auto ref = integrate_forward(pr, pol, fine, cfg.x0);
    std::vector<double> errors;
    for (std::size_t factor : {256u, 64u, 16u}) {
        const auto coarse = coarsen(fine, factor);
        const auto tr = integrate_forward(pr, pol, coarse, cfg.x0);
        double err = 0.0;
        for (std::size_t p = 0; p < static_cast<std::size_t>(cfg.paths); ++p)
            err += (tr.state(p, coarse.steps()) - ref.state(p, fine.steps())).squaredNorm();
        errors.push_back(std::sqrt(err / static_cast<double>(cfg.paths)));
    }
    EXPECT_GT(errors[0], errors[1]);
    EXPECT_GT(errors[1], errors[2]);
}

TEST(Forward, FeedbackControlsAreRecorded) {
    auto pr = trivial_problem(1, 1);
    pr.drift = [](double, const StateVec&, const ControlVec& u) -> StateVec { return u; };
    pr.diffusion = [](double, const StateVec&) -> Operator { return Operator::Identity(1, 1); };
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 10), 4, 2);
    const auto pol = ControlPolicy::feedback([](double, const StateVec& x) -> ControlVec { return -0.5 * x; });
    const auto traj = integrate_forward(pr, pol, noise, v1(1.0));
    ASSERT_TRUE(traj.stores_controls());
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(traj.control(p, k)(0), -0.5 * traj.state(p, k)(0));
}

TEST(Forward, PrefixResumeMatchesFullRun) {
    const auto cfg = small_example2(40, 50);
    const auto pr = example2_problem(cfg);
    const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 8);
    const auto base = ControlPolicy::constant(ControlVec::Zero(2));
    const auto star = integrate_forward(pr, base, noise, cfg.x0);
    const SpikeSpec spec{0.25, 0.1, ControlVec::Constant(2, 1.0)};
    const auto spiked = apply_spike(base, spec, cfg.grid());
    const auto full = integrate_forward(pr, spiked, noise, cfg.x0);
    const auto resumed = integrate_forward(pr, spiked, noise, cfg.x0, &star, 10);
    EXPECT_EQ(std::memcmp(full.raw().data(), resumed.raw().data(), full.raw().size_bytes()), 0);
}

TEST(Spike, RejectsZeroStepWindow) {
    const PathGrid g(1.0, 100);
    const auto pol = ControlPolicy::constant(v1(0.0));
    EXPECT_THROW(apply_spike(pol, {0.5, 0.0, v1(1.0)}, g), PreconditionError);
    EXPECT_THROW(apply_spike(pol, {0.5, 0.005, v1(1.0)}, g), PreconditionError);
    EXPECT_THROW(apply_spike(pol, {0.505, 0.01, v1(1.0)}, g), PreconditionError);
    EXPECT_THROW(apply_spike(pol, {0.95, 0.1, v1(1.0)}, g), PreconditionError);
    EXPECT_THROW(apply_spike(pol, {1.0, 0.01, v1(1.0)}, g), PreconditionError);
}

TEST(Spike, SameValueLeavesPolicyUnchanged) {
    const PathGrid g(1.0, 20);
    const auto pol = ControlPolicy::constant(v1(0.4));
    const auto sp = apply_spike(pol, {0.25, 0.25, v1(0.4)}, g);
    for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(sp.at(k, g.time(k), v1(0.0)), pol.at(k, g.time(k), v1(0.0)));
}

TEST(Spike, TwoValuedSchedule) {
    const PathGrid g(1.0, 8);
    std::vector<ControlVec> sched;
    for (std::size_t k = 0; k < 8; ++k) sched.push_back(v1(k < 4 ? -1.0 : 1.0));
    const auto pol = ControlPolicy::open_loop(sched);
    const auto sp = apply_spike(pol, {0.25, 0.25, v1(7.0)}, g);
    for (std::size_t k = 0; k < 8; ++k) {
        const double expect = (k >= 2 && k < 4) ? 7.0 : (k < 4 ? -1.0 : 1.0);
        EXPECT_EQ(sp.at(k, g.time(k), v1(0.0))(0), expect) << k;
    }
}

TEST(Spike, LocalityBeforeT0) {
    const auto cfg = small_example2(40, 50);
    const auto pr = example2_problem(cfg);
    const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 8);
    const auto base = ControlPolicy::constant(ControlVec::Zero(2));
    const auto star = integrate_forward(pr, base, noise, cfg.x0);
    const auto eps = integrate_forward(pr, apply_spike(base, {0.5, 0.1, ControlVec::Constant(2, 1.0)}, cfg.grid()), noise, cfg.x0);
    for (std::size_t p = 0; p < static_cast<std::size_t>(cfg.paths); ++p)
        for (std::size_t k = 0; k <= 20; ++k) EXPECT_EQ(StateVec(eps.state(p, k)), StateVec(star.state(p, k)));
    EXPECT_NE(StateVec(eps.state(0, 21)), StateVec(star.state(0, 21)));
}

TEST(Variational, DriftWithoutControlGivesZero) {
    auto pr = trivial_problem(2, 1);
    pr.drift = [](double, const StateVec& x, const ControlVec&) -> StateVec { return -x; };
    pr.drift_x = [](double, const StateVec&, const ControlVec&) -> Operator { return -Operator::Identity(2, 2); };
    pr.diffusion_x = [](double, const StateVec&, const StateVec& d) -> Operator { return d(0) * Operator::Identity(2, 2); };
    const auto noise = sample_increments(unit_driver(2), PathGrid(1.0, 20), 4, 1);
    const auto pol = ControlPolicy::constant(v1(0.0));
    const auto star = integrate_forward(pr, pol, noise, StateVec::Ones(2));
    const auto p = integrate_variational(pr, star, noise, {0.25, 0.1, v1(1.0)});
    for (double x : p.raw()) EXPECT_EQ(x, 0.0);
}

TEST(Variational, ConstantWithoutDerivatives) {
    auto pr = trivial_problem(2, 1);
    pr.drift = [](double, const StateVec&, const ControlVec& u) -> StateVec { return StateVec::Constant(2, u(0)); };
    const auto noise = sample_increments(unit_driver(2), PathGrid(1.0, 20), 4, 1);
    const auto pol = ControlPolicy::constant(v1(0.5));
    const auto star = integrate_forward(pr, pol, noise, StateVec::Zero(2));
    const auto p = integrate_variational(pr, star, noise, {0.25, 0.1, v1(2.0)});
    for (std::size_t path = 0; path < 4; ++path) {
        for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(p.state(path, k).norm(), 0.0);
        for (std::size_t k = 5; k <= 20; ++k) EXPECT_EQ(StateVec(p.state(path, k)), StateVec::Constant(2, 1.5));
    }
}

TEST(Variational, RequiresCoupledNoise) {
    const auto cfg = small_example2(20, 10);
    const auto pr = example2_problem(cfg);
    const auto n1 = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 1);
    const auto n2 = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 1);
    const auto star = integrate_forward(pr, ControlPolicy::constant(ControlVec::Zero(2)), n1, cfg.x0);
    EXPECT_THROW(integrate_variational(pr, star, n2, {0.25, 0.1, ControlVec::Ones(2)}), PreconditionError);
}

TEST(Variational, SecondMomentStableUnderRefinement) {
    std::vector<double> sups;
    for (long steps : {100L, 400L}) {
        const auto cfg = small_example2(steps, 4000);
        const auto pr = example2_problem(cfg);
        const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 21);
        const auto star = integrate_forward(pr, ControlPolicy::constant(ControlVec::Zero(2)), noise, cfg.x0);
        const auto p = integrate_variational(pr, star, noise, {0.25, 0.1, ControlVec::Constant(2, 1.0)});
        double sup = 0.0;
        for (std::size_t k = 0; k <= cfg.grid().steps; ++k) {
            double m = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.paths); ++i) m += p.state(i, k).squaredNorm();
            sup = std::max(sup, m / static_cast<double>(cfg.paths));
        }
        sups.push_back(sup);
    }
    EXPECT_TRUE(std::isfinite(sups[1]));
    EXPECT_NEAR(sups[1] / sups[0], 1.0, 0.05);
}

TEST(Zeta, ZeroWhenCostIgnoresState) {
    auto pr = trivial_problem(1, 1);
    pr.running_cost = [](double, const StateVec&, const ControlVec& u) { return u(0) * u(0); };
    pr.running_cost_u = [](double, const StateVec&, const ControlVec& u) -> Eigen::VectorXd { return 2 * u; };
    const auto noise = sample_increments(unit_driver(1), PathGrid(1.0, 20), 3, 1);
    const auto pol = ControlPolicy::constant(v1(0.5));
    const auto star = integrate_forward(pr, pol, noise, v1(0.0));
    const SpikeSpec same{0.25, 0.1, v1(0.5)};
    const auto z = integrate_zeta(pr, star, integrate_variational(pr, star, noise, same), same);
    for (double x : z.values) EXPECT_EQ(x, 0.0);
}

TEST(Zeta, Example1IsConstant) {
    auto cfg = Example1Config::defaults();
    cfg.steps = 100;
    cfg.paths = 50;
    const auto pr = example1_problem(cfg);
    const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 2);
    const ControlVec us = cfg.optimal_control();
    const auto star = integrate_forward(pr, ControlPolicy::constant(us), noise, cfg.x0);
    const SpikeSpec spec{0.3, 0.1, us + cfg.probe_offset};
    const auto z = integrate_zeta(pr, star, integrate_variational(pr, star, noise, spec), spec);
    const double expect = spec.v.squaredNorm() - us.squaredNorm();
    for (std::size_t p = 0; p < 50; ++p)
        for (std::size_t k = 30; k <= 100; ++k) EXPECT_NEAR(z.at(p, k), expect, 1e-14);
}

TEST(Zeta, FirstOrderTaylorOfRunningCost) {
    const auto cfg = small_example2(400, 2000);
    const auto pr = example2_problem(cfg);
    const auto noise = sample_increments(cfg.driver(), cfg.grid(), cfg.paths, 6);
    const auto base = ControlPolicy::constant(ControlVec::Constant(2, 0.1));
    const auto star = integrate_forward(pr, base, noise, cfg.x0);
    const double dt = cfg.grid().dt();
    std::vector<double> errs;
    for (double eps : {0.1, 0.05, 0.025}) {
        const SpikeSpec spec{0.25, eps, ControlVec::Constant(2, 1.0)};
        const auto xe = integrate_forward(pr, apply_spike(base, spec, cfg.grid()), noise, cfg.x0);
        const auto z = integrate_zeta(pr, star, integrate_variational(pr, star, noise, spec), spec);
        double err = 0.0;
        for (std::size_t p = 0; p < static_cast<std::size_t>(cfg.paths); ++p) {
            double diff = 0.0;
            for (std::size_t k = 0; k < noise.steps(); ++k) {
                const double t = cfg.grid().time(k);
                diff += (pr.running_cost(t, xe.state(p, k), xe.control(p, k)) -
                         pr.running_cost(t, star.state(p, k), star.control(p, k))) * dt;
            }
            err += std::abs(diff / eps - z.terminal(p));
        }
        errs.push_back(err / static_cast<double>(cfg.paths));
    }
    EXPECT_LT(errs[1], errs[0]);
    EXPECT_LT(errs[2], errs[1]);
    EXPECT_LT(errs[2] / errs[0], 0.4);
}

TEST(Cost, ZeroCost) {
    const auto pr = trivial_problem(2, 1);
    const auto noise = sample_increments(unit_driver(2), PathGrid(1.0, 10), 20, 1);
    const auto rep = evaluate_cost(pr, integrate_forward(pr, ControlPolicy::constant(v1(1.0)), noise, StateVec::Ones(2)));
    EXPECT_EQ(rep.cost.mean, 0.0);
    EXPECT_EQ(rep.cost.se, 0.0);
}

TEST(Cost, DeterministicQuadraticControl) {
    auto pr = trivial_problem(2, 2);
    pr.running_cost = [](double, const StateVec&, const ControlVec& u) { return u.squaredNorm(); };
    pr.diffusion = [](double, const StateVec&) -> Operator { return Operator::Identity(2, 2); };
    MartingaleDriver drv(2, 2.0, {{StateVec::Ones(2), ScalarIntensity::constant(1.0)}});
    const auto n2 = sample_increments(drv, PathGrid(2.0, 16), 30, 1);
    const ControlVec u = (ControlVec(2) << 0.5, -1.0).finished();
    const auto rep = evaluate_cost(pr, integrate_forward(pr, ControlPolicy::constant(u), n2, StateVec::Zero(2)));
    EXPECT_NEAR(rep.cost.mean, 1.25 * 2.0, 1e-14);
    EXPECT_NEAR(rep.cost.se, 0.0, 1e-15);
}

TEST(DerivativeCheck, LinearDriftExact) {
    auto cfg = Example2Config::defaults();
    cfg.gamma.setZero();
    const auto pr = example2_problem(cfg);
    const auto probes = random_probes(pr, 32, 1.0, 4);
    const auto rep = finite_diff_check(pr, probes);
    EXPECT_TRUE(rep.passed());
    EXPECT_LT(rep.drift_x, 1e-10);
    EXPECT_LT(rep.drift_u, 1e-10);
}

TEST(DerivativeCheck, QuadraticTerminal) {
    const auto cfg = Example2Config::defaults();
    const auto pr = example2_problem(cfg);
    const auto probes = random_probes(pr, 32, 1.0, 5);
    const auto rep = finite_diff_check(pr, probes);
    EXPECT_LT(rep.terminal_x, 1e-9);
    for (const auto& p : probes) EXPECT_LT((pr.terminal_cost_x(p.x) - cfg.p1 * p.x).norm(), 1e-14);
}

TEST(DerivativeCheck, WrongRunningGradientFlagged) {
    auto cfg = Example2Config::defaults();
    cfg.derivative_fault = DerivativeFault::running_x;
    const auto pr = example2_problem(cfg);
    const auto probes = random_probes(pr, 16, 1.0, 6);
    const auto rep = finite_diff_check(pr, probes);
    EXPECT_FALSE(rep.passed());
    ASSERT_EQ(rep.faults.size(), 1u);
    EXPECT_NE(rep.faults[0].find("l_x"), std::string::npos);
}

TEST(DerivativeCheck, EveryInjectedFaultDetected) {
    for (auto f : {DerivativeFault::drift_x, DerivativeFault::drift_u, DerivativeFault::diffusion_x,
                   DerivativeFault::running_x, DerivativeFault::running_u, DerivativeFault::terminal_x}) {
        auto cfg = Example1Config::defaults();
        cfg.nonlinear_strength = 0.1;
        cfg.derivative_fault = f;
        const auto pr = example1_problem(cfg);
        const auto rep = finite_diff_check(pr, random_probes(pr, 32, 1.0, 7));
        EXPECT_FALSE(rep.passed()) << static_cast<int>(f);
    }
}

TEST(DerivativeCheck, GrowthConstants) {
    auto cfg = Example1Config::defaults();
    const auto pr = example1_problem(cfg);
    const auto rep = finite_diff_check(pr, random_probes(pr, 32, 1.0, 8));
    EXPECT_TRUE(rep.passed());
    EXPECT_LE(rep.h_growth, cfg.c.norm() + 1e-12);
    EXPECT_NEAR(rep.c3, cfg.f_tilde.operatorNorm(), 1e-12);
}

TEST(TrajectoryCsv, Layout) {
    const auto pr = trivial_problem(2, 1);
    const auto noise = sample_increments(unit_driver(2), PathGrid(1.0, 4), 3, 1);
    const auto traj = integrate_forward(pr, ControlPolicy::constant(v1(0.0)), noise, StateVec::Ones(2));
    std::ostringstream os;
    write_trajectory_csv(os, traj, 2);
    const std::string s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "path,step,time,x0,x1");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 2 * 5);
}
