#pragma once

// Controlled forward SDE
//
//     dX = F(t, X, u) dt + G(t, X) dM,   X(0) = x0,
//
// integrated by left-point Euler-Maruyama on a realized NoiseBundle, together
// with spike variations of a control, the first-order variational process p,
// the running-cost sensitivity zeta and Monte Carlo cost evaluation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "smp/errors.hpp"
#include "smp/hilbert.hpp"
#include "smp/martingale.hpp"
#include "smp/parallel.hpp"
#include "smp/stats.hpp"

namespace smp {

/// Admissible control set U.
class ControlSet {
public:
    enum class Kind { box, ball, finite };

    static ControlSet box(ControlVec lo, ControlVec hi) {
        detail::require_shape(lo.size() == hi.size() && lo.size() > 0, "box bounds must have equal nonzero size");
        detail::require((lo.array() <= hi.array()).all(), "box lower bound exceeds upper bound");
        ControlSet s(Kind::box);
        s.lo_ = std::move(lo);
        s.hi_ = std::move(hi);
        return s;
    }
    static ControlSet symmetric_box(int dim, double half_width) {
        return box(ControlVec::Constant(dim, -half_width), ControlVec::Constant(dim, half_width));
    }
    static ControlSet ball(ControlVec center, double radius) {
        detail::require(radius > 0, "ball radius must be positive");
        ControlSet s(Kind::ball);
        s.lo_ = center.array() - radius;
        s.hi_ = center.array() + radius;
        s.center_ = std::move(center);
        s.radius_ = radius;
        return s;
    }
    static ControlSet finite(std::vector<ControlVec> points) {
        detail::require(!points.empty(), "finite control set is empty");
        for (const auto& p : points) detail::require_shape(p.size() == points.front().size(), "finite control set has mixed dims");
        ControlSet s(Kind::finite);
        s.points_ = std::move(points);
        return s;
    }

    Kind kind() const { return kind_; }
    int dim() const { return static_cast<int>(kind_ == Kind::finite ? points_.front().size() : lo_.size()); }
    bool convex() const { return kind_ != Kind::finite; }
    const ControlVec& lower() const { return lo_; }
    const ControlVec& upper() const { return hi_; }
    const ControlVec& center() const { return center_; }
    double radius() const { return radius_; }
    const std::vector<ControlVec>& points() const { return points_; }

    bool contains(const ControlVec& u, double tol = 1e-12) const {
        if (u.size() != dim() || !u.allFinite()) return false;
        switch (kind_) {
        case Kind::box:
            return ((u.array() >= lo_.array() - tol) && (u.array() <= hi_.array() + tol)).all();
        case Kind::ball:
            return (u - center_).norm() <= radius_ * (1 + tol) + tol;
        case Kind::finite:
            return std::any_of(points_.begin(), points_.end(),
                               [&](const ControlVec& p) { return (p - u).lpNorm<Eigen::Infinity>() <= tol; });
        }
        return false;
    }

private:
    explicit ControlSet(Kind k) : kind_(k) {}
    Kind kind_;
    ControlVec lo_, hi_, center_;
    double radius_ = 0.0;
    std::vector<ControlVec> points_;
};

/// Coefficients (F, G, l, h) of a control problem together with their derivatives.
///
/// G_x is supplied directionally: diffusion_x(t, x, d) = G_x(t, x)[d].
struct ControlProblem {
    using DriftFn = std::function<StateVec(double, const StateVec&, const ControlVec&)>;
    using DriftJacFn = std::function<Operator(double, const StateVec&, const ControlVec&)>;
    using DiffusionFn = std::function<Operator(double, const StateVec&)>;
    using DiffusionDirFn = std::function<Operator(double, const StateVec&, const StateVec&)>;
    using RunningFn = std::function<double(double, const StateVec&, const ControlVec&)>;
    using RunningGradFn = std::function<Eigen::VectorXd(double, const StateVec&, const ControlVec&)>;
    using TerminalFn = std::function<double(const StateVec&)>;
    using TerminalGradFn = std::function<StateVec(const StateVec&)>;

    std::string name;
    SpaceConfig space;
    DriftFn drift;
    DriftJacFn drift_x;
    DriftJacFn drift_u;
    DiffusionFn diffusion;
    DiffusionDirFn diffusion_x;
    RunningFn running_cost;
    RunningGradFn running_cost_x;
    RunningGradFn running_cost_u;
    TerminalFn terminal_cost;
    TerminalGradFn terminal_cost_x;
    ControlSet control_set = ControlSet::symmetric_box(1, 1.0);

    void validate() const {
        space.validate();
        detail::require(drift && drift_x && drift_u && diffusion && diffusion_x && running_cost && running_cost_x &&
                            running_cost_u && terminal_cost && terminal_cost_x,
                        "control problem '" + name + "' has missing coefficients");
        detail::require_shape(control_set.dim() == space.control_dim, "control set dimension differs from control_dim");
    }
};

/// Grid-aligned spike: the control is replaced by v on [t0, t0 + eps).
struct SpikeSpec {
    double t0 = 0.0;
    double eps = 0.0;
    ControlVec v;

    struct Window {
        std::size_t begin = 0;  // first step using v
        std::size_t end = 0;    // one past the last step using v
    };

    Window window(const PathGrid& grid) const {
        if (!(eps > 0)) throw PreconditionError("spike eps must be positive");
        if (!(t0 >= 0) || !(t0 < grid.horizon)) throw PreconditionError("spike t0 must lie in [0, T)");
        const std::size_t begin = grid.index_of(t0);
        const double m = eps / grid.dt();
        const double mr = std::round(m);
        if (std::abs(m - mr) > 1e-9 * std::max(1.0, m))
            throw PreconditionError("spike window is off-grid: eps is not a multiple of dt");
        if (mr < 1) throw PreconditionError("spike window spans zero steps");
        const auto len = static_cast<std::size_t>(mr);
        if (begin + len > grid.steps) throw PreconditionError("spike window extends past T");
        return {begin, begin + len};
    }
};

/// Open-loop schedule or feedback law, with optional spike overrides.
class ControlPolicy {
public:
    using FeedbackFn = std::function<ControlVec(double, const StateVec&)>;

    /// Path-independent schedule: one control per grid step.
    static ControlPolicy open_loop(std::vector<ControlVec> schedule) {
        detail::require(!schedule.empty(), "open-loop schedule is empty");
        ControlPolicy p;
        p.schedule_ = std::move(schedule);
        return p;
    }
    /// Constant open-loop control, valid on any grid.
    static ControlPolicy constant(ControlVec u) {
        ControlPolicy p;
        p.schedule_ = {std::move(u)};
        p.constant_ = true;
        return p;
    }
    static ControlPolicy feedback(FeedbackFn fn) {
        detail::require(static_cast<bool>(fn), "feedback law is empty");
        ControlPolicy p;
        p.feedback_ = std::move(fn);
        return p;
    }

    bool is_open_loop() const { return !feedback_; }
    bool is_feedback() const { return static_cast<bool>(feedback_); }

    /// Control applied on [t_k, t_{k+1}) at state x.
    ControlVec at(std::size_t k, double t, const StateVec& x) const {
        for (auto it = overrides_.rbegin(); it != overrides_.rend(); ++it)
            if (k >= it->window.begin && k < it->window.end) return it->v;
        if (feedback_) return feedback_(t, x);
        return constant_ ? schedule_.front() : schedule_.at(k);
    }

    /// Rejects schedules that do not match the grid.
    void validate_on(const PathGrid& grid) const {
        if (is_open_loop() && !constant_ && schedule_.size() != grid.steps)
            throw PreconditionError("open-loop schedule length differs from grid steps");
    }

    ControlPolicy with_spike(const SpikeSpec& spec, const PathGrid& grid) const {
        ControlPolicy p = *this;
        p.overrides_.push_back({spec.window(grid), spec.v});
        return p;
    }

private:
    struct Override {
        SpikeSpec::Window window;
        ControlVec v;
    };

    std::vector<ControlVec> schedule_;
    bool constant_ = false;
    FeedbackFn feedback_;
    std::vector<Override> overrides_;
};

inline ControlPolicy apply_spike(const ControlPolicy& policy, const SpikeSpec& spec, const PathGrid& grid) {
    policy.validate_on(grid);
    return policy.with_spike(spec, grid);
}

/// Per-path, per-grid-time states. Holds the policy used and a non-owning
/// pointer to the noise it was driven by; the bundle must outlive it.
class TrajectoryBundle {
public:
    TrajectoryBundle() = default;
    TrajectoryBundle(int state_dim, PathGrid grid, std::size_t paths, const NoiseBundle* noise,
                     std::shared_ptr<const ControlPolicy> policy)
        : state_dim_(state_dim), grid_(grid), paths_(paths), noise_(noise), policy_(std::move(policy)),
          data_(paths * (grid.steps + 1) * static_cast<std::size_t>(state_dim), 0.0) {}

    int state_dim() const { return state_dim_; }
    const PathGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t steps() const { return grid_.steps; }
    const NoiseBundle* noise() const { return noise_; }
    const ControlPolicy* policy() const { return policy_.get(); }
    std::shared_ptr<const ControlPolicy> policy_ptr() const { return policy_; }
    std::span<const double> raw() const { return data_; }

    Eigen::Map<const Eigen::VectorXd> state(std::size_t path, std::size_t k) const {
        return Eigen::Map<const Eigen::VectorXd>(data_.data() + offset(path, k), state_dim_);
    }
    Eigen::Map<Eigen::VectorXd> state(std::size_t path, std::size_t k) {
        return Eigen::Map<Eigen::VectorXd>(data_.data() + offset(path, k), state_dim_);
    }
    /// Control used on [t_k, t_{k+1}) along this path.
    ControlVec control(std::size_t path, std::size_t k) const {
        if (control_dim_ > 0)
            return Eigen::Map<const Eigen::VectorXd>(controls_.data() + control_offset(path, k), control_dim_);
        detail::require(policy_ != nullptr, "trajectory bundle has no policy");
        return policy_->at(k, grid_.time(k), state(path, k));
    }

    /// Allocates per-step control storage (used for feedback policies).
    void store_controls(int control_dim) {
        control_dim_ = control_dim;
        controls_.assign(paths_ * grid_.steps * static_cast<std::size_t>(control_dim), 0.0);
    }
    bool stores_controls() const { return control_dim_ > 0; }
    Eigen::Map<Eigen::VectorXd> control_slot(std::size_t path, std::size_t k) {
        return Eigen::Map<Eigen::VectorXd>(controls_.data() + control_offset(path, k), control_dim_);
    }

private:
    std::size_t offset(std::size_t path, std::size_t k) const {
        return (path * (grid_.steps + 1) + k) * static_cast<std::size_t>(state_dim_);
    }
    std::size_t control_offset(std::size_t path, std::size_t k) const {
        return (path * grid_.steps + k) * static_cast<std::size_t>(control_dim_);
    }

    int state_dim_ = 0;
    PathGrid grid_;
    std::size_t paths_ = 0;
    const NoiseBundle* noise_ = nullptr;
    std::shared_ptr<const ControlPolicy> policy_;
    std::vector<double> data_;
    int control_dim_ = 0;
    std::vector<double> controls_;
};

namespace detail {

inline void check_state(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t path, std::size_t k) {
    if (!x.allFinite())
        throw NumericalError("non-finite state (blow-up) on path " + std::to_string(path) + " at step " +
                             std::to_string(k));
}

}  // namespace detail

/// Euler-Maruyama: X_{k+1} = X_k + F(t_k, X_k, u_k) dt + G(t_k, X_k) dM_k.
///
/// If `prefix` is given, states up to and including `start_step` are copied
/// from it and integration resumes there; with identical inputs the result is
/// bit-identical to a full integration.
inline TrajectoryBundle integrate_forward(const ControlProblem& problem, const ControlPolicy& policy,
                                          const NoiseBundle& bundle, const StateVec& x0,
                                          const TrajectoryBundle* prefix = nullptr, std::size_t start_step = 0) {
    problem.validate();
    const PathGrid& grid = bundle.grid();
    policy.validate_on(grid);
    const int d = problem.space.state_dim;
    detail::require_shape(x0.size() == d, "integrate_forward: x0 has wrong dimension");
    detail::require_shape(bundle.state_dim() == d, "integrate_forward: noise dimension differs from state_dim");
    if (prefix) {
        detail::require(prefix->noise() == &bundle, "integrate_forward: prefix was driven by a different bundle");
        detail::require(start_step <= grid.steps, "integrate_forward: start_step past horizon");
    } else {
        start_step = 0;
    }
    const double dt = grid.dt();
    auto shared = std::make_shared<const ControlPolicy>(policy);
    TrajectoryBundle out(d, grid, bundle.paths(), &bundle, shared);
    if (policy.is_feedback()) out.store_controls(problem.space.control_dim);

    // Open-loop controls are path-independent; validate them once.
    if (policy.is_open_loop())
        for (std::size_t k = 0; k < grid.steps; ++k)
            if (!problem.control_set.contains(policy.at(k, grid.time(k), x0)))
                throw PreconditionError("policy value outside the control set at step " + std::to_string(k));

    parallel_for(bundle.paths(), [&](std::size_t p) {
        if (prefix) {
            for (std::size_t k = 0; k <= start_step; ++k) out.state(p, k) = prefix->state(p, k);
            if (out.stores_controls())
                for (std::size_t k = 0; k < start_step; ++k) out.control_slot(p, k) = prefix->control(p, k);
        } else {
            out.state(p, 0) = x0;
        }
        StateVec x = out.state(p, start_step);
        for (std::size_t k = start_step; k < grid.steps; ++k) {
            const double t = grid.time(k);
            const ControlVec u = policy.at(k, t, x);
            if (policy.is_feedback() && !problem.control_set.contains(u))
                throw PreconditionError("feedback control outside the control set on path " + std::to_string(p) +
                                        " at step " + std::to_string(k));
            if (out.stores_controls()) out.control_slot(p, k) = u;
            StateVec next = x + problem.drift(t, x, u) * dt;
            next.noalias() += problem.diffusion(t, x) * bundle.increment(p, k);
            detail::check_state(next, p, k + 1);
            out.state(p, k + 1) = next;
            x = std::move(next);
        }
    });
    return out;
}

/// Fault injections used by the verification scenarios.
struct VariationalFaults {
    double initial_scale = 1.0;  // multiplies p(t0)
};

/// First-order variational process of a spike:
///   p(t0) = F(X*(t0), v) - F(X*(t0), u*(t0)),
///   p_{k+1} = p_k + F_x p_k dt + G_x[p_k] dM_k   for k >= k0.
/// States before t0 are zero.
inline TrajectoryBundle integrate_variational(const ControlProblem& problem, const TrajectoryBundle& optimal,
                                              const NoiseBundle& bundle, const SpikeSpec& spec,
                                              const VariationalFaults& faults = {}) {
    problem.validate();
    if (optimal.noise() != &bundle) throw PreconditionError("integrate_variational: optimal trajectories use a different noise bundle");
    const PathGrid& grid = bundle.grid();
    const auto w = spec.window(grid);
    const double dt = grid.dt();
    const int d = problem.space.state_dim;
    TrajectoryBundle out(d, grid, bundle.paths(), &bundle, optimal.policy_ptr());
    parallel_for(bundle.paths(), [&](std::size_t p) {
        const double t0 = grid.time(w.begin);
        const StateVec x0 = optimal.state(p, w.begin);
        StateVec pk = (problem.drift(t0, x0, spec.v) - problem.drift(t0, x0, optimal.control(p, w.begin))) *
                      faults.initial_scale;
        out.state(p, w.begin) = pk;
        for (std::size_t k = w.begin; k < grid.steps; ++k) {
            const double t = grid.time(k);
            const StateVec x = optimal.state(p, k);
            const ControlVec u = optimal.control(p, k);
            StateVec next = pk + problem.drift_x(t, x, u) * pk * dt;
            next.noalias() += problem.diffusion_x(t, x, pk) * bundle.increment(p, k);
            detail::check_state(next, p, k + 1);
            out.state(p, k + 1) = next;
            pk = std::move(next);
        }
    });
    return out;
}

/// Per-path zeta values on the grid, zero before t0.
struct ZetaPaths {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::vector<double> values;  // [path][k], k = 0..steps

    double at(std::size_t path, std::size_t k) const { return values[path * (steps + 1) + k]; }
    double terminal(std::size_t path) const { return at(path, steps); }
};

/// zeta(t0) = l(X*(t0), v) - l(X*(t0), u*(t0)),  zeta_{k+1} = zeta_k + <l_x, p_k> dt.
inline ZetaPaths integrate_zeta(const ControlProblem& problem, const TrajectoryBundle& optimal,
                                const TrajectoryBundle& p_paths, const SpikeSpec& spec) {
    detail::require_shape(optimal.paths() == p_paths.paths() && optimal.grid() == p_paths.grid(),
                          "integrate_zeta: p paths do not match the optimal bundle");
    const PathGrid& grid = optimal.grid();
    const auto w = spec.window(grid);
    const double dt = grid.dt();
    ZetaPaths z{optimal.paths(), grid.steps, std::vector<double>(optimal.paths() * (grid.steps + 1), 0.0)};
    parallel_for(optimal.paths(), [&](std::size_t p) {
        const double t0 = grid.time(w.begin);
        const StateVec x0 = optimal.state(p, w.begin);
        double zeta = problem.running_cost(t0, x0, spec.v) - problem.running_cost(t0, x0, optimal.control(p, w.begin));
        double* row = z.values.data() + p * (grid.steps + 1);
        row[w.begin] = zeta;
        for (std::size_t k = w.begin; k < grid.steps; ++k) {
            const double t = grid.time(k);
            const StateVec x = optimal.state(p, k);
            zeta += problem.running_cost_x(t, x, optimal.control(p, k)).dot(p_paths.state(p, k)) * dt;
            row[k + 1] = zeta;
        }
    });
    return z;
}

struct CostReport {
    Estimate cost;
    std::vector<double> per_path;
};

/// Left-Riemann running cost plus terminal cost, per path.
inline CostReport evaluate_cost(const ControlProblem& problem, const TrajectoryBundle& traj) {
    const PathGrid& grid = traj.grid();
    const double dt = grid.dt();
    CostReport rep;
    rep.per_path.assign(traj.paths(), 0.0);
    parallel_for(traj.paths(), [&](std::size_t p) {
        double j = 0.0;
        for (std::size_t k = 0; k < grid.steps; ++k) {
            const StateVec x = traj.state(p, k);
            j += problem.running_cost(grid.time(k), x, traj.control(p, k)) * dt;
        }
        rep.per_path[p] = j + problem.terminal_cost(traj.state(p, grid.steps));
    });
    rep.cost = estimate(rep.per_path);
    return rep;
}

/// Probe point for derivative checks.
struct DerivativeProbe {
    double t = 0.0;
    StateVec x;
    ControlVec u;
};

struct DerivativeReport {
    double drift_x = 0, drift_u = 0, diffusion_x = 0, running_x = 0, running_u = 0, terminal_x = 0;
    double c1 = 0, c2 = 0, c3 = 0;  // probe maxima of |F_x|, ||G_x||, |F_u|
    double h_growth = 0;            // max |h_x(x)| / (1 + |x|)
    double tolerance = 1e-4;
    std::vector<std::string> faults;

    bool passed() const { return faults.empty(); }
    double max_error() const { return std::max({drift_x, drift_u, diffusion_x, running_x, running_u, terminal_x}); }
};

/// Central finite differences of F, G, l, h against the supplied derivatives.
inline DerivativeReport finite_diff_check(const ControlProblem& problem, std::span<const DerivativeProbe> probes,
                                          double tolerance = 1e-4, double rel_step = 1e-5) {
    problem.validate();
    const int d = problem.space.state_dim, m = problem.space.control_dim;
    DerivativeReport rep;
    rep.tolerance = tolerance;
    auto rel = [](const Eigen::MatrixXd& fd, const Eigen::MatrixXd& an) {
        return (fd - an).norm() / std::max(1.0, an.norm());
    };
    for (const auto& pr : probes) {
        detail::require_shape(pr.x.size() == d && pr.u.size() == m, "finite_diff_check: probe has wrong dims");
        detail::require(pr.x.allFinite() && pr.u.allFinite(), "finite_diff_check: probe not finite");
        const double t = pr.t;
        Operator fx(d, d), fu(d, m);
        Eigen::VectorXd lx(d), lu(m), hx(d);
        double gx_err = 0.0, gx_norm2 = 0.0;
        for (int i = 0; i < d; ++i) {
            const double h = rel_step * std::max(1.0, std::abs(pr.x(i)));
            StateVec xp = pr.x, xm = pr.x;
            xp(i) += h;
            xm(i) -= h;
            fx.col(i) = (problem.drift(t, xp, pr.u) - problem.drift(t, xm, pr.u)) / (2 * h);
            lx(i) = (problem.running_cost(t, xp, pr.u) - problem.running_cost(t, xm, pr.u)) / (2 * h);
            hx(i) = (problem.terminal_cost(xp) - problem.terminal_cost(xm)) / (2 * h);
            const Operator gfd = (problem.diffusion(t, xp) - problem.diffusion(t, xm)) / (2 * h);
            const Operator gan = problem.diffusion_x(t, pr.x, StateVec::Unit(d, i));
            gx_err = std::max(gx_err, rel(gfd, gan));
            gx_norm2 += gan.squaredNorm();
        }
        for (int j = 0; j < m; ++j) {
            const double h = rel_step * std::max(1.0, std::abs(pr.u(j)));
            ControlVec up = pr.u, um = pr.u;
            up(j) += h;
            um(j) -= h;
            fu.col(j) = (problem.drift(t, pr.x, up) - problem.drift(t, pr.x, um)) / (2 * h);
            lu(j) = (problem.running_cost(t, pr.x, up) - problem.running_cost(t, pr.x, um)) / (2 * h);
        }
        const Operator fx_an = problem.drift_x(t, pr.x, pr.u);
        const Operator fu_an = problem.drift_u(t, pr.x, pr.u);
        const Eigen::VectorXd hx_an = problem.terminal_cost_x(pr.x);
        rep.drift_x = std::max(rep.drift_x, rel(fx, fx_an));
        rep.drift_u = std::max(rep.drift_u, rel(fu, fu_an));
        rep.diffusion_x = std::max(rep.diffusion_x, gx_err);
        rep.running_x = std::max(rep.running_x, rel(lx, problem.running_cost_x(t, pr.x, pr.u)));
        rep.running_u = std::max(rep.running_u, rel(lu, problem.running_cost_u(t, pr.x, pr.u)));
        rep.terminal_x = std::max(rep.terminal_x, rel(hx, hx_an));
        rep.c1 = std::max(rep.c1, fx_an.operatorNorm());
        rep.c2 = std::max(rep.c2, std::sqrt(gx_norm2));
        rep.c3 = std::max(rep.c3, fu_an.operatorNorm());
        rep.h_growth = std::max(rep.h_growth, hx_an.norm() / (1.0 + pr.x.norm()));
    }
    const std::pair<const char*, double> checks[] = {{"F_x", rep.drift_x},     {"F_u", rep.drift_u},
                                                     {"G_x", rep.diffusion_x}, {"l_x", rep.running_x},
                                                     {"l_u", rep.running_u},   {"h_x", rep.terminal_x}};
    for (const auto& [name, err] : checks)
        if (!(err <= tolerance))
            rep.faults.push_back(std::string(name) + " disagrees with finite differences (relative error " +
                                 std::to_string(err) + ")");
    return rep;
}

/// Random probes: x ~ N(0, scale^2 I), u uniform over the bounding box of U
/// (or drawn from the finite set), t uniform on [0, horizon].
inline std::vector<DerivativeProbe> random_probes(const ControlProblem& problem, std::size_t n, double horizon,
                                                  std::uint64_t seed, double scale = 1.0) {
    auto engine = path_engine(seed, 0, 0xD1FF);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<DerivativeProbe> probes;
    const auto& cs = problem.control_set;
    for (std::size_t i = 0; i < n; ++i) {
        DerivativeProbe pr;
        pr.t = unif(engine) * horizon;
        pr.x = StateVec(problem.space.state_dim);
        for (int j = 0; j < pr.x.size(); ++j) pr.x(j) = scale * normal(engine);
        if (cs.kind() == ControlSet::Kind::finite) {
            pr.u = cs.points()[static_cast<std::size_t>(unif(engine) * static_cast<double>(cs.points().size())) % cs.points().size()];
        } else {
            pr.u = ControlVec(cs.dim());
            for (int j = 0; j < pr.u.size(); ++j) pr.u(j) = cs.lower()(j) + unif(engine) * (cs.upper()(j) - cs.lower()(j));
        }
        probes.push_back(std::move(pr));
    }
    return probes;
}

/// CSV dump: path,step,time,x0..x{d-1}.
inline void write_trajectory_csv(std::ostream& os, const TrajectoryBundle& traj, std::size_t max_paths = SIZE_MAX) {
    os.precision(17);
    os << "path,step,time";
    for (int i = 0; i < traj.state_dim(); ++i) os << ",x" << i;
    os << '\n';
    const std::size_t n = std::min(max_paths, traj.paths());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k <= traj.steps(); ++k) {
            os << p << ',' << k << ',' << traj.grid().time(k);
            const auto x = traj.state(p, k);
            for (int i = 0; i < traj.state_dim(); ++i) os << ',' << x(i);
            os << '\n';
        }
}

}  // namespace smp
