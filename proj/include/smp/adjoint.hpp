#pragma once

// Hamiltonian
//
//     H(t, x, u, y, z) = l(t, x, u) + <F(t, x, u), y> + <G(t, x) Q^{1/2}(t), z>_2
//
// and the adjoint BSDE
//
//     -dY = grad_x H(t, X, u, Y, Z Q^{1/2}) dt - Z dM - dN,   Y(T) = h_x(X(T)),
//
// solved either explicitly (deterministic terminal gradient, Z = 0) or by
// least-squares Monte Carlo backward induction. N is carried as a residual
// diagnostic only: every driver here generates a Brownian filtration.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "smp/dynamics.hpp"
#include "smp/errors.hpp"
#include "smp/hilbert.hpp"
#include "smp/martingale.hpp"
#include "smp/parallel.hpp"
#include "smp/stats.hpp"

namespace smp {

struct HamiltonianArgs {
    double t = 0.0;
    StateVec x;
    ControlVec u;
    StateVec y;
    Operator zq;  // Z(t) Q^{1/2}(t)
};

/// H with a precomputed Q^{1/2}(t).
inline double hamiltonian(const ControlProblem& problem, const Operator& q_sqrt, const HamiltonianArgs& a) {
    const int d = problem.space.state_dim;
    detail::require_shape(a.x.size() == d && a.y.size() == d && a.u.size() == problem.space.control_dim,
                          "hamiltonian: argument dimensions");
    detail::require_shape(a.zq.rows() == d && a.zq.cols() == d, "hamiltonian: zq must be state_dim x state_dim");
    return problem.running_cost(a.t, a.x, a.u) + problem.drift(a.t, a.x, a.u).dot(a.y) +
           hs_inner(problem.diffusion(a.t, a.x) * q_sqrt, a.zq);
}

inline double hamiltonian(const ControlProblem& problem, const MartingaleDriver& driver, const HamiltonianArgs& a) {
    return hamiltonian(problem, psd_sqrt(cov_rate(driver, a.t)), a);
}

/// grad_x H = l_x + F_x^T y + Gamma,  <Gamma, e_i> = <G_x[e_i] Q^{1/2}, zq>_2.
inline StateVec grad_x_hamiltonian(const ControlProblem& problem, const Operator& q_sqrt, const HamiltonianArgs& a) {
    const int d = problem.space.state_dim;
    detail::require_shape(a.x.size() == d && a.y.size() == d && a.zq.rows() == d && a.zq.cols() == d,
                          "grad_x_hamiltonian: argument dimensions");
    StateVec g = problem.running_cost_x(a.t, a.x, a.u);
    g.noalias() += problem.drift_x(a.t, a.x, a.u).transpose() * a.y;
    if (a.zq.squaredNorm() > 0)
        for (int i = 0; i < d; ++i) g(i) += hs_inner(problem.diffusion_x(a.t, a.x, StateVec::Unit(d, i)) * q_sqrt, a.zq);
    return g;
}

inline StateVec grad_x_hamiltonian(const ControlProblem& problem, const MartingaleDriver& driver,
                                   const HamiltonianArgs& a) {
    return grad_x_hamiltonian(problem, psd_sqrt(cov_rate(driver, a.t)), a);
}

/// Polynomial features of the state up to a total degree, on whitened
/// coordinates (sample principal axes scaled to unit variance). Directions
/// with negligible variance are dropped, so a deterministic state (e.g. t = 0)
/// reduces to the constant feature.
class FeatureMap {
public:
    FeatureMap() = default;

    static FeatureMap fit(std::span<const StateVec> xs, int degree) {
        FeatureMap f;
        f.degree_ = degree;
        if (xs.empty()) return f;
        const int d = static_cast<int>(xs.front().size());
        const double n = static_cast<double>(xs.size());
        f.mean_ = Eigen::VectorXd::Zero(d);
        for (const auto& x : xs) f.mean_ += x;
        f.mean_ /= n;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (const auto& x : xs) cov.selfadjointView<Eigen::Lower>().rankUpdate(x - f.mean_);
        cov = cov.selfadjointView<Eigen::Lower>();
        cov /= n;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
        const double floor = std::max(1e-24 * std::max(1.0, f.mean_.squaredNorm()), 1e-12 * top);
        std::vector<int> keep;
        for (int i = d - 1; i >= 0; --i)
            if (es.eigenvalues()(i) > floor) keep.push_back(i);
        f.whiten_.resize(static_cast<Eigen::Index>(keep.size()), d);
        for (std::size_t j = 0; j < keep.size(); ++j)
            f.whiten_.row(static_cast<Eigen::Index>(j)) =
                es.eigenvectors().col(keep[j]).transpose() / std::sqrt(es.eigenvalues()(keep[j]));
        const auto na = f.whiten_.rows();
        f.lo_ = Eigen::VectorXd::Constant(na, std::numeric_limits<double>::infinity());
        f.hi_ = -f.lo_;
        for (const auto& x : xs) {
            const Eigen::VectorXd z = f.whiten_ * (x - f.mean_);
            f.lo_ = f.lo_.cwiseMin(z);
            f.hi_ = f.hi_.cwiseMax(z);
        }
        f.build_exponents();
        return f;
    }

    int size() const { return static_cast<int>(exponents_.size()); }

    Eigen::RowVectorXd eval(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        const std::size_t na = static_cast<std::size_t>(whiten_.rows());
        // held to the fitted box; no polynomial extrapolation
        const Eigen::VectorXd z = (whiten_ * (x - mean_)).cwiseMax(lo_).cwiseMin(hi_);
        Eigen::RowVectorXd out(size());
        for (int f = 0; f < size(); ++f) {
            double v = 1.0;
            for (std::size_t j = 0; j < na; ++j)
                for (int e = 0; e < exponents_[static_cast<std::size_t>(f)][j]; ++e) v *= z(static_cast<Eigen::Index>(j));
            out(f) = v;
        }
        return out;
    }

private:
    void build_exponents() {
        const std::size_t na = static_cast<std::size_t>(whiten_.rows());
        exponents_.clear();
        std::vector<int> cur(na, 0);
        // total degree 0..degree, graded order
        for (int total = 0; total <= degree_; ++total) enumerate(cur, 0, total);
    }
    void enumerate(std::vector<int>& cur, std::size_t j, int remaining) {
        if (j == cur.size()) {
            if (remaining == 0) exponents_.push_back(cur);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            cur[j] = e;
            enumerate(cur, j + 1, remaining - e);
        }
        cur[j] = 0;
    }

    int degree_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd whiten_;  // rows: principal axes scaled to unit variance
    Eigen::VectorXd lo_, hi_;
    std::vector<std::vector<int>> exponents_;
};

struct RegressionBasis {
    int degree = 2;
    double max_condition = 1e12;

    /// Number of features for a state of dimension d.
    static long count(int d, int degree) {
        long c = 1;
        for (int i = 1; i <= degree; ++i) c = c * (d + i) / i;
        return c;
    }
};

/// Fitted conditional expectation x -> E[Y_k | X_k = x] on every grid step.
struct ConditionalModel {
    std::vector<FeatureMap> features;
    std::vector<Eigen::MatrixXd> coefficients;

    StateVec operator()(std::size_t k, const StateVec& x) const {
        return (features.at(k).eval(x) * coefficients.at(k)).transpose();
    }
};

/// Time-gridded (Y, Z, N) with N held at zero; N residual energy is kept as a diagnostic.
class AdjointSolution {
public:
    struct Diagnostics {
        std::vector<double> n_energy;           // per step: mean |Y_{k+1} - E_k - Z_k dM_k|^2
        std::vector<double> martingale_energy;  // per step: mean |Y_{k+1} - E_k|^2
        std::vector<double> condition;          // per step: Gram condition number
        std::vector<std::string> warnings;
        double n_ratio() const {
            double a = 0, b = 0;
            for (std::size_t k = 0; k < n_energy.size(); ++k) {
                a += n_energy[k];
                b += martingale_energy[k];
            }
            return b > 0 ? a / b : 0.0;
        }
    };

    static AdjointSolution constant(const PathGrid& grid, std::size_t paths, StateVec y, Operator z,
                                    std::vector<Operator> q_sqrt) {
        AdjointSolution s;
        s.grid_ = grid;
        s.paths_ = paths;
        s.dim_ = static_cast<int>(y.size());
        s.constant_ = true;
        s.y_const_ = std::move(y);
        s.z_const_ = std::move(z);
        s.q_sqrt_ = std::move(q_sqrt);
        return s;
    }

    bool is_constant() const { return constant_; }
    /// True for a default-constructed (unsolved) placeholder.
    bool empty() const { return !constant_ && y_.empty(); }
    bool n_is_zero() const { return true; }
    int state_dim() const { return dim_; }
    const PathGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    const Diagnostics& diagnostics() const { return diag_; }

    StateVec y(std::size_t path, std::size_t k) const {
        if (constant_) return y_const_;
        detail::require(!empty(), "adjoint solution is empty");
        return Eigen::Map<const Eigen::VectorXd>(y_.data() + (path * (grid_.steps + 1) + k) * dim_, dim_);
    }
    Operator z(std::size_t path, std::size_t k) const {
        if (constant_) return z_const_;
        detail::require(!empty(), "adjoint solution is empty");
        return Eigen::Map<const Eigen::MatrixXd>(z_.data() + (path * grid_.steps + k) * dim_ * dim_, dim_, dim_);
    }
    /// Q^{1/2}(t_k).
    const Operator& q_sqrt(std::size_t k) const { return q_sqrt_.at(k); }
    /// Z(t_k) Q^{1/2}(t_k); defined for k < steps.
    Operator zq(std::size_t path, std::size_t k) const { return z(path, k) * q_sqrt_.at(k); }

    /// Regression estimate of E[Y_k | X_k = x].
    StateVec conditional_y(std::size_t k, const StateVec& x) const {
        if (constant_) return y_const_;
        return (*model_)(k, x);
    }
    /// Shared handle to the regression model; null for constant solutions.
    std::shared_ptr<const ConditionalModel> conditional_model() const { return model_; }

private:
    friend AdjointSolution solve_adjoint_lsmc(const ControlProblem&, const MartingaleDriver&, const TrajectoryBundle&,
                                              const RegressionBasis&);

    PathGrid grid_;
    std::size_t paths_ = 0;
    int dim_ = 0;
    bool constant_ = false;
    StateVec y_const_;
    Operator z_const_;
    std::vector<double> y_, z_;
    std::vector<Operator> q_sqrt_;
    std::shared_ptr<const ConditionalModel> model_;
    Diagnostics diag_;
};

inline std::vector<Operator> q_sqrt_table(const MartingaleDriver& driver, const PathGrid& grid) {
    std::vector<Operator> out(grid.steps + 1);
    for (std::size_t k = 0; k <= grid.steps; ++k) out[k] = psd_sqrt(cov_rate(driver, grid.time(k)));
    return out;
}

/// Explicit solution Y = h_x (constant), Z = 0, N = 0.
///
/// Applicable when h_x is constant and grad_x H vanishes at z = 0 with
/// y = h_x; both are checked on random probes.
inline AdjointSolution solve_adjoint_explicit(const ControlProblem& problem, const MartingaleDriver& driver,
                                              const PathGrid& grid, std::size_t paths = 1,
                                              std::size_t n_probes = 64, std::uint64_t probe_seed = 7) {
    problem.validate();
    const int d = problem.space.state_dim;
    const auto probes = random_probes(problem, n_probes, grid.horizon, probe_seed, 2.0);
    const StateVec c = problem.terminal_cost_x(StateVec::Zero(d));
    const auto qs = q_sqrt_table(driver, grid);
    const double scale = std::max(1.0, c.norm());
    for (const auto& pr : probes) {
        if ((problem.terminal_cost_x(pr.x) - c).norm() > 1e-10 * scale)
            throw PreconditionError("solve_adjoint_explicit: terminal gradient h_x is not constant");
        const HamiltonianArgs a{pr.t, pr.x, pr.u, c, Operator::Zero(d, d)};
        if (grad_x_hamiltonian(problem, qs[grid.nearest_index(pr.t)], a).norm() > 1e-10 * scale)
            throw PreconditionError("solve_adjoint_explicit: grad_x H does not vanish at z = 0");
    }
    return AdjointSolution::constant(grid, paths, c, Operator::Zero(d, d), qs);
}

namespace detail {

struct LeastSquares {
    Eigen::LDLT<Eigen::MatrixXd> solver;
    double condition = 1.0;
};

inline LeastSquares factor_gram(const Eigen::MatrixXd& feats, double max_condition, std::size_t step) {
    LeastSquares ls;
    const Eigen::MatrixXd gram = feats.transpose() * feats;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
    ls.condition = lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    if (!(ls.condition <= max_condition))
        throw NumericalError("LSMC regression is rank-deficient at step " + std::to_string(step) +
                             " (condition number " + std::to_string(ls.condition) + ")");
    ls.solver.compute(gram);
    return ls;
}

}  // namespace detail

/// Least-squares Monte Carlo backward induction along `traj`.
///
/// Per step k (from T backwards): E_k = projection of Y_{k+1} on the basis,
/// Z_k from the cross-moment regression E[(Y_{k+1} - E_k) dM_k^T | X_k] = Z_k S_k
/// with S_k the step covariance (pseudo-inverse on its range), and
/// Y_k = E_k + grad_x H(t_k, X_k, u_k, Y_k, Z_k Q^{1/2}) dt resolved by two
/// Picard passes started at E_k.
inline AdjointSolution solve_adjoint_lsmc(const ControlProblem& problem, const MartingaleDriver& driver,
                                          const TrajectoryBundle& traj, const RegressionBasis& basis = {}) {
    problem.validate();
    const NoiseBundle* noise = traj.noise();
    detail::require(noise != nullptr, "solve_adjoint_lsmc: trajectories carry no noise bundle");
    detail::require(traj.policy() != nullptr, "solve_adjoint_lsmc: trajectories carry no policy");
    const PathGrid& grid = traj.grid();
    const int d = problem.space.state_dim;
    const std::size_t n = traj.paths(), steps = grid.steps;
    const double dt = grid.dt();
    const long nf_max = RegressionBasis::count(d, basis.degree);
    if (static_cast<double>(nf_max) >= static_cast<double>(n) / 10.0)
        throw PreconditionError("solve_adjoint_lsmc: feature count must stay below paths/10");

    AdjointSolution s;
    s.grid_ = grid;
    s.paths_ = n;
    s.dim_ = d;
    s.q_sqrt_ = q_sqrt_table(driver, grid);
    s.y_.assign(n * (steps + 1) * d, 0.0);
    s.z_.assign(n * steps * d * d, 0.0);
    auto model = std::make_shared<ConditionalModel>();
    model->features.resize(steps + 1);
    model->coefficients.resize(steps + 1);
    s.diag_.n_energy.assign(steps, 0.0);
    s.diag_.martingale_energy.assign(steps, 0.0);
    s.diag_.condition.assign(steps + 1, 1.0);

    auto y_at = [&](std::size_t p, std::size_t k) {
        return Eigen::Map<Eigen::VectorXd>(s.y_.data() + (p * (steps + 1) + k) * d, d);
    };
    auto z_at = [&](std::size_t p, std::size_t k) {
        return Eigen::Map<Eigen::MatrixXd>(s.z_.data() + (p * steps + k) * d * d, d, d);
    };

    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::vector<StateVec> xs(n);
    Eigen::MatrixXd feats, targets(n, d), cross(n, d * d), fitted(n, d);
    std::vector<double> resid(n), mart(n);

    auto load_features = [&](std::size_t k) {
        for (std::size_t p = 0; p < n; ++p) xs[p] = traj.state(p, k);
        model->features[k] = FeatureMap::fit(xs, basis.degree);
        feats.resize(static_cast<Eigen::Index>(n), model->features[k].size());
        parallel_for(n, [&](std::size_t p) { feats.row(static_cast<Eigen::Index>(p)) = model->features[k].eval(xs[p]); });
    };

    // Terminal condition and its conditional fit.
    parallel_for(n, [&](std::size_t p) { y_at(p, steps) = problem.terminal_cost_x(traj.state(p, steps)); });
    load_features(steps);
    {
        const auto ls = detail::factor_gram(feats, basis.max_condition, steps);
        s.diag_.condition[steps] = ls.condition;
        for (std::size_t p = 0; p < n; ++p) targets.row(static_cast<Eigen::Index>(p)) = y_at(p, steps).transpose();
        model->coefficients[steps] = ls.solver.solve(feats.transpose() * targets);
    }

    for (std::size_t kk = steps; kk-- > 0;) {
        const std::size_t k = kk;
        const double t = grid.time(k);
        load_features(k);
        const auto ls = detail::factor_gram(feats, basis.max_condition, k);
        s.diag_.condition[k] = ls.condition;

        for (std::size_t p = 0; p < n; ++p) targets.row(static_cast<Eigen::Index>(p)) = y_at(p, k + 1).transpose();
        const Eigen::MatrixXd coef_e = ls.solver.solve(feats.transpose() * targets);
        fitted.noalias() = feats * coef_e;

        parallel_for(n, [&](std::size_t p) {
            const auto ip = static_cast<Eigen::Index>(p);
            const auto dm = noise->increment(p, k);
            for (int j = 0; j < d; ++j)
                for (int i = 0; i < d; ++i) cross(ip, i + j * d) = (targets(ip, i) - fitted(ip, i)) * dm(j);
        });
        const Eigen::MatrixXd coef_z = ls.solver.solve(feats.transpose() * cross);
        const RowMatrix b_all = feats * coef_z;  // row p: E[(Y - E) dM^T | X_p], column-major flattened
        const Operator step_pinv = psd_pinv(step_covariance(driver, grid, k));
        const Operator& qk = s.q_sqrt_[k];

        parallel_for(n, [&](std::size_t p) {
            const auto ip = static_cast<Eigen::Index>(p);
            auto z = z_at(p, k);
            z.noalias() = Eigen::Map<const Eigen::MatrixXd>(b_all.row(ip).data(), d, d) * step_pinv;
            const StateVec e = fitted.row(ip).transpose();
            // grad_x H is affine in y: base + F_x^T y.
            HamiltonianArgs a{t, xs[p], traj.control(p, k), StateVec::Zero(d), z * qk};
            const StateVec base = grad_x_hamiltonian(problem, qk, a);
            const Operator fxt = problem.drift_x(t, a.x, a.u).transpose();
            StateVec y = e;
            for (int it = 0; it < 2; ++it) y = e + (base + fxt * y) * dt;
            y_at(p, k) = y;
            const auto dm = noise->increment(p, k);
            double rn = 0.0, rm = 0.0;
            for (int i = 0; i < d; ++i) {
                const double m = targets(ip, i) - fitted(ip, i);
                const double r = m - z.row(i).dot(dm);
                rm += m * m;
                rn += r * r;
            }
            resid[p] = rn;
            mart[p] = rm;
        });
        double re = 0, me = 0;
        for (std::size_t p = 0; p < n; ++p) {
            re += resid[p];
            me += mart[p];
        }
        s.diag_.n_energy[k] = re / static_cast<double>(n);
        s.diag_.martingale_energy[k] = me / static_cast<double>(n);

        for (std::size_t p = 0; p < n; ++p) targets.row(static_cast<Eigen::Index>(p)) = y_at(p, k).transpose();
        model->coefficients[k] = ls.solver.solve(feats.transpose() * targets);
    }
    s.model_ = std::move(model);
    if (s.diag_.n_ratio() > 0.1)
        s.diag_.warnings.push_back("N residual energy ratio " + std::to_string(s.diag_.n_ratio()) +
                                   " exceeds 0.1; the basis may be too small");
    return s;
}

struct DualityReport {
    Estimate lhs;         // E<Y(T), p(T)>
    Estimate rhs;         // -E int l_x p ds + E<Y(t0), F(v) - F(u*)>
    Estimate difference;  // paired per-path difference
    bool passed(double n_se = 3.0) const {
        return std::abs(lhs.mean - rhs.mean) <= n_se * (lhs.se + rhs.se);
    }
};

/// Duality identity between the adjoint and the variational process of a spike.
inline DualityReport duality_check(const ControlProblem& problem, const TrajectoryBundle& optimal,
                                   const AdjointSolution& adjoint, const SpikeSpec& spec,
                                   const TrajectoryBundle& p_paths) {
    detail::require_shape(optimal.paths() == p_paths.paths() && optimal.paths() == adjoint.paths() &&
                              optimal.grid() == adjoint.grid() && optimal.grid() == p_paths.grid(),
                          "duality_check: inputs are not on one coupled bundle");
    detail::require(optimal.noise() == p_paths.noise(), "duality_check: p and X* use different noise");
    const PathGrid& grid = optimal.grid();
    const auto w = spec.window(grid);
    const double dt = grid.dt();
    const std::size_t n = optimal.paths();
    std::vector<double> lhs(n), rhs(n), diff(n);
    parallel_for(n, [&](std::size_t p) {
        lhs[p] = adjoint.y(p, grid.steps).dot(p_paths.state(p, grid.steps));
        double integral = 0.0;
        for (std::size_t k = w.begin; k < grid.steps; ++k) {
            const StateVec x = optimal.state(p, k);
            integral += problem.running_cost_x(grid.time(k), x, optimal.control(p, k)).dot(p_paths.state(p, k)) * dt;
        }
        const double t0 = grid.time(w.begin);
        const StateVec x0 = optimal.state(p, w.begin);
        const StateVec kick = problem.drift(t0, x0, spec.v) - problem.drift(t0, x0, optimal.control(p, w.begin));
        rhs[p] = -integral + adjoint.y(p, w.begin).dot(kick);
        diff[p] = lhs[p] - rhs[p];
    });
    return {estimate(lhs), estimate(rhs), estimate(diff)};
}

/// CSV dump: path,step,time,y0..,z00,z01,... (Z row-major, zero at k = steps).
inline void write_adjoint_csv(std::ostream& os, const AdjointSolution& adj, std::size_t max_paths = SIZE_MAX) {
    const int d = adj.state_dim();
    os.precision(17);
    os << "path,step,time";
    for (int i = 0; i < d; ++i) os << ",y" << i;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) os << ",z" << i << j;
    os << '\n';
    const std::size_t n = std::min(max_paths, adj.paths());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k <= adj.grid().steps; ++k) {
            os << p << ',' << k << ',' << adj.grid().time(k);
            const StateVec y = adj.y(p, k);
            for (int i = 0; i < d; ++i) os << ',' << y(i);
            const Operator z = k < adj.grid().steps ? adj.z(p, k) : Operator::Zero(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) os << ',' << z(i, j);
            os << '\n';
        }
}

}  // namespace smp
