#pragma once

// Continuous square-integrable martingale drivers built from independent
// time-changed scalar Brownian motions:
//
//     M(t) = sum_i beta_i m_i(t),   <m_i>_t = int_0^t alpha_i(s) ds,
//
// so the covariance rate is Q(t) = sum_i alpha_i(t) beta_i (x) beta_i.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smp/errors.hpp"
#include "smp/hilbert.hpp"
#include "smp/parallel.hpp"
#include "smp/stats.hpp"

namespace smp {

/// Uniform grid t_k = k T / steps on [0, T].
struct PathGrid {
    double horizon = 1.0;
    std::size_t steps = 1;

    PathGrid() = default;
    PathGrid(double horizon_, std::size_t steps_) : horizon(horizon_), steps(steps_) { validate(); }

    void validate() const {
        detail::require(horizon > 0 && std::isfinite(horizon), "grid horizon must be positive");
        detail::require(steps >= 1, "grid steps must be >= 1");
    }
    double dt() const { return horizon / static_cast<double>(steps); }
    double time(std::size_t k) const { return k == steps ? horizon : static_cast<double>(k) * dt(); }

    /// Index of the grid point t, or throws if t is not (numerically) on the grid.
    std::size_t index_of(double t, double rel_tol = 1e-9) const {
        const double x = t / dt();
        const double r = std::round(x);
        if (r < 0 || r > static_cast<double>(steps) || std::abs(x - r) > rel_tol * std::max(1.0, std::abs(x)))
            throw PreconditionError("time " + std::to_string(t) + " is not a grid point");
        return static_cast<std::size_t>(r);
    }
    /// Nearest grid index (used by feedback policies evaluated at grid times).
    std::size_t nearest_index(double t) const {
        const double r = std::round(t / dt());
        return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(steps)));
    }

    friend bool operator==(const PathGrid&, const PathGrid&) = default;
};

/// Positive intensity alpha(t) of a scalar time-changed Brownian martingale.
struct ScalarIntensity {
    std::function<double(double)> alpha;
    double alpha_max = 1.0;

    static ScalarIntensity constant(double a) {
        return {[a](double) { return a; }, a};
    }
    /// alpha(t) = a0 + a1 t on [0, horizon].
    static ScalarIntensity affine(double a0, double a1, double horizon) {
        return {[a0, a1](double t) { return a0 + a1 * t; }, std::max(a0, a0 + a1 * horizon)};
    }
};

struct DriverComponent {
    StateVec direction;
    ScalarIntensity intensity;
};

/// Finite sum of rank-one time-changed Brownian martingales on [0, horizon].
class MartingaleDriver {
public:
    MartingaleDriver(int state_dim, double horizon, std::vector<DriverComponent> components = {})
        : state_dim_(state_dim), horizon_(horizon), components_(std::move(components)) {
        detail::require_shape(state_dim_ >= 1, "driver state_dim must be >= 1");
        detail::require(horizon_ > 0, "driver horizon must be positive");
        for (const auto& c : components_) {
            detail::require_shape(c.direction.size() == state_dim_, "driver direction has wrong dimension");
            detail::require(c.direction.norm() > 0, "driver direction must be nonzero");
            detail::require(static_cast<bool>(c.intensity.alpha), "driver intensity is empty");
            detail::require(c.intensity.alpha_max > 0, "driver alpha_max must be positive");
        }
    }

    int state_dim() const { return state_dim_; }
    double horizon() const { return horizon_; }
    const std::vector<DriverComponent>& components() const { return components_; }

    /// Checks alpha(t) in (0, alpha_max] at every grid time.
    void validate_on(const PathGrid& grid) const {
        detail::require(std::abs(grid.horizon - horizon_) <= 1e-12 * horizon_, "grid horizon differs from driver horizon");
        for (const auto& c : components_)
            for (std::size_t k = 0; k <= grid.steps; ++k) {
                const double a = c.intensity.alpha(grid.time(k));
                if (!(a > 0) || a > c.intensity.alpha_max * (1 + 1e-12))
                    throw PreconditionError("intensity out of (0, alpha_max] at t=" + std::to_string(grid.time(k)));
            }
    }

    /// Dominating operator sum_i alpha_max,i beta_i (x) beta_i.
    Operator dominating() const {
        Operator q = Operator::Zero(state_dim_, state_dim_);
        for (const auto& c : components_) q += c.intensity.alpha_max * tensor(c.direction, c.direction);
        return q;
    }

private:
    int state_dim_;
    double horizon_;
    std::vector<DriverComponent> components_;
};

/// Covariance rate Q(t).
inline CovarianceOperator cov_rate(const MartingaleDriver& driver, double t) {
    if (t < 0 || t > driver.horizon() * (1 + 1e-12))
        throw PreconditionError("cov_rate: t=" + std::to_string(t) + " outside [0, T]");
    Operator q = Operator::Zero(driver.state_dim(), driver.state_dim());
    for (const auto& c : driver.components()) q += c.intensity.alpha(t) * tensor(c.direction, c.direction);
    return CovarianceOperator(q);
}

/// Trapezoid integral of alpha_i over [t_k, t_{k+1}].
inline double step_intensity(const DriverComponent& c, const PathGrid& grid, std::size_t k) {
    return 0.5 * (c.intensity.alpha(grid.time(k)) + c.intensity.alpha(grid.time(k + 1))) * grid.dt();
}

/// Step covariance int_{t_k}^{t_{k+1}} Q(s) ds (trapezoid in alpha).
inline Operator step_covariance(const MartingaleDriver& driver, const PathGrid& grid, std::size_t k) {
    Operator s = Operator::Zero(driver.state_dim(), driver.state_dim());
    for (const auto& c : driver.components()) s += step_intensity(c, grid, k) * tensor(c.direction, c.direction);
    return s;
}

/// Realized increments Delta M_k for every path, stored path-major.
class NoiseBundle {
public:
    NoiseBundle() = default;
    NoiseBundle(int state_dim, PathGrid grid, std::size_t paths, std::uint64_t seed)
        : state_dim_(state_dim), grid_(grid), paths_(paths), seed_(seed),
          data_(paths * grid.steps * static_cast<std::size_t>(state_dim), 0.0) {}

    int state_dim() const { return state_dim_; }
    const PathGrid& grid() const { return grid_; }
    std::size_t steps() const { return grid_.steps; }
    std::size_t paths() const { return paths_; }
    std::uint64_t seed() const { return seed_; }
    std::span<const double> raw() const { return data_; }

    Eigen::Map<const Eigen::VectorXd> increment(std::size_t path, std::size_t k) const {
        return Eigen::Map<const Eigen::VectorXd>(data_.data() + offset(path, k), state_dim_);
    }
    Eigen::Map<Eigen::VectorXd> increment(std::size_t path, std::size_t k) {
        return Eigen::Map<Eigen::VectorXd>(data_.data() + offset(path, k), state_dim_);
    }

    friend bool operator==(const NoiseBundle& a, const NoiseBundle& b) {
        return a.state_dim_ == b.state_dim_ && a.grid_ == b.grid_ && a.paths_ == b.paths_ && a.seed_ == b.seed_ &&
               a.data_.size() == b.data_.size() &&
               std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0;
    }

private:
    std::size_t offset(std::size_t path, std::size_t k) const {
        return (path * grid_.steps + k) * static_cast<std::size_t>(state_dim_);
    }

    int state_dim_ = 0;
    PathGrid grid_;
    std::size_t paths_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> data_;
};

/// Gaussian increments dM_k = sum_i beta_i sqrt(int alpha_i) xi_{i,k}.
///
/// Each path draws from its own engine derived from (seed, path), so the
/// bundle does not depend on the thread count.
inline NoiseBundle sample_increments(const MartingaleDriver& driver, const PathGrid& grid, std::size_t paths,
                                     std::uint64_t seed) {
    detail::require(paths >= 1, "sample_increments: paths must be >= 1");
    grid.validate();
    driver.validate_on(grid);
    const auto& comps = driver.components();
    const std::size_t nc = comps.size();
    std::vector<double> scale(nc * grid.steps);
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t k = 0; k < grid.steps; ++k) scale[i * grid.steps + k] = std::sqrt(step_intensity(comps[i], grid, k));

    NoiseBundle bundle(driver.state_dim(), grid, paths, seed);
    parallel_for(paths, [&](std::size_t p) {
        auto engine = path_engine(seed, p);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t k = 0; k < grid.steps; ++k) {
            auto dm = bundle.increment(p, k);
            dm.setZero();
            for (std::size_t i = 0; i < nc; ++i) dm += comps[i].direction * (scale[i * grid.steps + k] * normal(engine));
        }
    });
    return bundle;
}

// Binary layout (little-endian host order):
//   char[8]  magic "SMPNOISE"
//   uint32   version (1)
//   uint32   state_dim
//   uint64   steps
//   uint64   paths
//   uint64   seed
//   double   horizon
//   double[paths][steps][state_dim]  increments, row-major
inline void write_noise(std::ostream& os, const NoiseBundle& b) {
    const char magic[8] = {'S', 'M', 'P', 'N', 'O', 'I', 'S', 'E'};
    const std::uint32_t version = 1, dim = static_cast<std::uint32_t>(b.state_dim());
    const std::uint64_t steps = b.steps(), paths = b.paths(), seed = b.seed();
    const double horizon = b.grid().horizon;
    os.write(magic, 8);
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    os.write(reinterpret_cast<const char*>(&steps), sizeof steps);
    os.write(reinterpret_cast<const char*>(&paths), sizeof paths);
    os.write(reinterpret_cast<const char*>(&seed), sizeof seed);
    os.write(reinterpret_cast<const char*>(&horizon), sizeof horizon);
    os.write(reinterpret_cast<const char*>(b.raw().data()), static_cast<std::streamsize>(b.raw().size_bytes()));
    if (!os) throw Error("write_noise: stream failure");
}

inline NoiseBundle read_noise(std::istream& is) {
    char magic[8];
    std::uint32_t version = 0, dim = 0;
    std::uint64_t steps = 0, paths = 0, seed = 0;
    double horizon = 0;
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "SMPNOISE", 8) != 0) throw Error("read_noise: bad magic");
    is.read(reinterpret_cast<char*>(&version), sizeof version);
    is.read(reinterpret_cast<char*>(&dim), sizeof dim);
    is.read(reinterpret_cast<char*>(&steps), sizeof steps);
    is.read(reinterpret_cast<char*>(&paths), sizeof paths);
    is.read(reinterpret_cast<char*>(&seed), sizeof seed);
    is.read(reinterpret_cast<char*>(&horizon), sizeof horizon);
    if (!is || version != 1) throw Error("read_noise: unsupported header");
    NoiseBundle b(static_cast<int>(dim), PathGrid(horizon, steps), paths, seed);
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t k = 0; k < steps; ++k) {
            auto dm = b.increment(p, k);
            is.read(reinterpret_cast<char*>(dm.data()), static_cast<std::streamsize>(dim * sizeof(double)));
        }
    if (!is) throw Error("read_noise: truncated body");
    return b;
}

/// Deterministic operator-valued step process Phi(t_k).
using StepOperatorFn = std::function<Operator(std::size_t step, double t)>;

struct IsometryReport {
    Estimate lhs;          // MC estimate of E| sum_k Phi_k dM_k |^2
    double rhs = 0.0;      // sum_k ||Phi_k (int Q)^{1/2}||_2^2
    double difference = 0.0;
    bool within(double n_se) const { return std::abs(difference) <= n_se * lhs.se; }
};

inline IsometryReport verify_isometry(const StepOperatorFn& phi, const MartingaleDriver& driver,
                                      const NoiseBundle& bundle) {
    detail::require_shape(bundle.state_dim() == driver.state_dim(), "verify_isometry: bundle/driver dims differ");
    const PathGrid& grid = bundle.grid();
    std::vector<Operator> phis(grid.steps);
    IsometryReport rep;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        phis[k] = phi(k, grid.time(k));
        detail::require_shape(phis[k].cols() == driver.state_dim(), "verify_isometry: Phi has wrong column count");
        detail::require_shape(phis[k].rows() == phis[0].rows(), "verify_isometry: Phi changes shape");
        const Operator s = step_covariance(driver, grid, k);
        const Operator root = psd_sqrt(s);
        const Operator pr = phis[k] * root;
        rep.rhs += hs_inner(pr, pr);
    }
    std::vector<double> sq(bundle.paths());
    parallel_for(bundle.paths(), [&](std::size_t p) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(phis.empty() ? 0 : phis[0].rows());
        for (std::size_t k = 0; k < grid.steps; ++k) acc.noalias() += phis[k] * bundle.increment(p, k);
        sq[p] = acc.squaredNorm();
    });
    rep.lhs = estimate(sq);
    rep.difference = rep.lhs.mean - rep.rhs;
    return rep;
}

}  // namespace smp
