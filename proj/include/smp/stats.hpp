#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "smp/errors.hpp"

namespace smp {

/// Monte Carlo estimate: sample mean and its standard error.
struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

/// Mean and standard error, accumulated in index order.
inline Estimate estimate(std::span<const double> xs) {
    Estimate e;
    e.n = xs.size();
    if (xs.empty()) return e;
    double sum = 0.0;
    for (double x : xs) sum += x;
    e.mean = sum / static_cast<double>(xs.size());
    if (xs.size() < 2) return e;
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    const double var = ss / static_cast<double>(xs.size() - 1);
    e.se = std::sqrt(var / static_cast<double>(xs.size()));
    return e;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
    detail::require_shape(x.size() == y.size() && x.size() >= 2, "loglog_slope needs >= 2 matched points");
    double mx = 0.0, my = 0.0;
    const double n = static_cast<double>(x.size());
    std::vector<double> lx(x.size()), ly(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        detail::require(x[i] > 0 && y[i] > 0, "loglog_slope needs positive data");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace smp
