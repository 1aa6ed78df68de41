#pragma once

// Shared test helpers: error-code capture, finite differences, a dense solver.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hgpmil/errors.hpp"

namespace testing {

template <class Fn>
hgpmil::ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const hgpmil::Error& e) {
        return e.code();
    }
    throw std::logic_error("expected an hgpmil::Error");
}

// Denominator floor for the relative error. Below this magnitude both
// gradients are indistinguishable from finite-difference round-off.
inline constexpr double kGradFloor = 1e-6;

/// Largest elementwise |a - n| / max(|a|, |n|, floor) between an analytic
/// gradient and central differences of f around theta.
inline double max_relative_error(std::span<const double> analytic, std::vector<double> theta,
                                 const std::function<double(const std::vector<double>&)>& f, double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + step;
        const double up = f(theta);
        theta[i] = keep - step;
        const double down = f(theta);
        theta[i] = keep;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradFloor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

/// Gaussian elimination with partial pivoting on a dense n x n system.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        std::swap(a[c], a[p]);
        std::swap(b[c], b[p]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
        x[i] = s / a[i][i];
    }
    return x;
}

} // namespace testing
