#pragma once

#include <span>
#include <vector>

namespace hgpmil::eval {

/// Right-continuous product-limit step function. survival[i] holds on
/// [times[i], times[i+1]); before times[0] the value is 1.
struct KaplanMeier {
    std::vector<double> times;     // distinct event times, ascending
    std::vector<double> survival;
    std::vector<std::size_t> at_risk;
    std::vector<std::size_t> events;

    double at(double t) const;
};

KaplanMeier kaplan_meier(std::span<const double> times, std::span<const bool> events);

struct LogRankResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double observed_a = 0.0;
    double expected_a = 0.0;
    double variance = 0.0;
};

LogRankResult logrank_test(std::span<const double> times_a, std::span<const bool> events_a,
                           std::span<const double> times_b, std::span<const bool> events_b);

/// Regularized upper incomplete gamma Q(a, x) by series / continued fraction.
double regularized_gamma_q(double a, double x);

/// Survival function of the chi-square distribution.
double chi_square_sf(double statistic, double dof = 1.0);

} // namespace hgpmil::eval
