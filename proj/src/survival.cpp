#include "hgpmil/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hgpmil/errors.hpp"

namespace hgpmil::eval {

double KaplanMeier::at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

namespace {

void check_cohort(std::span<const double> times, std::span<const bool> events) {
    if (times.size() != events.size()) throw Error(ErrorCode::LengthMismatch, "times and events differ in length");
    for (double t : times)
        if (!(t > 0.0) || !std::isfinite(t)) throw Error(ErrorCode::InvalidArgument, "survival times must be positive");
}

} // namespace

KaplanMeier kaplan_meier(std::span<const double> times, std::span<const bool> events) {
    check_cohort(times, events);
    if (times.empty()) throw Error(ErrorCode::EmptyCohort, "no subjects");

    // time -> (subjects leaving, events)
    std::map<double, std::pair<std::size_t, std::size_t>> table;
    for (std::size_t i = 0; i < times.size(); ++i) {
        auto& row = table[times[i]];
        ++row.first;
        row.second += events[i] ? 1 : 0;
    }
    KaplanMeier km;
    std::size_t at_risk = times.size();
    double s = 1.0;
    for (const auto& [t, row] : table) {
        if (row.second > 0) {
            s *= 1.0 - static_cast<double>(row.second) / static_cast<double>(at_risk);
            km.times.push_back(t);
            km.survival.push_back(s);
            km.at_risk.push_back(at_risk);
            km.events.push_back(row.second);
        }
        at_risk -= row.first;
    }
    return km;
}

LogRankResult logrank_test(std::span<const double> ta, std::span<const bool> ea, std::span<const double> tb,
                           std::span<const bool> eb) {
    check_cohort(ta, ea);
    check_cohort(tb, eb);
    if (ta.empty() || tb.empty()) throw Error(ErrorCode::EmptyGroup, "both groups need at least one subject");

    // time -> (leaving A, events A, leaving B, events B)
    struct Row {
        std::size_t leave_a = 0, events_a = 0, leave_b = 0, events_b = 0;
    };
    std::map<double, Row> table;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        auto& r = table[ta[i]];
        ++r.leave_a;
        r.events_a += ea[i] ? 1 : 0;
    }
    for (std::size_t i = 0; i < tb.size(); ++i) {
        auto& r = table[tb[i]];
        ++r.leave_b;
        r.events_b += eb[i] ? 1 : 0;
    }

    LogRankResult res;
    double n_a = static_cast<double>(ta.size()), n_b = static_cast<double>(tb.size());
    std::size_t total_events = 0;
    for (const auto& [t, r] : table) {
        const double d = static_cast<double>(r.events_a + r.events_b);
        total_events += r.events_a + r.events_b;
        const double n = n_a + n_b;
        if (d > 0.0) {
            res.observed_a += static_cast<double>(r.events_a);
            res.expected_a += d * n_a / n;
            if (n > 1.0) res.variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
        n_a -= static_cast<double>(r.leave_a);
        n_b -= static_cast<double>(r.leave_b);
    }
    if (total_events == 0) throw Error(ErrorCode::NoEvents, "no events in either group");

    const double diff = res.observed_a - res.expected_a;
    if (res.variance > 0.0) res.statistic = diff * diff / res.variance;
    res.p_value = chi_square_sf(res.statistic, 1.0);
    return res;
}

namespace {

double gamma_p_series(double a, double x) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz's method for the continued fraction of Q(a, x).
double gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace

double regularized_gamma_q(double a, double x) {
    if (!(a > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma shape must be > 0");
    if (x < 0.0 || std::isnan(x)) throw Error(ErrorCode::InvalidArgument, "gamma argument must be >= 0");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_fraction(a, x);
}

double chi_square_sf(double statistic, double dof) {
    if (statistic <= 0.0) return 1.0;
    return regularized_gamma_q(dof / 2.0, statistic / 2.0);
}

} // namespace hgpmil::eval
