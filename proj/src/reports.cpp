#include "hgpmil/reports.hpp"

#include <cstdio>
#include <sstream>

namespace hgpmil::reports {

std::string fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    return buf;
}

namespace {

json mean_std_json(const eval::MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

std::string pm(const eval::MeanStd& m) { return fixed(m.mean) + " +/- " + fixed(m.std); }

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

} // namespace

json to_json(const experiment::MetricReport& r, const json& run_config) {
    json j;
    j["type"] = "metric_report";
    j["config"] = {{"k", r.k},       {"ratio", r.ratio}, {"score_weight", r.score_weight}, {"head", r.head},
                   {"baseline", r.baseline}, {"seed", r.seed}, {"folds", r.folds}};
    j["fold_auc"] = r.fold_auc;
    j["fold_acc"] = r.fold_acc;
    j["auc"] = mean_std_json(r.auc);
    j["acc"] = mean_std_json(r.acc);
    j["run_config"] = run_config;
    return j;
}

json to_json(const eval::KaplanMeier& km) {
    return {{"times", km.times}, {"survival", km.survival}, {"at_risk", km.at_risk}, {"events", km.events}};
}

json to_json(const experiment::SurvivalReport& r, const json& run_config) {
    json j;
    j["type"] = "survival_report";
    j["config"] = {{"k", r.k},       {"ratio", r.ratio}, {"head", r.head},
                   {"baseline", r.baseline}, {"seed", r.seed}, {"folds", r.folds}};
    j["threshold"] = r.threshold;
    j["n_high"] = r.n_high;
    j["n_low"] = r.n_low;
    j["logrank"] = {{"statistic", r.logrank.statistic},
                    {"p_value", r.logrank.p_value},
                    {"observed_high", r.logrank.observed_a},
                    {"expected_high", r.logrank.expected_a},
                    {"variance", r.logrank.variance}};
    j["km_high_risk"] = to_json(r.high_risk);
    j["km_low_risk"] = to_json(r.low_risk);
    j["risks"] = r.risks;
    j["run_config"] = run_config;
    return j;
}

json to_json(const experiment::SweepReport& r, const json& run_config) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        cells.push_back({{"table", std::string(1, c.table)},
                         {"k", c.k},
                         {"ratio", c.ratio},
                         {"best_auc", c.best_auc},
                         {"best_acc", c.best_acc},
                         {"report", to_json(c.report)}});
    }
    return {{"type", "sweep_report"}, {"cells", cells}, {"run_config", run_config}};
}

std::string to_text(const experiment::MetricReport& r) {
    std::ostringstream os;
    os << "head " << r.head << (r.baseline ? " (baseline: raw bags)" : " (prototype bags)") << "  K=" << r.k
       << "  R=" << fixed(r.ratio, 1) << "  w=" << fixed(r.score_weight, 2) << "  seed=" << r.seed << '\n';
    os << pad("fold", 6) << pad("AUC", 10) << pad("ACC", 10) << '\n';
    for (std::size_t f = 0; f < r.fold_auc.size(); ++f)
        os << pad(std::to_string(f), 6) << pad(fixed(r.fold_auc[f]), 10) << pad(fixed(r.fold_acc[f]), 10) << '\n';
    os << "AUC " << pm(r.auc) << '\n';
    os << "ACC " << pm(r.acc) << '\n';
    return os.str();
}

std::string to_text(const experiment::SurvivalReport& r) {
    std::ostringstream os;
    os << "head " << r.head << (r.baseline ? " (baseline: raw bags)" : " (prototype bags)") << "  K=" << r.k
       << "  R=" << fixed(r.ratio, 1) << "  seed=" << r.seed << '\n';
    os << "median risk threshold " << fixed(r.threshold) << "  high-risk n=" << r.n_high << "  low-risk n=" << r.n_low
       << '\n';
    os << "log-rank chi2 " << fixed(r.logrank.statistic) << "  p " << fixed(r.logrank.p_value, 6) << '\n';
    auto curve = [&](const char* name, const eval::KaplanMeier& km) {
        os << name << '\n' << pad("time", 12) << pad("S(t)", 10) << pad("at_risk", 9) << pad("events", 8) << '\n';
        for (std::size_t i = 0; i < km.times.size(); ++i)
            os << pad(fixed(km.times[i]), 12) << pad(fixed(km.survival[i]), 10)
               << pad(std::to_string(km.at_risk[i]), 9) << pad(std::to_string(km.events[i]), 8) << '\n';
    };
    curve("high-risk group", r.high_risk);
    curve("low-risk group", r.low_risk);
    return os.str();
}

std::string to_text(const experiment::SweepReport& r) {
    std::ostringstream os;
    for (char table : {'K', 'R'}) {
        bool header = false;
        for (const auto& c : r.cells) {
            if (c.table != table) continue;
            if (!header) {
                os << (table == 'K' ? "cluster-count sweep (R fixed)" : "select-ratio sweep (K fixed)") << '\n';
                os << pad("K", 5) << pad("R", 7) << pad("AUC", 20) << pad("ACC", 20) << '\n';
                header = true;
            }
            os << pad(std::to_string(c.k), 5) << pad(fixed(c.ratio, 1), 7)
               << pad(pm(c.report.auc) + (c.best_auc ? "*" : " "), 20)
               << pad(pm(c.report.acc) + (c.best_acc ? "*" : " "), 20) << '\n';
        }
        if (header) os << '\n';
    }
    os << "* best in column\n";
    return os.str();
}

std::string km_csv(const eval::KaplanMeier& km) {
    std::ostringstream os;
    os << "time,survival\n0,1\n";
    char buf[64];
    for (std::size_t i = 0; i < km.times.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", km.times[i], km.survival[i]);
        os << buf;
    }
    return os.str();
}

} // namespace hgpmil::reports
