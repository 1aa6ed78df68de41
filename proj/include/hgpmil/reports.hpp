#pragma once

#include <string>

#include "json.hpp"

#include "hgpmil/experiment.hpp"
#include "hgpmil/survival.hpp"

namespace hgpmil::reports {

using nlohmann::json;

// Every renderer takes the resolved run configuration and embeds it verbatim
// (pass an empty object when there is none).

json to_json(const experiment::MetricReport& r, const json& run_config = json::object());
json to_json(const experiment::SurvivalReport& r, const json& run_config = json::object());
json to_json(const experiment::SweepReport& r, const json& run_config = json::object());
json to_json(const eval::KaplanMeier& km);

std::string to_text(const experiment::MetricReport& r);
std::string to_text(const experiment::SurvivalReport& r);
std::string to_text(const experiment::SweepReport& r);

/// Two-column `time,survival` step points, starting at (0, 1).
std::string km_csv(const eval::KaplanMeier& km);

/// Fixed-point with the given number of decimals.
std::string fixed(double value, int decimals = 4);

} // namespace hgpmil::reports
