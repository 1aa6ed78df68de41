#include "hgpmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

#include "hgpmil/rng.hpp"

namespace hgpmil::synth {

void validate(const SynthConfig& c) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "synth: " + what); };
    if (c.num_bags < 1) fail("num_bags must be >= 1");
    if (c.min_instances < 1 || c.max_instances < c.min_instances) fail("instance range must satisfy 1 <= min <= max");
    if (c.dim < 1) fail("dim must be >= 1");
    if (c.min_planted < 1 || c.max_planted < c.min_planted) fail("planted range must satisfy 1 <= min <= max");
    if (c.max_planted > c.min_instances) fail("max_planted cannot exceed min_instances");
    auto unit = [&](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) fail(std::string(name) + " must be in [0, 1]");
    };
    unit(c.positive_fraction, "positive_fraction");
    unit(c.ambiguity, "ambiguity");
    unit(c.rho, "rho");
    unit(c.label_noise, "label_noise");
    if (!(c.score_jitter >= 0.0) || !(c.noise >= 0.0) || !std::isfinite(c.signal)) fail("jitter, noise and signal must be finite and >= 0");
    if (c.tissue_types < 1) fail("tissue_types must be >= 1");
    if (!(c.tissue_spread >= 0.0)) fail("tissue_spread must be >= 0");
    if (c.survival && !(c.base_hazard > 0.0 && c.hazard_ratio >= 1.0 && c.censor_rate >= 0.0))
        fail("survival needs base_hazard > 0, hazard_ratio >= 1, censor_rate >= 0");
}

namespace {

// Stored values round-trip through binary32 on disk; generate them that way
// so in-memory and reloaded cohorts are identical.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string numbered(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
    return buf;
}

double guide_score(Rng& rng, int positive, const SynthConfig& c) {
    const double signal = static_cast<double>(positive) + c.score_jitter * rng.normal();
    return f32(std::clamp(c.rho * signal + (1.0 - c.rho) * rng.uniform(), 0.0, 1.0));
}

} // namespace

Cohort generate_cohort(const SynthConfig& c) {
    validate(c);
    Rng rng(derive_seed(c.seed, 0x5e17));
    const auto d = static_cast<std::size_t>(c.dim);

    std::vector<double> direction(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& v : direction) {
            v = rng.normal();
            norm += v * v;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& v : direction) v /= norm;

    // Tissue centers carry no component along the positive direction, so
    // tissue type alone never looks like positivity.
    std::vector<std::vector<double>> centers(static_cast<std::size_t>(c.tissue_types), std::vector<double>(d));
    for (auto& center : centers) {
        double along = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            center[j] = c.tissue_spread * rng.normal();
            along += center[j] * direction[j];
        }
        for (std::size_t j = 0; j < d; ++j) center[j] -= along * direction[j];
    }

    Cohort out;
    out.dataset.class_names = {"negative", "positive"};
    out.dataset.dim = d;
    for (int b = 0; b < c.num_bags; ++b) {
        const auto n = static_cast<std::size_t>(rng.integer(c.min_instances, c.max_instances));
        const bool positive = rng.uniform() < c.positive_fraction;
        const auto planted = positive ? static_cast<std::size_t>(rng.integer(c.min_planted, c.max_planted)) : 0;
        const auto ambiguous = static_cast<std::size_t>(std::llround(c.ambiguity * static_cast<double>(n - planted)));

        // Grades in generation order, then shuffled so planted rows land anywhere.
        std::vector<int> grades(n, 1);
        std::fill_n(grades.begin(), planted, 3);
        std::fill_n(grades.begin() + static_cast<std::ptrdiff_t>(planted), ambiguous, 2);
        rng.shuffle(grades.begin(), grades.end());

        Bag bag;
        bag.slide_id = numbered("slide_", b);
        bag.features = Matrix(n, d);
        std::vector<int> labels(n);
        ScoreVector cell{ScoreKind::Cellularity, std::vector<double>(n)};
        ScoreVector arch{ScoreKind::Architecture, std::vector<double>(n)};
        for (std::size_t i = 0; i < n; ++i) {
            bag.patch_ids.push_back(numbered("p", static_cast<int>(i)));
            const auto& center = centers[rng.index(centers.size())];
            const double shift = grades[i] == 3 ? c.signal : grades[i] == 2 ? 0.5 * c.signal : 0.0;
            auto row = bag.features.row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] = f32(center[j] + shift * direction[j] + c.noise * rng.normal());
            labels[i] = grades[i] == 3 ? 1 : 0;
            cell.values[i] = guide_score(rng, labels[i], c);
            arch.values[i] = guide_score(rng, labels[i], c);
        }

        const int truth = bag_label(labels);
        const bool flip = c.label_noise > 0.0 && rng.uniform() < c.label_noise;
        bag.label = flip ? 1 - truth : truth;
        if (c.survival) {
            const double rate = c.base_hazard * std::pow(c.hazard_ratio, static_cast<double>(planted));
            const double event_time = rng.exponential(rate);
            const double censor_time = c.censor_rate > 0.0 ? rng.exponential(c.censor_rate) : INFINITY;
            // Times are whole days, at least one.
            const double observed = std::max(1.0, std::ceil(std::min(event_time, censor_time)));
            bag.survival = Survival{observed, event_time <= censor_time};
        }

        out.dataset.bags.push_back(std::move(bag));
        out.dataset.cellularity.emplace_back(std::move(cell));
        out.dataset.architecture.emplace_back(std::move(arch));
        out.instance_labels.push_back(std::move(labels));
        out.instance_grades.push_back(std::move(grades));
        out.truth_labels.push_back(truth);
    }
    return out;
}

std::string truth_json(const Cohort& cohort) {
    nlohmann::json slides = nlohmann::json::array();
    for (std::size_t b = 0; b < cohort.dataset.bags.size(); ++b) {
        slides.push_back({{"slide_id", cohort.dataset.bags[b].slide_id},
                          {"label", cohort.truth_labels[b]},
                          {"instance_labels", cohort.instance_labels[b]},
                          {"grades", cohort.instance_grades[b]}});
    }
    return nlohmann::json{{"slides", slides}}.dump(2) + "\n";
}

std::map<std::string, SlideTruth> parse_truth_json(const std::string& text) {
    std::map<std::string, SlideTruth> out;
    try {
        const auto doc = nlohmann::json::parse(text);
        for (const auto& s : doc.at("slides")) {
            SlideTruth t{s.at("label").get<int>(), s.at("instance_labels").get<std::vector<int>>(),
                         s.at("grades").get<std::vector<int>>()};
            out[s.at("slide_id").get<std::string>()] = std::move(t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("truth file: ") + e.what());
    }
    return out;
}

} // namespace hgpmil::synth
