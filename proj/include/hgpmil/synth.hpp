#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hgpmil/clustering.hpp"
#include "hgpmil/manifest.hpp"
#include "hgpmil/prototyping.hpp"

namespace hgpmil::synth {

/// Gaussian-mixture cohort. Every instance sits on one of a few tissue
/// centers; planted positives are shifted `signal` along a hidden direction,
/// ambiguous instances half as far, so they straddle the two classes.
struct SynthConfig {
    int num_bags = 200;
    int min_instances = 24;
    int max_instances = 48;
    int dim = 16;
    int min_planted = 1;
    int max_planted = 3;
    double positive_fraction = 0.5;
    double ambiguity = 0.6;     // fraction of non-planted instances drawn from the midpoint
    double rho = 0.9;           // score-positivity correlation
    double score_jitter = 0.1;  // std of the Gaussian added to the indicator
    double label_noise = 0.0;   // probability of flipping the observed bag label
    double signal = 4.0;
    double noise = 1.0;
    int tissue_types = 4;
    double tissue_spread = 3.0;
    std::uint64_t seed = 42;

    bool survival = false;
    double base_hazard = 0.002;  // per day, no planted positives
    double hazard_ratio = 1.8;   // per planted positive
    double censor_rate = 0.001;
};

void validate(const SynthConfig& cfg);

struct Cohort {
    io::Dataset dataset;                          // bags, observed labels, generated scores
    std::vector<std::vector<int>> instance_labels;  // planted positivity
    std::vector<std::vector<int>> instance_grades;  // 3 planted, 2 ambiguous, 1 background
    std::vector<int> truth_labels;                // bag labels before label noise
};

Cohort generate_cohort(const SynthConfig& cfg);

/// Planted labels and grades as JSON, keyed by slide.
std::string truth_json(const Cohort& cohort);

struct SlideTruth {
    int label = 0;
    std::vector<int> instance_labels;
    std::vector<int> grades;
};

std::map<std::string, SlideTruth> parse_truth_json(const std::string& text);

/// Brute-force prototype bag from first principles, reusing only the
/// assignments of `model`. Used as a test oracle.
prototyping::PrototypeBag oracle_prototype_pipeline(const Bag& bag, const ScoreVector& cellularity,
                                                    const ScoreVector& architecture,
                                                    const clustering::ClusterModel& model, double ratio);

/// Largest deviation between each centroid of `model` and the mean of its
/// members in the extended space, recomputed naively.
double oracle_centroid_error(const Bag& bag, const ScoreVector& cellularity, const ScoreVector& architecture,
                             double score_weight, const clustering::ClusterModel& model);

} // namespace hgpmil::synth
