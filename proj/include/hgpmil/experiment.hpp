#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hgpmil/clustering.hpp"
#include "hgpmil/manifest.hpp"
#include "hgpmil/metrics.hpp"
#include "hgpmil/mil_heads.hpp"
#include "hgpmil/prototyping.hpp"
#include "hgpmil/survival.hpp"

namespace hgpmil::experiment {

struct PipelineConfig {
    int k = 50;
    double ratio = 50.0;
    double score_weight = 1.0;
    double kmeans_tol = 1e-6;
    int kmeans_max_iter = 100;
    int kmeans_restarts = 3;
    heads::HeadKind head = heads::HeadKind::GatedAttention;
    double learning_rate = 1e-3;
    int epochs = 40;
    double weight_decay = 1e-4;
    int patience = 0;
    std::size_t hidden = heads::kDefaultAttentionHidden;
    int folds = 5;
    bool stratify = true;
    bool baseline = false;  // feed raw bags instead of prototype bags
    std::uint64_t seed = 42;
    int jobs = 1;           // execution only; never changes results
};

void validate(const PipelineConfig& cfg);

/// Training settings for one fold.
heads::TrainConfig train_config(const PipelineConfig& cfg, std::uint64_t seed);

/// One k-means model per slide, K clamped to the slide's instance count and
/// the RNG stream derived from (seed, slide_id).
std::vector<clustering::ClusterModel> cluster_dataset(const io::Dataset& data, const PipelineConfig& cfg);

std::vector<prototyping::PrototypeBag> prototype_dataset(const io::Dataset& data,
                                                         std::span<const clustering::ClusterModel> clusters,
                                                         const PipelineConfig& cfg);

/// Head inputs for every slide: prototype matrices, or raw embeddings when
/// cfg.baseline is set.
std::vector<Matrix> head_inputs(const io::Dataset& data, const PipelineConfig& cfg);

struct MetricReport {
    std::vector<double> fold_auc;
    std::vector<double> fold_acc;
    eval::MeanStd auc;
    eval::MeanStd acc;
    int folds = 0;
    int k = 0;
    double ratio = 0.0;
    double score_weight = 0.0;
    std::string head;
    bool baseline = false;
    std::uint64_t seed = 0;
};

/// k-fold cross-validation of the configured head over prepared inputs.
MetricReport cross_validate(std::span<const Matrix> inputs, std::span<const int> labels, std::size_t num_classes,
                            const PipelineConfig& cfg);

/// Clustering, prototyping (unless baseline) and cross-validation over the
/// labeled slides of a dataset.
MetricReport run_pipeline(const io::Dataset& data, const PipelineConfig& cfg);

struct SurvivalReport {
    eval::KaplanMeier high_risk;
    eval::KaplanMeier low_risk;
    eval::LogRankResult logrank;
    double threshold = 0.0;  // median out-of-fold risk
    std::size_t n_high = 0;
    std::size_t n_low = 0;
    std::vector<double> risks;  // out-of-fold, one per subject
    int folds = 0;
    int k = 0;
    double ratio = 0.0;
    std::string head;
    bool baseline = false;
    std::uint64_t seed = 0;
};

/// Out-of-fold Cox risks, split at the median into high/low groups, then
/// Kaplan-Meier per group and a log-rank test between them.
SurvivalReport evaluate_survival(std::span<const Matrix> inputs, std::span<const double> times,
                                 std::span<const bool> events, const PipelineConfig& cfg);

SurvivalReport run_survival(const io::Dataset& data, const PipelineConfig& cfg);

struct SweepGrid {
    std::vector<int> ks{10, 20, 50, 75, 100};
    std::vector<double> ratios{10, 20, 30, 40, 50};
    int anchor_k = 50;          // K used by the select-ratio sweep
    double anchor_ratio = 50;   // R used by the cluster-count sweep
};

struct SweepCell {
    char table = 'K';  // 'K' for the cluster-count sweep, 'R' for the select-ratio sweep
    int k = 0;
    double ratio = 0.0;
    MetricReport report;
    bool best_auc = false;
    bool best_acc = false;
};

struct SweepReport {
    std::vector<SweepCell> cells;
};

/// One cross-validated run per grid cell: K over grid.ks at anchor_ratio, then
/// R over grid.ratios at anchor_k. Best AUC / ACC are marked within each table.
SweepReport run_ablation_sweep(const io::Dataset& data, const SweepGrid& grid, const PipelineConfig& base);

} // namespace hgpmil::experiment
