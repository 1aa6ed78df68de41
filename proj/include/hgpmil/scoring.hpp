#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hgpmil/core_model.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil::scoring {

enum class ScorerKind { Ridge, Mlp };

/// Per-instance regressor standing in for the cellularity / architecture
/// networks. Parameters live in one flat vector:
///   Ridge: [w (D), b]
///   Mlp:   [W1 (H x D, row-major), b1 (H), w2 (H), b2]
struct ScorerModel {
    ScorerKind kind = ScorerKind::Ridge;
    ScoreKind target = ScoreKind::Cellularity;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;  // Mlp only
    std::vector<double> params;

    /// Unclamped prediction for one row.
    double raw_predict(std::span<const double> x) const;
};

std::size_t parameter_count(ScorerKind kind, std::size_t input_dim, std::size_t hidden);

/// Architecture grade I-III mapped onto the unit interval: g -> (g - 1) / 2.
double grade_to_unit(int grade);

/// Ridge regression with an unpenalized intercept, solved through the
/// centered normal equations.
ScorerModel fit_ridge(const Matrix& features, std::span<const double> targets, double lambda,
                      ScoreKind target = ScoreKind::Cellularity);

struct MlpConfig {
    std::size_t hidden = 8;
    double learning_rate = 0.05;
    int epochs = 2000;
    std::uint64_t seed = 42;
};

ScorerModel init_mlp(std::size_t input_dim, std::size_t hidden, std::uint64_t seed,
                     ScoreKind target = ScoreKind::Cellularity);

/// Mean squared error of the raw (unclamped) output and its gradient with
/// respect to model.params.
double mlp_loss(const ScorerModel& model, const Matrix& features, std::span<const double> targets,
                std::vector<double>* grad = nullptr);

/// Full-batch gradient descent on MSE. Returns the parameters with the lowest
/// training loss seen; `loss_history`, when given, receives the loss at every
/// epoch.
ScorerModel fit_mlp(const Matrix& features, std::span<const double> targets, const MlpConfig& cfg,
                    ScoreKind target = ScoreKind::Cellularity, std::vector<double>* loss_history = nullptr);

/// Per-row prediction clamped to [0, 1].
ScoreVector predict_scores(const ScorerModel& model, const Bag& bag);

std::string to_json(const ScorerModel& model);
ScorerModel scorer_from_json(const std::string& text);

} // namespace hgpmil::scoring
