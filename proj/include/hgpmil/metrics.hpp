#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hgpmil/core_model.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil::eval {

/// Mann-Whitney AUC: (wins + 0.5 * ties) / (P * N) over positive-negative pairs.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Macro one-vs-rest AUC over the columns of an n x C probability matrix.
double multiclass_auc(const Matrix& probabilities, std::span<const int> labels, std::size_t num_classes);

/// Class decision: binary uses P(class 1) >= 0.5, multiclass uses argmax with
/// the smallest index winning ties.
int decide_class(std::span<const double> probabilities);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Test folds partition the indices; per-class counts across folds differ by
/// at most one.
std::vector<DatasetSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

/// Unstratified k-fold over a seeded shuffle.
std::vector<DatasetSplit> random_kfold(std::size_t n, int k, std::uint64_t seed);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1), 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

} // namespace hgpmil::eval
