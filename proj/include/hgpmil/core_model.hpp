#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hgpmil/errors.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil {

struct Survival {
    double time = 0.0;  // days, > 0
    bool event = false;
};

/// One slide: an N x D matrix of patch embeddings plus metadata.
struct Bag {
    std::string slide_id;
    Matrix features;
    std::vector<std::string> patch_ids;
    std::optional<int> label;
    std::optional<Survival> survival;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }
};

enum class ScoreKind : std::uint8_t { Cellularity, Architecture };

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view s);

/// Per-instance histomorphology scores, each in [0, 1].
struct ScoreVector {
    ScoreKind kind = ScoreKind::Cellularity;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
};

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    int fold_id = 0;
    std::uint64_t seed = 0;
};

struct Hyperparams {
    int k = 50;
    double ratio = 50.0;  // percent, (0, 100]
    double score_weight = 1.0;
    double kmeans_tol = 1e-6;
    int kmeans_max_iter = 100;
    int kmeans_restarts = 3;
    double learning_rate = 1e-3;
    int epochs = 40;
    int batch_size = 1;
    std::uint64_t seed = 42;
};

void validate(const Hyperparams& hp);

/// Standard MIL rule: a bag is positive iff any instance is positive.
int bag_label(std::span<const int> instance_labels);

void validate_bag(const Bag& bag, std::optional<std::size_t> expected_dim = std::nullopt);

/// Throws unless the vector has the given length and every value is a finite
/// number in [0, 1].
void validate_scores(const ScoreVector& scores, std::size_t expected_length);

void validate_split(const DatasetSplit& split, std::size_t dataset_size);

} // namespace hgpmil
