#include "hgpmil/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hgpmil {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyBag: return "EmptyBag";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::DuplicatePatchId: return "DuplicatePatchId";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::HeaderMismatch: return "HeaderMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::TrailingData: return "TrailingData";
        case ErrorCode::MissingPatchId: return "MissingPatchId";
        case ErrorCode::OutOfRangeScore: return "OutOfRangeScore";
        case ErrorCode::DuplicateRow: return "DuplicateRow";
        case ErrorCode::MalformedCsv: return "MalformedCsv";
        case ErrorCode::SingularSystem: return "SingularSystem";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::KindMismatch: return "KindMismatch";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::BadClusterIndex: return "BadClusterIndex";
        case ErrorCode::EmptyCluster: return "EmptyCluster";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::SingleClassDataset: return "SingleClassDataset";
        case ErrorCode::NoEvents: return "NoEvents";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::MissingClass: return "MissingClass";
        case ErrorCode::ClassTooSmall: return "ClassTooSmall";
        case ErrorCode::EmptyCohort: return "EmptyCohort";
        case ErrorCode::EmptyGroup: return "EmptyGroup";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ManifestError: return "ManifestError";
    }
    return "Unknown";
}

std::string_view to_string(ScoreKind kind) {
    return kind == ScoreKind::Cellularity ? "cellularity" : "architecture";
}

ScoreKind parse_score_kind(std::string_view s) {
    if (s == "cellularity") return ScoreKind::Cellularity;
    if (s == "architecture") return ScoreKind::Architecture;
    throw Error(ErrorCode::InvalidArgument, "unknown score kind '" + std::string(s) + "'");
}

void validate(const Hyperparams& hp) {
    if (hp.k < 1) throw Error(ErrorCode::InvalidConfig, "K must be >= 1");
    if (!(hp.ratio > 0.0 && hp.ratio <= 100.0))
        throw Error(ErrorCode::InvalidConfig, "select ratio must be in (0, 100]");
    if (!(hp.score_weight >= 0.0) || !std::isfinite(hp.score_weight))
        throw Error(ErrorCode::InvalidConfig, "score weight must be a finite nonnegative number");
    if (!(hp.kmeans_tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "k-means tolerance must be > 0");
    if (hp.kmeans_max_iter < 1) throw Error(ErrorCode::InvalidConfig, "k-means max_iter must be >= 1");
    if (hp.kmeans_restarts < 1) throw Error(ErrorCode::InvalidConfig, "k-means restarts must be >= 1");
    if (!(hp.learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
    if (hp.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (hp.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
}

int bag_label(std::span<const int> instance_labels) {
    if (instance_labels.empty()) throw Error(ErrorCode::EmptyBag, "bag has no instances");
    for (int y : instance_labels) {
        if (y != 0 && y != 1) throw Error(ErrorCode::InvalidArgument, "instance labels must be 0 or 1");
    }
    return std::ranges::any_of(instance_labels, [](int y) { return y == 1; }) ? 1 : 0;
}

void validate_bag(const Bag& bag, std::optional<std::size_t> expected_dim) {
    if (bag.size() == 0) throw Error(ErrorCode::EmptyBag, "slide '" + bag.slide_id + "' has no instances");
    if (bag.dim() == 0) throw Error(ErrorCode::DimensionMismatch, "slide '" + bag.slide_id + "' has D = 0");
    if (expected_dim && *expected_dim != bag.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "slide '" + bag.slide_id + "' has D = " +
                                                      std::to_string(bag.dim()) + ", expected " +
                                                      std::to_string(*expected_dim));
    }
    if (bag.patch_ids.size() != bag.size()) {
        throw Error(ErrorCode::DimensionMismatch, "slide '" + bag.slide_id + "' has " +
                                                      std::to_string(bag.patch_ids.size()) + " patch ids for " +
                                                      std::to_string(bag.size()) + " rows");
    }
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const auto row = bag.features.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!std::isfinite(row[j])) {
                throw Error(ErrorCode::NonFiniteValue, "slide '" + bag.slide_id + "' row " + std::to_string(i) +
                                                           " col " + std::to_string(j));
            }
        }
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& id : bag.patch_ids) {
        if (!seen.insert(id).second)
            throw Error(ErrorCode::DuplicatePatchId, "slide '" + bag.slide_id + "' repeats patch id '" + id + "'");
    }
    if (bag.survival && !(bag.survival->time > 0.0 && std::isfinite(bag.survival->time))) {
        throw Error(ErrorCode::InvalidArgument, "slide '" + bag.slide_id + "' has a non-positive survival time");
    }
}

void validate_scores(const ScoreVector& scores, std::size_t expected_length) {
    if (scores.size() != expected_length) {
        throw Error(ErrorCode::LengthMismatch, std::string(to_string(scores.kind)) + " scores have " +
                                                   std::to_string(scores.size()) + " values, expected " +
                                                   std::to_string(expected_length));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double v = scores.values[i];
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "score " + std::to_string(i));
        if (v < 0.0 || v > 1.0)
            throw Error(ErrorCode::OutOfRangeScore, "score " + std::to_string(i) + " = " + std::to_string(v));
    }
}

void validate_split(const DatasetSplit& split, std::size_t dataset_size) {
    if (split.test.empty()) throw Error(ErrorCode::InvalidArgument, "split has an empty test set");
    std::vector<char> used(dataset_size, 0);
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (std::size_t i : *part) {
            if (i >= dataset_size) throw Error(ErrorCode::InvalidArgument, "split index out of range");
            if (used[i]) throw Error(ErrorCode::InvalidArgument, "split lists overlap");
            used[i] = 1;
        }
    }
}

} // namespace hgpmil
