#include "hgpmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hgpmil/rng.hpp"

namespace hgpmil::eval {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Integer pair counts keep the result exact: 2 * wins + ties over 2 * P * N.
    std::uint64_t positives = 0, negatives = 0, doubled = 0;
    std::uint64_t negatives_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos_here = 0, neg_here = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1) ++pos_here;
            else if (labels[order[j]] == 0) ++neg_here;
            else throw Error(ErrorCode::InvalidArgument, "binary labels must be 0 or 1");
            ++j;
        }
        doubled += 2 * pos_here * negatives_below + pos_here * neg_here;
        negatives_below += neg_here;
        positives += pos_here;
        negatives += neg_here;
        i = j;
    }
    if (positives == 0 || negatives == 0) throw Error(ErrorCode::SingleClass, "AUC needs both classes");
    return static_cast<double>(doubled) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double multiclass_auc(const Matrix& probs, std::span<const int> labels, std::size_t num_classes) {
    if (num_classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
    if (probs.rows() != labels.size() || probs.cols() != num_classes)
        throw Error(ErrorCode::LengthMismatch, "probability matrix does not match labels/classes");
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw Error(ErrorCode::InvalidArgument, "label outside [0, C)");
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c] == 0) throw Error(ErrorCode::MissingClass, "class " + std::to_string(c) + " absent");

    if (num_classes == 2) {
        std::vector<double> s(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) s[i] = probs(i, 1);
        return roc_auc(s, labels);
    }
    double total = 0.0;
    std::vector<double> s(labels.size());
    std::vector<int> y(labels.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            s[i] = probs(i, c);
            y[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
        }
        total += roc_auc(s, y);
    }
    return total / static_cast<double>(num_classes);
}

int decide_class(std::span<const double> p) {
    if (p.empty()) throw Error(ErrorCode::EmptyInput, "empty probability vector");
    if (p.size() == 2) return p[1] >= 0.5 ? 1 : 0;
    return static_cast<int>(std::ranges::max_element(p) - p.begin());  // first maximum
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw Error(ErrorCode::LengthMismatch, "predictions and labels differ in length");
    if (labels.empty()) throw Error(ErrorCode::EmptyInput, "no samples");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

std::vector<DatasetSplit> splits_from_folds(const std::vector<int>& fold_of, int k, std::uint64_t seed) {
    std::vector<DatasetSplit> out(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        out[static_cast<std::size_t>(f)].fold_id = f;
        out[static_cast<std::size_t>(f)].seed = derive_seed(seed, 0x666f6c64, static_cast<std::uint64_t>(f));
    }
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        for (int f = 0; f < k; ++f) {
            auto& split = out[static_cast<std::size_t>(f)];
            (fold_of[i] == f ? split.test : split.train).push_back(i);
        }
    }
    return out;
}

} // namespace

std::vector<DatasetSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 2) throw Error(ErrorCode::InvalidArgument, "k must be >= 2");
    int max_label = -1;
    for (int y : labels) {
        if (y < 0) throw Error(ErrorCode::InvalidArgument, "labels must be nonnegative");
        max_label = std::max(max_label, y);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    Rng rng(derive_seed(seed, 0x7374726174));
    std::vector<int> fold_of(labels.size(), -1);
    int next = 0;  // continue dealing where the previous class stopped so fold sizes stay balanced
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < static_cast<std::size_t>(k)) {
            throw Error(ErrorCode::ClassTooSmall, "class " + std::to_string(c) + " has " +
                                                      std::to_string(members.size()) + " members, fewer than k = " +
                                                      std::to_string(k));
        }
        rng.shuffle(members.begin(), members.end());
        for (std::size_t i : members) {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    return splits_from_folds(fold_of, k, seed);
}

std::vector<DatasetSplit> random_kfold(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2) throw Error(ErrorCode::InvalidArgument, "k must be >= 2");
    if (n < static_cast<std::size_t>(k)) throw Error(ErrorCode::ClassTooSmall, "fewer samples than folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x72616e64));
    rng.shuffle(order.begin(), order.end());
    std::vector<int> fold_of(n);
    for (std::size_t pos = 0; pos < n; ++pos) fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    return splits_from_folds(fold_of, k, seed);
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

} // namespace hgpmil::eval
