// Naive reimplementation of extension, masking and aggregation. Written
// without the library's helpers so the two can be compared.

#include <algorithm>
#include <cmath>

#include "hgpmil/synth.hpp"

namespace hgpmil::synth {

namespace {

std::size_t naive_count(double ratio, std::size_t n) {
    std::size_t m = 1;
    while (m < n && static_cast<double>(m) * 100.0 < ratio * static_cast<double>(n) - 1e-7) ++m;
    return m;
}

// Repeatedly takes the best remaining member; strict comparison keeps the
// smaller index on ties because members are visited in ascending order.
std::vector<char> naive_pick(const std::vector<std::size_t>& members, const std::vector<double>& score,
                             std::size_t m, bool highest, std::size_t n) {
    std::vector<char> flag(n, 0);
    for (std::size_t round = 0; round < m; ++round) {
        std::size_t best = n;
        for (std::size_t i : members) {
            if (flag[i]) continue;
            if (best == n || (highest ? score[i] > score[best] : score[i] < score[best])) best = i;
        }
        flag[best] = 1;
    }
    return flag;
}

} // namespace

prototyping::PrototypeBag oracle_prototype_pipeline(const Bag& bag, const ScoreVector& cellularity,
                                                    const ScoreVector& architecture,
                                                    const clustering::ClusterModel& model, double ratio) {
    const std::size_t n = bag.size();
    const std::size_t d = bag.dim();
    prototyping::PrototypeBag out;
    out.slide_id = bag.slide_id;
    out.ratio = ratio;
    std::vector<double> rows;

    for (int k = 0; k < model.k; ++k) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (model.assignments[i] == k) members.push_back(i);
        if (members.empty()) continue;
        out.nonempty_clusters += 1;
        const std::size_t m = naive_count(ratio, members.size());

        const ScoreVector* guides[2] = {&cellularity, &architecture};
        for (const ScoreVector* g : guides) {
            for (bool highest : {true, false}) {
                const auto flag = naive_pick(members, g->values, m, highest, n);
                std::vector<double> sum(d, 0.0);
                for (std::size_t i = 0; i < n; ++i) {
                    if (!flag[i]) continue;
                    for (std::size_t j = 0; j < d; ++j) sum[j] += g->values[i] * bag.features(i, j);
                }
                double sq = 0.0;
                for (double v : sum) sq += v * v;
                const bool degenerate = std::sqrt(sq) < 1e-12;
                for (double v : sum) rows.push_back(degenerate ? 0.0 : v / std::sqrt(sq));
                out.provenance.push_back({k, g->kind,
                                          highest ? prototyping::Polarity::Positive : prototyping::Polarity::Negative,
                                          degenerate});
            }
        }
    }
    out.matrix = Matrix(out.provenance.size(), d, std::move(rows));
    return out;
}

double oracle_centroid_error(const Bag& bag, const ScoreVector& cellularity, const ScoreVector& architecture,
                             double w, const clustering::ClusterModel& model) {
    const std::size_t d = bag.dim();
    double worst = 0.0;
    for (int k = 0; k < model.k; ++k) {
        std::vector<double> mean(d + 2, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < bag.size(); ++i) {
            if (model.assignments[i] != k) continue;
            for (std::size_t j = 0; j < d; ++j) mean[j] += bag.features(i, j);
            mean[d] += w * cellularity.values[i];
            mean[d + 1] += w * architecture.values[i];
            ++count;
        }
        if (count == 0) continue;
        for (std::size_t j = 0; j < d + 2; ++j)
            worst = std::max(worst, std::abs(mean[j] / static_cast<double>(count) - model.centroids(k, j)));
    }
    return worst;
}

} // namespace hgpmil::synth
