#include "hgpmil/prototyping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace hgpmil::prototyping {

std::size_t selection_count(double ratio, std::size_t n) {
    if (!(ratio > 0.0 && ratio <= 100.0)) throw Error(ErrorCode::InvalidArgument, "select ratio must be in (0, 100]");
    // The small offset keeps exact products such as 30% of 10 from rounding up to 4.
    const double raw = std::ceil(ratio * static_cast<double>(n) / 100.0 - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(n, 1));
}

std::pair<SelectionMask, SelectionMask> select_masks(std::span<const double> scores,
                                                     std::span<const std::size_t> members, double ratio, int cluster,
                                                     ScoreKind guide) {
    if (members.empty()) throw Error(ErrorCode::EmptyCluster, "cluster " + std::to_string(cluster) + " is empty");
    if (scores.size() != members.size())
        throw Error(ErrorCode::LengthMismatch, "scores and member indices are not aligned");
    const std::size_t m = selection_count(ratio, members.size());

    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto by_index = [&](std::size_t a, std::size_t b) { return members[a] < members[b]; };

    auto pick = [&](bool descending) {
        std::vector<std::size_t> o = order;
        std::ranges::sort(o, [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return descending ? scores[a] > scores[b] : scores[a] < scores[b];
            return by_index(a, b);
        });
        std::vector<std::size_t> chosen;
        chosen.reserve(m);
        for (std::size_t i = 0; i < m; ++i) chosen.push_back(members[o[i]]);
        std::ranges::sort(chosen);
        return chosen;
    };

    SelectionMask pos{cluster, Polarity::Positive, guide, pick(true), m};
    SelectionMask neg{cluster, Polarity::Negative, guide, pick(false), m};
    return {std::move(pos), std::move(neg)};
}

Prototype aggregate_prototype(const SelectionMask& mask, std::span<const double> scores, const Matrix& features) {
    if (scores.size() != features.rows())
        throw Error(ErrorCode::LengthMismatch, "scores do not cover every feature row");
    Prototype p{std::vector<double>(features.cols(), 0.0), false};
    for (std::size_t i : mask.selected) {
        if (i >= features.rows()) throw Error(ErrorCode::LengthMismatch, "mask selects a row outside the bag");
        const auto x = features.row(i);
        const double w = scores[i];
        for (std::size_t j = 0; j < x.size(); ++j) p.vector[j] += w * x[j];
    }
    double norm = 0.0;
    for (double v : p.vector) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        std::ranges::fill(p.vector, 0.0);
        p.degenerate = true;
        return p;
    }
    for (double& v : p.vector) v /= norm;
    return p;
}

std::string tag(const Provenance& p) {
    return "k" + std::to_string(p.cluster) + ":" + (p.guide == ScoreKind::Cellularity ? "C" : "A") + ":" +
           (p.polarity == Polarity::Positive ? "pos" : "neg");
}

PrototypeBag build_prototype_bag(const Bag& bag, const clustering::ClusterModel& model, const ScoreVector& c,
                                 const ScoreVector& a, double ratio) {
    if (c.kind != ScoreKind::Cellularity || a.kind != ScoreKind::Architecture)
        throw Error(ErrorCode::KindMismatch, "expected cellularity then architecture scores");
    if (c.size() != bag.size() || a.size() != bag.size() || model.assignments.size() != bag.size())
        throw Error(ErrorCode::LengthMismatch, "scores or cluster model do not match slide '" + bag.slide_id + "'");

    PrototypeBag out;
    out.slide_id = bag.slide_id;
    out.ratio = ratio;
    std::vector<double> rows;
    for (int k = 0; k < model.k; ++k) {
        const auto members = clustering::cluster_members(model, k);
        if (members.empty()) continue;
        ++out.nonempty_clusters;
        for (const ScoreVector* guide : {&c, &a}) {
            std::vector<double> in_cluster;
            in_cluster.reserve(members.size());
            for (std::size_t i : members) in_cluster.push_back(guide->values[i]);
            const auto [pos, neg] = select_masks(in_cluster, members, ratio, k, guide->kind);
            for (const SelectionMask* mask : {&pos, &neg}) {
                const Prototype p = aggregate_prototype(*mask, guide->values, bag.features);
                rows.insert(rows.end(), p.vector.begin(), p.vector.end());
                out.provenance.push_back({k, guide->kind, mask->polarity, p.degenerate});
            }
        }
    }
    out.matrix = Matrix(out.provenance.size(), bag.dim(), std::move(rows));
    return out;
}

std::string sidecar_json(const PrototypeBag& pb) {
    nlohmann::json doc;
    doc["slide_id"] = pb.slide_id;
    doc["R"] = pb.ratio;
    doc["nonempty_clusters"] = pb.nonempty_clusters;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : pb.provenance) {
        rows.push_back({{"cluster", p.cluster},
                        {"guide", std::string(to_string(p.guide))},
                        {"polarity", p.polarity == Polarity::Positive ? "positive" : "negative"},
                        {"degenerate", p.degenerate}});
    }
    doc["provenance"] = std::move(rows);
    return doc.dump(2) + "\n";
}

PrototypeBag prototype_bag_from_sidecar(const std::string& json_text, Matrix matrix) {
    PrototypeBag pb;
    try {
        const auto doc = nlohmann::json::parse(json_text);
        pb.slide_id = doc.at("slide_id").get<std::string>();
        pb.ratio = doc.at("R").get<double>();
        pb.nonempty_clusters = doc.at("nonempty_clusters").get<std::size_t>();
        for (const auto& r : doc.at("provenance")) {
            Provenance p;
            p.cluster = r.at("cluster").get<int>();
            p.guide = parse_score_kind(r.at("guide").get<std::string>());
            p.polarity = r.at("polarity").get<std::string>() == "positive" ? Polarity::Positive : Polarity::Negative;
            p.degenerate = r.at("degenerate").get<bool>();
            pb.provenance.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("prototype sidecar: ") + e.what());
    }
    if (pb.provenance.size() != matrix.rows() || pb.provenance.size() != 4 * pb.nonempty_clusters)
        throw Error(ErrorCode::HeaderMismatch, "prototype sidecar does not match its container");
    pb.matrix = std::move(matrix);
    return pb;
}

} // namespace hgpmil::prototyping
