#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hgpmil/clustering.hpp"
#include "hgpmil/core_model.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil::prototyping {

enum class Polarity { Positive, Negative };

struct SelectionMask {
    int cluster = 0;
    Polarity polarity = Polarity::Positive;
    ScoreKind guide = ScoreKind::Cellularity;
    std::vector<std::size_t> selected;  // ascending instance indices
    std::size_t m = 0;
};

/// m = max(1, ceil(R * n / 100)) for a cluster of n members.
std::size_t selection_count(double ratio, std::size_t cluster_size);

/// Top-m (positive) and bottom-m (negative) members by score. Ties go to the
/// smaller instance index in both directions.
std::pair<SelectionMask, SelectionMask> select_masks(std::span<const double> scores_in_cluster,
                                                     std::span<const std::size_t> member_indices, double ratio,
                                                     int cluster = 0, ScoreKind guide = ScoreKind::Cellularity);

struct Prototype {
    std::vector<double> vector;
    bool degenerate = false;  // all selected weights vanished; vector is zero
};

/// L2-normalized score-weighted sum of the selected rows. `scores` and
/// `features` are indexed by instance (whole bag).
Prototype aggregate_prototype(const SelectionMask& mask, std::span<const double> scores, const Matrix& features);

struct Provenance {
    int cluster = 0;
    ScoreKind guide = ScoreKind::Cellularity;
    Polarity polarity = Polarity::Positive;
    bool degenerate = false;

    bool operator==(const Provenance&) const = default;
};

std::string tag(const Provenance& p);

/// Four prototypes per nonempty cluster, ordered by cluster then
/// (C,pos), (C,neg), (A,pos), (A,neg).
struct PrototypeBag {
    std::string slide_id;
    Matrix matrix;  // 4K' x D
    std::vector<Provenance> provenance;
    double ratio = 50.0;
    std::size_t nonempty_clusters = 0;
};

PrototypeBag build_prototype_bag(const Bag& bag, const clustering::ClusterModel& model, const ScoreVector& cellularity,
                                 const ScoreVector& architecture, double ratio);

std::string sidecar_json(const PrototypeBag& pb);
PrototypeBag prototype_bag_from_sidecar(const std::string& json_text, Matrix matrix);

} // namespace hgpmil::prototyping
