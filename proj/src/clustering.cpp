#include "hgpmil/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hgpmil/rng.hpp"
#include "json.hpp"

namespace hgpmil::clustering {

ExtendedFeatures extend_features(const Bag& bag, const ScoreVector& c, const ScoreVector& a, double w) {
    if (c.kind != ScoreKind::Cellularity || a.kind != ScoreKind::Architecture)
        throw Error(ErrorCode::KindMismatch, "expected cellularity then architecture scores");
    if (c.size() != bag.size() || a.size() != bag.size())
        throw Error(ErrorCode::LengthMismatch, "score vectors do not match the bag size");
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "score weight must be >= 0");

    const std::size_t d = bag.dim();
    ExtendedFeatures ext{Matrix(bag.size(), d + 2), w};
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const auto src = bag.features.row(i);
        auto dst = ext.matrix.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
        dst[d] = w * c.values[i];
        dst[d + 1] = w * a.values[i];
    }
    return ext;
}

std::size_t ClusterModel::nonempty_clusters() const {
    std::vector<char> seen(static_cast<std::size_t>(k), 0);
    for (int a : assignments) seen[static_cast<std::size_t>(a)] = 1;
    return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

Matrix seed_plus_plus(const Matrix& pts, int k, Rng& rng) {
    const std::size_t n = pts.rows();
    Matrix centroids(static_cast<std::size_t>(k), pts.cols());
    std::vector<double> best(n, std::numeric_limits<double>::infinity());

    std::size_t pick = rng.index(n);
    for (int c = 0; c < k; ++c) {
        if (c > 0) {
            double total = 0.0;
            for (double v : best) total += v;
            if (total > 0.0) {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += best[i];
                    if (acc > target && best[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
                // Guard against rounding landing on an already chosen point.
                while (best[pick] == 0.0 && pick > 0) --pick;
            } else {
                pick = rng.index(n);  // every point coincides with a centroid
            }
        }
        const auto p = pts.row(pick);
        std::copy(p.begin(), p.end(), centroids.row(static_cast<std::size_t>(c)).begin());
        for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], sq_dist(pts.row(i), p));
    }
    return centroids;
}

// Nearest centroid; the current assignment wins ties so that an iteration
// never moves a point without strictly reducing its distance.
void assign(const Matrix& pts, const Matrix& centroids, std::vector<int>& assignments) {
    const int k = static_cast<int>(centroids.rows());
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const auto p = pts.row(i);
        int best_c = assignments[i];
        double best_d = best_c >= 0 ? sq_dist(p, centroids.row(static_cast<std::size_t>(best_c)))
                                    : std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double d = sq_dist(p, centroids.row(static_cast<std::size_t>(c)));
            if (d < best_d) {
                best_d = d;
                best_c = c;
            }
        }
        assignments[i] = best_c;
    }
}

// Recomputes means; an empty cluster takes the point farthest from its own
// centroid among clusters with more than one member.
void update(const Matrix& pts, Matrix& centroids, std::vector<int>& assignments) {
    const std::size_t k = centroids.rows(), dim = pts.cols(), n = pts.rows();
    std::vector<std::size_t> counts(k, 0);
    for (int a : assignments) ++counts[static_cast<std::size_t>(a)];

    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = n;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto a = static_cast<std::size_t>(assignments[i]);
            if (counts[a] < 2) continue;
            const double d = sq_dist(pts.row(i), centroids.row(a));
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far == n) break;  // fewer distinct slots than clusters; leave it empty
        --counts[static_cast<std::size_t>(assignments[far])];
        assignments[far] = static_cast<int>(c);
        counts[c] = 1;
    }

    Matrix sums(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
        auto s = sums.row(static_cast<std::size_t>(assignments[i]));
        const auto p = pts.row(i);
        for (std::size_t j = 0; j < dim; ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        auto dst = centroids.row(c);
        const auto s = sums.row(c);
        for (std::size_t j = 0; j < dim; ++j) dst[j] = s[j] / static_cast<double>(counts[c]);
    }
}

double max_shift(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t c = 0; c < a.rows(); ++c) m = std::max(m, std::sqrt(sq_dist(a.row(c), b.row(c))));
    return m;
}

ClusterModel run_once(const Matrix& pts, const KMeansOptions& opts, std::uint64_t seed) {
    Rng rng(seed);
    ClusterModel m;
    m.k = opts.k;
    m.seed = seed;
    m.centroids = seed_plus_plus(pts, opts.k, rng);
    m.assignments.assign(pts.rows(), -1);
    assign(pts, m.centroids, m.assignments);
    update(pts, m.centroids, m.assignments);
    m.objective = compute_objective(pts, m.assignments, m.centroids);
    m.objective_history.push_back(m.objective);

    for (int it = 0; it < opts.max_iter; ++it) {
        Matrix next_centroids = m.centroids;
        std::vector<int> next_assign = m.assignments;
        assign(pts, next_centroids, next_assign);
        update(pts, next_centroids, next_assign);
        const double obj = compute_objective(pts, next_assign, next_centroids);
        // Rounding can make a no-op iteration look like a tiny increase; treat
        // that as convergence and keep the previous state.
        if (obj > m.objective) break;
        const double shift = max_shift(m.centroids, next_centroids);
        m.centroids = std::move(next_centroids);
        m.assignments = std::move(next_assign);
        m.objective = obj;
        m.objective_history.push_back(obj);
        m.iterations_run = it + 1;
        if (shift < opts.tol) break;
    }
    return m;
}

} // namespace

double compute_objective(const Matrix& pts, std::span<const int> assignments, const Matrix& centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i)
        total += sq_dist(pts.row(i), centroids.row(static_cast<std::size_t>(assignments[i])));
    return total;
}

ClusterModel kmeans(const Matrix& pts, const KMeansOptions& opts) {
    if (opts.k < 1) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
    if (static_cast<std::size_t>(opts.k) > pts.rows()) {
        throw Error(ErrorCode::KTooLarge, "K = " + std::to_string(opts.k) + " exceeds N = " +
                                              std::to_string(pts.rows()));
    }
    if (!(opts.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
    if (opts.restarts < 1) throw Error(ErrorCode::InvalidArgument, "restarts must be >= 1");
    if (opts.max_iter < 0) throw Error(ErrorCode::InvalidArgument, "max_iter must be >= 0");

    ClusterModel best;
    for (int r = 0; r < opts.restarts; ++r) {
        ClusterModel m = run_once(pts, opts, derive_seed(opts.seed, r));
        if (r == 0 || m.objective < best.objective) best = std::move(m);
    }
    best.seed = opts.seed;
    return best;
}

ClusterModel kmeans(const ExtendedFeatures& ext, const KMeansOptions& opts) { return kmeans(ext.matrix, opts); }

std::vector<std::size_t> cluster_members(const ClusterModel& model, int k) {
    if (k < 0 || k >= model.k) {
        throw Error(ErrorCode::BadClusterIndex, "cluster " + std::to_string(k) + " with K = " +
                                                    std::to_string(model.k));
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < model.assignments.size(); ++i)
        if (model.assignments[i] == k) out.push_back(i);
    return out;
}

std::uint64_t slide_seed(std::uint64_t global_seed, const std::string& slide_id) {
    return derive_seed(global_seed, fnv1a64(slide_id));
}

std::string sidecar_json(const ClusterModel& model, const std::string& slide_id) {
    nlohmann::json doc;
    doc["slide_id"] = slide_id;
    doc["K"] = model.k;
    doc["seed"] = model.seed;
    doc["objective"] = model.objective;
    doc["iterations_run"] = model.iterations_run;
    doc["assignments"] = model.assignments;
    return doc.dump(2) + "\n";
}

ClusterModel model_from_sidecar(const std::string& json_text, Matrix centroids) {
    ClusterModel m;
    try {
        const auto doc = nlohmann::json::parse(json_text);
        m.k = doc.at("K").get<int>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.objective = doc.at("objective").get<double>();
        m.iterations_run = doc.value("iterations_run", 0);
        m.assignments = doc.at("assignments").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("cluster sidecar: ") + e.what());
    }
    if (m.k < 1 || centroids.rows() != static_cast<std::size_t>(m.k))
        throw Error(ErrorCode::HeaderMismatch, "cluster sidecar K does not match the centroid container");
    for (int a : m.assignments)
        if (a < 0 || a >= m.k) throw Error(ErrorCode::BadClusterIndex, "cluster sidecar assignment out of range");
    m.centroids = std::move(centroids);
    return m;
}

} // namespace hgpmil::clustering
