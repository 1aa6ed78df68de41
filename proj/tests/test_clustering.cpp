#include <cmath>
#include <limits>

#include "doctest.h"
#include "support.hpp"

#include "hgpmil/clustering.hpp"
#include "hgpmil/rng.hpp"

using namespace hgpmil;
using namespace hgpmil::clustering;
using testing::code_of;

namespace {

double sse_of_group(const Matrix& x, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i : idx) mean += x(i, j);
        mean /= static_cast<double>(idx.size());
        for (std::size_t i : idx) total += (x(i, j) - mean) * (x(i, j) - mean);
    }
    return total;
}

// Minimum SSE over every split of the rows into two nonempty groups.
double best_bipartition(const Matrix& x) {
    const std::size_t n = x.rows();
    double best = std::numeric_limits<double>::infinity();
    // Row 0 stays in group A, which enumerates each unordered split once.
    for (std::size_t mask = 0; mask < (std::size_t{1} << (n - 1)) - 1; ++mask) {
        std::vector<std::size_t> a{0}, b;
        for (std::size_t i = 1; i < n; ++i) ((mask >> (i - 1)) & 1 ? a : b).push_back(i);
        best = std::min(best, sse_of_group(x, a) + sse_of_group(x, b));
    }
    return best;
}

Matrix random_points(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

KMeansOptions opts(int k, std::uint64_t seed, int restarts = 3) {
    KMeansOptions o;
    o.k = k;
    o.seed = seed;
    o.restarts = restarts;
    return o;
}

} // namespace

TEST_CASE("extended features append weighted scores") {
    Bag b;
    b.slide_id = "s";
    b.features = Matrix{{1, 0}, {0, 1}};
    b.patch_ids = {"a", "b"};
    const ScoreVector c{ScoreKind::Cellularity, {0.5, 0.25}};
    const ScoreVector a{ScoreKind::Architecture, {1.0, 0.0}};
    const auto e = extend_features(b, c, a, 1.0);
    CHECK(e.matrix == Matrix{{1, 0, 0.5, 1.0}, {0, 1, 0.25, 0.0}});
    const auto zero = extend_features(b, c, a, 0.0);
    CHECK(zero.matrix(0, 2) == 0.0);
    CHECK(zero.matrix(1, 3) == 0.0);
    CHECK(extend_features(b, c, a, 2.0).matrix(0, 2) == 1.0);
    CHECK(code_of([&] { extend_features(b, a, c, 1.0); }) == ErrorCode::KindMismatch);
    const ScoreVector short_c{ScoreKind::Cellularity, {0.5}};
    CHECK(code_of([&] { extend_features(b, short_c, a, 1.0); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("K equal to N gives an exact cover") {
    Rng rng(1);
    const Matrix x = random_points(rng, 7, 3);
    const auto m = kmeans(x, opts(7, 5));
    CHECK(m.objective == 0.0);
    CHECK(m.nonempty_clusters() == 7);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(m.centroids(static_cast<std::size_t>(m.assignments[i]), j) == x(i, j));
}

TEST_CASE("K equal to one gives the mean") {
    Rng rng(2);
    const Matrix x = random_points(rng, 9, 2);
    const auto m = kmeans(x, opts(1, 5));
    for (int a : m.assignments) CHECK(a == 0);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 9; ++i) mean += x(i, j) / 9.0;
        CHECK(m.centroids(0, j) == doctest::Approx(mean).epsilon(1e-12));
    }
    CHECK(m.objective == doctest::Approx(sse_of_group(x, {0, 1, 2, 3, 4, 5, 6, 7, 8})).epsilon(1e-12));
}

TEST_CASE("two-means reaches the exhaustive optimum on small inputs") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        const Matrix x = random_points(rng, 6, 2);
        const auto m = kmeans(x, opts(2, 100 + t, 10));
        CHECK(m.objective == doctest::Approx(best_bipartition(x)).epsilon(1e-9));
    }
}

TEST_CASE("objective history never increases") {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 5 + rng.index(60);
        const Matrix x = random_points(rng, n, 1 + rng.index(6));
        const int k = 1 + static_cast<int>(rng.index(std::min<std::size_t>(n, 10)));
        const auto m = kmeans(x, opts(k, 1000 + t, 1));
        for (std::size_t i = 1; i < m.objective_history.size(); ++i)
            CHECK(m.objective_history[i] <= m.objective_history[i - 1]);
        CHECK(m.objective == doctest::Approx(compute_objective(x, m.assignments, m.centroids)).epsilon(1e-12));
        CHECK(m.objective == m.objective_history.back());
    }
}

TEST_CASE("clustering is deterministic per seed") {
    Rng rng(5);
    const Matrix x = random_points(rng, 40, 4);
    const auto a = kmeans(x, opts(5, 9));
    const auto b = kmeans(x, opts(5, 9));
    CHECK(a.assignments == b.assignments);
    CHECK(a.centroids == b.centroids);
    CHECK(slide_seed(42, "slide_a") == slide_seed(42, "slide_a"));
    CHECK(slide_seed(42, "slide_a") != slide_seed(42, "slide_b"));
}

TEST_CASE("duplicate points do not leave clusters empty") {
    const Matrix x{{0, 0}, {0, 0}, {0, 0}, {1, 1}};
    const auto m = kmeans(x, opts(3, 1));
    CHECK(m.nonempty_clusters() == 3);
}

TEST_CASE("cluster members and bounds") {
    ClusterModel m;
    m.k = 2;
    m.assignments = {0, 1, 0};
    CHECK(cluster_members(m, 0) == std::vector<std::size_t>{0, 2});
    CHECK(cluster_members(m, 1) == std::vector<std::size_t>{1});
    CHECK(code_of([&] { cluster_members(m, 5); }) == ErrorCode::BadClusterIndex);
    CHECK(code_of([&] { cluster_members(m, -1); }) == ErrorCode::BadClusterIndex);

    const Matrix x{{0.0}, {1.0}};
    CHECK(code_of([&] { kmeans(x, opts(3, 1)); }) == ErrorCode::KTooLarge);
}

TEST_CASE("sidecar round trip") {
    Rng rng(6);
    const Matrix x = random_points(rng, 12, 3);
    const auto m = kmeans(x, opts(3, 2));
    const auto back = model_from_sidecar(sidecar_json(m, "s"), m.centroids);
    CHECK(back.k == m.k);
    CHECK(back.assignments == m.assignments);
    CHECK(back.objective == m.objective);
    CHECK(back.seed == m.seed);
}
