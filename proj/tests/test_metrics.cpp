#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "support.hpp"

#include "hgpmil/metrics.hpp"
#include "hgpmil/rng.hpp"

using namespace hgpmil;
using namespace hgpmil::eval;
using testing::code_of;

namespace {

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

} // namespace

TEST_CASE("binary AUC worked example") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(roc_auc(s, y) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("binary AUC matches pair counting") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng.index(199);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse grid so ties are common.
            s[i] = static_cast<double>(rng.index(7));
            y[i] = static_cast<int>(rng.index(2));
        }
        y[0] = 0;
        y[1] = 1;
        const double auc = roc_auc(s, y);
        CHECK(std::abs(auc - pair_count_auc(s, y)) <= 1e-12);
        std::vector<double> neg(n);
        std::ranges::transform(s, neg.begin(), [](double v) { return -v; });
        CHECK(std::abs(auc + roc_auc(neg, y) - 1.0) <= 1e-12);
    }
}

TEST_CASE("AUC input errors") {
    const std::vector<double> s{0.1, 0.2};
    CHECK(code_of([&] { roc_auc(s, std::vector<int>{1, 1}); }) == ErrorCode::SingleClass);
    CHECK(code_of([&] { roc_auc(s, std::vector<int>{1}); }) == ErrorCode::LengthMismatch);
    CHECK(code_of([&] { roc_auc(s, std::vector<int>{0, 2}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("multiclass AUC") {
    Rng rng(2);
    const std::size_t n = 40;
    std::vector<int> y(n);
    Matrix p2(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        p2(i, 1) = rng.uniform();
        p2(i, 0) = 1.0 - p2(i, 1);
    }
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = p2(i, 1);
    CHECK(multiclass_auc(p2, y, 2) == doctest::Approx(roc_auc(col, y)).epsilon(1e-14));

    std::vector<int> y3(n);
    Matrix onehot(n, 3), uniform(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        y3[i] = static_cast<int>(i % 3);
        onehot(i, static_cast<std::size_t>(y3[i])) = 1.0;
        for (std::size_t c = 0; c < 3; ++c) uniform(i, c) = 1.0 / 3.0;
    }
    CHECK(multiclass_auc(onehot, y3, 3) == 1.0);
    CHECK(multiclass_auc(uniform, y3, 3) == 0.5);

    std::vector<int> missing(n, 0);
    for (std::size_t i = 0; i < n; i += 2) missing[i] = 1;
    CHECK(code_of([&] { multiclass_auc(uniform, missing, 3); }) == ErrorCode::MissingClass);
}

TEST_CASE("decisions and accuracy") {
    CHECK(decide_class(std::vector<double>{0.5, 0.5}) == 1);
    CHECK(decide_class(std::vector<double>{0.51, 0.49}) == 0);
    CHECK(decide_class(std::vector<double>{0.3, 0.35, 0.35}) == 1);
    CHECK(accuracy(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 1, 0, 0}) == 0.75);
    CHECK(code_of([] { accuracy(std::vector<int>{}, std::vector<int>{}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("stratified folds") {
    const std::vector<int> ten{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const auto folds = stratified_kfold(ten, 5, 7);
    REQUIRE(folds.size() == 5);
    for (const auto& f : folds) {
        REQUIRE(f.test.size() == 2);
        CHECK(ten[f.test[0]] + ten[f.test[1]] == 1);
    }

    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const int k = 2 + static_cast<int>(rng.index(5));
        const std::size_t classes = 2 + rng.index(3);
        std::vector<int> y;
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t i = 0; i < static_cast<std::size_t>(k) + rng.index(20); ++i) y.push_back(static_cast<int>(c));
        rng.shuffle(y.begin(), y.end());
        const auto fs = stratified_kfold(y, k, 100 + t);
        REQUIRE(fs.size() == static_cast<std::size_t>(k));
        std::vector<int> seen(y.size(), 0);
        std::map<int, std::vector<int>> per_class;
        for (const auto& f : fs) {
            std::set<std::size_t> test(f.test.begin(), f.test.end()), train(f.train.begin(), f.train.end());
            CHECK(test.size() + train.size() == y.size());
            for (std::size_t i : f.test) CHECK(!train.contains(i));
            std::map<int, int> counts;
            for (std::size_t i : f.test) {
                ++seen[i];
                ++counts[y[i]];
            }
            for (std::size_t c = 0; c < classes; ++c) per_class[static_cast<int>(c)].push_back(counts[static_cast<int>(c)]);
        }
        CHECK(std::ranges::all_of(seen, [](int s) { return s == 1; }));
        for (const auto& [c, counts] : per_class) CHECK(std::ranges::max(counts) - std::ranges::min(counts) <= 1);
        CHECK(stratified_kfold(y, k, 100 + t)[0].test == fs[0].test);
    }

    CHECK(code_of([] { stratified_kfold(std::vector<int>{0, 0, 0, 1}, 2, 1); }) == ErrorCode::ClassTooSmall);
    CHECK(code_of([] { stratified_kfold(std::vector<int>{0, 1}, 1, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("random folds partition") {
    const auto fs = random_kfold(23, 4, 9);
    std::vector<int> seen(23, 0);
    for (const auto& f : fs) {
        CHECK(f.test.size() + f.train.size() == 23);
        for (std::size_t i : f.test) ++seen[i];
    }
    CHECK(std::ranges::all_of(seen, [](int s) { return s == 1; }));
    CHECK(code_of([] { random_kfold(3, 4, 1); }) == ErrorCode::ClassTooSmall);
}

TEST_CASE("mean and sample standard deviation") {
    const auto ms = mean_std(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
    CHECK(ms.mean == 5.0);
    CHECK(ms.std == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-15));
    CHECK(mean_std(std::vector<double>{3.0}).std == 0.0);
}
