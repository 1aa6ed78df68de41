#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"

#include "hgpmil/mil_heads.hpp"
#include "hgpmil/rng.hpp"

using namespace hgpmil;
using namespace hgpmil::heads;
using testing::code_of;

namespace {

Matrix random_bag(Rng& rng, std::size_t m, std::size_t d) {
    Matrix x(m, d);
    for (double& v : x.values()) v = rng.normal();
    return x;
}

HeadParams perturbed(HeadKind kind, HeadTask task, std::size_t d, std::size_t outputs, std::uint64_t seed, Rng& rng) {
    auto p = init_head(kind, task, d, outputs, 5, seed);
    for (double& v : p.theta) v += 0.5 * rng.normal();
    return p;
}

double ce_at(const HeadParams& p, const std::vector<double>& theta, const Matrix& x, int label) {
    auto q = p;
    q.theta = theta;
    return bag_cross_entropy(q, x, label);
}

} // namespace

TEST_CASE("max pooling forward") {
    auto p = init_head(HeadKind::MaxPool, HeadTask::Classification, 2, 2, 0, 1);
    const Matrix one{{0.3, -0.7}};
    CHECK(pool(p, one).z == std::vector<double>{0.3, -0.7});
    const Matrix two{{1, 0}, {0, 1}};
    CHECK(pool(p, two).z == std::vector<double>{1, 1});

    Rng rng(2);
    const Matrix x = random_bag(rng, 6, 2);
    Matrix doubled(12, 2);
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 2; ++j) doubled(i, j) = x(i % 6, j);
    CHECK(forward_maxpool(p, x).logits == forward_maxpool(p, doubled).logits);
}

TEST_CASE("gated attention forward") {
    Rng rng(3);
    auto p = init_head(HeadKind::GatedAttention, HeadTask::Classification, 4, 2, 6, 1);
    const Matrix one = random_bag(rng, 1, 4);
    CHECK(forward_attention(p, one).attention == std::vector<double>{1.0});

    auto zero = p;
    std::fill(zero.theta.begin(), zero.theta.begin() + static_cast<std::ptrdiff_t>(zero.w_offset()), 0.0);
    const Matrix x = random_bag(rng, 5, 4);
    for (double a : forward_attention(zero, x).attention) CHECK(a == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("attention is permutation equivariant with invariant logits") {
    Rng rng(4);
    auto p = perturbed(HeadKind::GatedAttention, HeadTask::Classification, 5, 3, 2, rng);
    for (int t = 0; t < 20; ++t) {
        const Matrix x = random_bag(rng, 9, 5);
        std::vector<std::size_t> perm(9);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        const Matrix y = x.select_rows(perm);
        const auto fx = forward_attention(p, x);
        const auto fy = forward_attention(p, y);
        CHECK(fx.logits == fy.logits);
        for (std::size_t i = 0; i < 9; ++i) CHECK(fy.attention[i] == fx.attention[perm[i]]);
        CHECK(forward_maxpool(init_head(HeadKind::MaxPool, HeadTask::Classification, 5, 3, 0, 9), x).logits ==
              forward_maxpool(init_head(HeadKind::MaxPool, HeadTask::Classification, 5, 3, 0, 9), y).logits);
    }
}

TEST_CASE("cross-entropy gradients match central differences") {
    Rng rng(5);
    for (auto kind : {HeadKind::GatedAttention, HeadKind::MaxPool}) {
        for (int t = 0; t < 10; ++t) {
            auto p = perturbed(kind, HeadTask::Classification, 4, 3, 10 + t, rng);
            // Continuous random rows have no ties in any coordinate.
            const Matrix x = random_bag(rng, 7, 4);
            const int label = static_cast<int>(rng.index(3));
            std::vector<double> grad(p.theta.size(), 0.0);
            bag_cross_entropy(p, x, label, grad);
            const double err = testing::max_relative_error(
                grad, p.theta, [&](const std::vector<double>& th) { return ce_at(p, th, x, label); });
            CAPTURE(to_string(kind));
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("mean cross-entropy gradient over a toy set") {
    Rng rng(6);
    auto p = perturbed(HeadKind::GatedAttention, HeadTask::Classification, 3, 2, 1, rng);
    const Matrix a = random_bag(rng, 4, 3), b = random_bag(rng, 2, 3), c = random_bag(rng, 6, 3);
    const std::vector<LabeledBag> bags{{&a, 0}, {&b, 1}, {&c, 1}};
    std::vector<double> grad;
    mean_cross_entropy(p, bags, &grad);
    const double err = testing::max_relative_error(grad, p.theta, [&](const std::vector<double>& th) {
        auto q = p;
        q.theta = th;
        return mean_cross_entropy(q, bags);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("cox partial likelihood") {
    auto p = init_head(HeadKind::MaxPool, HeadTask::Cox, 2, 1, 0, 1);
    std::fill(p.theta.begin(), p.theta.end(), 0.0);
    const Matrix a{{1, 2}}, b{{3, -1}};
    const std::vector<SurvivalBag> two{{&a, 5.0, true}, {&b, 8.0, false}};
    CHECK(cox_npll(p, two) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    const std::vector<SurvivalBag> censored{{&a, 5.0, false}, {&b, 8.0, false}};
    CHECK(code_of([&] { cox_npll(p, censored); }) == ErrorCode::NoEvents);
    TrainConfig cfg;
    CHECK(code_of([&] { train_cox(censored, HeadKind::MaxPool, cfg); }) == ErrorCode::NoEvents);

    Rng rng(7);
    for (auto kind : {HeadKind::GatedAttention, HeadKind::MaxPool}) {
        for (int t = 0; t < 10; ++t) {
            auto q = perturbed(kind, HeadTask::Cox, 3, 1, 20 + t, rng);
            std::vector<Matrix> xs;
            for (int i = 0; i < 5; ++i) xs.push_back(random_bag(rng, 2 + rng.index(4), 3));
            // Tied times exercise the Breslow risk sets.
            const double times[5] = {3, 1, 3, 7, 2};
            const bool events[5] = {true, false, true, true, false};
            std::vector<SurvivalBag> subjects;
            for (int i = 0; i < 5; ++i) subjects.push_back({&xs[i], times[i], events[i]});
            std::vector<double> grad;
            cox_npll(q, subjects, &grad);
            const double err = testing::max_relative_error(grad, q.theta, [&](const std::vector<double>& th) {
                auto r = q;
                r.theta = th;
                return cox_npll(r, subjects);
            });
            CAPTURE(to_string(kind));
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("cox by hand with distinct times") {
    // One feature, max pooling: risk_i = beta * x_i.
    auto p = init_head(HeadKind::MaxPool, HeadTask::Cox, 1, 1, 0, 1);
    p.theta = {0.5};
    const Matrix x1{{1.0}}, x2{{2.0}}, x3{{0.0}};
    const std::vector<SurvivalBag> s{{&x1, 1.0, true}, {&x2, 2.0, true}, {&x3, 3.0, false}};
    // Event at t=1: risk set {1,2,3}; at t=2: {2,3}.
    const double l1 = 0.5 - std::log(std::exp(0.5) + std::exp(1.0) + 1.0);
    const double l2 = 1.0 - std::log(std::exp(1.0) + 1.0);
    CHECK(cox_npll(p, s) == doctest::Approx(-(l1 + l2) / 2.0).epsilon(1e-14));
}

TEST_CASE("training separates separable bags") {
    Rng rng(8);
    std::vector<Matrix> xs;
    std::vector<int> ys;
    for (int b = 0; b < 20; ++b) {
        Matrix x = random_bag(rng, 5, 3);
        for (std::size_t i = 0; i < 5; ++i) x(i, 0) = -std::abs(x(i, 0)) - 0.5;
        const int y = b % 2;
        if (y) x(rng.index(5), 0) = 2.0;
        xs.push_back(std::move(x));
        ys.push_back(y);
    }
    // Separability of the max-pooled vectors: a perceptron must converge.
    std::vector<std::vector<double>> pooled;
    for (const auto& x : xs) {
        std::vector<double> z(3, -1e300);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < 3; ++j) z[j] = std::max(z[j], x(i, j));
        pooled.push_back(z);
    }
    std::vector<double> w(4, 0.0);
    bool converged = false;
    for (int pass = 0; pass < 1000 && !converged; ++pass) {
        converged = true;
        for (std::size_t b = 0; b < pooled.size(); ++b) {
            const double s = w[0] * pooled[b][0] + w[1] * pooled[b][1] + w[2] * pooled[b][2] + w[3];
            const double target = ys[b] ? 1.0 : -1.0;
            if (s * target <= 0) {
                converged = false;
                for (int j = 0; j < 3; ++j) w[j] += target * pooled[b][j];
                w[3] += target;
            }
        }
    }
    REQUIRE(converged);

    std::vector<LabeledBag> bags;
    for (std::size_t b = 0; b < xs.size(); ++b) bags.push_back({&xs[b], ys[b]});
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.01;
    TrainLog log;
    const auto params = train_classifier(bags, 2, HeadKind::MaxPool, cfg, {}, &log);
    int correct = 0;
    for (std::size_t b = 0; b < xs.size(); ++b) {
        const auto pr = predict(params, xs[b]);
        correct += (pr.probabilities[1] >= 0.5 ? 1 : 0) == ys[b];
    }
    CHECK(correct == 20);
    CHECK(log.train_loss.back() < log.initial_loss);

    const auto again = train_classifier(bags, 2, HeadKind::MaxPool, cfg);
    CHECK(again.theta == params.theta);

    std::vector<LabeledBag> one_class{{&xs[0], 0}, {&xs[2], 0}};
    CHECK(code_of([&] { train_classifier(one_class, 2, HeadKind::MaxPool, cfg); }) == ErrorCode::SingleClassDataset);
}

TEST_CASE("softmax and predictions") {
    const std::vector<double> even{0.0, 0.0};
    CHECK(softmax(even) == std::vector<double>{0.5, 0.5});
    const std::vector<double> huge{1000.0, 0.0};
    const auto s = softmax(huge);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(std::isfinite(s[1]));
    CHECK(s[1] >= 0.0);

    auto p = init_head(HeadKind::GatedAttention, HeadTask::Classification, 2, 2, 3, 1);
    std::fill(p.theta.begin(), p.theta.end(), 0.0);
    const Matrix x{{1, 2}, {3, 4}};
    CHECK(predict(p, x).probabilities == std::vector<double>{0.5, 0.5});

    auto cox = init_head(HeadKind::MaxPool, HeadTask::Cox, 1, 1, 0, 1);
    cox.theta = {2.0};
    double last = -1e300;
    for (double v : {-1.0, 0.0, 0.5, 3.0}) {
        const double r = predict(cox, Matrix{{v}}).risk;
        CHECK(r == doctest::Approx(2.0 * v));
        CHECK(r > last);
        last = r;
    }
    const auto mp = init_head(HeadKind::MaxPool, HeadTask::Classification, 2, 2, 0, 4);
    CHECK(predict(mp, x).argmax_instance.size() == 2);
}

TEST_CASE("head JSON round trip") {
    Rng rng(9);
    auto p = perturbed(HeadKind::GatedAttention, HeadTask::Classification, 3, 2, 1, rng);
    const auto back = head_from_json(to_json(p));
    CHECK(back.theta == p.theta);
    CHECK(back.hidden == p.hidden);
    CHECK(back.kind == p.kind);
    CHECK(parse_head_kind("maxpool") == HeadKind::MaxPool);
    CHECK_THROWS_AS(parse_head_kind("transformer"), Error);
    CHECK_THROWS_AS(head_from_json("{}"), Error);
}
