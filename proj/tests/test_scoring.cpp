#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "hgpmil/rng.hpp"
#include "hgpmil/scoring.hpp"

using namespace hgpmil;
using namespace hgpmil::scoring;
using testing::code_of;

namespace {

// Least squares with an explicit intercept column, solved directly.
std::vector<double> lstsq_oracle(const Matrix& x, std::span<const double> y) {
    const std::size_t d = x.cols() + 1;
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    std::vector<double> b(d, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::vector<double> row(x.row(i).begin(), x.row(i).end());
        row.push_back(1.0);
        for (std::size_t r = 0; r < d; ++r) {
            b[r] += row[r] * y[i];
            for (std::size_t c = 0; c < d; ++c) a[r][c] += row[r] * row[c];
        }
    }
    return testing::gauss_solve(a, b);
}

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

Bag bag_of(Matrix x) {
    Bag b;
    b.slide_id = "s";
    for (std::size_t i = 0; i < x.rows(); ++i) b.patch_ids.push_back(std::to_string(i));
    b.features = std::move(x);
    return b;
}

} // namespace

TEST_CASE("ridge matches a direct least-squares solve") {
    const Matrix x{{1, 0}, {0, 1}, {1, 1}};
    const std::vector<double> y{0.2, 0.3, 0.5};
    const auto model = fit_ridge(x, y, 1e-10);
    const auto oracle = lstsq_oracle(x, y);
    REQUIRE(model.params.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(model.params[i] == doctest::Approx(oracle[i]).epsilon(1e-8));
    CHECK(model.params[0] == doctest::Approx(0.2).epsilon(1e-8));
    CHECK(model.params[1] == doctest::Approx(0.3).epsilon(1e-8));
    CHECK(std::abs(model.params[2]) < 1e-8);

    Rng rng(3);
    const Matrix xr = random_matrix(rng, 40, 5);
    std::vector<double> yr;
    for (std::size_t i = 0; i < 40; ++i) yr.push_back(rng.uniform());
    const auto fitted = fit_ridge(xr, yr, 0.0);
    const auto exact = lstsq_oracle(xr, yr);
    for (std::size_t i = 0; i < exact.size(); ++i) CHECK(fitted.params[i] == doctest::Approx(exact[i]).epsilon(1e-9));
}

TEST_CASE("ridge edge cases") {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 10, 3);
    const std::vector<double> y(10, 0.4);
    const auto flat = fit_ridge(x, y, 1.0);
    CHECK(flat.params[3] == doctest::Approx(0.4));
    for (int j = 0; j < 3; ++j) CHECK(std::abs(flat.params[j]) < 1e-12);

    const Matrix twin{{1, 2}, {1, 2}};
    const std::vector<double> yt{0.1, 0.9};
    CHECK(code_of([&] { fit_ridge(twin, yt, 0.0); }) == ErrorCode::SingularSystem);
}

TEST_CASE("grade mapping") {
    CHECK(grade_to_unit(1) == 0.0);
    CHECK(grade_to_unit(2) == 0.5);
    CHECK(grade_to_unit(3) == 1.0);
    CHECK_THROWS_AS(grade_to_unit(4), Error);
}

TEST_CASE("mlp gradient matches central differences") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = random_matrix(rng, 12, 4);
        std::vector<double> y;
        for (int i = 0; i < 12; ++i) y.push_back(rng.uniform());
        auto model = init_mlp(4, 5, 100 + trial);
        for (double& p : model.params) p += 0.3 * rng.normal();
        std::vector<double> grad;
        mlp_loss(model, x, y, &grad);
        const double err = testing::max_relative_error(grad, model.params, [&](const std::vector<double>& th) {
            auto m = model;
            m.params = th;
            return mlp_loss(m, x, y);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("mlp fits a linear target about as well as ridge") {
    Rng rng(9);
    const Matrix x = random_matrix(rng, 60, 3);
    std::vector<double> y;
    for (std::size_t i = 0; i < 60; ++i) y.push_back(0.5 + 0.1 * x(i, 0) - 0.05 * x(i, 1) + 0.02 * x(i, 2));
    const auto ridge = fit_ridge(x, y, 1e-10);
    double ridge_mse = 0.0;
    for (std::size_t i = 0; i < 60; ++i) ridge_mse += std::pow(ridge.raw_predict(x.row(i)) - y[i], 2) / 60.0;
    CHECK(ridge_mse < 1e-12);

    MlpConfig cfg;
    cfg.hidden = 4;
    cfg.epochs = 4000;
    cfg.learning_rate = 0.1;
    std::vector<double> history;
    const auto mlp = fit_mlp(x, y, cfg, ScoreKind::Cellularity, &history);
    CHECK(mlp_loss(mlp, x, y) < 1e-3);
    CHECK(history.back() < history.front());
}

TEST_CASE("mlp divergence is reported") {
    Rng rng(10);
    const Matrix x = random_matrix(rng, 20, 3);
    std::vector<double> y;
    for (int i = 0; i < 20; ++i) y.push_back(rng.uniform());
    MlpConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.epochs = 200;
    CHECK(code_of([&] { fit_mlp(x, y, cfg); }) == ErrorCode::DivergedLoss);
}

TEST_CASE("predictions are clamped to the unit interval") {
    ScorerModel m;
    m.input_dim = 2;
    m.params = {0.0, 0.0, 0.7};
    const Bag b = bag_of(Matrix{{1, 2}, {-3, 4}});
    CHECK(predict_scores(m, b).values == std::vector<double>{0.7, 0.7});
    m.params = {1.0, 0.0, 0.7};
    const Bag c = bag_of(Matrix{{1.0, 0.0}, {-0.9, 0.0}});
    const auto s = predict_scores(m, c);
    CHECK(s.values[0] == 1.0);
    CHECK(s.values[1] == 0.0);
    CHECK(predict_scores(m, bag_of(Matrix{{0.0, 5.0}})).values[0] == doctest::Approx(0.7));
}

TEST_CASE("scorer JSON round trip") {
    auto m = init_mlp(3, 2, 5, ScoreKind::Architecture);
    const auto back = scorer_from_json(to_json(m));
    CHECK(back.kind == ScorerKind::Mlp);
    CHECK(back.target == ScoreKind::Architecture);
    CHECK(back.hidden == 2);
    CHECK(back.params == m.params);
    CHECK(parameter_count(ScorerKind::Mlp, 3, 2) == 3 * 2 + 2 + 2 + 1);
    CHECK(parameter_count(ScorerKind::Ridge, 3, 0) == 4);
    CHECK_THROWS_AS(scorer_from_json("{\"kind\": \"forest\"}"), Error);
}
