#include "hgpmil/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hgpmil/rng.hpp"
#include "json.hpp"

namespace hgpmil::scoring {

std::size_t parameter_count(ScorerKind kind, std::size_t input_dim, std::size_t hidden) {
    return kind == ScorerKind::Ridge ? input_dim + 1 : hidden * input_dim + 2 * hidden + 1;
}

double grade_to_unit(int grade) {
    if (grade < 1 || grade > 3) throw Error(ErrorCode::InvalidArgument, "grade must be 1, 2 or 3");
    return (grade - 1) / 2.0;
}

double ScorerModel::raw_predict(std::span<const double> x) const {
    const std::size_t d = input_dim;
    if (kind == ScorerKind::Ridge) {
        double s = params[d];
        for (std::size_t j = 0; j < d; ++j) s += params[j] * x[j];
        return s;
    }
    const double* w1 = params.data();
    const double* b1 = w1 + hidden * d;
    const double* w2 = b1 + hidden;
    double out = w2[hidden];
    for (std::size_t h = 0; h < hidden; ++h) {
        double a = b1[h];
        for (std::size_t j = 0; j < d; ++j) a += w1[h * d + j] * x[j];
        out += w2[h] * std::tanh(a);
    }
    return out;
}

namespace {

void check_training_data(const Matrix& features, std::span<const double> targets) {
    if (features.rows() == 0) throw Error(ErrorCode::EmptyInput, "no training rows");
    if (features.rows() != targets.size()) throw Error(ErrorCode::LengthMismatch, "features and targets differ in length");
    for (double t : targets)
        if (!std::isfinite(t)) throw Error(ErrorCode::NonFiniteValue, "non-finite training target");
    for (double v : features.values())
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite training feature");
}

// In-place Cholesky solve of the SPD system A x = b; A is d x d row-major.
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t d) {
    double max_diag = 0.0;
    for (std::size_t i = 0; i < d; ++i) max_diag = std::max(max_diag, std::abs(a[i * d + i]));
    const double tiny = std::max(max_diag, 1.0) * 1e-12;
    for (std::size_t j = 0; j < d; ++j) {
        double diag = a[j * d + j];
        for (std::size_t k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
        if (!(diag > tiny)) throw Error(ErrorCode::SingularSystem, "ridge Gram matrix is rank-deficient");
        const double l = std::sqrt(diag);
        a[j * d + j] = l;
        for (std::size_t i = j + 1; i < d; ++i) {
            double s = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
            a[i * d + j] = s / l;
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * d + k] * b[k];
        b[i] = s / a[i * d + i];
    }
    for (std::size_t i = d; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= a[k * d + i] * b[k];
        b[i] = s / a[i * d + i];
    }
    return b;
}

} // namespace

ScorerModel fit_ridge(const Matrix& x, std::span<const double> y, double lambda, ScoreKind target) {
    check_training_data(x, y);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
    const std::size_t m = x.rows(), d = x.cols();

    std::vector<double> mean(d, 0.0);
    double y_mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
        y_mean += y[i];
    }
    for (double& v : mean) v /= static_cast<double>(m);
    y_mean /= static_cast<double>(m);

    std::vector<double> gram(d * d, 0.0), rhs(d, 0.0), xc(d);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) xc[j] = x(i, j) - mean[j];
        const double yc = y[i] - y_mean;
        for (std::size_t j = 0; j < d; ++j) {
            rhs[j] += xc[j] * yc;
            for (std::size_t k = 0; k <= j; ++k) gram[j * d + k] += xc[j] * xc[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        gram[j * d + j] += lambda;
        for (std::size_t k = 0; k < j; ++k) gram[k * d + j] = gram[j * d + k];
    }

    ScorerModel model;
    model.kind = ScorerKind::Ridge;
    model.target = target;
    model.input_dim = d;
    model.params = cholesky_solve(std::move(gram), std::move(rhs), d);
    double intercept = y_mean;
    for (std::size_t j = 0; j < d; ++j) intercept -= mean[j] * model.params[j];
    model.params.push_back(intercept);
    return model;
}

ScorerModel init_mlp(std::size_t input_dim, std::size_t hidden, std::uint64_t seed, ScoreKind target) {
    if (hidden < 1) throw Error(ErrorCode::InvalidArgument, "MLP hidden size must be >= 1");
    if (input_dim < 1) throw Error(ErrorCode::InvalidArgument, "MLP input dimension must be >= 1");
    ScorerModel model;
    model.kind = ScorerKind::Mlp;
    model.target = target;
    model.input_dim = input_dim;
    model.hidden = hidden;
    model.params.assign(parameter_count(ScorerKind::Mlp, input_dim, hidden), 0.0);
    Rng rng(derive_seed(seed, 0x6d6c70));
    const double a1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    double* w1 = model.params.data();
    for (std::size_t i = 0; i < hidden * input_dim; ++i) w1[i] = rng.uniform(-a1, a1);
    double* w2 = w1 + hidden * input_dim + hidden;
    for (std::size_t h = 0; h < hidden; ++h) w2[h] = rng.uniform(-a2, a2);
    return model;
}

double mlp_loss(const ScorerModel& model, const Matrix& x, std::span<const double> y, std::vector<double>* grad) {
    const std::size_t d = model.input_dim, hd = model.hidden, m = x.rows();
    const double* w1 = model.params.data();
    const double* b1 = w1 + hd * d;
    const double* w2 = b1 + hd;
    const double b2 = w2[hd];

    if (grad) grad->assign(model.params.size(), 0.0);
    std::vector<double> act(hd);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto xi = x.row(i);
        double out = b2;
        for (std::size_t h = 0; h < hd; ++h) {
            double a = b1[h];
            for (std::size_t j = 0; j < d; ++j) a += w1[h * d + j] * xi[j];
            act[h] = std::tanh(a);
            out += w2[h] * act[h];
        }
        const double r = out - y[i];
        loss += r * r;
        if (!grad) continue;
        const double g_out = 2.0 * r / static_cast<double>(m);
        double* g = grad->data();
        double* gb1 = g + hd * d;
        double* gw2 = gb1 + hd;
        gw2[hd] += g_out;
        for (std::size_t h = 0; h < hd; ++h) {
            gw2[h] += g_out * act[h];
            const double ga = g_out * w2[h] * (1.0 - act[h] * act[h]);
            gb1[h] += ga;
            for (std::size_t j = 0; j < d; ++j) g[h * d + j] += ga * xi[j];
        }
    }
    return loss / static_cast<double>(m);
}

ScorerModel fit_mlp(const Matrix& x, std::span<const double> y, const MlpConfig& cfg, ScoreKind target,
                    std::vector<double>* loss_history) {
    check_training_data(x, y);
    if (cfg.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");

    ScorerModel model = init_mlp(x.cols(), cfg.hidden, cfg.seed, target);
    ScorerModel best = model;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> grad;
    if (loss_history) loss_history->clear();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = mlp_loss(model, x, y, &grad);
        if (!std::isfinite(loss))
            throw Error(ErrorCode::DivergedLoss, "MLP loss became non-finite at epoch " + std::to_string(epoch));
        if (loss_history) loss_history->push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best.params = model.params;
        }
        for (std::size_t p = 0; p < grad.size(); ++p) model.params[p] -= cfg.learning_rate * grad[p];
    }
    const double final_loss = mlp_loss(model, x, y);
    if (!std::isfinite(final_loss)) throw Error(ErrorCode::DivergedLoss, "MLP loss became non-finite");
    if (loss_history) loss_history->push_back(final_loss);
    if (final_loss < best_loss) best.params = model.params;
    return best;
}

ScoreVector predict_scores(const ScorerModel& model, const Bag& bag) {
    if (bag.dim() != model.input_dim) {
        throw Error(ErrorCode::DimensionMismatch, "scorer expects D = " + std::to_string(model.input_dim) +
                                                      ", slide '" + bag.slide_id + "' has D = " +
                                                      std::to_string(bag.dim()));
    }
    ScoreVector out{model.target, std::vector<double>(bag.size())};
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const double raw = model.raw_predict(bag.features.row(i));
        // NaN can only come from a non-finite model; map it to 0 so the output stays a valid score.
        out.values[i] = std::isnan(raw) ? 0.0 : std::clamp(raw, 0.0, 1.0);
    }
    return out;
}

std::string to_json(const ScorerModel& model) {
    nlohmann::json doc;
    doc["kind"] = model.kind == ScorerKind::Ridge ? "ridge" : "mlp";
    doc["dims"] = {{"input_dim", model.input_dim}, {"hidden", model.hidden}};
    doc["parameters"] = model.params;
    doc["target_kind"] = std::string(to_string(model.target));
    return doc.dump(2) + "\n";
}

ScorerModel scorer_from_json(const std::string& text) {
    ScorerModel model;
    try {
        const auto doc = nlohmann::json::parse(text);
        const auto kind = doc.at("kind").get<std::string>();
        if (kind == "ridge") model.kind = ScorerKind::Ridge;
        else if (kind == "mlp") model.kind = ScorerKind::Mlp;
        else throw Error(ErrorCode::InvalidArgument, "unknown scorer kind '" + kind + "'");
        model.input_dim = doc.at("dims").at("input_dim").get<std::size_t>();
        model.hidden = doc.at("dims").at("hidden").get<std::size_t>();
        model.params = doc.at("parameters").get<std::vector<double>>();
        model.target = parse_score_kind(doc.at("target_kind").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("scorer JSON: ") + e.what());
    }
    if (model.kind == ScorerKind::Mlp && model.hidden < 1)
        throw Error(ErrorCode::InvalidArgument, "scorer JSON: MLP hidden size must be >= 1");
    if (model.params.size() != parameter_count(model.kind, model.input_dim, model.hidden))
        throw Error(ErrorCode::InvalidArgument, "scorer JSON: parameter count does not match dims");
    for (double p : model.params)
        if (!std::isfinite(p)) throw Error(ErrorCode::NonFiniteValue, "scorer JSON: non-finite parameter");
    return model;
}

} // namespace hgpmil::scoring
