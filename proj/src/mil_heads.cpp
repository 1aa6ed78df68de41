#include "hgpmil/mil_heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hgpmil/errors.hpp"
#include "hgpmil/rng.hpp"
#include "json.hpp"

namespace hgpmil::heads {

std::string to_string(HeadKind kind) { return kind == HeadKind::MaxPool ? "maxpool" : "attention"; }

HeadKind parse_head_kind(const std::string& s) {
    if (s == "maxpool") return HeadKind::MaxPool;
    if (s == "attention") return HeadKind::GatedAttention;
    throw Error(ErrorCode::InvalidArgument, "unknown head '" + s + "' (expected maxpool or attention)");
}

HeadParams init_head(HeadKind kind, HeadTask task, std::size_t input_dim, std::size_t outputs, std::size_t hidden,
                     std::uint64_t seed) {
    if (input_dim < 1) throw Error(ErrorCode::InvalidArgument, "head input dimension must be >= 1");
    if (task == HeadTask::Classification && outputs < 2)
        throw Error(ErrorCode::InvalidArgument, "classification needs at least two classes");
    if (kind == HeadKind::GatedAttention && hidden < 1)
        throw Error(ErrorCode::InvalidArgument, "attention hidden size must be >= 1");

    HeadParams p;
    p.kind = kind;
    p.task = task;
    p.input_dim = input_dim;
    p.hidden = kind == HeadKind::GatedAttention ? hidden : 0;
    p.outputs = task == HeadTask::Cox ? 1 : outputs;
    p.theta.assign(p.size(), 0.0);

    Rng rng(derive_seed(seed, 0x68656164));
    const double a = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (std::size_t i = 0; i < p.ww_offset(); ++i) p.theta[i] = rng.uniform(-a, a);
    if (p.hidden > 0) {
        const double g = 1.0 / std::sqrt(static_cast<double>(p.hidden));
        for (std::size_t i = p.ww_offset(); i < p.w_offset(); ++i) p.theta[i] = rng.uniform(-g, g);
    }
    for (std::size_t i = p.w_offset(); i < p.b_offset(); ++i) p.theta[i] = rng.uniform(-a, a);
    return p;
}

namespace {

void check_input(const HeadParams& params, const Matrix& x) {
    if (x.rows() == 0) throw Error(ErrorCode::EmptyInput, "bag has no instances");
    if (x.cols() != params.input_dim) {
        throw Error(ErrorCode::DimensionMismatch, "head expects D = " + std::to_string(params.input_dim) +
                                                      ", got " + std::to_string(x.cols()));
    }
}

std::vector<std::size_t> lexicographic_order(const Matrix& x) {
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
        const auto ra = x.row(a), rb = x.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    return order;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

} // namespace

Pooled pool(const HeadParams& params, const Matrix& x) {
    check_input(params, x);
    const std::size_t n = x.rows(), d = x.cols();
    Pooled out;
    out.z.assign(d, 0.0);

    if (params.kind == HeadKind::MaxPool) {
        out.argmax.assign(d, 0);
        for (std::size_t j = 0; j < d; ++j) out.z[j] = x(0, j);
        for (std::size_t i = 1; i < n; ++i) {
            const auto r = x.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                if (r[j] > out.z[j]) {
                    out.z[j] = r[j];
                    out.argmax[j] = i;
                }
            }
        }
        return out;
    }

    // Gated attention: score_i = ww . (tanh(V x_i) * sigm(U x_i)).
    const std::size_t hl = params.hidden;
    const double* v = params.theta.data() + params.v_offset();
    const double* u = params.theta.data() + params.u_offset();
    const double* ww = params.theta.data() + params.ww_offset();
    out.order = lexicographic_order(x);
    out.gate_tanh.resize(n * hl);
    out.gate_sigm.resize(n * hl);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i).data();
        double* th = out.gate_tanh.data() + i * hl;
        double* sg = out.gate_sigm.data() + i * hl;
        double s = 0.0;
        for (std::size_t l = 0; l < hl; ++l) {
            const double* vl = v + l * d;
            const double* ul = u + l * d;
            double a = 0.0, b = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                a += vl[j] * xi[j];
                b += ul[j] * xi[j];
            }
            th[l] = std::tanh(a);
            sg[l] = sigmoid(b);
            s += ww[l] * th[l] * sg[l];
        }
        score[i] = s;
    }
    const double mx = *std::ranges::max_element(score);
    out.attention.resize(n);
    double total = 0.0;
    for (std::size_t i : out.order) {
        out.attention[i] = std::exp(score[i] - mx);
        total += out.attention[i];
    }
    for (double& a : out.attention) a /= total;
    for (std::size_t i : out.order) {
        const auto r = x.row(i);
        const double a = out.attention[i];
        for (std::size_t j = 0; j < d; ++j) out.z[j] += a * r[j];
    }
    return out;
}

void pool_backward(const HeadParams& params, const Matrix& x, const Pooled& pooled, std::span<const double> dz,
                   std::span<double> grad) {
    if (params.kind == HeadKind::MaxPool) return;  // no parameters before the classifier

    const std::size_t d = x.cols(), hl = params.hidden;
    const double* ww = params.theta.data() + params.ww_offset();
    double* gv = grad.data() + params.v_offset();
    double* gu = grad.data() + params.u_offset();
    double* gww = grad.data() + params.ww_offset();

    std::vector<double> da(x.rows());
    double mean_da = 0.0;
    for (std::size_t i : pooled.order) {
        const auto r = x.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += dz[j] * r[j];
        da[i] = s;
        mean_da += pooled.attention[i] * s;
    }
    for (std::size_t i : pooled.order) {
        const double dscore = pooled.attention[i] * (da[i] - mean_da);
        if (dscore == 0.0) continue;
        const double* xi = x.row(i).data();
        const double* th = pooled.gate_tanh.data() + i * hl;
        const double* sg = pooled.gate_sigm.data() + i * hl;
        for (std::size_t l = 0; l < hl; ++l) {
            gww[l] += dscore * th[l] * sg[l];
            const double dg = dscore * ww[l];
            const double dt = dg * sg[l] * (1.0 - th[l] * th[l]);
            const double ds = dg * th[l] * sg[l] * (1.0 - sg[l]);
            double* gvl = gv + l * d;
            double* gul = gu + l * d;
            for (std::size_t j = 0; j < d; ++j) {
                gvl[j] += dt * xi[j];
                gul[j] += ds * xi[j];
            }
        }
    }
}

std::vector<double> linear_output(const HeadParams& params, std::span<const double> z) {
    const std::size_t d = params.input_dim;
    const double* w = params.theta.data() + params.w_offset();
    std::vector<double> out(params.outputs, 0.0);
    for (std::size_t c = 0; c < params.outputs; ++c) {
        double s = params.task == HeadTask::Classification ? params.theta[params.b_offset() + c] : 0.0;
        for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * z[j];
        out[c] = s;
    }
    return out;
}

namespace {

// Adds the classifier-block gradient and returns d(loss)/dz.
std::vector<double> linear_backward(const HeadParams& params, std::span<const double> z,
                                    std::span<const double> dout, std::span<double> grad) {
    const std::size_t d = params.input_dim;
    const double* w = params.theta.data() + params.w_offset();
    double* gw = grad.data() + params.w_offset();
    std::vector<double> dz(d, 0.0);
    for (std::size_t c = 0; c < params.outputs; ++c) {
        const double g = dout[c];
        if (params.task == HeadTask::Classification) grad[params.b_offset() + c] += g;
        for (std::size_t j = 0; j < d; ++j) {
            gw[c * d + j] += g * z[j];
            dz[j] += g * w[c * d + j];
        }
    }
    return dz;
}

} // namespace

MaxPoolOutput forward_maxpool(const HeadParams& params, const Matrix& x) {
    if (params.kind != HeadKind::MaxPool) throw Error(ErrorCode::InvalidArgument, "not a max-pooling head");
    Pooled p = pool(params, x);
    MaxPoolOutput out;
    out.logits = linear_output(params, p.z);
    const std::size_t d = params.input_dim;
    const double* w = params.theta.data() + params.w_offset();
    out.argmax_instance.assign(params.outputs, 0);
    for (std::size_t c = 0; c < params.outputs; ++c) {
        std::vector<double> contribution(x.rows(), 0.0);
        for (std::size_t j = 0; j < d; ++j) contribution[p.argmax[j]] += w[c * d + j] * p.z[j];
        out.argmax_instance[c] = static_cast<std::size_t>(std::ranges::max_element(contribution) - contribution.begin());
    }
    out.pooled = std::move(p.z);
    return out;
}

AttentionOutput forward_attention(const HeadParams& params, const Matrix& x) {
    if (params.kind != HeadKind::GatedAttention) throw Error(ErrorCode::InvalidArgument, "not an attention head");
    Pooled p = pool(params, x);
    AttentionOutput out;
    out.logits = linear_output(params, p.z);
    out.attention = std::move(p.attention);
    out.pooled = std::move(p.z);
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double mx = *std::ranges::max_element(logits);
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        p[c] = std::exp(logits[c] - mx);
        total += p[c];
    }
    for (double& v : p) v /= total;
    return p;
}

double bag_cross_entropy(const HeadParams& params, const Matrix& x, int label, std::span<double> grad) {
    if (label < 0 || static_cast<std::size_t>(label) >= params.outputs)
        throw Error(ErrorCode::InvalidArgument, "label outside the head's classes");
    const Pooled p = pool(params, x);
    const auto logits = linear_output(params, p.z);
    const double mx = *std::ranges::max_element(logits);
    double total = 0.0;
    for (double l : logits) total += std::exp(l - mx);
    const double lse = mx + std::log(total);
    const double loss = lse - logits[static_cast<std::size_t>(label)];
    if (!grad.empty()) {
        std::vector<double> dlogits(logits.size());
        for (std::size_t c = 0; c < logits.size(); ++c)
            dlogits[c] = std::exp(logits[c] - lse) - (static_cast<int>(c) == label ? 1.0 : 0.0);
        const auto dz = linear_backward(params, p.z, dlogits, grad);
        pool_backward(params, x, p, dz, grad);
    }
    return loss;
}

double mean_cross_entropy(const HeadParams& params, std::span<const LabeledBag> bags, std::vector<double>* grad) {
    if (bags.empty()) throw Error(ErrorCode::EmptyInput, "no bags");
    if (grad) grad->assign(params.theta.size(), 0.0);
    double total = 0.0;
    for (const auto& b : bags)
        total += bag_cross_entropy(params, *b.instances, b.label, grad ? std::span<double>(*grad) : std::span<double>{});
    const double n = static_cast<double>(bags.size());
    if (grad)
        for (double& g : *grad) g /= n;
    return total / n;
}

double cox_npll(const HeadParams& params, std::span<const SurvivalBag> bags, std::vector<double>* grad) {
    if (params.task != HeadTask::Cox) throw Error(ErrorCode::InvalidArgument, "not a Cox head");
    const std::size_t n = bags.size();
    std::size_t events = 0;
    for (const auto& b : bags) {
        if (!(b.time > 0.0)) throw Error(ErrorCode::InvalidArgument, "survival times must be positive");
        events += b.event ? 1 : 0;
    }
    if (events == 0) throw Error(ErrorCode::NoEvents, "every subject is censored");

    std::vector<Pooled> pooled;
    pooled.reserve(n);
    std::vector<double> risk(n);
    for (std::size_t s = 0; s < n; ++s) {
        pooled.push_back(pool(params, *bags[s].instances));
        risk[s] = linear_output(params, pooled.back().z)[0];
    }
    const double mx = *std::ranges::max_element(risk);

    // Subjects by descending time; equal times form one Breslow risk set.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return bags[a].time > bags[b].time; });

    std::vector<double> inv_denominator_by_time;   // per distinct event time
    std::vector<double> event_count_by_time;
    std::vector<std::size_t> group_of(n);
    double running = 0.0;
    double loss = 0.0;
    for (std::size_t pos = 0; pos < n;) {
        std::size_t end = pos;
        while (end < n && bags[order[end]].time == bags[order[pos]].time) ++end;
        for (std::size_t q = pos; q < end; ++q) running += std::exp(risk[order[q]] - mx);
        double d = 0.0;
        for (std::size_t q = pos; q < end; ++q) {
            const std::size_t s = order[q];
            group_of[s] = inv_denominator_by_time.size();
            if (!bags[s].event) continue;
            d += 1.0;
            loss += std::log(running) + mx - risk[s];
        }
        inv_denominator_by_time.push_back(1.0 / running);
        event_count_by_time.push_back(d);
        pos = end;
    }
    loss /= static_cast<double>(events);

    if (grad) {
        grad->assign(params.theta.size(), 0.0);
        // d loss / d r_j = (exp(r_j) * sum over event times t <= t_j of d_t / S_t - delta_j) / E.
        // Groups were built in descending time, so a suffix sum over groups gives
        // the sum over event times not later than t_j.
        std::vector<double> cumulative(inv_denominator_by_time.size() + 1, 0.0);
        for (std::size_t g = inv_denominator_by_time.size(); g-- > 0;)
            cumulative[g] = cumulative[g + 1] + event_count_by_time[g] * inv_denominator_by_time[g];
        for (std::size_t s = 0; s < n; ++s) {
            const double dr = (std::exp(risk[s] - mx) * cumulative[group_of[s]] - (bags[s].event ? 1.0 : 0.0)) /
                              static_cast<double>(events);
            const double dout[1] = {dr};
            const auto dz = linear_backward(params, pooled[s].z, dout, *grad);
            pool_backward(params, *bags[s].instances, pooled[s], dz, *grad);
        }
    }
    return loss;
}

namespace {

void adam_step(HeadParams& p, std::span<const double> grad, double lr, double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (p.adam_m.size() != p.theta.size()) {
        p.adam_m.assign(p.theta.size(), 0.0);
        p.adam_v.assign(p.theta.size(), 0.0);
        p.adam_step = 0;
    }
    ++p.adam_step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(p.adam_step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(p.adam_step));
    const std::size_t bias_start = p.task == HeadTask::Classification ? p.b_offset() : p.theta.size();
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
        const double g = grad[i] + (i < bias_start ? weight_decay * p.theta[i] : 0.0);
        p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
        p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
        p.theta[i] -= lr * (p.adam_m[i] / c1) / (std::sqrt(p.adam_v[i] / c2) + eps);
    }
}

void check_config(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
    if (cfg.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
    if (cfg.patience < 0) throw Error(ErrorCode::InvalidConfig, "patience must be >= 0");
}

} // namespace

HeadParams train_classifier(std::span<const LabeledBag> train, std::size_t num_classes, HeadKind kind,
                            const TrainConfig& cfg, std::span<const LabeledBag> validation, TrainLog* log) {
    check_config(cfg);
    if (train.empty()) throw Error(ErrorCode::EmptyInput, "no training bags");
    std::vector<char> present(num_classes, 0);
    for (const auto& b : train) {
        if (b.label < 0 || static_cast<std::size_t>(b.label) >= num_classes)
            throw Error(ErrorCode::InvalidArgument, "training label outside [0, num_classes)");
        present[static_cast<std::size_t>(b.label)] = 1;
    }
    if (std::count(present.begin(), present.end(), 1) < 2)
        throw Error(ErrorCode::SingleClassDataset, "training data contains a single class");

    const std::size_t dim = train.front().instances->cols();
    HeadParams params = init_head(kind, HeadTask::Classification, dim, num_classes, cfg.hidden, cfg.seed);
    TrainLog local;
    TrainLog& lg = log ? *log : local;
    lg = TrainLog{};
    lg.initial_loss = mean_cross_entropy(params, train);

    HeadParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order(train.size());
    std::vector<double> grad(params.theta.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, 0x6570, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());
        for (std::size_t idx : order) {
            std::ranges::fill(grad, 0.0);
            const double loss = bag_cross_entropy(params, *train[idx].instances, train[idx].label, grad);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::DivergedLoss, "cross-entropy became non-finite in epoch " + std::to_string(epoch));
            adam_step(params, grad, cfg.learning_rate, cfg.weight_decay);
        }
        // The epoch loss is only for the caller's log; skipping it saves a full forward pass.
        if (log) lg.train_loss.push_back(mean_cross_entropy(params, train));
        if (validation.empty()) continue;

        const double val = mean_cross_entropy(params, validation);
        lg.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = params;
            lg.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    if (validation.empty()) {
        lg.best_epoch = cfg.epochs - 1;
        return params;
    }
    return best;
}

HeadParams train_cox(std::span<const SurvivalBag> train, HeadKind kind, const TrainConfig& cfg, TrainLog* log) {
    check_config(cfg);
    if (train.empty()) throw Error(ErrorCode::EmptyInput, "no training subjects");
    if (std::ranges::none_of(train, [](const SurvivalBag& b) { return b.event; }))
        throw Error(ErrorCode::NoEvents, "every training subject is censored");

    const std::size_t dim = train.front().instances->cols();
    HeadParams params = init_head(kind, HeadTask::Cox, dim, 1, cfg.hidden, cfg.seed);
    TrainLog local;
    TrainLog& lg = log ? *log : local;
    lg = TrainLog{};
    std::vector<double> grad;
    lg.initial_loss = cox_npll(params, train);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = cox_npll(params, train, &grad);
        if (!std::isfinite(loss))
            throw Error(ErrorCode::DivergedLoss, "Cox loss became non-finite in epoch " + std::to_string(epoch));
        adam_step(params, grad, cfg.learning_rate, cfg.weight_decay);
        lg.train_loss.push_back(loss);
    }
    const double final_loss = cox_npll(params, train);
    if (!std::isfinite(final_loss)) throw Error(ErrorCode::DivergedLoss, "Cox loss became non-finite");
    lg.best_epoch = cfg.epochs - 1;
    return params;
}

Prediction predict(const HeadParams& params, const Matrix& x) {
    Prediction out;
    const Pooled p = pool(params, x);
    const auto logits = linear_output(params, p.z);
    if (params.task == HeadTask::Classification) out.probabilities = softmax(logits);
    else out.risk = logits[0];
    if (params.kind == HeadKind::GatedAttention) {
        out.attention = p.attention;
    } else if (params.task == HeadTask::Classification) {
        out.argmax_instance = forward_maxpool(params, x).argmax_instance;
    } else {
        out.argmax_instance = p.argmax;
    }
    return out;
}

std::string to_json(const HeadParams& p) {
    nlohmann::json doc;
    doc["head"] = to_string(p.kind);
    doc["task"] = p.task == HeadTask::Classification ? "classification" : "cox";
    doc["input_dim"] = p.input_dim;
    doc["hidden"] = p.hidden;
    doc["outputs"] = p.outputs;
    doc["parameters"] = p.theta;
    doc["optimizer"] = {{"kind", "adam"}, {"step", p.adam_step}, {"m", p.adam_m}, {"v", p.adam_v}};
    return doc.dump(2) + "\n";
}

HeadParams head_from_json(const std::string& text) {
    HeadParams p;
    try {
        const auto doc = nlohmann::json::parse(text);
        p.kind = parse_head_kind(doc.at("head").get<std::string>());
        const auto task = doc.at("task").get<std::string>();
        if (task == "classification") p.task = HeadTask::Classification;
        else if (task == "cox") p.task = HeadTask::Cox;
        else throw Error(ErrorCode::InvalidArgument, "unknown task '" + task + "'");
        p.input_dim = doc.at("input_dim").get<std::size_t>();
        p.hidden = doc.at("hidden").get<std::size_t>();
        p.outputs = doc.at("outputs").get<std::size_t>();
        p.theta = doc.at("parameters").get<std::vector<double>>();
        if (doc.contains("optimizer")) {
            const auto& o = doc["optimizer"];
            p.adam_step = o.value("step", std::uint64_t{0});
            p.adam_m = o.value("m", std::vector<double>{});
            p.adam_v = o.value("v", std::vector<double>{});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("head JSON: ") + e.what());
    }
    if (p.theta.size() != p.size()) throw Error(ErrorCode::InvalidArgument, "head JSON: parameter count mismatch");
    for (double v : p.theta)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "head JSON: non-finite parameter");
    return p;
}

} // namespace hgpmil::heads
