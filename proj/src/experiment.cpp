#include "hgpmil/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "hgpmil/parallel.hpp"
#include "hgpmil/rng.hpp"

namespace hgpmil::experiment {

void validate(const PipelineConfig& cfg) {
    Hyperparams hp;
    hp.k = cfg.k;
    hp.ratio = cfg.ratio;
    hp.score_weight = cfg.score_weight;
    hp.kmeans_tol = cfg.kmeans_tol;
    hp.kmeans_max_iter = cfg.kmeans_max_iter;
    hp.kmeans_restarts = cfg.kmeans_restarts;
    hp.learning_rate = cfg.learning_rate;
    hp.epochs = cfg.epochs;
    hp.seed = cfg.seed;
    hgpmil::validate(hp);
    if (cfg.folds < 2) throw Error(ErrorCode::InvalidConfig, "folds must be >= 2");
    if (cfg.hidden < 1) throw Error(ErrorCode::InvalidConfig, "attention hidden size must be >= 1");
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
    if (cfg.patience < 0) throw Error(ErrorCode::InvalidConfig, "patience must be >= 0");
}

heads::TrainConfig train_config(const PipelineConfig& cfg, std::uint64_t seed) {
    heads::TrainConfig t;
    t.learning_rate = cfg.learning_rate;
    t.epochs = cfg.epochs;
    t.weight_decay = cfg.weight_decay;
    t.seed = seed;
    t.patience = cfg.patience;
    t.hidden = cfg.hidden;
    return t;
}

namespace {

// std::vector<bool> is not contiguous, so event flags live in a plain array.
class BoolArray {
public:
    explicit BoolArray(std::size_t capacity) : data_(std::make_unique<bool[]>(capacity)) {}
    void push(bool v) { data_[size_++] = v; }
    std::span<const bool> view() const { return {data_.get(), size_}; }

private:
    std::unique_ptr<bool[]> data_;
    std::size_t size_ = 0;
};

void require_scores(const io::Dataset& data, std::size_t i) {
    if (!data.cellularity[i] || !data.architecture[i]) {
        throw Error(ErrorCode::ManifestError, "slide '" + data.bags[i].slide_id +
                                                  "' lacks cellularity/architecture scores; run `score` first or "
                                                  "use --baseline");
    }
}

} // namespace

std::vector<clustering::ClusterModel> cluster_dataset(const io::Dataset& data, const PipelineConfig& cfg) {
    std::vector<clustering::ClusterModel> out(data.bags.size());
    parallel_for(data.bags.size(), cfg.jobs, [&](std::size_t i) {
        require_scores(data, i);
        const Bag& bag = data.bags[i];
        const auto ext = clustering::extend_features(bag, *data.cellularity[i], *data.architecture[i], cfg.score_weight);
        clustering::KMeansOptions opts;
        opts.k = std::min(cfg.k, static_cast<int>(bag.size()));
        opts.seed = clustering::slide_seed(cfg.seed, bag.slide_id);
        opts.tol = cfg.kmeans_tol;
        opts.max_iter = cfg.kmeans_max_iter;
        opts.restarts = cfg.kmeans_restarts;
        out[i] = clustering::kmeans(ext, opts);
    });
    return out;
}

std::vector<prototyping::PrototypeBag> prototype_dataset(const io::Dataset& data,
                                                         std::span<const clustering::ClusterModel> clusters,
                                                         const PipelineConfig& cfg) {
    if (clusters.size() != data.bags.size())
        throw Error(ErrorCode::LengthMismatch, "one cluster model per slide is required");
    std::vector<prototyping::PrototypeBag> out(data.bags.size());
    parallel_for(data.bags.size(), cfg.jobs, [&](std::size_t i) {
        require_scores(data, i);
        out[i] = prototyping::build_prototype_bag(data.bags[i], clusters[i], *data.cellularity[i],
                                                  *data.architecture[i], cfg.ratio);
    });
    return out;
}

std::vector<Matrix> head_inputs(const io::Dataset& data, const PipelineConfig& cfg) {
    std::vector<Matrix> inputs;
    inputs.reserve(data.bags.size());
    if (cfg.baseline) {
        for (const auto& b : data.bags) inputs.push_back(b.features);
        return inputs;
    }
    const auto clusters = cluster_dataset(data, cfg);
    auto protos = prototype_dataset(data, clusters, cfg);
    for (auto& p : protos) inputs.push_back(std::move(p.matrix));
    return inputs;
}

namespace {

std::vector<DatasetSplit> make_folds(std::span<const int> strata, const PipelineConfig& cfg) {
    return cfg.stratify ? eval::stratified_kfold(strata, cfg.folds, cfg.seed)
                        : eval::random_kfold(strata.size(), cfg.folds, cfg.seed);
}

void stamp(MetricReport& r, const PipelineConfig& cfg) {
    r.folds = cfg.folds;
    r.k = cfg.k;
    r.ratio = cfg.ratio;
    r.score_weight = cfg.score_weight;
    r.head = heads::to_string(cfg.head);
    r.baseline = cfg.baseline;
    r.seed = cfg.seed;
}

} // namespace

MetricReport cross_validate(std::span<const Matrix> inputs, std::span<const int> labels, std::size_t num_classes,
                            const PipelineConfig& cfg) {
    validate(cfg);
    if (inputs.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "inputs and labels differ in length");
    const auto splits = make_folds(labels, cfg);

    MetricReport report;
    report.fold_auc.assign(splits.size(), 0.0);
    report.fold_acc.assign(splits.size(), 0.0);
    parallel_for(splits.size(), cfg.jobs, [&](std::size_t f) {
        const auto& split = splits[f];
        std::vector<heads::LabeledBag> train;
        train.reserve(split.train.size());
        for (std::size_t i : split.train) train.push_back({&inputs[i], labels[i]});
        const auto params = heads::train_classifier(train, num_classes, cfg.head, train_config(cfg, split.seed));

        Matrix probs(split.test.size(), num_classes);
        std::vector<int> truth, decided;
        for (std::size_t t = 0; t < split.test.size(); ++t) {
            const std::size_t i = split.test[t];
            const auto pred = heads::predict(params, inputs[i]);
            std::copy(pred.probabilities.begin(), pred.probabilities.end(), probs.row(t).begin());
            truth.push_back(labels[i]);
            decided.push_back(eval::decide_class(pred.probabilities));
        }
        report.fold_auc[f] = eval::multiclass_auc(probs, truth, num_classes);
        report.fold_acc[f] = eval::accuracy(decided, truth);
    });
    report.auc = eval::mean_std(report.fold_auc);
    report.acc = eval::mean_std(report.fold_acc);
    stamp(report, cfg);
    return report;
}

namespace {

std::vector<std::size_t> labeled_indices(const io::Dataset& data) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.bags.size(); ++i)
        if (data.bags[i].label) idx.push_back(i);
    return idx;
}

io::Dataset subset(const io::Dataset& data, std::span<const std::size_t> idx) {
    io::Dataset out;
    out.class_names = data.class_names;
    out.dim = data.dim;
    for (std::size_t i : idx) {
        out.bags.push_back(data.bags[i]);
        out.cellularity.push_back(data.cellularity[i]);
        out.architecture.push_back(data.architecture[i]);
    }
    return out;
}

} // namespace

MetricReport run_pipeline(const io::Dataset& data, const PipelineConfig& cfg) {
    validate(cfg);
    const auto idx = labeled_indices(data);
    if (idx.empty()) throw Error(ErrorCode::EmptyInput, "no labeled slides");
    const io::Dataset labeled = subset(data, idx);
    const auto inputs = head_inputs(labeled, cfg);
    std::vector<int> labels;
    for (const auto& b : labeled.bags) labels.push_back(*b.label);
    return cross_validate(inputs, labels, std::max<std::size_t>(labeled.class_names.size(), 2), cfg);
}

SurvivalReport evaluate_survival(std::span<const Matrix> inputs, std::span<const double> times,
                                 std::span<const bool> events, const PipelineConfig& cfg) {
    validate(cfg);
    const std::size_t n = inputs.size();
    if (times.size() != n || events.size() != n) throw Error(ErrorCode::LengthMismatch, "survival inputs misaligned");
    if (n == 0) throw Error(ErrorCode::EmptyCohort, "no subjects");

    // Stratify folds on the event indicator when both strata are large enough.
    std::vector<int> strata(n);
    std::size_t n_events = 0;
    for (std::size_t i = 0; i < n; ++i) {
        strata[i] = events[i] ? 1 : 0;
        n_events += events[i] ? 1 : 0;
    }
    if (n_events == 0) throw Error(ErrorCode::NoEvents, "every subject is censored");
    const auto folds_needed = static_cast<std::size_t>(cfg.folds);
    const auto splits = (n_events >= folds_needed && n - n_events >= folds_needed)
                            ? eval::stratified_kfold(strata, cfg.folds, cfg.seed)
                            : eval::random_kfold(n, cfg.folds, cfg.seed);

    SurvivalReport report;
    report.risks.assign(n, 0.0);
    parallel_for(splits.size(), cfg.jobs, [&](std::size_t f) {
        const auto& split = splits[f];
        std::vector<heads::SurvivalBag> train;
        for (std::size_t i : split.train) train.push_back({&inputs[i], times[i], events[i]});
        auto tc = train_config(cfg, split.seed);
        tc.loss = heads::LossKind::CoxNPLL;
        const auto params = heads::train_cox(train, cfg.head, tc);
        for (std::size_t i : split.test) report.risks[i] = heads::predict(params, inputs[i]).risk;
    });

    std::vector<double> sorted = report.risks;
    std::ranges::sort(sorted);
    report.threshold = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    std::vector<double> t_high, t_low;
    BoolArray e_high(n), e_low(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (report.risks[i] > report.threshold) {
            e_high.push(events[i]);
            t_high.push_back(times[i]);
        } else {
            e_low.push(events[i]);
            t_low.push_back(times[i]);
        }
    }
    const auto sh = e_high.view(), sl = e_low.view();
    if (t_high.empty() || t_low.empty())
        throw Error(ErrorCode::EmptyGroup, "median split produced an empty risk group (all risks equal)");
    report.n_high = t_high.size();
    report.n_low = t_low.size();
    report.high_risk = eval::kaplan_meier(t_high, sh);
    report.low_risk = eval::kaplan_meier(t_low, sl);
    report.logrank = eval::logrank_test(t_high, sh, t_low, sl);
    report.folds = cfg.folds;
    report.k = cfg.k;
    report.ratio = cfg.ratio;
    report.head = heads::to_string(cfg.head);
    report.baseline = cfg.baseline;
    report.seed = cfg.seed;
    return report;
}

SurvivalReport run_survival(const io::Dataset& data, const PipelineConfig& cfg) {
    if (!data.has_survival()) throw Error(ErrorCode::ManifestError, "every slide needs survival_time/survival_event");
    const auto inputs = head_inputs(data, cfg);
    std::vector<double> times;
    BoolArray events(data.bags.size());
    for (const auto& b : data.bags) {
        times.push_back(b.survival->time);
        events.push(b.survival->event);
    }
    return evaluate_survival(inputs, times, events.view(), cfg);
}

SweepReport run_ablation_sweep(const io::Dataset& data, const SweepGrid& grid, const PipelineConfig& base) {
    if (grid.ks.empty() && grid.ratios.empty()) throw Error(ErrorCode::InvalidConfig, "sweep grid is empty");
    const auto idx = labeled_indices(data);
    if (idx.empty()) throw Error(ErrorCode::EmptyInput, "no labeled slides");
    const io::Dataset labeled = subset(data, idx);
    std::vector<int> labels;
    for (const auto& b : labeled.bags) labels.push_back(*b.label);
    const std::size_t num_classes = std::max<std::size_t>(labeled.class_names.size(), 2);

    SweepReport report;
    for (int k : grid.ks) report.cells.push_back({'K', k, grid.anchor_ratio, {}, false, false});
    for (double r : grid.ratios) report.cells.push_back({'R', grid.anchor_k, r, {}, false, false});

    std::map<int, std::vector<clustering::ClusterModel>> clusters_by_k;
    for (auto& cell : report.cells) {
        PipelineConfig cfg = base;
        cfg.k = cell.k;
        cfg.ratio = cell.ratio;
        cfg.baseline = false;
        validate(cfg);
        auto it = clusters_by_k.find(cell.k);
        if (it == clusters_by_k.end()) it = clusters_by_k.emplace(cell.k, cluster_dataset(labeled, cfg)).first;
        auto protos = prototype_dataset(labeled, it->second, cfg);
        std::vector<Matrix> inputs;
        inputs.reserve(protos.size());
        for (auto& p : protos) inputs.push_back(std::move(p.matrix));
        cell.report = cross_validate(inputs, labels, num_classes, cfg);
    }

    for (char table : {'K', 'R'}) {
        SweepCell* best_auc = nullptr;
        SweepCell* best_acc = nullptr;
        for (auto& cell : report.cells) {
            if (cell.table != table) continue;
            if (!best_auc || cell.report.auc.mean > best_auc->report.auc.mean) best_auc = &cell;
            if (!best_acc || cell.report.acc.mean > best_acc->report.acc.mean) best_acc = &cell;
        }
        if (best_auc) best_auc->best_auc = true;
        if (best_acc) best_acc->best_acc = true;
    }
    return report;
}

} // namespace hgpmil::experiment
