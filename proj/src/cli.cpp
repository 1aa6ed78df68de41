#include "hgpmil/cli.hpp"

#include <algorithm>
#include <climits>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hgpmil/container_io.hpp"
#include "hgpmil/experiment.hpp"
#include "hgpmil/reports.hpp"
#include "hgpmil/rng.hpp"
#include "hgpmil/scoring.hpp"
#include "hgpmil/synth.hpp"

namespace hgpmil::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Resolved settings of one subcommand, in declaration order. Reports embed
// them and run_config.txt replays them through --config.
class Settings {
public:
    explicit Settings(std::string command) : command_(std::move(command)) {}

    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
        entries_.emplace_back(name, [&var] { return json(var); });
        return app->add_option("--" + name, var, desc);
    }

    CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
        entries_.emplace_back(name, [&var] { return json(var); });
        return app->add_flag("--" + name, var, desc);
    }

    json to_json() const {
        json j = json::object();
        j["command"] = command_;
        for (const auto& [name, get] : entries_) j[name] = get();
        return j;
    }

    std::string to_config_text() const {
        std::ostringstream os;
        os << "# hgpmil " << command_ << " run configuration\n";
        for (const auto& [name, get] : entries_) os << name << " = " << get().dump() << '\n';
        return os.str();
    }

private:
    std::string command_;
    std::vector<std::pair<std::string, std::function<json()>>> entries_;
};

struct Runtime {
    std::string config;
    int jobs = 1;
    bool json_out = false;
    std::string out;
    std::string manifest;
};

const auto kPositive = CLI::PositiveNumber;

// Comma-separated grid axis; "none" leaves the axis empty.
template <class T>
std::vector<T> parse_axis(const std::string& text, const CLI::Validator& check) {
    std::vector<T> values;
    if (text == "none") return values;
    for (auto item : CLI::detail::split(text, ',')) {
        item = CLI::detail::trim_copy(item);
        if (const auto msg = check(item); !msg.empty()) throw std::invalid_argument(msg);
        T v{};
        if (!CLI::detail::lexical_cast(item, v)) throw std::invalid_argument("not a number: '" + item + "'");
        values.push_back(v);
    }
    return values;
}

template <class T>
CLI::Validator axis_validator(CLI::Validator check) {
    return {[check](std::string& s) -> std::string {
                try {
                    parse_axis<T>(s, check);
                } catch (const std::invalid_argument& e) {
                    return e.what();
                }
                return {};
            },
            "LIST"};
}
const auto kNonNegative = CLI::NonNegativeNumber;
const CLI::Validator kGridK = CLI::Range(1, INT_MAX);
const CLI::Validator kGridR = CLI::Range(0.0, 100.0) & kPositive;

struct State {
    Runtime rt;
    experiment::PipelineConfig cfg;
    std::string head = "attention";
    bool no_stratify = false;
    std::string prototypes_dir;
    std::string clusters_dir;
    std::string task = "classification";

    synth::SynthConfig synth;
    bool dump_truth = false;

    std::string scorer = "ridge";
    std::string truth_path;
    std::string cellularity_model;
    std::string architecture_model;
    double lambda = 1.0;
    int mlp_hidden = 8;
    double mlp_lr = 0.05;
    int mlp_epochs = 2000;
    double train_fraction = 0.5;

    experiment::SweepGrid grid;
    std::string grid_k = "10,20,50,75,100";
    std::string grid_r = "10,20,30,40,50";

    std::map<std::string, std::unique_ptr<Settings>> settings;

    Settings& settings_for(CLI::App* app) {
        auto& s = settings[app->get_name()];
        if (!s) s = std::make_unique<Settings>(app->get_name());
        return *s;
    }
};

void add_runtime(CLI::App* app, State& st, bool jobs, bool out_required, const std::string& out_default = "") {
    // Read before parsing by expand_config; registered so help lists it.
    app->add_option("--config", st.rt.config, "Read `key = value` settings (# comments) from FILE; flags take precedence");
    app->add_flag("--json", st.rt.json_out, "Write the machine-readable report to stdout");
    if (jobs) app->add_option("--jobs", st.rt.jobs, "Concurrent bags/folds/cells; never changes results")->check(CLI::Range(1, 1024));
    auto* out = app->add_option("--out", st.rt.out, "Output directory");
    if (out_required) out->required();
    if (!out_default.empty()) out->default_str(out_default);
}

void add_manifest(CLI::App* app, State& st) {
    st.settings_for(app).add(app, "manifest", st.rt.manifest, "Dataset manifest (JSON)")->required();
}

void add_seed(CLI::App* app, State& st) {
    st.settings_for(app).add(app, "seed", st.cfg.seed, "Global seed (env HGPMIL_SEED)")->envname("HGPMIL_SEED");
}

void add_cluster_options(CLI::App* app, State& st) {
    auto& s = st.settings_for(app);
    s.add(app, "k", st.cfg.k, "Clusters per slide (clamped to the slide size)")->check(CLI::Range(1, INT_MAX));
    s.add(app, "score-weight", st.cfg.score_weight, "Weight of the guide scores in the extended features")
        ->check(kNonNegative);
    s.add(app, "kmeans-tol", st.cfg.kmeans_tol, "Lloyd stops once no centroid moves more than this")->check(kPositive);
    s.add(app, "kmeans-max-iter", st.cfg.kmeans_max_iter, "Lloyd iteration cap")->check(CLI::Range(1, INT_MAX));
    s.add(app, "kmeans-restarts", st.cfg.kmeans_restarts, "k-means++ restarts, best objective kept")
        ->check(CLI::Range(1, INT_MAX));
}

void add_ratio(CLI::App* app, State& st) {
    st.settings_for(app)
        .add(app, "ratio", st.cfg.ratio, "Select ratio R in percent of each cluster")
        ->check(CLI::Range(0.0, 100.0) & kPositive);
}

void add_head_options(CLI::App* app, State& st) {
    auto& s = st.settings_for(app);
    s.add(app, "head", st.head, "MIL head")->check(CLI::IsMember({"maxpool", "attention"}));
    s.flag(app, "baseline", st.cfg.baseline, "Skip prototyping and feed raw bags to the head");
    s.add(app, "lr", st.cfg.learning_rate, "Adam learning rate")->check(kPositive);
    s.add(app, "epochs", st.cfg.epochs, "Training epochs")->check(CLI::Range(1, INT_MAX));
    s.add(app, "weight-decay", st.cfg.weight_decay, "L2 weight decay (biases excluded)")->check(kNonNegative);
    s.add(app, "hidden", st.cfg.hidden, "Attention hidden size")->check(CLI::Range(1, 65536));
    s.add(app, "patience", st.cfg.patience, "Early-stopping patience in epochs, 0 disables")->check(kNonNegative);
}

void add_cv_options(CLI::App* app, State& st) {
    auto& s = st.settings_for(app);
    s.add(app, "folds", st.cfg.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    s.flag(app, "no-stratify", st.no_stratify, "Use random instead of class-stratified folds");
}

// Everything after clustering: shared by eval, survival, sweep and pipeline.
void add_experiment(CLI::App* app, State& st) {
    add_manifest(app, st);
    add_cluster_options(app, st);
    add_ratio(app, st);
    add_head_options(app, st);
    add_cv_options(app, st);
    add_seed(app, st);
}

experiment::PipelineConfig resolved(const State& st) {
    experiment::PipelineConfig c = st.cfg;
    c.head = heads::parse_head_kind(st.head);
    c.stratify = !st.no_stratify;
    c.jobs = st.rt.jobs;
    return c;
}

void note(std::ostream& err, const std::string& msg) { err << "[hgpmil] " << msg << '\n'; }

void write_run_config(const fs::path& dir, const Settings& s) {
    io::write_text_file(dir / "run_config.txt", s.to_config_text());
}

fs::path cluster_container(const fs::path& dir, const std::string& id) { return dir / (id + ".centroids.hgpb"); }
fs::path cluster_sidecar(const fs::path& dir, const std::string& id) { return dir / (id + ".json"); }
fs::path prototype_container(const fs::path& dir, const std::string& id) { return dir / (id + ".hgpb"); }
fs::path prototype_sidecar(const fs::path& dir, const std::string& id) { return dir / (id + ".json"); }

void save_clusters(const fs::path& dir, const io::Dataset& data, const std::vector<clustering::ClusterModel>& models) {
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& id = data.bags[i].slide_id;
        std::vector<std::string> ids;
        for (int k = 0; k < models[i].k; ++k) ids.push_back("c" + std::to_string(k));
        io::ContainerHeader h;
        h.kind = io::RecordKind::Prototypes;
        h.rows = static_cast<std::uint32_t>(models[i].centroids.rows());
        h.cols = static_cast<std::uint32_t>(models[i].centroids.cols());
        io::write_container(h, models[i].centroids, ids, cluster_container(dir, id));
        io::write_text_file(cluster_sidecar(dir, id), clustering::sidecar_json(models[i], id));
    }
}

std::vector<clustering::ClusterModel> load_clusters(const fs::path& dir, const io::Dataset& data) {
    std::vector<clustering::ClusterModel> out;
    for (const auto& bag : data.bags) {
        auto c = io::read_container(cluster_container(dir, bag.slide_id));
        if (c.header.kind != io::RecordKind::Prototypes)
            throw Error(ErrorCode::KindMismatch, "not a centroid container: " +
                                                     cluster_container(dir, bag.slide_id).string());
        auto m = clustering::model_from_sidecar(io::read_text_file(cluster_sidecar(dir, bag.slide_id)),
                                                std::move(c.matrix));
        if (m.assignments.size() != bag.size())
            throw Error(ErrorCode::LengthMismatch, "cluster assignments do not match slide '" + bag.slide_id + "'");
        out.push_back(std::move(m));
    }
    return out;
}

void save_prototypes(const fs::path& dir, const std::vector<prototyping::PrototypeBag>& protos) {
    for (const auto& pb : protos) {
        std::vector<std::string> ids;
        for (const auto& p : pb.provenance) ids.push_back(prototyping::tag(p));
        io::ContainerHeader h;
        h.kind = io::RecordKind::Prototypes;
        h.rows = static_cast<std::uint32_t>(pb.matrix.rows());
        h.cols = static_cast<std::uint32_t>(pb.matrix.cols());
        io::write_container(h, pb.matrix, ids, prototype_container(dir, pb.slide_id));
        io::write_text_file(prototype_sidecar(dir, pb.slide_id), prototyping::sidecar_json(pb));
    }
}

std::vector<Matrix> load_prototypes(const fs::path& dir, const io::Dataset& data) {
    std::vector<Matrix> out;
    for (const auto& bag : data.bags) {
        auto c = io::read_container(prototype_container(dir, bag.slide_id));
        if (c.header.kind != io::RecordKind::Prototypes)
            throw Error(ErrorCode::KindMismatch, "not a prototype container: " +
                                                     prototype_container(dir, bag.slide_id).string());
        if (c.matrix.cols() != bag.dim())
            throw Error(ErrorCode::DimensionMismatch, "prototype width differs from slide '" + bag.slide_id + "'");
        out.push_back(std::move(c.matrix));
    }
    return out;
}

// Head inputs from precomputed prototypes when given, else computed here.
std::vector<Matrix> inputs_for(const State& st, const io::Dataset& data, const experiment::PipelineConfig& cfg) {
    if (!st.prototypes_dir.empty() && !cfg.baseline) return load_prototypes(st.prototypes_dir, data);
    return experiment::head_inputs(data, cfg);
}

struct Labeled {
    std::vector<Matrix> inputs;
    std::vector<int> labels;
};

Labeled labeled_only(std::vector<Matrix> inputs, const io::Dataset& data) {
    Labeled l;
    for (std::size_t i = 0; i < data.bags.size(); ++i) {
        if (!data.bags[i].label) continue;
        l.inputs.push_back(std::move(inputs[i]));
        l.labels.push_back(*data.bags[i].label);
    }
    if (l.inputs.empty()) throw Error(ErrorCode::EmptyInput, "no labeled slides in the manifest");
    return l;
}

std::size_t class_count(const io::Dataset& data) { return std::max<std::size_t>(data.class_names.size(), 2); }

// Emits a report: JSON on stdout with --json, aligned text otherwise, and
// both files under --out when one is given.
void emit(const State& st, const Settings& s, const json& report, const std::string& text, std::ostream& out,
          const std::string& stem = "report") {
    if (st.rt.json_out) {
        out << report.dump(2) << '\n';
    } else {
        out << text;
    }
    if (!st.rt.out.empty()) {
        const fs::path dir = st.rt.out;
        io::write_text_file(dir / (stem + ".json"), report.dump(2) + "\n");
        io::write_text_file(dir / (stem + ".txt"), text);
        write_run_config(dir, s);
    }
}

void write_km(const fs::path& dir, const experiment::SurvivalReport& r) {
    io::write_text_file(dir / "km_high_risk.csv", reports::km_csv(r.high_risk));
    io::write_text_file(dir / "km_low_risk.csv", reports::km_csv(r.low_risk));
}

// ---- subcommands ---------------------------------------------------------

void run_synth(State& st, std::ostream& out, std::ostream& err) {
    auto cfg = st.synth;
    cfg.seed = st.cfg.seed;
    const auto cohort = synth::generate_cohort(cfg);
    const fs::path dir = st.rt.out;
    io::save_dataset(cohort.dataset, dir, "hgpmil synth", cfg.seed);
    if (st.dump_truth) io::write_text_file(dir / "truth.json", synth::truth_json(cohort));
    write_run_config(dir, *st.settings.at("synth"));
    std::size_t positives = 0;
    for (int y : cohort.truth_labels) positives += y == 1 ? 1 : 0;
    note(err, "wrote " + std::to_string(cohort.dataset.bags.size()) + " slides to " + dir.string());
    json summary = {{"manifest", (dir / "manifest.json").string()},
                    {"slides", cohort.dataset.bags.size()},
                    {"positive_slides", positives},
                    {"run_config", st.settings.at("synth")->to_json()}};
    if (st.rt.json_out) out << summary.dump(2) << '\n';
    else out << "manifest " << (dir / "manifest.json").string() << '\n';
}

void run_score(State& st, std::ostream& out, std::ostream& err) {
    const auto manifest = io::load_manifest(st.rt.manifest);
    auto data = io::load_dataset(manifest);
    const fs::path dir = st.rt.out;

    scoring::ScorerModel models[2];
    const bool have_models = !st.cellularity_model.empty() && !st.architecture_model.empty();
    if (have_models) {
        models[0] = scoring::scorer_from_json(io::read_text_file(st.cellularity_model));
        models[1] = scoring::scorer_from_json(io::read_text_file(st.architecture_model));
    } else {
        if (st.truth_path.empty())
            throw Error(ErrorCode::InvalidArgument,
                        "score needs --truth to fit scorers, or both --cellularity-model and --architecture-model");
        const auto truth = synth::parse_truth_json(io::read_text_file(st.truth_path));
        // Scorers are fitted on the leading slides only; the rest are scored blind.
        const auto n_train = static_cast<std::size_t>(
            std::max(1.0, std::ceil(st.train_fraction * static_cast<double>(data.bags.size()))));
        std::vector<double> rows, cell_target, arch_target;
        for (std::size_t b = 0; b < std::min(n_train, data.bags.size()); ++b) {
            const auto& bag = data.bags[b];
            const auto it = truth.find(bag.slide_id);
            if (it == truth.end()) throw Error(ErrorCode::MissingPatchId, "truth has no slide '" + bag.slide_id + "'");
            if (it->second.instance_labels.size() != bag.size())
                throw Error(ErrorCode::LengthMismatch, "truth for '" + bag.slide_id + "' has the wrong length");
            rows.insert(rows.end(), bag.features.values().begin(), bag.features.values().end());
            for (std::size_t i = 0; i < bag.size(); ++i) {
                cell_target.push_back(it->second.instance_labels[i]);
                arch_target.push_back(scoring::grade_to_unit(it->second.grades[i]));
            }
        }
        const Matrix x(cell_target.size(), data.dim, std::move(rows));
        note(err, "fitting " + st.scorer + " scorers on " + std::to_string(x.rows()) + " instances");
        if (st.scorer == "ridge") {
            models[0] = scoring::fit_ridge(x, cell_target, st.lambda, ScoreKind::Cellularity);
            models[1] = scoring::fit_ridge(x, arch_target, st.lambda, ScoreKind::Architecture);
        } else {
            scoring::MlpConfig mc;
            mc.hidden = static_cast<std::size_t>(st.mlp_hidden);
            mc.learning_rate = st.mlp_lr;
            mc.epochs = st.mlp_epochs;
            mc.seed = derive_seed(st.cfg.seed, 1);
            models[0] = scoring::fit_mlp(x, cell_target, mc, ScoreKind::Cellularity);
            mc.seed = derive_seed(st.cfg.seed, 2);
            models[1] = scoring::fit_mlp(x, arch_target, mc, ScoreKind::Architecture);
        }
    }
    io::write_text_file(dir / "models" / "cellularity.json", scoring::to_json(models[0]));
    io::write_text_file(dir / "models" / "architecture.json", scoring::to_json(models[1]));

    io::Manifest scored = manifest;
    scored.base_dir = dir;
    const fs::path out_abs = fs::absolute(dir);
    for (std::size_t b = 0; b < data.bags.size(); ++b) {
        auto& entry = scored.entries[b];
        const auto& bag = data.bags[b];
        entry.embeddings_path =
            fs::absolute(manifest.resolve(entry.embeddings_path)).lexically_normal().lexically_relative(out_abs).string();
        for (const auto& model : models) {
            const auto scores = scoring::predict_scores(model, bag);
            const std::string kind(to_string(model.target));
            const std::string rel = "scores/" + bag.slide_id + "." + kind + ".hgpb";
            io::write_scores(scores, bag.patch_ids, dir / rel);
            entry.scores_paths[kind] = rel;
        }
    }
    io::save_manifest(scored, dir / "manifest.json");
    write_run_config(dir, *st.settings.at("score"));
    note(err, "scored " + std::to_string(data.bags.size()) + " slides");
    if (st.rt.json_out)
        out << json{{"manifest", (dir / "manifest.json").string()}, {"run_config", st.settings.at("score")->to_json()}}
                   .dump(2)
            << '\n';
    else
        out << "manifest " << (dir / "manifest.json").string() << '\n';
}

void run_cluster(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    const auto models = experiment::cluster_dataset(data, cfg);
    const fs::path dir = st.rt.out;
    save_clusters(dir, data, models);
    write_run_config(dir, *st.settings.at("cluster"));
    json rows = json::array();
    std::ostringstream text;
    for (std::size_t i = 0; i < models.size(); ++i) {
        rows.push_back({{"slide_id", data.bags[i].slide_id},
                        {"k", models[i].k},
                        {"nonempty", models[i].nonempty_clusters()},
                        {"objective", models[i].objective}});
        text << data.bags[i].slide_id << "  K=" << models[i].k << "  nonempty=" << models[i].nonempty_clusters()
             << "  objective=" << reports::fixed(models[i].objective) << '\n';
    }
    note(err, "clustered " + std::to_string(models.size()) + " slides into " + dir.string());
    if (st.rt.json_out) out << json{{"slides", rows}, {"run_config", st.settings.at("cluster")->to_json()}}.dump(2) << '\n';
    else out << text.str();
}

void run_prototype(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    const auto models = load_clusters(st.clusters_dir, data);
    const auto protos = experiment::prototype_dataset(data, models, cfg);
    const fs::path dir = st.rt.out;
    save_prototypes(dir, protos);
    write_run_config(dir, *st.settings.at("prototype"));
    std::size_t degenerate = 0;
    for (const auto& pb : protos)
        for (const auto& p : pb.provenance) degenerate += p.degenerate ? 1 : 0;
    note(err, "wrote " + std::to_string(protos.size()) + " prototype bags (" + std::to_string(degenerate) +
                  " degenerate prototypes)");
    if (st.rt.json_out)
        out << json{{"slides", protos.size()}, {"degenerate", degenerate},
                    {"run_config", st.settings.at("prototype")->to_json()}}
                   .dump(2)
            << '\n';
    else
        out << "prototype bags " << protos.size() << " in " << dir.string() << '\n';
}

void run_train(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    experiment::validate(cfg);
    auto inputs = inputs_for(st, data, cfg);
    auto tc = experiment::train_config(cfg, cfg.seed);
    heads::HeadParams params;
    if (st.task == "cox") {
        if (!data.has_survival()) throw Error(ErrorCode::ManifestError, "cox training needs survival data on every slide");
        std::vector<heads::SurvivalBag> bags;
        for (std::size_t i = 0; i < data.bags.size(); ++i)
            bags.push_back({&inputs[i], data.bags[i].survival->time, data.bags[i].survival->event});
        tc.loss = heads::LossKind::CoxNPLL;
        params = heads::train_cox(bags, cfg.head, tc);
    } else {
        const auto l = labeled_only(std::move(inputs), data);
        std::vector<heads::LabeledBag> bags;
        for (std::size_t i = 0; i < l.inputs.size(); ++i) bags.push_back({&l.inputs[i], l.labels[i]});
        params = heads::train_classifier(bags, class_count(data), cfg.head, tc);
    }
    const fs::path dir = st.rt.out;
    io::write_text_file(dir / "head.json", heads::to_json(params));
    write_run_config(dir, *st.settings.at("train"));
    note(err, "trained " + heads::to_string(cfg.head) + " head, " + std::to_string(params.theta.size()) + " parameters");
    if (st.rt.json_out)
        out << json{{"head", (dir / "head.json").string()}, {"run_config", st.settings.at("train")->to_json()}}.dump(2)
            << '\n';
    else
        out << "head " << (dir / "head.json").string() << '\n';
}

void run_eval(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    experiment::validate(cfg);
    note(err, cfg.baseline ? "evaluating on raw bags" : "evaluating on prototype bags");
    const auto l = labeled_only(inputs_for(st, data, cfg), data);
    const auto report = experiment::cross_validate(l.inputs, l.labels, class_count(data), cfg);
    const auto& s = *st.settings.at("eval");
    emit(st, s, reports::to_json(report, s.to_json()), reports::to_text(report), out);
}

void run_survival_cmd(State& st, std::ostream& out, std::ostream&) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    const auto report = experiment::run_survival(data, cfg);
    const auto& s = *st.settings.at("survival");
    emit(st, s, reports::to_json(report, s.to_json()), reports::to_text(report), out);
    if (!st.rt.out.empty()) write_km(st.rt.out, report);
}

void run_sweep(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    st.grid.ks = parse_axis<int>(st.grid_k, kGridK);
    st.grid.ratios = parse_axis<double>(st.grid_r, kGridR);
    note(err, "sweeping " + std::to_string(st.grid.ks.size() + st.grid.ratios.size()) + " cells");
    const auto report = experiment::run_ablation_sweep(data, st.grid, cfg);
    const auto& s = *st.settings.at("sweep");
    emit(st, s, reports::to_json(report, s.to_json()), reports::to_text(report), out);
}

void run_pipeline_cmd(State& st, std::ostream& out, std::ostream& err) {
    const auto data = io::load_dataset(st.rt.manifest);
    const auto cfg = resolved(st);
    experiment::validate(cfg);
    const auto& s = *st.settings.at("pipeline");
    const fs::path dir = st.rt.out;

    std::vector<Matrix> inputs;
    if (cfg.baseline) {
        for (const auto& b : data.bags) inputs.push_back(b.features);
    } else {
        note(err, "clustering " + std::to_string(data.bags.size()) + " slides (K=" + std::to_string(cfg.k) + ")");
        const auto models = experiment::cluster_dataset(data, cfg);
        save_clusters(dir / "clusters", data, models);
        note(err, "building prototype bags (R=" + reports::fixed(cfg.ratio, 1) + "%)");
        auto protos = experiment::prototype_dataset(data, models, cfg);
        save_prototypes(dir / "prototypes", protos);
        for (auto& p : protos) inputs.push_back(std::move(p.matrix));
    }

    json combined = json::object();
    std::string text;
    bool any = false;
    bool labeled = false;
    for (const auto& b : data.bags) labeled = labeled || b.label.has_value();
    if (labeled) {
        note(err, "cross-validating " + heads::to_string(cfg.head) + " head");
        const auto l = labeled_only(inputs, data);
        const auto report = experiment::cross_validate(l.inputs, l.labels, class_count(data), cfg);
        const auto j = reports::to_json(report, s.to_json());
        io::write_text_file(dir / "report.json", j.dump(2) + "\n");
        io::write_text_file(dir / "report.txt", reports::to_text(report));
        combined["metrics"] = j;
        text += reports::to_text(report);
        any = true;
    }
    if (data.has_survival()) {
        note(err, "survival analysis");
        std::vector<double> times;
        auto events = std::make_unique<bool[]>(data.bags.size());
        for (std::size_t i = 0; i < data.bags.size(); ++i) {
            times.push_back(data.bags[i].survival->time);
            events[i] = data.bags[i].survival->event;
        }
        const auto report = experiment::evaluate_survival(inputs, times, {events.get(), data.bags.size()}, cfg);
        const auto j = reports::to_json(report, s.to_json());
        io::write_text_file(dir / "survival_report.json", j.dump(2) + "\n");
        io::write_text_file(dir / "survival_report.txt", reports::to_text(report));
        write_km(dir, report);
        combined["survival"] = j;
        text += (any ? "\n" : "") + reports::to_text(report);
        any = true;
    }
    if (!any) throw Error(ErrorCode::EmptyInput, "manifest has neither labels nor survival data");
    write_run_config(dir, s);
    if (st.rt.json_out) out << combined.dump(2) << '\n';
    else out << text;
}

void add_synth_options(CLI::App* app, State& st) {
    auto& s = st.settings_for(app);
    auto& c = st.synth;
    s.add(app, "bags", c.num_bags, "Number of slides")->check(CLI::Range(1, INT_MAX));
    s.add(app, "min-instances", c.min_instances, "Fewest instances per slide")->check(CLI::Range(1, INT_MAX));
    s.add(app, "max-instances", c.max_instances, "Most instances per slide")->check(CLI::Range(1, INT_MAX));
    s.add(app, "dim", c.dim, "Embedding width D")->check(CLI::Range(1, 65536));
    s.add(app, "min-planted", c.min_planted, "Fewest planted positives in a positive slide")->check(CLI::Range(1, INT_MAX));
    s.add(app, "max-planted", c.max_planted, "Most planted positives in a positive slide")->check(CLI::Range(1, INT_MAX));
    s.add(app, "positive-fraction", c.positive_fraction, "Probability a slide is positive")->check(CLI::Range(0.0, 1.0));
    s.add(app, "ambiguity", c.ambiguity, "Fraction of other instances drawn at the class midpoint")
        ->check(CLI::Range(0.0, 1.0));
    s.add(app, "rho", c.rho, "Score-positivity correlation")->check(CLI::Range(0.0, 1.0));
    s.add(app, "score-jitter", c.score_jitter, "Gaussian jitter on the positivity indicator")->check(kNonNegative);
    s.add(app, "label-noise", c.label_noise, "Probability of flipping a slide label")->check(CLI::Range(0.0, 1.0));
    s.add(app, "signal", c.signal, "Shift of planted positives along the hidden direction")->check(kNonNegative);
    s.add(app, "noise", c.noise, "Per-coordinate instance noise")->check(kNonNegative);
    s.add(app, "tissue-types", c.tissue_types, "Background tissue centers")->check(CLI::Range(1, INT_MAX));
    s.add(app, "tissue-spread", c.tissue_spread, "Spread of the tissue centers")->check(kNonNegative);
    s.flag(app, "survival", c.survival, "Also generate survival times tied to planted burden");
    s.add(app, "base-hazard", c.base_hazard, "Event rate per day without planted positives")->check(kPositive);
    s.add(app, "hazard-ratio", c.hazard_ratio, "Hazard multiplier per planted positive")->check(kPositive);
    s.add(app, "censor-rate", c.censor_rate, "Censoring rate per day")->check(kNonNegative);
    app->add_flag("--dump-truth", st.dump_truth, "Also write planted instance labels to truth.json");
    add_seed(app, st);
}

void build(CLI::App& app, State& st, std::map<CLI::App*, std::function<void(std::ostream&, std::ostream&)>>& actions) {
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough(false);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort (embeddings, scores, manifest)");
    add_runtime(synth, st, false, true);
    add_synth_options(synth, st);
    actions[synth] = [&](std::ostream& o, std::ostream& e) { run_synth(st, o, e); };

    auto* score = app.add_subcommand("score", "Fit or apply cellularity/architecture scorers and write guide scores");
    add_runtime(score, st, false, true);
    add_manifest(score, st);
    {
        auto& s = st.settings_for(score);
        s.add(score, "scorer", st.scorer, "Scorer family")->check(CLI::IsMember({"ridge", "mlp"}));
        s.add(score, "truth", st.truth_path, "Planted labels (synth --dump-truth) used to fit the scorers");
        s.add(score, "cellularity-model", st.cellularity_model, "Saved cellularity scorer (JSON)");
        s.add(score, "architecture-model", st.architecture_model, "Saved architecture scorer (JSON)");
        s.add(score, "lambda", st.lambda, "Ridge penalty")->check(kNonNegative);
        s.add(score, "mlp-hidden", st.mlp_hidden, "MLP hidden units")->check(CLI::Range(1, 65536));
        s.add(score, "mlp-lr", st.mlp_lr, "MLP learning rate")->check(kPositive);
        s.add(score, "mlp-epochs", st.mlp_epochs, "MLP full-batch epochs")->check(CLI::Range(1, INT_MAX));
        s.add(score, "train-fraction", st.train_fraction, "Leading fraction of slides used for fitting")
            ->check(CLI::Range(0.0, 1.0) & kPositive);
        add_seed(score, st);
    }
    actions[score] = [&](std::ostream& o, std::ostream& e) { run_score(st, o, e); };

    auto* cluster = app.add_subcommand("cluster", "Cluster every slide's extended features");
    add_runtime(cluster, st, true, true);
    add_manifest(cluster, st);
    add_cluster_options(cluster, st);
    add_seed(cluster, st);
    actions[cluster] = [&](std::ostream& o, std::ostream& e) { run_cluster(st, o, e); };

    auto* proto = app.add_subcommand("prototype", "Build prototype bags from saved clusters");
    add_runtime(proto, st, true, true);
    add_manifest(proto, st);
    st.settings_for(proto).add(proto, "clusters", st.clusters_dir, "Directory written by `cluster`")->required();
    add_ratio(proto, st);
    actions[proto] = [&](std::ostream& o, std::ostream& e) { run_prototype(st, o, e); };

    auto* train = app.add_subcommand("train", "Train a MIL head on all labeled slides and save it");
    add_runtime(train, st, true, true);
    add_manifest(train, st);
    st.settings_for(train).add(train, "prototypes", st.prototypes_dir, "Directory written by `prototype`");
    st.settings_for(train).add(train, "task", st.task, "Training objective")->check(CLI::IsMember({"classification", "cox"}));
    add_cluster_options(train, st);
    add_ratio(train, st);
    add_head_options(train, st);
    add_seed(train, st);
    actions[train] = [&](std::ostream& o, std::ostream& e) { run_train(st, o, e); };

    auto* eval = app.add_subcommand("eval", "Cross-validated AUC/ACC");
    add_runtime(eval, st, true, false);
    add_experiment(eval, st);
    st.settings_for(eval).add(eval, "prototypes", st.prototypes_dir, "Use prototype bags from this directory");
    actions[eval] = [&](std::ostream& o, std::ostream& e) { run_eval(st, o, e); };

    auto* surv = app.add_subcommand("survival", "Out-of-fold Cox risk, Kaplan-Meier curves and log-rank test");
    add_runtime(surv, st, true, false);
    add_experiment(surv, st);
    actions[surv] = [&](std::ostream& o, std::ostream& e) { run_survival_cmd(st, o, e); };

    auto* sweep = app.add_subcommand("sweep", "Cluster-count and select-ratio ablation grids");
    add_runtime(sweep, st, true, false);
    add_experiment(sweep, st);
    {
        auto& s = st.settings_for(sweep);
        s.add(sweep, "grid-k", st.grid_k, "Cluster counts swept at --anchor-r (comma list or none)")
            ->check(axis_validator<int>(kGridK));
        s.add(sweep, "grid-r", st.grid_r, "Select ratios swept at --anchor-k (comma list or none)")
            ->check(axis_validator<double>(kGridR));
        s.add(sweep, "anchor-k", st.grid.anchor_k, "K held fixed in the ratio sweep")->check(CLI::Range(1, INT_MAX));
        s.add(sweep, "anchor-r", st.grid.anchor_ratio, "R held fixed in the cluster-count sweep")
            ->check(CLI::Range(0.0, 100.0) & kPositive);
    }
    actions[sweep] = [&](std::ostream& o, std::ostream& e) { run_sweep(st, o, e); };

    auto* pipeline = app.add_subcommand("pipeline", "Cluster, prototype and evaluate in one run");
    add_runtime(pipeline, st, true, false, "hgpmil_run");
    st.rt.out = "hgpmil_run";
    add_experiment(pipeline, st);
    actions[pipeline] = [&](std::ostream& o, std::ostream& e) { run_pipeline_cmd(st, o, e); };
}

} // namespace

namespace {

bool given(const std::vector<std::string>& args, const std::string& flag) {
    return std::ranges::any_of(args, [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
}

// CLI11 reads config files for the top-level app only, so subcommand files
// are turned into flags here. Keys already passed on the command line win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    if (!fs::exists(path)) throw Error(ErrorCode::IoFailure, "file not found: '" + path + "'");
    std::istringstream in(io::read_text_file(path));
    const auto items = CLI::ConfigTOML().from_config(in);
    const std::vector<std::string> from_cli = args;
    for (const auto& item : items) {
        if (!item.parents.empty() || item.name == "++" || item.name == "--") continue;
        const std::string flag = "--" + item.name;
        if (given(from_cli, flag)) continue;
        std::string value;
        for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
        args.push_back(flag + "=" + (item.inputs.empty() ? "{}" : value));
    }
    return args;
}

} // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    State st;
    CLI::App app{"Histomorphology-guided prototype MIL on precomputed patch embeddings", "hgpmil"};
    std::map<CLI::App*, std::function<void(std::ostream&, std::ostream&)>> actions;
    build(app, st, actions);

    std::vector<std::string> args;
    try {
        args = expand_config(raw_args);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    std::vector<const char*> argv{"hgpmil"};
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const auto subs = app.get_subcommands();
        err << "usage error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.back()->help());
        return 2;
    }

    try {
        for (auto* sub : app.get_subcommands()) actions.at(sub)(out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

} // namespace hgpmil::cli
