#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"

#include "hgpmil/cli.hpp"
#include "hgpmil/container_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Run r;
    r.code = hgpmil::cli::dispatch(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) { return hgpmil::io::read_text_file(p); }

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hgpmil_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

// Small labeled survival cohort shared by the end-to-end cases.
const fs::path& cohort() {
    static const fs::path dir = [] {
        const auto d = scratch("cohort");
        const auto r = run({"synth", "--out", d.string(), "--bags", "24", "--min-instances", "6", "--max-instances",
                            "10", "--dim", "4", "--survival", "--dump-truth", "--seed", "3"});
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

std::string manifest() { return (cohort() / "manifest.json").string(); }

const std::vector<std::string> kQuick{"--k", "3", "--epochs", "3", "--hidden", "4", "--folds", "3"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
}

} // namespace

TEST_CASE("usage errors exit 2 and name the flag") {
    const auto r = run({"pipeline", "--manifest", "m.json", "--k", "0"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--k") != std::string::npos);
    CHECK(r.err.find("[1 - ") != std::string::npos);
    CHECK(r.out.empty());
    CHECK(run({"pipeline", "--manifest", "m.json", "--head", "rnn"}).code == 2);
    CHECK(run({"pipeline", "--manifest", "m.json", "--ratio", "0"}).code == 2);
    CHECK(run({"pipeline", "--manifest", "m.json", "--folds", "1"}).code == 2);
    CHECK(run({"pipeline", "--manifest", "m.json", "--bogus"}).code == 2);
    CHECK(run({"pipeline"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("missing manifest exits 1") {
    const auto r = run({"eval", "--manifest", "missing.json"});
    CHECK(r.code == 1);
    CHECK(r.err.find("file not found") != std::string::npos);
    CHECK(r.err.find("missing.json") != std::string::npos);
}

TEST_CASE("help lists every flag with its default") {
    const auto r = run({"pipeline", "--help"});
    CHECK(r.code == 0);
    for (const char* flag : {"--manifest", "--k", "--ratio", "--score-weight", "--head", "--baseline", "--folds",
                             "--seed", "--jobs", "--json", "--config", "--out", "--no-stratify", "--lr", "--epochs"})
        CHECK(r.out.find(flag) != std::string::npos);
    CHECK(r.out.find("--k INT:INT in [1 - 2147483647] [50]") != std::string::npos);
    CHECK(r.out.find("[50]") != std::string::npos);
    CHECK(r.out.find("[attention]") != std::string::npos);
    CHECK(r.out.find("[42]") != std::string::npos);
    CHECK(r.out.find("[5]") != std::string::npos);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("each documented flag parses") {
    // A value that parses but fails at run time yields exit 1, never 2.
    const std::vector<std::string> model{"--k",       "7",    "--score-weight", "0.5",   "--kmeans-tol", "1e-5",
                                         "--kmeans-max-iter", "20", "--kmeans-restarts", "2", "--seed", "9"};
    const std::vector<std::string> head{"--ratio", "30", "--head", "maxpool", "--baseline", "--lr", "0.01",
                                        "--epochs", "2", "--weight-decay", "0", "--hidden", "8", "--patience", "1"};
    const std::vector<std::string> cv{"--folds", "4", "--no-stratify", "--jobs", "2", "--json"};
    const std::vector<std::string> missing{"--manifest", "missing.json", "--out", "unused"};
    const auto all = with(with(with(missing, model), head), cv);
    for (const char* cmd : {"eval", "survival", "pipeline"}) {
        CAPTURE(cmd);
        CHECK(run(with({cmd}, all)).code == 1);
    }
    CHECK(run(with({"sweep"}, with(all, {"--grid-k", "2,3", "--grid-r", "10,20", "--anchor-k", "3", "--anchor-r",
                                          "40"})))
              .code == 1);
    CHECK(run(with({"train"}, with(with(with(missing, model), head), {"--task", "cox", "--prototypes", "p"}))).code ==
          1);
    CHECK(run(with({"cluster"}, with(missing, model))).code == 1);
    CHECK(run({"prototype", "--manifest", "missing.json", "--clusters", "c", "--ratio", "20", "--out", "o"}).code == 1);
    CHECK(run({"score", "--manifest", "missing.json", "--out", "o", "--scorer", "mlp", "--truth", "t", "--lambda",
               "0.1", "--mlp-hidden", "4", "--mlp-lr", "0.1", "--mlp-epochs", "5", "--train-fraction", "0.5"})
              .code == 1);
    CHECK(run({"synth", "--out", "/dev/null/x", "--bags", "10", "--min-instances", "5", "--max-instances", "6",
               "--dim", "3", "--min-planted", "1", "--max-planted", "2", "--positive-fraction", "0.4", "--ambiguity",
               "0.5", "--rho", "0.8", "--score-jitter", "0.2", "--label-noise", "0.1", "--signal", "2",
               "--noise", "1", "--tissue-types", "2", "--tissue-spread", "1", "--survival", "--base-hazard",
               "0.01", "--hazard-ratio", "2", "--censor-rate", "0.01", "--dump-truth", "--seed", "4"})
              .code == 1);
}

TEST_CASE("pipeline writes every artifact and replays from its config") {
    const auto a = scratch("run_a");
    const auto first = run(with({"pipeline", "--manifest", manifest(), "--out", a.string()}, kQuick));
    REQUIRE(first.code == 0);
    for (const char* f : {"report.json", "report.txt", "survival_report.json", "survival_report.txt",
                          "km_high_risk.csv", "km_low_risk.csv", "run_config.txt"})
        CHECK(fs::exists(a / f));
    CHECK(fs::exists(a / "clusters" / "slide_0000.centroids.hgpb"));
    CHECK(fs::exists(a / "prototypes" / "slide_0000.hgpb"));
    const auto report = json::parse(slurp(a / "report.json"));
    CHECK(report["run_config"]["k"] == 3);
    CHECK(report["run_config"]["ratio"] == 50.0);
    CHECK(report["run_config"]["command"] == "pipeline");
    CHECK(first.out.find("AUC") != std::string::npos);

    const auto b = scratch("run_b");
    REQUIRE(run({"pipeline", "--config", (a / "run_config.txt").string(), "--out", b.string()}).code == 0);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(slurp(a / "survival_report.json") == slurp(b / "survival_report.json"));

    const auto c = scratch("run_c");
    REQUIRE(run(with({"pipeline", "--manifest", manifest(), "--out", c.string(), "--jobs", "4"}, kQuick)).code == 0);
    CHECK(slurp(a / "report.json") == slurp(c / "report.json"));
    CHECK(slurp(a / "clusters" / "slide_0005.centroids.hgpb") == slurp(c / "clusters" / "slide_0005.centroids.hgpb"));
}

TEST_CASE("json mode keeps stdout machine readable") {
    const auto r = run(with({"eval", "--manifest", manifest(), "--json"}, kQuick));
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["type"] == "metric_report");
    CHECK(j["fold_auc"].size() == 3);
    CHECK(r.err.find("[hgpmil]") != std::string::npos);
}

TEST_CASE("stage by stage matches the one-shot pipeline") {
    const auto a = scratch("stages_pipeline");
    REQUIRE(run(with({"pipeline", "--manifest", manifest(), "--out", a.string(), "--json"}, kQuick)).code == 0);
    const auto c = scratch("stages_clusters"), p = scratch("stages_protos");
    REQUIRE(run({"cluster", "--manifest", manifest(), "--k", "3", "--out", c.string()}).code == 0);
    REQUIRE(run({"prototype", "--manifest", manifest(), "--clusters", c.string(), "--out", p.string()}).code == 0);
    const auto e = run(with({"eval", "--manifest", manifest(), "--prototypes", p.string(), "--json"}, kQuick));
    REQUIRE(e.code == 0);
    const auto staged = json::parse(e.out);
    const auto oneshot = json::parse(slurp(a / "report.json"));
    CHECK(staged["fold_auc"] == oneshot["fold_auc"]);
    CHECK(staged["fold_acc"] == oneshot["fold_acc"]);

    const auto t = scratch("stages_train");
    REQUIRE(run({"train", "--manifest", manifest(), "--prototypes", p.string(), "--epochs", "2", "--hidden", "4",
                 "--out", t.string()})
                .code == 0);
    CHECK(fs::exists(t / "head.json"));
    const auto tc = scratch("stages_train_cox");
    REQUIRE(run({"train", "--manifest", manifest(), "--task", "cox", "--baseline", "--epochs", "2", "--out",
                 tc.string()})
                .code == 0);
    CHECK(fs::exists(tc / "head.json"));
}

TEST_CASE("scoring stage writes a scored manifest") {
    const auto s = scratch("scored");
    const auto r = run({"score", "--manifest", manifest(), "--truth", (cohort() / "truth.json").string(), "--out",
                        s.string()});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(s / "models" / "cellularity.json"));
    CHECK(fs::exists(s / "scores" / "slide_0000.cellularity.hgpb"));
    const auto again = scratch("rescored");
    REQUIRE(run({"score", "--manifest", manifest(), "--cellularity-model", (s / "models" / "cellularity.json").string(),
                 "--architecture-model", (s / "models" / "architecture.json").string(), "--out", again.string()})
                .code == 0);
    CHECK(slurp(s / "scores" / "slide_0003.architecture.hgpb") == slurp(again / "scores" / "slide_0003.architecture.hgpb"));
    CHECK(run(with({"eval", "--manifest", (s / "manifest.json").string()}, kQuick)).code == 0);
    CHECK(run({"score", "--manifest", manifest(), "--out", scratch("noscore").string()}).code == 1);
}

TEST_CASE("sweep runs every cell") {
    const auto r = run(with({"sweep", "--manifest", manifest(), "--json", "--grid-k", "2,3", "--grid-r", "20,40",
                             "--anchor-k", "3", "--anchor-r", "50"},
                            {"--epochs", "2", "--hidden", "4", "--folds", "3"}));
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["cells"].size() == 4);

    const auto a = scratch("sweep_a"), b = scratch("sweep_b");
    REQUIRE(run(with({"sweep", "--manifest", manifest(), "--out", a.string(), "--grid-k", "3", "--grid-r", "none"},
                     {"--epochs", "2", "--hidden", "4", "--folds", "3"}))
                .code == 0);
    REQUIRE(run({"sweep", "--config", (a / "run_config.txt").string(), "--out", b.string()}).code == 0);
    CHECK(json::parse(slurp(a / "report.json"))["cells"].size() == 1);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(run({"sweep", "--manifest", manifest(), "--grid-k", "2,0"}).code == 2);
    CHECK(run({"sweep", "--manifest", manifest(), "--grid-r", "10,abc"}).code == 2);
    CHECK(run({"pipeline", "--config", "no_such_config.txt"}).code == 1);
}

TEST_CASE("seed precedence") {
    const auto cfg = scratch("seed_cfg");
    fs::create_directories(cfg);
    hgpmil::io::write_text_file(cfg / "run.txt", "# settings\nk = 4\nseed = 5\n");
    auto seed_of = [](const Run& r) { return json::parse(r.out)["run_config"]["seed"].get<std::uint64_t>(); };
    auto k_of = [](const Run& r) { return json::parse(r.out)["run_config"]["k"].get<int>(); };
    const std::vector<std::string> base{"eval", "--manifest", manifest(), "--json", "--epochs", "1", "--hidden", "2",
                                        "--folds", "3"};

    const auto from_file = run(with(base, {"--config", (cfg / "run.txt").string()}));
    REQUIRE(from_file.code == 0);
    CHECK(seed_of(from_file) == 5);
    CHECK(k_of(from_file) == 4);
    const auto flag_wins = run(with(base, {"--config", (cfg / "run.txt").string(), "--k", "3", "--seed", "8"}));
    CHECK(seed_of(flag_wins) == 8);
    CHECK(k_of(flag_wins) == 3);

    ::setenv("HGPMIL_SEED", "7", 1);
    const auto env = run(base);
    const auto env_vs_flag = run(with(base, {"--seed", "8"}));
    ::unsetenv("HGPMIL_SEED");
    CHECK(seed_of(env) == 7);
    CHECK(seed_of(env_vs_flag) == 8);
    CHECK(seed_of(run(base)) == 42);
}
