#include "hgpmil/manifest.hpp"

#include <algorithm>
#include <set>

#include "hgpmil/container_io.hpp"
#include "json.hpp"

namespace hgpmil::io {

using nlohmann::json;

namespace {

const char* const kScoreKeys[] = {"cellularity", "architecture"};

[[noreturn]] void manifest_error(const std::string& what) { throw Error(ErrorCode::ManifestError, what); }

} // namespace

Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        manifest_error(std::string("invalid JSON: ") + e.what());
    }
    Manifest m;
    m.base_dir = base_dir;
    try {
        m.dim = doc.at("D").get<std::size_t>();
        m.class_names = doc.value("class_names", std::vector<std::string>{});
        m.created_by = doc.value("created_by", std::string{});
        m.seed = doc.value("seed", std::uint64_t{0});
        for (const auto& s : doc.at("slides")) {
            ManifestEntry e;
            e.slide_id = s.at("slide_id").get<std::string>();
            e.embeddings_path = s.at("embeddings_path").get<std::string>();
            if (s.contains("scores_paths")) {
                for (const auto& [key, value] : s.at("scores_paths").items()) {
                    if (key != kScoreKeys[0] && key != kScoreKeys[1])
                        manifest_error("slide '" + e.slide_id + "': unknown score kind '" + key + "'");
                    e.scores_paths[key] = value.get<std::string>();
                }
            }
            if (s.contains("label") && !s["label"].is_null()) e.label = s["label"].get<std::string>();
            if (s.contains("survival_time") && !s["survival_time"].is_null())
                e.survival_time = s["survival_time"].get<double>();
            if (s.contains("survival_event") && !s["survival_event"].is_null())
                e.survival_event = s["survival_event"].get<bool>();
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        manifest_error(std::string("missing or mistyped field: ") + e.what());
    }

    if (m.dim == 0) manifest_error("D must be positive");
    std::set<std::string> ids;
    for (const auto& e : m.entries) {
        if (!ids.insert(e.slide_id).second) manifest_error("duplicate slide_id '" + e.slide_id + "'");
        if (e.label && std::ranges::find(m.class_names, *e.label) == m.class_names.end())
            manifest_error("slide '" + e.slide_id + "': label '" + *e.label + "' is not in class_names");
        if (e.survival_time.has_value() != e.survival_event.has_value())
            manifest_error("slide '" + e.slide_id + "': survival_time and survival_event must appear together");
    }
    return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoFailure, "file not found: '" + path.string() + "'");
    Manifest m = parse_manifest(read_text_file(path), path.parent_path());
    for (const auto& e : m.entries) {
        if (!std::filesystem::exists(m.resolve(e.embeddings_path)))
            throw Error(ErrorCode::IoFailure, "slide '" + e.slide_id + "': file not found: '" +
                                                  m.resolve(e.embeddings_path).string() + "'");
        for (const auto& [kind, p] : e.scores_paths) {
            if (!std::filesystem::exists(m.resolve(p)))
                throw Error(ErrorCode::IoFailure, "slide '" + e.slide_id + "': file not found: '" +
                                                      m.resolve(p).string() + "'");
        }
    }
    return m;
}

std::string manifest_to_json(const Manifest& m) {
    json doc;
    doc["D"] = m.dim;
    doc["class_names"] = m.class_names;
    doc["created_by"] = m.created_by;
    doc["seed"] = m.seed;
    json slides = json::array();
    for (const auto& e : m.entries) {
        json s;
        s["slide_id"] = e.slide_id;
        s["embeddings_path"] = e.embeddings_path;
        s["scores_paths"] = e.scores_paths;
        s["label"] = e.label ? json(*e.label) : json(nullptr);
        s["survival_time"] = e.survival_time ? json(*e.survival_time) : json(nullptr);
        s["survival_event"] = e.survival_event ? json(*e.survival_event) : json(nullptr);
        slides.push_back(std::move(s));
    }
    doc["slides"] = std::move(slides);
    return doc.dump(2) + "\n";
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    write_text_file(path, manifest_to_json(manifest));
}

bool Dataset::has_scores() const {
    return std::ranges::all_of(cellularity, [](const auto& s) { return s.has_value(); }) &&
           std::ranges::all_of(architecture, [](const auto& s) { return s.has_value(); });
}

bool Dataset::has_survival() const {
    return !bags.empty() && std::ranges::all_of(bags, [](const Bag& b) { return b.survival.has_value(); });
}

Dataset load_dataset(const Manifest& m) {
    Dataset d;
    d.class_names = m.class_names;
    d.dim = m.dim;
    for (const auto& e : m.entries) {
        auto c = read_container(m.resolve(e.embeddings_path));
        if (c.header.kind != RecordKind::Embeddings)
            throw Error(ErrorCode::HeaderMismatch, "slide '" + e.slide_id + "': not an embeddings container");
        Bag bag;
        bag.slide_id = e.slide_id;
        bag.features = std::move(c.matrix);
        bag.patch_ids = std::move(c.ids);
        if (e.label) {
            const auto it = std::ranges::find(m.class_names, *e.label);
            bag.label = static_cast<int>(it - m.class_names.begin());
        }
        if (e.survival_time) bag.survival = Survival{*e.survival_time, *e.survival_event};
        validate_bag(bag, m.dim);

        std::optional<ScoreVector> cell, arch;
        if (auto it = e.scores_paths.find("cellularity"); it != e.scores_paths.end())
            cell = read_scores(m.resolve(it->second), ScoreKind::Cellularity, bag.patch_ids);
        if (auto it = e.scores_paths.find("architecture"); it != e.scores_paths.end())
            arch = read_scores(m.resolve(it->second), ScoreKind::Architecture, bag.patch_ids);
        d.bags.push_back(std::move(bag));
        d.cellularity.push_back(std::move(cell));
        d.architecture.push_back(std::move(arch));
    }
    return d;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) { return load_dataset(load_manifest(manifest_path)); }

Manifest save_dataset(const Dataset& d, const std::filesystem::path& out_dir, const std::string& created_by,
                      std::uint64_t seed) {
    Manifest m;
    m.dim = d.dim;
    m.class_names = d.class_names;
    m.created_by = created_by;
    m.seed = seed;
    m.base_dir = out_dir;
    for (std::size_t i = 0; i < d.bags.size(); ++i) {
        const Bag& bag = d.bags[i];
        ManifestEntry e;
        e.slide_id = bag.slide_id;
        e.embeddings_path = "embeddings/" + bag.slide_id + ".hgpb";
        write_embeddings(bag, out_dir / e.embeddings_path);
        for (const auto* scores : {&d.cellularity[i], &d.architecture[i]}) {
            if (!scores->has_value()) continue;
            const std::string kind(to_string((*scores)->kind));
            const std::string rel = "scores/" + bag.slide_id + "." + kind + ".hgpb";
            write_scores(**scores, bag.patch_ids, out_dir / rel);
            e.scores_paths[kind] = rel;
        }
        if (bag.label) e.label = d.class_names.at(static_cast<std::size_t>(*bag.label));
        if (bag.survival) {
            e.survival_time = bag.survival->time;
            e.survival_event = bag.survival->event;
        }
        m.entries.push_back(std::move(e));
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

} // namespace hgpmil::io
