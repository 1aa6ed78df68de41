#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hgpmil/core_model.hpp"

namespace hgpmil::io {

struct ManifestEntry {
    std::string slide_id;
    std::string embeddings_path;
    std::map<std::string, std::string> scores_paths;  // keyed by "cellularity" / "architecture"
    std::optional<std::string> label;
    std::optional<double> survival_time;
    std::optional<bool> survival_event;
};

/// UTF-8 JSON dataset index. Paths are relative to the manifest's directory.
struct Manifest {
    std::size_t dim = 0;
    std::vector<std::string> class_names;
    std::string created_by;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::filesystem::path base_dir;  // not serialized

    std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

/// Parses and validates: unique slide ids, referenced files exist, labels
/// belong to class_names.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
std::string manifest_to_json(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Bags plus their optional guide scores, index-aligned.
struct Dataset {
    std::vector<Bag> bags;
    std::vector<std::optional<ScoreVector>> cellularity;
    std::vector<std::optional<ScoreVector>> architecture;
    std::vector<std::string> class_names;
    std::size_t dim = 0;

    bool has_scores() const;
    bool has_survival() const;
};

Dataset load_dataset(const Manifest& manifest);
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes every bag (and any scores) under out_dir and returns the manifest
/// describing them, already saved as out_dir/manifest.json.
Manifest save_dataset(const Dataset& dataset, const std::filesystem::path& out_dir, const std::string& created_by,
                      std::uint64_t seed);

} // namespace hgpmil::io
