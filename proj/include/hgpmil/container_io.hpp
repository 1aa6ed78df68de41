#pragma once

// Binary matrix container used for embeddings, scores and prototypes.
//
// Layout (all integers little-endian):
//   offset  size  field
//   0       4     magic "HGPB"
//   4       2     version (1)
//   6       2     record kind (0x4545 'EE' embeddings, 0x5353 'SS' scores,
//                 0x5050 'PP' prototypes)
//   8       4     N rows
//   12      4     D cols (1 for scores)
//   16      2     flags (reserved, 0)
//   18      4     id block byte length B
//   22      B     N entries of (u32 length, UTF-8 bytes)
//   22+B    4ND   binary32 values, row-major
//
// Kind codes repeat one byte twice so that no single-byte corruption maps one
// valid kind onto another.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hgpmil/core_model.hpp"
#include "hgpmil/matrix.hpp"

namespace hgpmil::io {

inline constexpr char kMagic[4] = {'H', 'G', 'P', 'B'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 18;

enum class RecordKind : std::uint16_t {
    Embeddings = 0x4545,
    Scores = 0x5353,
    Prototypes = 0x5050,
};

struct ContainerHeader {
    std::uint16_t version = kVersion;
    RecordKind kind = RecordKind::Embeddings;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint16_t flags = 0;

    bool operator==(const ContainerHeader&) const = default;
};

struct Container {
    ContainerHeader header;
    Matrix matrix;
    std::vector<std::string> ids;
};

/// Serialized bytes of a container; write_container writes exactly these.
std::vector<std::uint8_t> encode_container(const ContainerHeader& header, const Matrix& matrix,
                                           std::span<const std::string> ids);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const ContainerHeader& header, const Matrix& matrix, std::span<const std::string> ids,
                     const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

// Convenience wrappers that pick the header from the payload.
void write_embeddings(const Bag& bag, const std::filesystem::path& path);
void write_scores(const ScoreVector& scores, std::span<const std::string> ids, const std::filesystem::path& path);

/// Reads a Scores container and checks its ids against the bag's patch ids.
ScoreVector read_scores_container(const std::filesystem::path& path, ScoreKind kind,
                                  std::span<const std::string> expected_ids);

/// Reads a `patch_id,score` CSV and reorders the values to expected_ids.
ScoreVector read_scores_csv(const std::filesystem::path& path, std::span<const std::string> expected_ids,
                            ScoreKind kind = ScoreKind::Cellularity);

/// Dispatches on the extension: `.csv` goes through read_scores_csv,
/// anything else is treated as a container.
ScoreVector read_scores(const std::filesystem::path& path, ScoreKind kind, std::span<const std::string> expected_ids);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace hgpmil::io
