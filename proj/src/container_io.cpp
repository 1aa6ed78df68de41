#include "hgpmil/container_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace hgpmil::io {
namespace {

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void u16(std::uint16_t v) {
        out_.push_back(static_cast<std::uint8_t>(v & 0xff));
        out_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t position() const { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw Error(ErrorCode::TruncatedPayload, std::string("file ends inside ") + what);
    }
    std::uint16_t u16() {
        need(2, "header");
        const std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what = "header") {
        need(4, what);
        std::uint32_t v = 0;
        for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(in_[pos_ + s]) << (8 * s);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32("payload")); }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

bool valid_kind(std::uint16_t k) {
    return k == static_cast<std::uint16_t>(RecordKind::Embeddings) ||
           k == static_cast<std::uint16_t>(RecordKind::Scores) ||
           k == static_cast<std::uint16_t>(RecordKind::Prototypes);
}

void check_header(const ContainerHeader& h) {
    if (h.version != kVersion)
        throw Error(ErrorCode::UnsupportedVersion, "container version " + std::to_string(h.version));
    if (!valid_kind(static_cast<std::uint16_t>(h.kind)))
        throw Error(ErrorCode::HeaderMismatch, "unknown record kind");
    if (h.rows == 0 || h.cols == 0) throw Error(ErrorCode::HeaderMismatch, "N*D must be positive");
    if (h.kind == RecordKind::Scores && h.cols != 1)
        throw Error(ErrorCode::HeaderMismatch, "scores container must have D = 1");
    if (h.flags != 0) throw Error(ErrorCode::HeaderMismatch, "reserved flags must be zero");
}

} // namespace

std::vector<std::uint8_t> encode_container(const ContainerHeader& header, const Matrix& matrix,
                                           std::span<const std::string> ids) {
    check_header(header);
    if (matrix.rows() != header.rows || matrix.cols() != header.cols) {
        throw Error(ErrorCode::HeaderMismatch, "header declares " + std::to_string(header.rows) + "x" +
                                                   std::to_string(header.cols) + ", matrix is " +
                                                   std::to_string(matrix.rows()) + "x" +
                                                   std::to_string(matrix.cols()));
    }
    if (ids.size() != header.rows)
        throw Error(ErrorCode::HeaderMismatch, "id count does not match N");

    std::size_t block = 0;
    for (const auto& id : ids) block += 4 + id.size();
    if (block > 0xffffffffULL) throw Error(ErrorCode::HeaderMismatch, "id block too large");

    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + 4 + block + 4 * matrix.values().size());
    ByteWriter w(out);
    w.bytes(kMagic, 4);
    w.u16(header.version);
    w.u16(static_cast<std::uint16_t>(header.kind));
    w.u32(header.rows);
    w.u32(header.cols);
    w.u16(header.flags);
    w.u32(static_cast<std::uint32_t>(block));
    for (const auto& id : ids) {
        w.u32(static_cast<std::uint32_t>(id.size()));
        w.bytes(id.data(), id.size());
    }
    for (double v : matrix.values()) {
        const float f = static_cast<float>(v);
        if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteValue, "value not representable as binary32");
        w.f32(f);
    }
    return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const auto magic = r.take(4, "header");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not an HGPB container");

    Container c;
    c.header.version = r.u16();
    if (c.header.version != kVersion)
        throw Error(ErrorCode::UnsupportedVersion, "container version " + std::to_string(c.header.version));
    c.header.kind = static_cast<RecordKind>(r.u16());
    c.header.rows = r.u32();
    c.header.cols = r.u32();
    c.header.flags = r.u16();
    check_header(c.header);

    const std::uint32_t block = r.u32("id block");
    const std::size_t block_start = r.position();
    // Every id costs at least four bytes, which bounds N before anything is allocated.
    if (static_cast<std::uint64_t>(c.header.rows) * 4 > block)
        throw Error(ErrorCode::HeaderMismatch, "id block too small for N");
    r.need(block, "id block");
    c.ids.reserve(c.header.rows);
    for (std::uint32_t i = 0; i < c.header.rows; ++i) {
        const std::uint32_t len = r.u32("id block");
        if (r.position() - block_start + len > block)
            throw Error(ErrorCode::HeaderMismatch, "id overruns the id block");
        const auto s = r.take(len, "id block");
        c.ids.emplace_back(reinterpret_cast<const char*>(s.data()), s.size());
    }
    if (r.position() - block_start != block)
        throw Error(ErrorCode::HeaderMismatch, "id block length does not match its entries");

    const std::uint64_t count = static_cast<std::uint64_t>(c.header.rows) * c.header.cols;
    if (r.remaining() < count * 4) throw Error(ErrorCode::TruncatedPayload, "payload shorter than N*D values");
    if (r.remaining() > count * 4) throw Error(ErrorCode::TrailingData, "bytes after the payload");

    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const float f = r.f32();
        if (!std::isfinite(f)) {
            throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(i / c.header.cols) + " col " +
                                                       std::to_string(i % c.header.cols));
        }
        values[i] = f;
    }
    c.matrix = Matrix(c.header.rows, c.header.cols, std::move(values));
    return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for '" + path.string() + "'");
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void write_container(const ContainerHeader& header, const Matrix& matrix, std::span<const std::string> ids,
                     const std::filesystem::path& path) {
    write_file_bytes(path, encode_container(header, matrix, ids));
}

Container read_container(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_container(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void write_embeddings(const Bag& bag, const std::filesystem::path& path) {
    ContainerHeader h{kVersion, RecordKind::Embeddings, static_cast<std::uint32_t>(bag.size()),
                      static_cast<std::uint32_t>(bag.dim()), 0};
    write_container(h, bag.features, bag.patch_ids, path);
}

void write_scores(const ScoreVector& scores, std::span<const std::string> ids, const std::filesystem::path& path) {
    ContainerHeader h{kVersion, RecordKind::Scores, static_cast<std::uint32_t>(scores.size()), 1, 0};
    write_container(h, Matrix(scores.size(), 1, scores.values), ids, path);
}

ScoreVector read_scores_container(const std::filesystem::path& path, ScoreKind kind,
                                  std::span<const std::string> expected_ids) {
    auto c = read_container(path);
    if (c.header.kind != RecordKind::Scores)
        throw Error(ErrorCode::HeaderMismatch, path.string() + ": not a scores container");
    if (c.ids.size() != expected_ids.size())
        throw Error(ErrorCode::LengthMismatch, path.string() + ": score count does not match the bag");
    std::unordered_map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < c.ids.size(); ++i) {
        if (!position.emplace(c.ids[i], i).second)
            throw Error(ErrorCode::DuplicateRow, path.string() + ": patch id '" + c.ids[i] + "' repeated");
    }
    ScoreVector out{kind, std::vector<double>(expected_ids.size())};
    for (std::size_t i = 0; i < expected_ids.size(); ++i) {
        auto it = position.find(expected_ids[i]);
        if (it == position.end())
            throw Error(ErrorCode::MissingPatchId, path.string() + ": no score for '" + expected_ids[i] + "'");
        out.values[i] = c.matrix(it->second, 0);
    }
    validate_scores(out, expected_ids.size());
    return out;
}

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace

ScoreVector read_scores_csv(const std::filesystem::path& path, std::span<const std::string> expected_ids,
                            ScoreKind kind) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "patch_id,score")
        throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header 'patch_id,score'");

    std::unordered_map<std::string, double> by_id;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw Error(ErrorCode::MalformedCsv, path.string() + ":" + std::to_string(line_no) + ": need two fields");
        const std::string id = trim(line.substr(0, comma));
        const std::string field = trim(line.substr(comma + 1));
        double value = 0.0;
        try {
            std::size_t used = 0;
            value = std::stod(field, &used);
            if (used != field.size()) throw std::invalid_argument(field);
        } catch (const std::exception&) {
            throw Error(ErrorCode::MalformedCsv, path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                                                     field + "'");
        }
        if (!std::isfinite(value))
            throw Error(ErrorCode::NonFiniteValue, path.string() + ": score for '" + id + "'");
        if (value < 0.0 || value > 1.0) {
            throw Error(ErrorCode::OutOfRangeScore, path.string() + ": score " + field + " for '" + id +
                                                        "' is outside [0, 1]");
        }
        if (!by_id.emplace(id, value).second)
            throw Error(ErrorCode::DuplicateRow, path.string() + ": patch id '" + id + "' repeated");
    }

    ScoreVector out{kind, {}};
    out.values.reserve(expected_ids.size());
    for (const auto& id : expected_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error(ErrorCode::MissingPatchId, path.string() + ": no score for '" + id + "'");
        out.values.push_back(it->second);
    }
    return out;
}

ScoreVector read_scores(const std::filesystem::path& path, ScoreKind kind, std::span<const std::string> expected_ids) {
    if (path.extension() == ".csv") return read_scores_csv(path, expected_ids, kind);
    return read_scores_container(path, kind, expected_ids);
}

} // namespace hgpmil::io
