#pragma once
// Disk ingestion: interaction logs (TSV/CSV), embedding tables (PARE binary or
// CSV), and mean-pooling of chunk-level embeddings to track level.
//
// PARE file layout (little-endian):
//   magic "PARE" | version u8 = 1 | n_items u32 | dim u32
//   n_items ID records: byte length u16 + UTF-8 item ID
//   n_items * dim float32, row-major

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pare/binio.hpp"
#include "pare/core.hpp"

namespace pare {

enum class LogFormat { Auto, Tsv, Csv };

struct LoadLogResult {
    InteractionLog log;
    std::size_t total_rows = 0;
    std::size_t skipped_rows = 0;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
}

// Integer seconds; sub-second precision in the source is truncated.
inline bool parse_timestamp(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && ptr == s.data() + s.size()) {
        out = v;
        return v >= 0;
    }
    char* end = nullptr;
    double d = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(d) || d < 0) return false;
    out = static_cast<std::int64_t>(d);
    return true;
}

}  // namespace detail

// Parse and canonicalize an interaction log. Malformed rows are skipped with a
// warning; more than 10% skipped is fatal.
inline LoadLogResult load_interactions(const std::string& path, LogFormat format = LogFormat::Auto) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interactions file: " + path);

    char delim;
    switch (format) {
        case LogFormat::Tsv: delim = '\t'; break;
        case LogFormat::Csv: delim = ','; break;
        default:
            delim = std::filesystem::path(path).extension() == ".csv" ? ',' : '\t';
            break;
    }

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file, expected header row");
    detail::strip_cr(line);
    auto header = detail::split_fields(line, delim);
    if (header.size() != 3 || header[0] != "user_id" || header[1] != "item_id" ||
        header[2] != "timestamp") {
        throw std::runtime_error(path + ": bad header, expected user_id" + delim + "item_id" + delim +
                                 "timestamp");
    }

    LoadLogResult res;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        detail::strip_cr(line);
        if (line.empty()) continue;
        ++res.total_rows;
        auto fields = detail::split_fields(line, delim);
        std::int64_t ts;
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
            !detail::parse_timestamp(fields[2], ts)) {
            ++res.skipped_rows;
            if (res.warnings.size() < 20)
                res.warnings.push_back(path + ":" + std::to_string(line_no) + ": malformed row skipped");
            continue;
        }
        res.log.events.push_back({std::move(fields[0]), std::move(fields[1]), ts});
    }

    if (res.total_rows > 0 &&
        static_cast<double>(res.skipped_rows) > 0.10 * static_cast<double>(res.total_rows)) {
        throw std::runtime_error(path + ": " + std::to_string(res.skipped_rows) + " of " +
                                 std::to_string(res.total_rows) + " rows malformed (>10%)");
    }
    res.log.canonicalize();
    return res;
}

inline constexpr char kPareMagic[4] = {'P', 'A', 'R', 'E'};
inline constexpr std::uint8_t kPareVersion = 1;

inline void save_embeddings_pare(const EmbeddingTable& table, const std::string& path) {
    binio::Writer w(path);
    w.write_bytes(kPareMagic, 4);
    w.write_u8(kPareVersion);
    w.write_u32(static_cast<std::uint32_t>(table.n_items()));
    w.write_u32(table.dim);
    for (std::uint32_t i = 0; i < table.n_items(); ++i) {
        const std::string& id = table.ids.name(i);
        if (id.size() > 0xffff) throw std::runtime_error("item ID longer than 65535 bytes: " + id);
        w.write_u16(static_cast<std::uint16_t>(id.size()));
        w.write_string(id);
    }
    w.write_f32(table.matrix.data.data(), table.matrix.size());
    w.finish();
}

inline EmbeddingTable load_embeddings_pare(const std::string& path) {
    binio::Reader r(path);
    char magic[4];
    r.read_bytes(magic, 4, "magic");
    if (std::memcmp(magic, kPareMagic, 4) != 0)
        throw std::runtime_error(path + ": bad magic at byte offset 0, not a PARE file");
    std::uint8_t version = r.read_u8("version");
    if (version != kPareVersion)
        throw std::runtime_error(path + ": unsupported PARE version " + std::to_string(version));
    std::uint32_t n_items = r.read_u32("n_items");
    std::uint32_t dim = r.read_u32("dim");
    if (dim == 0) throw std::runtime_error(path + ": dim must be positive");

    EmbeddingTable table;
    table.dim = dim;
    for (std::uint32_t i = 0; i < n_items; ++i) {
        std::uint16_t len = r.read_u16("ID length");
        std::string id = r.read_string(len, "item ID");
        if (table.ids.lookup(id))
            throw std::runtime_error(path + ": duplicate item ID '" + id + "' at record " +
                                     std::to_string(i));
        table.ids.add(id);
    }
    table.matrix = MatrixF(n_items, dim);
    r.read_f32(table.matrix.data.data(), table.matrix.size(), "embedding matrix");
    for (std::uint32_t i = 0; i < n_items; ++i) {
        for (std::uint32_t d = 0; d < dim; ++d) {
            if (!std::isfinite(table.matrix.at(i, d)))
                throw std::runtime_error(path + ": non-finite value in embedding row " +
                                         std::to_string(i) + " ('" + table.ids.name(i) + "')");
        }
    }
    return table;
}

// CSV embeddings: header `item_id,e0,...`, one row per item. Accepted for
// interoperability; PARE binary is the canonical format.
inline EmbeddingTable load_embeddings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embeddings file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    detail::strip_cr(line);
    auto header = detail::split_fields(line, ',');
    if (header.size() < 2 || header[0] != "item_id")
        throw std::runtime_error(path + ": expected header starting with item_id");
    const std::size_t dim = header.size() - 1;

    EmbeddingTable table;
    table.dim = static_cast<std::uint32_t>(dim);
    std::vector<float> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, ',');
        if (fields.size() != dim + 1)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(dim + 1) + " fields, got " +
                                     std::to_string(fields.size()));
        if (table.ids.lookup(fields[0]))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": duplicate item ID '" +
                                     fields[0] + "'");
        table.ids.add(fields[0]);
        for (std::size_t d = 0; d < dim; ++d) {
            char* end = nullptr;
            double v = std::strtod(fields[d + 1].c_str(), &end);
            if (end != fields[d + 1].c_str() + fields[d + 1].size() || !std::isfinite(v))
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": bad float in column " + std::to_string(d + 1));
            values.push_back(static_cast<float>(v));
        }
    }
    table.matrix = MatrixF(table.n_items(), table.dim);
    table.matrix.data = std::move(values);
    return table;
}

// Dispatch on content: PARE magic wins; a .pare extension without the magic is
// an error rather than a silent CSV fallback.
inline EmbeddingTable load_embeddings(const std::string& path) {
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw std::runtime_error("cannot open embeddings file: " + path);
        char magic[4] = {};
        probe.read(magic, 4);
        if (probe.gcount() == 4 && std::memcmp(magic, kPareMagic, 4) == 0)
            return load_embeddings_pare(path);
    }
    if (std::filesystem::path(path).extension() == ".pare") return load_embeddings_pare(path);
    return load_embeddings_csv(path);
}

// One track's chunk-level embeddings, one row per audio time-chunk.
struct ChunkEmbeddingSet {
    std::string item_id;
    MatrixF chunks;  // T x dim, T >= 1
};

// Track-level vector: arithmetic mean over chunks, 64-bit accumulation,
// emitted as float32.
inline std::vector<float> pool_chunks(const ChunkEmbeddingSet& set) {
    const std::size_t t = set.chunks.rows;
    const std::size_t dim = set.chunks.cols;
    if (t == 0) throw std::runtime_error("pool_chunks: empty chunk set for item '" + set.item_id + "'");
    std::vector<double> acc(dim, 0.0);
    for (std::size_t r = 0; r < t; ++r) {
        const float* row = set.chunks.row(r);
        for (std::size_t d = 0; d < dim; ++d) acc[d] += static_cast<double>(row[d]);
    }
    std::vector<float> out(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        double v = acc[d] / static_cast<double>(t);
        if (!std::isfinite(v))
            throw std::runtime_error("pool_chunks: non-finite mean for item '" + set.item_id + "'");
        out[d] = static_cast<float>(v);
    }
    return out;
}

// Chunk CSV -> pooled table. Input schema matches the embeddings CSV but with
// repeated item_id rows (one per chunk); output order is first appearance.
inline EmbeddingTable pool_chunk_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open chunk file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    detail::strip_cr(line);
    auto header = detail::split_fields(line, ',');
    if (header.size() < 2 || header[0] != "item_id")
        throw std::runtime_error(path + ": expected header starting with item_id");
    const std::size_t dim = header.size() - 1;

    std::vector<std::string> order;
    std::unordered_map<std::string, std::pair<std::vector<double>, std::size_t>> acc;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, ',');
        if (fields.size() != dim + 1)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(dim + 1) + " fields");
        auto it = acc.find(fields[0]);
        if (it == acc.end()) {
            order.push_back(fields[0]);
            it = acc.emplace(fields[0], std::make_pair(std::vector<double>(dim, 0.0), 0u)).first;
        }
        for (std::size_t d = 0; d < dim; ++d) {
            char* end = nullptr;
            double v = std::strtod(fields[d + 1].c_str(), &end);
            if (end != fields[d + 1].c_str() + fields[d + 1].size() || !std::isfinite(v))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad float");
            it->second.first[d] += v;
        }
        ++it->second.second;
    }
    if (order.empty()) throw std::runtime_error(path + ": no chunk rows");

    EmbeddingTable table;
    table.dim = static_cast<std::uint32_t>(dim);
    table.matrix = MatrixF(order.size(), dim);
    for (std::size_t i = 0; i < order.size(); ++i) {
        table.ids.add(order[i]);
        const auto& [sums, count] = acc.at(order[i]);
        for (std::size_t d = 0; d < dim; ++d)
            table.matrix.at(i, d) = static_cast<float>(sums[d] / static_cast<double>(count));
    }
    return table;
}

}  // namespace pare
