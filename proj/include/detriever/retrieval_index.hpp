#pragma once

// Exact top-k demonstration retrieval over retriever embeddings.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "detriever/detail/binary_io.hpp"
#include "detriever/errors.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"
#include "detriever/proxy_labeler.hpp"
#include "detriever/retriever_model.hpp"

namespace detriever {

struct RetrievalIndex {
    static constexpr char kMagic[4] = {'D', 'T', 'R', 'I'};
    static constexpr std::uint32_t kVersion = 1;

    EmbeddingMatrix embeddings;  // cosine mode: rows are unit-norm (or zero)
    std::vector<std::string> ids;
    std::vector<std::string> schema_ids;
    Similarity similarity = Similarity::cosine;
    std::uint64_t model_digest = 0;

    std::size_t size() const noexcept { return ids.size(); }
    bool operator==(const RetrievalIndex&) const = default;
};

// Builds an index directly from precomputed rows.
inline RetrievalIndex make_index(EmbeddingMatrix rows, std::vector<std::string> ids, std::vector<std::string> schema_ids,
                                 Similarity similarity, std::uint64_t model_digest = 0) {
    if (ids.empty()) throw ValidationError("index needs at least one candidate");
    if (rows.rows != ids.size() || schema_ids.size() != ids.size() || rows.data.size() != rows.rows * rows.cols) {
        throw ShapeError("index rows, ids and schema ids disagree in length");
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) throw ValidationError("duplicate index id '" + id + "'");
    }
    if (!all_finite(std::span<const float>(rows.data))) throw ValidationError("non-finite index embedding");
    if (similarity == Similarity::cosine) {
        for (std::size_t i = 0; i < rows.rows; ++i) {
            auto n = l2_normalize(std::span<const float>(rows.row(i)));
            std::copy(n.value.begin(), n.value.end(), rows.row(i).begin());
        }
    }
    return RetrievalIndex{std::move(rows), std::move(ids), std::move(schema_ids), similarity, model_digest};
}

inline RetrievalIndex build_index(const RetrieverModel& model, const HiddenStateContainer& container,
                                  Similarity similarity = Similarity::cosine) {
    check_compatible(model, container.header());
    std::vector<std::string> ids, schemas;
    for (const auto& r : container.records()) {
        ids.push_back(r.id);
        schemas.push_back(r.schema_id);
    }
    return make_index(embed_batch(model, container.records()), std::move(ids), std::move(schemas), similarity,
                      model.config().digest());
}

enum class FilterMode : std::uint8_t { none = 0, ood = 1, in_domain = 2 };

inline std::string_view to_string(FilterMode f) {
    switch (f) {
        case FilterMode::none: return "none";
        case FilterMode::ood: return "ood";
        case FilterMode::in_domain: return "id";
    }
    return "?";
}

inline FilterMode parse_filter_mode(std::string_view s) {
    if (s == "none") return FilterMode::none;
    if (s == "ood") return FilterMode::ood;
    if (s == "id") return FilterMode::in_domain;
    throw ConfigError("unknown filter '" + std::string(s) + "' (expected none|ood|id)");
}

// Candidate restrictions; all present clauses must hold.
struct RetrievalFilter {
    std::vector<std::string> exclude_schemas;
    std::vector<std::string> only_schemas;  // empty: no restriction
    std::vector<std::string> exclude_ids;

    static RetrievalFilter none() { return {}; }
    static RetrievalFilter exclude_schema(std::string schema) { return {{std::move(schema)}, {}, {}}; }
    static RetrievalFilter only_schema(std::string schema) { return {{}, {std::move(schema)}, {}}; }
    static RetrievalFilter exclude_id(std::string id) { return {{}, {}, {std::move(id)}}; }

    // Out-of-domain: never the query's own schema.
    static RetrievalFilter ood(std::string query_schema) { return exclude_schema(std::move(query_schema)); }
    // In-domain: the query's schema only, minus the query itself.
    static RetrievalFilter in_domain(std::string query_schema, std::string query_id) {
        return {{}, {std::move(query_schema)}, {std::move(query_id)}};
    }
    static RetrievalFilter for_mode(FilterMode mode, const std::string& query_schema, const std::string& query_id) {
        switch (mode) {
            case FilterMode::ood: return ood(query_schema);
            case FilterMode::in_domain: return in_domain(query_schema, query_id);
            case FilterMode::none: break;
        }
        return none();
    }

    bool admits(const std::string& id, const std::string& schema) const {
        auto has = [](const std::vector<std::string>& v, const std::string& x) {
            return std::find(v.begin(), v.end(), x) != v.end();
        };
        if (has(exclude_ids, id) || has(exclude_schemas, schema)) return false;
        return only_schemas.empty() || has(only_schemas, schema);
    }

    std::string describe() const {
        std::string out;
        auto list = [&](const char* name, const std::vector<std::string>& v) {
            if (v.empty()) return;
            if (!out.empty()) out += ";";
            out += name;
            out += "(";
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
            out += ")";
        };
        list("exclude_schema", exclude_schemas);
        list("only_schema", only_schemas);
        list("exclude_id", exclude_ids);
        return out.empty() ? "none" : out;
    }
};

struct RetrievalResult {
    std::string query_id;
    std::string filter;
    std::vector<ScoredId> hits;  // non-increasing score, ties by ascending id
};

// Exhaustive top-k; returns fewer than k hits when fewer candidates pass the
// filter.
inline RetrievalResult retrieve(const RetrievalIndex& index, std::span<const float> query, std::size_t k,
                                const RetrievalFilter& filter = {}, std::string query_id = {}) {
    if (k < 1) throw ValidationError("k must be at least 1");
    if (query.size() != index.embeddings.cols) {
        throw ShapeError("query has " + std::to_string(query.size()) + " dims, index has " +
                         std::to_string(index.embeddings.cols));
    }
    if (!all_finite(query)) throw ValidationError("non-finite query embedding");
    std::vector<float> q(query.begin(), query.end());
    if (index.similarity == Similarity::cosine) {
        auto n = l2_normalize(query);
        q = std::move(n.value);
    }
    std::vector<ScoredId> cand;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (!filter.admits(index.ids[i], index.schema_ids[i])) continue;
        cand.push_back({index.ids[i], dot(std::span<const float>(q), index.embeddings.row(i))});
    }
    if (cand.empty()) {
        throw NoCandidatesError("no candidates left after filter " + filter.describe() +
                                (query_id.empty() ? "" : " for query '" + query_id + "'"));
    }
    const std::size_t take = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), ranks_before);
    cand.resize(take);
    return RetrievalResult{std::move(query_id), filter.describe(), std::move(cand)};
}

inline std::vector<RetrievalResult> retrieve_batch(const RetrievalIndex& index, const EmbeddingMatrix& queries,
                                                   std::size_t k, std::span<const RetrievalFilter> filters,
                                                   std::span<const std::string> query_ids = {}) {
    if (filters.size() != queries.rows) throw ShapeError("one filter per query is required");
    if (!query_ids.empty() && query_ids.size() != queries.rows) throw ShapeError("one id per query is required");
    std::vector<RetrievalResult> out;
    out.reserve(queries.rows);
    for (std::size_t i = 0; i < queries.rows; ++i) {
        out.push_back(retrieve(index, queries.row(i), k, filters[i], query_ids.empty() ? std::string{} : query_ids[i]));
    }
    return out;
}

// Index file "DTRI" v1:
//   char[4] magic, u32 version, u8 similarity, u64 model digest, u64 N,
//   u32 E, N × (u32+bytes id, u32+bytes schema_id), f32[N*E] rows.
inline std::string encode_index(const RetrievalIndex& idx) {
    detail::ByteWriter w;
    w.put_bytes(std::string_view(RetrievalIndex::kMagic, 4));
    w.put(RetrievalIndex::kVersion);
    w.put(static_cast<std::uint8_t>(idx.similarity));
    w.put(idx.model_digest);
    w.put(static_cast<std::uint64_t>(idx.size()));
    w.put(static_cast<std::uint32_t>(idx.embeddings.cols));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        w.put_string(idx.ids[i]);
        w.put_string(idx.schema_ids[i]);
    }
    w.put_floats(idx.embeddings.data);
    return w.bytes();
}

inline RetrievalIndex decode_index(std::string_view bytes, const std::string& source = "index") {
    if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(RetrievalIndex::kMagic, 4)) {
        throw UnsupportedFormatError(source + ": bad magic (expected DTRI)");
    }
    detail::ByteReader rd(bytes, source);
    rd.get_bytes(4);
    const auto version = rd.get<std::uint32_t>();
    if (version != RetrievalIndex::kVersion) {
        throw UnsupportedFormatError(source + ": unsupported index version " + std::to_string(version));
    }
    RetrievalIndex idx;
    const auto sim = rd.get<std::uint8_t>();
    if (sim > 1) throw CorruptionError(source + ": bad similarity byte");
    idx.similarity = static_cast<Similarity>(sim);
    idx.model_digest = rd.get<std::uint64_t>();
    const auto n = rd.get<std::uint64_t>();
    const auto cols = rd.get<std::uint32_t>();
    if (n > rd.remaining() / 8) throw CorruptionError(source + ": truncated (declares " + std::to_string(n) + " rows)");
    for (std::uint64_t i = 0; i < n; ++i) {
        idx.ids.push_back(rd.get_string());
        idx.schema_ids.push_back(rd.get_string());
    }
    idx.embeddings.rows = n;
    idx.embeddings.cols = cols;
    if (rd.remaining() != n * cols * sizeof(float)) {
        throw CorruptionError(source + ": embedding payload has " + std::to_string(rd.remaining()) +
                              " bytes, expected " + std::to_string(n * cols * sizeof(float)));
    }
    idx.embeddings.data.resize(n * cols);
    rd.get_floats(idx.embeddings.data);
    if (idx.ids.empty()) throw ValidationError(source + ": empty index");
    if (!all_finite(std::span<const float>(idx.embeddings.data))) throw ValidationError(source + ": non-finite row");
    std::unordered_set<std::string_view> seen;
    for (const auto& id : idx.ids) {
        if (!seen.insert(id).second) throw ValidationError(source + ": duplicate id '" + id + "'");
    }
    return idx;
}

inline void save_index(const RetrievalIndex& idx, const std::string& path) { detail::write_file(path, encode_index(idx)); }

inline RetrievalIndex load_index(const std::string& path) { return decode_index(detail::read_file(path), path); }

} // namespace detriever
