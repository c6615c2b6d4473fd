#pragma once

// Versioned binary container of per-layer pooled LLM hidden states.
//
// Layout (all integers and floats little-endian):
//
//   header
//     char[4]   magic "DTRV"
//     u32       version (1)
//     u64       record count N
//     u32       L (kept layers)
//     u32       D (hidden size)
//     u16[L]    kept layer ids, strictly increasing
//     u8        pooling mask (bit0 mean, bit1 eos)
//     u8        target mask  (bit0 problem+query, bit1 query-only; 0 = none)
//   N records, each
//     u32 + bytes   id (UTF-8)
//     u32 + bytes   schema_id (UTF-8)
//     u8            split (0 train, 1 dev, 2 test)
//     f32[L*D]      problem states, one block per present pooling (mean, eos)
//     f32[L*D]      target states, per present target kind (problem+query,
//                   query-only), each with one block per present pooling
//
// Tensors are row-major [layer][dim].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "detriever/detail/binary_io.hpp"
#include "detriever/errors.hpp"

namespace detriever {

enum class Split : std::uint8_t { train = 0, dev = 1, test = 2 };

enum class Pooling : std::uint8_t { mean = 1, eos = 2 };

enum class TargetKind : std::uint8_t { problem_plus_query = 1, query_only = 2 };

inline constexpr std::uint8_t kPoolingAll = 0x3;
inline constexpr std::uint8_t kTargetAll = 0x3;

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "?";
}

inline std::string_view to_string(Pooling p) { return p == Pooling::mean ? "mean" : "eos"; }

inline std::string_view to_string(TargetKind k) {
    return k == TargetKind::problem_plus_query ? "problem_plus_query" : "query_only";
}

inline Pooling parse_pooling(std::string_view s) {
    if (s == "mean") return Pooling::mean;
    if (s == "eos") return Pooling::eos;
    throw ConfigError("unknown pooling mode '" + std::string(s) + "' (expected mean|eos)");
}

inline TargetKind parse_target_kind(std::string_view s) {
    if (s == "problem_plus_query") return TargetKind::problem_plus_query;
    if (s == "query_only") return TargetKind::query_only;
    throw ConfigError("unknown target mode '" + std::string(s) +
                      "' (expected problem_plus_query|query_only)");
}

// Pooled [L][D] tensors for one sequence; an empty vector means the pooling
// mode is absent.
struct PooledStates {
    std::vector<float> mean;
    std::vector<float> eos;

    std::vector<float>& at(Pooling p) { return p == Pooling::mean ? mean : eos; }
    const std::vector<float>& at(Pooling p) const { return p == Pooling::mean ? mean : eos; }

    bool operator==(const PooledStates&) const = default;
};

struct ExampleRecord {
    std::string id;
    std::string schema_id;
    Split split = Split::train;
    PooledStates problem;
    PooledStates target;             // [x; y]
    PooledStates target_query_only;  // y alone

    PooledStates& target_states(TargetKind k) {
        return k == TargetKind::problem_plus_query ? target : target_query_only;
    }
    const PooledStates& target_states(TargetKind k) const {
        return k == TargetKind::problem_plus_query ? target : target_query_only;
    }

    bool operator==(const ExampleRecord&) const = default;
};

struct ContainerHeader {
    static constexpr char kMagic[4] = {'D', 'T', 'R', 'V'};
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::uint64_t record_count = 0;
    std::uint32_t num_layers = 0;
    std::uint32_t dim = 0;
    std::vector<std::uint16_t> layer_ids;
    std::uint8_t pooling_mask = kPoolingAll;
    std::uint8_t target_mask = 0;

    bool has_pooling(Pooling p) const { return pooling_mask & static_cast<std::uint8_t>(p); }
    bool has_target(TargetKind k) const { return target_mask & static_cast<std::uint8_t>(k); }
    bool has_targets() const { return target_mask != 0; }

    std::optional<std::size_t> layer_index(std::uint16_t layer_id) const {
        auto it = std::find(layer_ids.begin(), layer_ids.end(), layer_id);
        if (it == layer_ids.end()) return std::nullopt;
        return static_cast<std::size_t>(it - layer_ids.begin());
    }

    std::size_t tensor_size() const { return std::size_t{num_layers} * dim; }

    // Same layers, dims and modes; record_count is not compared.
    bool compatible_with(const ContainerHeader& o) const {
        return num_layers == o.num_layers && dim == o.dim && layer_ids == o.layer_ids &&
               pooling_mask == o.pooling_mask && target_mask == o.target_mask;
    }

    bool operator==(const ContainerHeader&) const = default;
};

// Row `layer` of a row-major [L][D] tensor.
inline std::span<const float> layer_row(const std::vector<float>& tensor, std::size_t layer,
                                        std::size_t dim) {
    return std::span<const float>(tensor).subspan(layer * dim, dim);
}

class HiddenStateContainer {
public:
    HiddenStateContainer() = default;
    HiddenStateContainer(ContainerHeader header, std::vector<ExampleRecord> records)
        : header_(std::move(header)), records_(std::move(records)) {
        header_.record_count = records_.size();
        header_.num_layers = static_cast<std::uint32_t>(header_.layer_ids.size());
        reindex();
    }

    const ContainerHeader& header() const noexcept { return header_; }
    const std::vector<ExampleRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

    const ExampleRecord* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &records_[it->second];
    }

    std::optional<std::size_t> index_of(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

private:
    void reindex() {
        by_id_.clear();
        for (std::size_t i = 0; i < records_.size(); ++i) by_id_.emplace(records_[i].id, i);
    }

    ContainerHeader header_;
    std::vector<ExampleRecord> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

namespace detail {

inline void check_tensor(const std::vector<float>& t, bool present, std::size_t expected,
                         const std::string& what, const std::string& id) {
    if (!present) {
        if (!t.empty()) throw FormatError("record '" + id + "': " + what + " present but not declared in header");
        return;
    }
    if (t.size() != expected) {
        throw FormatError("record '" + id + "': " + what + " has " + std::to_string(t.size()) +
                          " floats, expected " + std::to_string(expected));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw ValidationError("record '" + id + "': non-finite value in " + what + " at offset " +
                                  std::to_string(i));
        }
    }
}

template <typename Fn>
void for_each_tensor(const ContainerHeader& h, Fn&& fn) {
    for (Pooling p : {Pooling::mean, Pooling::eos}) {
        if (h.has_pooling(p)) fn([p](auto& r) -> auto& { return r.problem.at(p); }, "problem", p);
    }
    for (TargetKind k : {TargetKind::problem_plus_query, TargetKind::query_only}) {
        if (!h.has_target(k)) continue;
        for (Pooling p : {Pooling::mean, Pooling::eos}) {
            if (h.has_pooling(p)) {
                fn([k, p](auto& r) -> auto& { return r.target_states(k).at(p); },
                   k == TargetKind::problem_plus_query ? "target" : "target_query_only", p);
            }
        }
    }
}

} // namespace detail

// Throws FormatError on header/shape inconsistencies and ValidationError on
// duplicate or empty ids and non-finite values.
inline void validate(const ContainerHeader& h, std::span<const ExampleRecord> records) {
    if (h.version != ContainerHeader::kVersion) {
        throw UnsupportedFormatError("unsupported container version " + std::to_string(h.version));
    }
    if (h.layer_ids.empty() || h.num_layers != h.layer_ids.size()) {
        throw FormatError("layer list is empty or disagrees with layer count");
    }
    for (std::size_t i = 1; i < h.layer_ids.size(); ++i) {
        if (h.layer_ids[i] <= h.layer_ids[i - 1]) throw FormatError("kept layer ids must be strictly increasing");
    }
    if (h.dim == 0) throw FormatError("hidden dimension must be positive");
    if ((h.pooling_mask & kPoolingAll) == 0 || (h.pooling_mask & ~kPoolingAll) != 0) {
        throw FormatError("invalid pooling mask " + std::to_string(h.pooling_mask));
    }
    if ((h.target_mask & ~kTargetAll) != 0) {
        throw FormatError("invalid target mask " + std::to_string(h.target_mask));
    }
    std::unordered_set<std::string_view> seen;
    const std::size_t n = h.tensor_size();
    for (const auto& r : records) {
        if (r.id.empty()) throw ValidationError("record with empty id");
        if (!seen.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
        if (static_cast<std::uint8_t>(r.split) > 2) throw FormatError("record '" + r.id + "': bad split");
        for (Pooling p : {Pooling::mean, Pooling::eos}) {
            const std::string mode(to_string(p));
            detail::check_tensor(r.problem.at(p), h.has_pooling(p), n, "problem/" + mode, r.id);
            detail::check_tensor(r.target.at(p), h.has_pooling(p) && h.has_target(TargetKind::problem_plus_query), n,
                                 "target/" + mode, r.id);
            detail::check_tensor(r.target_query_only.at(p), h.has_pooling(p) && h.has_target(TargetKind::query_only),
                                 n, "target_query_only/" + mode, r.id);
        }
    }
}

inline void validate(const HiddenStateContainer& c) { validate(c.header(), c.records()); }

// Exact byte length of an encoded container.
inline std::uint64_t encoded_size(const ContainerHeader& h, std::span<const ExampleRecord> records) {
    std::uint64_t blocks = 0;
    detail::for_each_tensor(h, [&](auto&&, const char*, Pooling) { ++blocks; });
    std::uint64_t size = 4 + 4 + 8 + 4 + 4 + 2ull * h.layer_ids.size() + 1 + 1;
    for (const auto& r : records) {
        size += 4 + r.id.size() + 4 + r.schema_id.size() + 1 + blocks * h.tensor_size() * sizeof(float);
    }
    return size;
}

inline std::string encode_container(const HiddenStateContainer& c) {
    if (c.size() == 0) throw ValidationError("container has no records");
    validate(c);
    const auto& h = c.header();
    detail::ByteWriter w;
    w.put_bytes(std::string_view(ContainerHeader::kMagic, 4));
    w.put(h.version);
    w.put(static_cast<std::uint64_t>(c.size()));
    w.put(h.num_layers);
    w.put(h.dim);
    for (auto id : h.layer_ids) w.put(id);
    w.put(h.pooling_mask);
    w.put(h.target_mask);
    for (const auto& r : c.records()) {
        w.put_string(r.id);
        w.put_string(r.schema_id);
        w.put(static_cast<std::uint8_t>(r.split));
        detail::for_each_tensor(h, [&](auto&& get, const char*, Pooling) { w.put_floats(get(r)); });
    }
    return w.bytes();
}

inline HiddenStateContainer decode_container(std::string_view bytes, const std::string& source = "container") {
    detail::ByteReader rd(bytes, source);
    if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(ContainerHeader::kMagic, 4)) {
        throw UnsupportedFormatError(source + ": bad magic (expected DTRV)");
    }
    rd.get_bytes(4);
    ContainerHeader h;
    h.version = rd.get<std::uint32_t>();
    if (h.version != ContainerHeader::kVersion) {
        throw UnsupportedFormatError(source + ": unsupported version " + std::to_string(h.version));
    }
    h.record_count = rd.get<std::uint64_t>();
    h.num_layers = rd.get<std::uint32_t>();
    h.dim = rd.get<std::uint32_t>();
    // Guard the allocation below against garbage headers.
    if (std::uint64_t{h.num_layers} * 2 > rd.remaining()) throw CorruptionError(source + ": truncated header");
    h.layer_ids.resize(h.num_layers);
    for (auto& id : h.layer_ids) id = rd.get<std::uint16_t>();
    h.pooling_mask = rd.get<std::uint8_t>();
    h.target_mask = rd.get<std::uint8_t>();

    const std::size_t n = h.tensor_size();
    std::size_t blocks = 0;
    detail::for_each_tensor(h, [&](auto&&, const char*, Pooling) { ++blocks; });
    const std::uint64_t min_record = 9 + blocks * n * sizeof(float);
    if (min_record > 0 && h.record_count > rd.remaining() / min_record) {
        throw CorruptionError(source + ": truncated (header declares " + std::to_string(h.record_count) +
                              " records)");
    }

    std::vector<ExampleRecord> records(h.record_count);
    for (auto& r : records) {
        r.id = rd.get_string();
        r.schema_id = rd.get_string();
        r.split = static_cast<Split>(rd.get<std::uint8_t>());
        detail::for_each_tensor(h, [&](auto&& get, const char*, Pooling) {
            auto& t = get(r);
            t.resize(n);
            rd.get_floats(t);
        });
    }
    if (rd.remaining() != 0) {
        throw CorruptionError(source + ": " + std::to_string(rd.remaining()) + " trailing bytes");
    }
    validate(h, records);
    return HiddenStateContainer(std::move(h), std::move(records));
}

inline void write_container(const HiddenStateContainer& c, const std::string& path) {
    detail::write_file(path, encode_container(c));
}

inline HiddenStateContainer read_container(const std::string& path) {
    return decode_container(detail::read_file(path), path);
}

// Disjoint union of several containers, in argument order.
inline HiddenStateContainer merge_containers(std::span<const std::string> paths) {
    if (paths.empty()) throw ValidationError("merge requires at least one container");
    std::optional<ContainerHeader> header;
    std::vector<ExampleRecord> all;
    std::unordered_set<std::string> ids;
    for (const auto& p : paths) {
        auto c = read_container(p);
        if (!header) {
            header = c.header();
        } else if (!header->compatible_with(c.header())) {
            throw CompatibilityError("container '" + p + "' disagrees with '" + paths[0] +
                                     "' on layers, dims or modes");
        }
        for (const auto& r : c.records()) {
            if (!ids.insert(r.id).second) {
                throw ValidationError("duplicate id '" + r.id + "' across merged containers");
            }
            all.push_back(r);
        }
    }
    return HiddenStateContainer(std::move(*header), std::move(all));
}

} // namespace detriever
