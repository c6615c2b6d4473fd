#pragma once

// Proxy benefit scores between examples, computed from target-sequence hidden
// states, and the per-anchor positive/negative assignment used for
// contrastive training.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "detriever/detail/binary_io.hpp"
#include "detriever/detail/random.hpp"
#include "detriever/errors.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"

namespace detriever {

enum class NegativeSampling : std::uint8_t { uniform = 0, hard = 1 };

inline std::string_view to_string(NegativeSampling n) { return n == NegativeSampling::uniform ? "uniform" : "hard"; }

inline NegativeSampling parse_negative_sampling(std::string_view s) {
    if (s == "uniform") return NegativeSampling::uniform;
    if (s == "hard") return NegativeSampling::hard;
    throw ConfigError("unknown negative sampling '" + std::string(s) + "' (expected uniform|hard)");
}

struct ProxyConfig {
    TargetKind target_mode = TargetKind::problem_plus_query;
    Pooling target_pooling = Pooling::eos;
    std::optional<std::uint16_t> target_layer;  // unset: middle kept layer
    Similarity similarity = Similarity::dot;
    std::size_t n_pos = 40;
    std::size_t n_neg = 100;
    NegativeSampling negative_sampling = NegativeSampling::uniform;
    bool allow_corpus_limited = false;
    std::uint64_t seed = 0;

    bool operator==(const ProxyConfig&) const = default;
};

inline std::uint16_t resolve_target_layer(const ProxyConfig& cfg, const ContainerHeader& h) {
    if (h.layer_ids.empty()) throw ConfigError("container has no layers");
    if (!cfg.target_layer) return h.layer_ids[h.layer_ids.size() / 2];
    if (!h.layer_index(*cfg.target_layer)) {
        throw ConfigError("target layer " + std::to_string(*cfg.target_layer) + " is not a kept layer");
    }
    return *cfg.target_layer;
}

struct ScoredId {
    std::string id;
    double score = 0.0;
    bool operator==(const ScoredId&) const = default;
};

// Descending score, ties by ascending id.
inline bool ranks_before(const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

// Extracts the proxy target vectors of `records` (cosine mode: normalized).
class ProxyTargets {
public:
    ProxyTargets(const ContainerHeader& h, std::span<const ExampleRecord> records, const ProxyConfig& cfg)
        : similarity_(cfg.similarity), dim_(h.dim) {
        if (!h.has_target(cfg.target_mode)) {
            throw ValidationError("container has no " + std::string(to_string(cfg.target_mode)) + " target states");
        }
        if (!h.has_pooling(cfg.target_pooling)) {
            throw ValidationError("container has no " + std::string(to_string(cfg.target_pooling)) + "-pooled states");
        }
        layer_ = *h.layer_index(resolve_target_layer(cfg, h));
        vectors_.reserve(records.size() * dim_);
        for (const auto& r : records) {
            const auto& t = r.target_states(cfg.target_mode).at(cfg.target_pooling);
            if (t.size() != h.tensor_size()) {
                throw ValidationError("record '" + r.id + "' is missing target states");
            }
            auto row = layer_row(t, layer_, dim_);
            if (similarity_ == Similarity::cosine) {
                auto n = l2_normalize(row);
                vectors_.insert(vectors_.end(), n.value.begin(), n.value.end());
            } else {
                vectors_.insert(vectors_.end(), row.begin(), row.end());
            }
        }
    }

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(vectors_).subspan(i * dim_, dim_);
    }
    double score(std::size_t a, std::size_t b) const { return dot(row(a), row(b)); }
    std::size_t size() const { return dim_ ? vectors_.size() / dim_ : 0; }

private:
    Similarity similarity_;
    std::size_t dim_;
    std::size_t layer_ = 0;
    std::vector<float> vectors_;
};

// Scores every candidate against the anchor and ranks them.
inline std::vector<ScoredId> compute_proxy_scores(const ExampleRecord& anchor, std::span<const ExampleRecord> candidates,
                                                  const ContainerHeader& header, const ProxyConfig& cfg) {
    ProxyTargets anchor_t(header, std::span<const ExampleRecord>(&anchor, 1), cfg);
    ProxyTargets cand_t(header, candidates, cfg);
    std::vector<ScoredId> out;
    out.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out.push_back({candidates[i].id, dot(anchor_t.row(0), cand_t.row(i))});
    }
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
}

struct AnchorLabels {
    std::string id;
    std::vector<ScoredId> positives;  // descending score
    std::vector<ScoredId> negatives;  // descending score
    bool operator==(const AnchorLabels&) const = default;
};

struct LabelSet {
    ProxyConfig config;  // target_layer always resolved
    bool corpus_limited = false;
    std::vector<AnchorLabels> anchors;

    const AnchorLabels* find(std::string_view id) const {
        for (const auto& a : anchors) {
            if (a.id == id) return &a;
        }
        return nullptr;
    }
    bool operator==(const LabelSet&) const = default;
};

inline LabelSet build_label_set(const HiddenStateContainer& corpus, ProxyConfig cfg) {
    if (cfg.n_pos < 1 || cfg.n_neg < 1) throw ConfigError("n_pos and n_neg must be at least 1");
    const std::size_t n = corpus.size();
    LabelSet out;
    if (n < cfg.n_pos + cfg.n_neg + 1) {
        if (!cfg.allow_corpus_limited || n < 2) {
            throw ValidationError("corpus of " + std::to_string(n) + " examples is too small for n_pos=" +
                                  std::to_string(cfg.n_pos) + " + n_neg=" + std::to_string(cfg.n_neg) +
                                  " plus the anchor");
        }
        out.corpus_limited = true;
    }
    cfg.target_layer = resolve_target_layer(cfg, corpus.header());
    out.config = cfg;
    const auto& records = corpus.records();
    ProxyTargets targets(corpus.header(), records, cfg);

    out.anchors.reserve(n);
    std::vector<ScoredId> ranked;
    for (std::size_t a = 0; a < n; ++a) {
        ranked.clear();
        for (std::size_t c = 0; c < n; ++c) {
            if (c != a) ranked.push_back({records[c].id, targets.score(a, c)});
        }
        std::sort(ranked.begin(), ranked.end(), ranks_before);

        AnchorLabels lab;
        lab.id = records[a].id;
        const std::size_t n_pos = std::min(cfg.n_pos, ranked.size());
        const std::size_t n_neg = std::min(cfg.n_neg, ranked.size() - n_pos);
        lab.positives.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n_pos));
        if (cfg.negative_sampling == NegativeSampling::hard) {
            lab.negatives.assign(ranked.begin() + static_cast<std::ptrdiff_t>(n_pos),
                                 ranked.begin() + static_cast<std::ptrdiff_t>(n_pos + n_neg));
        } else {
            detail::Rng rng(detail::derive_seed(cfg.seed, "negatives/" + lab.id));
            for (auto idx : rng.sample_without_replacement(ranked.size() - n_pos, n_neg)) {
                lab.negatives.push_back(ranked[n_pos + idx]);
            }
            std::sort(lab.negatives.begin(), lab.negatives.end(), ranks_before);
        }
        out.anchors.push_back(std::move(lab));
    }
    return out;
}

// Label file: JSON document
//   {"format": "detriever-labels", "version": 1, "config": {...}, "seed": u64,
//    "corpus_limited": bool,
//    "anchors": [{"id", "positives": [{"id", "score"}], "negatives": [...]}]}

inline nlohmann::ordered_json proxy_config_to_json(const ProxyConfig& c) {
    nlohmann::ordered_json j;
    j["target_mode"] = std::string(to_string(c.target_mode));
    j["target_pooling"] = std::string(to_string(c.target_pooling));
    if (c.target_layer) j["target_layer"] = *c.target_layer;
    j["similarity"] = std::string(to_string(c.similarity));
    j["n_pos"] = c.n_pos;
    j["n_neg"] = c.n_neg;
    j["negative_sampling"] = std::string(to_string(c.negative_sampling));
    j["allow_corpus_limited"] = c.allow_corpus_limited;
    return j;
}

inline std::string encode_label_set(const LabelSet& ls) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["format"] = "detriever-labels";
    j["version"] = 1;
    j["config"] = proxy_config_to_json(ls.config);
    j["seed"] = ls.config.seed;
    j["corpus_limited"] = ls.corpus_limited;
    auto scored = [](const std::vector<ScoredId>& v) {
        ordered_json arr = ordered_json::array();
        for (const auto& s : v) arr.push_back(ordered_json{{"id", s.id}, {"score", s.score}});
        return arr;
    };
    ordered_json anchors = ordered_json::array();
    for (const auto& a : ls.anchors) {
        anchors.push_back(ordered_json{{"id", a.id}, {"positives", scored(a.positives)}, {"negatives", scored(a.negatives)}});
    }
    j["anchors"] = std::move(anchors);
    return j.dump(1) + "\n";
}

namespace detail {

template <typename J>
const J& require_field(const J& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing field '" + key + "'");
    return *it;
}

template <typename J>
void reject_unknown(const J& obj, std::initializer_list<std::string_view> known, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ParseError(where + ": unknown field '" + it.key() + "'");
        }
    }
}

} // namespace detail

inline ProxyConfig proxy_config_from_json(const nlohmann::json& c, const std::string& where) {
    using detail::require_field;
    detail::reject_unknown(c, {"target_mode", "target_pooling", "target_layer", "similarity", "n_pos", "n_neg",
                               "negative_sampling", "allow_corpus_limited"},
                           where);
    ProxyConfig cfg;
    try {
        cfg.target_mode = parse_target_kind(require_field(c, "target_mode", where).get<std::string>());
        cfg.target_pooling = parse_pooling(require_field(c, "target_pooling", where).get<std::string>());
        if (c.contains("target_layer")) cfg.target_layer = c["target_layer"].get<std::uint16_t>();
        cfg.similarity = parse_similarity(require_field(c, "similarity", where).get<std::string>());
        cfg.n_pos = require_field(c, "n_pos", where).get<std::size_t>();
        cfg.n_neg = require_field(c, "n_neg", where).get<std::size_t>();
        cfg.negative_sampling =
            parse_negative_sampling(require_field(c, "negative_sampling", where).get<std::string>());
        cfg.allow_corpus_limited = require_field(c, "allow_corpus_limited", where).get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(where + ": " + e.what());
    }
    return cfg;
}

inline LabelSet decode_label_set(std::string_view text, const std::string& source = "labels") {
    using detail::require_field;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source + ": " + e.what());
    }
    detail::reject_unknown(j, {"format", "version", "config", "seed", "corpus_limited", "anchors"}, source);
    LabelSet ls;
    try {
        if (require_field(j, "format", source).get<std::string>() != "detriever-labels") {
            throw ParseError(source + ": not a label file");
        }
        if (require_field(j, "version", source).get<int>() != 1) throw ParseError(source + ": unsupported version");
        ls.config = proxy_config_from_json(require_field(j, "config", source), source + ".config");
        ls.config.seed = require_field(j, "seed", source).get<std::uint64_t>();
        ls.corpus_limited = require_field(j, "corpus_limited", source).get<bool>();
        const auto& anchors = require_field(j, "anchors", source);
        if (!anchors.is_array() || anchors.empty()) throw ParseError(source + ": anchors must be a nonempty array");
        auto scored = [&](const nlohmann::json& arr, const std::string& where) {
            if (!arr.is_array()) throw ParseError(where + ": expected an array");
            std::vector<ScoredId> out;
            for (const auto& s : arr) {
                detail::reject_unknown(s, {"id", "score"}, where);
                out.push_back({require_field(s, "id", where).get<std::string>(),
                               require_field(s, "score", where).get<double>()});
            }
            return out;
        };
        std::unordered_set<std::string> seen;
        for (const auto& a : anchors) {
            const std::string where = source + ".anchors[" + std::to_string(ls.anchors.size()) + "]";
            detail::reject_unknown(a, {"id", "positives", "negatives"}, where);
            AnchorLabels lab;
            lab.id = require_field(a, "id", where).get<std::string>();
            lab.positives = scored(require_field(a, "positives", where), where + ".positives");
            lab.negatives = scored(require_field(a, "negatives", where), where + ".negatives");
            if (!seen.insert(lab.id).second) throw ParseError(where + ": duplicate anchor '" + lab.id + "'");
            if (lab.positives.empty()) throw ParseError(where + ": no positives");
            if (!ls.corpus_limited &&
                (lab.positives.size() != ls.config.n_pos || lab.negatives.size() != ls.config.n_neg)) {
                throw ParseError(where + ": list sizes disagree with n_pos/n_neg");
            }
            std::unordered_set<std::string> ids;
            for (const auto* list : {&lab.positives, &lab.negatives}) {
                for (const auto& s : *list) {
                    if (s.id == lab.id) throw ParseError(where + ": anchor listed as its own example");
                    if (!ids.insert(s.id).second) throw ParseError(where + ": id '" + s.id + "' listed twice");
                }
            }
            ls.anchors.push_back(std::move(lab));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source + ": " + e.what());
    }
    return ls;
}

inline void write_label_set(const LabelSet& ls, const std::string& path) {
    detail::write_file(path, encode_label_set(ls));
}

inline LabelSet read_label_set(const std::string& path) { return decode_label_set(detail::read_file(path), path); }

} // namespace detriever
