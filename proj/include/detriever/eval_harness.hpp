#pragma once

// Desk-scale evaluation: proxy-alignment metrics for trained retrievers,
// per-layer retrieval sweeps over raw hidden states, a planted-cluster
// synthetic data generator, and hyperparameter sweep drivers.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "detriever/detail/random.hpp"
#include "detriever/errors.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"
#include "detriever/proxy_labeler.hpp"
#include "detriever/retrieval_index.hpp"
#include "detriever/retriever_model.hpp"
#include "detriever/trainer.hpp"

namespace detriever {

// Example id -> planted cluster.
using ClusterMap = std::map<std::string, std::size_t>;

struct SyntheticSpec {
    std::size_t clusters = 5;
    std::size_t train_per_cluster = 40;
    std::size_t dev_queries = 200;
    std::size_t dim = 32;
    std::vector<std::uint16_t> layer_ids = {0, 5, 10, 15, 20};
    std::uint16_t informative_layer = 10;
    double snr = 10.0;
    // Scale of the pure-noise layers relative to the informative one.
    double distractor_scale = 3.0;
    std::size_t schemas = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (clusters < 2) throw ConfigError("synthetic data needs at least 2 clusters");
        if (!(snr > 0.0)) throw ConfigError("snr must be positive");
        if (dim == 0 || train_per_cluster == 0 || schemas == 0) throw ConfigError("synthetic sizes must be positive");
        if (layer_ids.empty()) throw ConfigError("synthetic data needs at least one layer");
        if (std::find(layer_ids.begin(), layer_ids.end(), informative_layer) == layer_ids.end()) {
            throw ConfigError("informative layer " + std::to_string(informative_layer) + " is not a kept layer");
        }
        for (std::size_t i = 1; i < layer_ids.size(); ++i) {
            if (layer_ids[i] <= layer_ids[i - 1]) throw ConfigError("layer ids must be strictly increasing");
        }
    }
};

struct SyntheticData {
    HiddenStateContainer train;
    HiddenStateContainer dev;
    ClusterMap clusters;
};

// Each example belongs to cluster (index mod K). Its informative-layer states
// are center + noise/snr with a unit-norm center and noise of expected unit
// norm; other layers hold noise scaled by distractor_scale. Target states at
// every layer are a separate per-cluster center plus noise/snr (query-only
// targets use twice the noise).
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    detail::Rng rng(detail::derive_seed(spec.seed, "synth"));
    const std::size_t D = spec.dim;
    const std::size_t L = spec.layer_ids.size();
    const double noise_sd = 1.0 / std::sqrt(static_cast<double>(D));

    auto unit_vector = [&]() {
        std::vector<double> v(D);
        double n2 = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
        for (auto& x : v) x /= std::sqrt(n2);
        return v;
    };
    std::vector<std::vector<double>> centers, target_centers;
    for (std::size_t k = 0; k < spec.clusters; ++k) centers.push_back(unit_vector());
    for (std::size_t k = 0; k < spec.clusters; ++k) target_centers.push_back(unit_vector());

    const double inv_snr = std::isinf(spec.snr) ? 0.0 : 1.0 / spec.snr;
    auto noisy = [&](const std::vector<double>& center, double noise_scale, std::vector<float>& out) {
        for (std::size_t d = 0; d < D; ++d) {
            out.push_back(static_cast<float>(center[d] + noise_scale * noise_sd * rng.normal()));
        }
    };
    const std::vector<double> zero(D, 0.0);

    ContainerHeader h;
    h.dim = static_cast<std::uint32_t>(D);
    h.layer_ids = spec.layer_ids;
    h.num_layers = static_cast<std::uint32_t>(L);
    h.pooling_mask = kPoolingAll;
    h.target_mask = kTargetAll;

    SyntheticData out;
    auto make = [&](std::size_t count, const char* prefix, Split split) {
        std::vector<ExampleRecord> records;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t k = i % spec.clusters;
            ExampleRecord r;
            char id[48];
            std::snprintf(id, sizeof id, "%s-%05zu", prefix, i);
            r.id = id;
            r.schema_id = "db" + std::to_string((i / spec.clusters) % spec.schemas);
            r.split = split;
            for (Pooling p : {Pooling::mean, Pooling::eos}) {
                auto& t = r.problem.at(p);
                for (std::size_t l = 0; l < L; ++l) {
                    if (spec.layer_ids[l] == spec.informative_layer) {
                        noisy(centers[k], inv_snr, t);
                    } else {
                        noisy(zero, spec.distractor_scale, t);
                    }
                }
                for (std::size_t l = 0; l < L; ++l) noisy(target_centers[k], inv_snr, r.target.at(p));
                for (std::size_t l = 0; l < L; ++l) noisy(target_centers[k], 2.0 * inv_snr, r.target_query_only.at(p));
            }
            out.clusters.emplace(r.id, k);
            records.push_back(std::move(r));
        }
        return HiddenStateContainer(h, std::move(records));
    };
    out.train = make(spec.clusters * spec.train_per_cluster, "train", Split::train);
    out.dev = make(spec.dev_queries, "dev", Split::dev);
    return out;
}

struct EvalMetrics {
    std::optional<std::uint16_t> layer;  // set for layer-sweep rows
    std::size_t queries = 0;
    std::size_t k = 1;
    FilterMode filter = FilterMode::ood;
    double mean_proxy_top1 = 0.0;
    double recall_at_k = 0.0;
    std::optional<double> cluster_recall_at_1;

    bool operator==(const EvalMetrics&) const = default;
};

struct EvalOptions {
    ProxyConfig proxy;
    std::size_t k = 1;
    FilterMode filter = FilterMode::ood;
    Similarity similarity = Similarity::cosine;
    const ClusterMap* clusters = nullptr;
};

namespace detail {

// Scores candidate rows against dev rows and aggregates proxy alignment.
inline EvalMetrics evaluate_rows(const RetrievalIndex& index, const EmbeddingMatrix& queries,
                                 const HiddenStateContainer& train, const HiddenStateContainer& dev,
                                 const EvalOptions& opt) {
    if (!train.header().compatible_with(dev.header())) {
        throw CompatibilityError("train and dev containers disagree on layers, dims or modes");
    }
    ProxyTargets train_t(train.header(), train.records(), opt.proxy);
    ProxyTargets dev_t(dev.header(), dev.records(), opt.proxy);
    EvalMetrics m;
    m.queries = dev.size();
    m.k = opt.k;
    m.filter = opt.filter;
    std::size_t recalled = 0, cluster_hits = 0;
    double proxy_sum = 0.0;
    const auto& recs = dev.records();
    for (std::size_t q = 0; q < recs.size(); ++q) {
        const auto filter = RetrievalFilter::for_mode(opt.filter, recs[q].schema_id, recs[q].id);
        auto res = retrieve(index, queries.row(q), opt.k, filter, recs[q].id);

        // Proxy oracle over the same admitted candidates.
        std::optional<ScoredId> best;
        for (std::size_t c = 0; c < train.size(); ++c) {
            const auto& cand = train.records()[c];
            if (!filter.admits(cand.id, cand.schema_id)) continue;
            ScoredId s{cand.id, dot(dev_t.row(q), train_t.row(c))};
            if (!best || ranks_before(s, *best)) best = std::move(s);
        }
        for (const auto& hit : res.hits) {
            if (hit.id == best->id) {
                ++recalled;
                break;
            }
        }
        const auto top = *train.index_of(res.hits.front().id);
        proxy_sum += dot(dev_t.row(q), train_t.row(top));
        if (opt.clusters) {
            auto qc = opt.clusters->find(recs[q].id);
            auto rc = opt.clusters->find(res.hits.front().id);
            if (qc == opt.clusters->end() || rc == opt.clusters->end()) {
                throw DataError("cluster map lacks query '" + recs[q].id + "' or its retrieved example");
            }
            if (qc->second == rc->second) ++cluster_hits;
        }
    }
    const double n = static_cast<double>(recs.size());
    m.mean_proxy_top1 = proxy_sum / n;
    m.recall_at_k = static_cast<double>(recalled) / n;
    if (opt.clusters) m.cluster_recall_at_1 = static_cast<double>(cluster_hits) / n;
    return m;
}

} // namespace detail

inline EvalMetrics evaluate_retriever(const RetrieverModel& model, const HiddenStateContainer& train,
                                      const HiddenStateContainer& dev, const EvalOptions& opt) {
    if (dev.size() == 0) throw ValidationError("dev container is empty");
    if (!dev.header().has_targets()) throw ValidationError("dev container has no target states for the proxy oracle");
    auto index = build_index(model, train, opt.similarity);
    check_compatible(model, dev.header());
    auto queries = embed_batch(model, dev.records());
    return detail::evaluate_rows(index, queries, train, dev, opt);
}

// Retrieval with the raw pooled states of each kept layer (no learned
// transform), one row per layer.
inline std::vector<EvalMetrics> layer_sweep(const HiddenStateContainer& train, const HiddenStateContainer& dev,
                                            Pooling pooling, const EvalOptions& opt) {
    const auto& h = train.header();
    if (!h.compatible_with(dev.header())) {
        throw CompatibilityError("train and dev containers disagree on layers, dims or modes");
    }
    if (!h.has_pooling(pooling)) throw ValidationError("containers lack " + std::string(to_string(pooling)) + " states");
    auto layer_matrix = [&](const HiddenStateContainer& c, std::size_t layer) {
        EmbeddingMatrix m{c.size(), h.dim, {}};
        m.data.reserve(m.rows * m.cols);
        for (const auto& r : c.records()) {
            auto row = layer_row(r.problem.at(pooling), layer, h.dim);
            m.data.insert(m.data.end(), row.begin(), row.end());
        }
        return m;
    };
    std::vector<EvalMetrics> table;
    for (std::size_t l = 0; l < h.layer_ids.size(); ++l) {
        std::vector<std::string> ids, schemas;
        for (const auto& r : train.records()) {
            ids.push_back(r.id);
            schemas.push_back(r.schema_id);
        }
        auto index = make_index(layer_matrix(train, l), std::move(ids), std::move(schemas), opt.similarity);
        auto m = detail::evaluate_rows(index, layer_matrix(dev, l), train, dev, opt);
        m.layer = h.layer_ids[l];
        table.push_back(m);
    }
    return table;
}

// Layer with the highest cluster-recall@1 (mean proxy score when no cluster
// map was used); earliest layer wins ties.
inline std::uint16_t best_layer(std::span<const EvalMetrics> table) {
    if (table.empty()) throw ValidationError("empty layer table");
    auto key = [](const EvalMetrics& m) { return m.cluster_recall_at_1 ? *m.cluster_recall_at_1 : m.mean_proxy_top1; };
    const EvalMetrics* best = &table.front();
    for (const auto& m : table) {
        if (key(m) > key(*best)) best = &m;
    }
    return best->layer.value_or(0);
}

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Tab-separated table, one row per metrics entry.
inline std::string metrics_tsv(std::span<const EvalMetrics> rows) {
    std::string out = "layer\tqueries\tk\tfilter\tmean_proxy_top1\trecall_at_k\tcluster_recall_at_1\n";
    for (const auto& m : rows) {
        out += (m.layer ? std::to_string(*m.layer) : std::string("all")) + '\t' + std::to_string(m.queries) + '\t' +
               std::to_string(m.k) + '\t' + std::string(to_string(m.filter)) + '\t' + format_metric(m.mean_proxy_top1) +
               '\t' + format_metric(m.recall_at_k) + '\t' +
               (m.cluster_recall_at_1 ? format_metric(*m.cluster_recall_at_1) : std::string("NA")) + '\n';
    }
    return out;
}

inline nlohmann::ordered_json metrics_json(const EvalMetrics& m) {
    nlohmann::ordered_json j;
    if (m.layer) j["layer"] = *m.layer;
    j["queries"] = m.queries;
    j["k"] = m.k;
    j["filter"] = std::string(to_string(m.filter));
    j["mean_proxy_top1"] = m.mean_proxy_top1;
    j["recall_at_k"] = m.recall_at_k;
    j["cluster_recall_at_1"] = m.cluster_recall_at_1 ? nlohmann::ordered_json(*m.cluster_recall_at_1) : nullptr;
    return j;
}

enum class SweepParameter { n_pos, batch_size, target_mode };

inline SweepParameter parse_sweep_parameter(std::string_view s) {
    if (s == "n_pos") return SweepParameter::n_pos;
    if (s == "batch_size") return SweepParameter::batch_size;
    if (s == "target_mode") return SweepParameter::target_mode;
    throw ConfigError("unknown sweep parameter '" + std::string(s) + "' (expected n_pos|batch_size|target_mode)");
}

inline std::string_view to_string(SweepParameter p) {
    switch (p) {
        case SweepParameter::n_pos: return "n_pos";
        case SweepParameter::batch_size: return "batch_size";
        case SweepParameter::target_mode: return "target_mode";
    }
    return "?";
}

struct SweepBase {
    ModelConfig model;
    ProxyConfig proxy;
    TrainConfig train;
    EvalOptions eval;
};

struct SweepRow {
    std::string value;
    EvalMetrics metrics;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t records_embedded = 0;
    double runtime_seconds = 0.0;
};

// Applies `value` of `param` to a copy of the base configuration.
inline SweepBase apply_sweep_value(SweepBase base, SweepParameter param, const std::string& value) {
    auto as_count = [&]() -> std::size_t {
        try {
            std::size_t used = 0;
            auto v = std::stoull(value, &used);
            if (used != value.size() || v == 0) throw std::invalid_argument(value);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("sweep value '" + value + "' is not a positive integer");
        }
    };
    switch (param) {
        case SweepParameter::n_pos: base.proxy.n_pos = as_count(); break;
        case SweepParameter::batch_size: base.train.batch_size = as_count(); break;
        case SweepParameter::target_mode: base.proxy.target_mode = parse_target_kind(value); break;
    }
    return base;
}

// One label + train + evaluate run per value, otherwise identically seeded.
// The evaluation oracle uses the base proxy config for every row, so rows are
// comparable when the labeling target varies.
inline std::vector<SweepRow> sweep_driver(SweepParameter param, std::span<const std::string> values,
                                          const SweepBase& base, const HiddenStateContainer& train,
                                          const HiddenStateContainer& dev) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<SweepRow> rows;
    for (const auto& value : values) {
        auto cfg = apply_sweep_value(base, param, value);
        cfg.train.checkpoint_dir.clear();
        const auto start = std::chrono::steady_clock::now();
        auto labels = build_label_set(train, cfg.proxy);
        auto report = train_loop(init_model(cfg.model), train, labels, cfg.train);
        SweepRow row;
        row.value = value;
        row.metrics = evaluate_retriever(report.model, train, dev, base.eval);
        row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        row.initial_loss = report.losses.front();
        row.final_loss = report.losses.back();
        row.records_embedded = report.records_embedded;
        rows.push_back(std::move(row));
    }
    return rows;
}

// Deterministic columns only; runtime is reported separately.
inline std::string sweep_tsv(SweepParameter param, std::span<const SweepRow> rows, bool with_runtime = false) {
    std::string out = std::string(to_string(param)) +
                      "\tqueries\tk\tfilter\tmean_proxy_top1\trecall_at_k\tcluster_recall_at_1\tinitial_loss\tfinal_loss"
                      "\trecords_embedded" +
                      (with_runtime ? "\truntime_s" : "") + "\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out += r.value + '\t' + std::to_string(m.queries) + '\t' + std::to_string(m.k) + '\t' +
               std::string(to_string(m.filter)) + '\t' + format_metric(m.mean_proxy_top1) + '\t' +
               format_metric(m.recall_at_k) + '\t' +
               (m.cluster_recall_at_1 ? format_metric(*m.cluster_recall_at_1) : std::string("NA")) + '\t' +
               format_metric(r.initial_loss) + '\t' + format_metric(r.final_loss) + '\t' +
               std::to_string(r.records_embedded) + (with_runtime ? '\t' + format_metric(r.runtime_seconds) : "") +
               '\n';
    }
    return out;
}

} // namespace detriever
