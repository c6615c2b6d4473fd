#pragma once

// Multi-positive supervised contrastive training of the retriever.
//
// For an anchor a with positives Pos and pool P = Pos ∪ Neg:
//
//   loss(a) = − Σ_{i∈Pos} log( exp(s(a,i)/τ) / Σ_{j∈P} exp(s(a,j)/τ) )
//
// where s is the dot product of (optionally L2-normalized) embeddings. A batch
// loss is the mean of loss(a) over its anchors.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "detriever/detail/random.hpp"
#include "detriever/errors.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"
#include "detriever/proxy_labeler.hpp"
#include "detriever/retriever_model.hpp"

namespace detriever {

struct TrainConfig {
    double temperature = 0.07;
    std::size_t batch_size = 64;
    std::size_t total_steps = 10000;
    std::size_t checkpoint_every = 1000;
    bool normalize_embeddings = true;
    AdamWConfig optimizer;
    std::uint64_t seed = 0;
    std::string checkpoint_dir;  // empty: no checkpoints written

    void validate() const {
        if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
    }
};

template <typename T>
struct ContrastiveLoss {
    double loss = 0.0;
    std::vector<T> grad_anchor;
    std::vector<std::vector<T>> grad_positives;
    std::vector<std::vector<T>> grad_negatives;
};

template <typename T>
ContrastiveLoss<T> contrastive_loss(std::span<const T> anchor, std::span<const std::vector<T>> positives,
                                    std::span<const std::vector<T>> negatives, double temperature, bool normalize) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (positives.empty()) throw ValidationError("contrastive loss needs at least one positive");
    const std::size_t dim = anchor.size();
    const std::size_t n_pos = positives.size();
    const std::size_t pool = n_pos + negatives.size();
    auto member = [&](std::size_t j) -> std::span<const T> {
        const auto& v = j < n_pos ? positives[j] : negatives[j - n_pos];
        if (v.size() != dim) throw ShapeError("contrastive loss: embedding size mismatch");
        return v;
    };

    std::vector<Normalized<T>> unit(pool + 1);
    auto prepare = [&](std::span<const T> v) {
        if (normalize) return l2_normalize(v);
        return Normalized<T>{std::vector<T>(v.begin(), v.end()), 1.0, false};
    };
    unit[0] = prepare(anchor);
    for (std::size_t j = 0; j < pool; ++j) unit[j + 1] = prepare(member(j));

    std::vector<double> s(pool);
    for (std::size_t j = 0; j < pool; ++j) s[j] = dot<T, T>(unit[0].value, unit[j + 1].value) / temperature;
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    const double lse = mx + std::log(z);

    ContrastiveLoss<T> out;
    double pos_sum = 0.0;
    for (std::size_t i = 0; i < n_pos; ++i) pos_sum += s[i];
    out.loss = static_cast<double>(n_pos) * lse - pos_sum;

    // dL/ds_j = n_pos·softmax(s)_j − [j ∈ Pos]
    std::vector<double> g_s(pool);
    for (std::size_t j = 0; j < pool; ++j) {
        g_s[j] = static_cast<double>(n_pos) * std::exp(s[j] - lse) - (j < n_pos ? 1.0 : 0.0);
    }
    std::vector<double> g_anchor(dim, 0.0);
    std::vector<T> g_member(dim);
    auto finish = [&](const Normalized<T>& n, std::span<const T> g_unit) {
        if (normalize) return l2_normalize_backward(n, g_unit);
        return std::vector<T>(g_unit.begin(), g_unit.end());
    };
    for (std::size_t j = 0; j < pool; ++j) {
        const double c = g_s[j] / temperature;
        const auto& u = unit[j + 1].value;
        for (std::size_t e = 0; e < dim; ++e) {
            g_anchor[e] += c * static_cast<double>(u[e]);
            g_member[e] = static_cast<T>(c * static_cast<double>(unit[0].value[e]));
        }
        auto g = finish(unit[j + 1], g_member);
        (j < n_pos ? out.grad_positives : out.grad_negatives).push_back(std::move(g));
    }
    std::vector<T> g_anchor_t(g_anchor.begin(), g_anchor.end());
    out.grad_anchor = finish(unit[0], g_anchor_t);
    return out;
}

struct BatchWork {
    double loss = 0.0;               // mean over anchors
    std::size_t records_embedded = 0;
};

// Resolves an id to its row in the container or throws DataError.
inline std::size_t resolve_id(const HiddenStateContainer& c, const std::string& id) {
    auto idx = c.index_of(id);
    if (!idx) throw DataError("id '" + id + "' from the label set is not in the training container");
    return *idx;
}

// Mean batch loss and its gradient with respect to every model parameter,
// accumulated into `grads` (which must be zeroed by the caller). Each distinct
// record in the batch is embedded once; per-record gradients are applied in
// first-appearance order, so the result does not depend on scheduling.
template <typename T>
BatchWork batch_loss_and_gradient(const BasicRetrieverModel<T>& model, std::span<const AnchorLabels* const> batch,
                                  const HiddenStateContainer& container, const TrainConfig& cfg,
                                  BasicRetrieverModel<T>& grads) {
    if (batch.empty()) throw ValidationError("empty training batch");
    std::vector<std::size_t> order;                   // unique record rows
    std::unordered_map<std::size_t, std::size_t> slot;  // row -> position in order
    auto intern = [&](const std::string& id) {
        const auto row = resolve_id(container, id);
        auto [it, fresh] = slot.emplace(row, order.size());
        if (fresh) order.push_back(row);
        return it->second;
    };
    struct Members {
        std::size_t anchor;
        std::vector<std::size_t> pos, neg;
    };
    std::vector<Members> members;
    for (const auto* a : batch) {
        Members m{intern(a->id), {}, {}};
        for (const auto& p : a->positives) m.pos.push_back(intern(p.id));
        for (const auto& n : a->negatives) m.neg.push_back(intern(n.id));
        members.push_back(std::move(m));
    }

    const auto& records = container.records();
    std::vector<std::vector<T>> emb(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        emb[i] = embed_traced(model, model_input(model, records[order[i]])).embedding;
    }

    const std::size_t dim = model.config().embed_dim;
    std::vector<std::vector<double>> g_emb(order.size(), std::vector<double>(dim, 0.0));
    const double scale = 1.0 / static_cast<double>(batch.size());
    BatchWork work;
    work.records_embedded = order.size();
    std::vector<std::vector<T>> pos, neg;
    for (std::size_t b = 0; b < members.size(); ++b) {
        const auto& m = members[b];
        pos.clear();
        neg.clear();
        for (auto i : m.pos) pos.push_back(emb[i]);
        for (auto i : m.neg) neg.push_back(emb[i]);
        auto r = contrastive_loss<T>(emb[m.anchor], pos, neg, cfg.temperature, cfg.normalize_embeddings);
        if (!std::isfinite(r.loss)) {
            throw NumericError("non-finite loss for anchor '" + batch[b]->id + "' (loss=" + std::to_string(r.loss) +
                               ", temperature=" + std::to_string(cfg.temperature) + ")");
        }
        work.loss += r.loss * scale;
        auto add = [&](std::size_t i, const std::vector<T>& g) {
            for (std::size_t e = 0; e < dim; ++e) g_emb[i][e] += scale * static_cast<double>(g[e]);
        };
        add(m.anchor, r.grad_anchor);
        for (std::size_t k = 0; k < m.pos.size(); ++k) add(m.pos[k], r.grad_positives[k]);
        for (std::size_t k = 0; k < m.neg.size(); ++k) add(m.neg[k], r.grad_negatives[k]);
    }

    // Recompute the forward trace per record instead of holding every cache.
    std::vector<T> g(dim);
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::size_t e = 0; e < dim; ++e) g[e] = static_cast<T>(g_emb[i][e]);
        auto tr = embed_traced(model, model_input(model, records[order[i]]));
        embed_backward<T>(model, tr, g, grads);
    }
    return work;
}

struct StepResult {
    double loss = 0.0;
    std::size_t records_embedded = 0;
};

inline StepResult train_step(RetrieverModel& model, std::span<const AnchorLabels* const> batch,
                             const HiddenStateContainer& container, AdamW<float>& optimizer, const TrainConfig& cfg) {
    RetrieverModel grads(model.config());
    auto work = batch_loss_and_gradient<float>(model, batch, container, cfg, grads);
    auto params = model.parameter_blocks();
    std::vector<std::span<const float>> gblocks;
    for (auto b : std::as_const(grads).parameter_blocks()) gblocks.push_back(b);
    optimizer.step(std::span<const std::span<float>>(params), std::span<const std::span<const float>>(gblocks));
    return {work.loss, work.records_embedded};
}

struct TrainReport {
    std::vector<double> losses;  // one per step
    std::vector<std::pair<std::size_t, std::string>> checkpoints;
    std::vector<std::string> warnings;
    double wall_seconds = 0.0;
    std::size_t final_step = 0;
    std::size_t records_embedded = 0;
    RetrieverModel model;
};

inline std::string checkpoint_path(const std::string& dir, std::size_t step) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_%06zu.dtrm", step);
    return (std::filesystem::path(dir) / name).string();
}

// Runs cfg.total_steps optimizer steps over seeded, per-pass reshuffled
// batches of the label set's anchors. When cfg.checkpoint_dir is set, writes
// a checkpoint every cfg.checkpoint_every steps plus final.dtrm. `log`
// receives one "step=… loss=… elapsed=…" line per step.
inline TrainReport train_loop(RetrieverModel model, const HiddenStateContainer& container, const LabelSet& labels,
                              const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    check_compatible(model, container.header());
    if (labels.anchors.empty()) throw ValidationError("label set has no anchors");
    for (const auto& a : labels.anchors) {
        resolve_id(container, a.id);
        for (const auto& p : a.positives) resolve_id(container, p.id);
        for (const auto& n : a.negatives) resolve_id(container, n.id);
    }

    TrainReport report;
    std::size_t batch_size = cfg.batch_size;
    if (batch_size > labels.anchors.size()) {
        batch_size = labels.anchors.size();
        report.warnings.push_back("batch_size " + std::to_string(cfg.batch_size) + " exceeds " +
                                  std::to_string(labels.anchors.size()) + " anchors; using " +
                                  std::to_string(batch_size));
        if (log) *log << "warning: " << report.warnings.back() << '\n';
    }

    AdamW<float> optimizer(cfg.optimizer, model.parameter_count());
    detail::Rng shuffle_rng(detail::derive_seed(cfg.seed, "shuffle"));
    std::vector<const AnchorLabels*> order;
    for (const auto& a : labels.anchors) order.push_back(&a);
    std::size_t cursor = order.size();

    auto save = [&](std::size_t step, const std::string& path) {
        try {
            save_checkpoint(model, step, path);
        } catch (const IoError&) {
            if (log) log->flush();
            throw;
        }
        report.checkpoints.emplace_back(step, path);
    };
    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

    const auto start = std::chrono::steady_clock::now();
    std::vector<const AnchorLabels*> batch;
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        batch.clear();
        while (batch.size() < batch_size) {
            if (cursor == order.size()) {
                if (!batch.empty()) break;  // a pass ends with a short batch
                shuffle_rng.shuffle(std::span<const AnchorLabels*>(order));
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        auto r = train_step(model, batch, container, optimizer, cfg);
        report.losses.push_back(r.loss);
        report.records_embedded += r.records_embedded;
        report.final_step = step;
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (log) {
            char line[128];
            std::snprintf(line, sizeof line, "step=%zu loss=%.6f elapsed=%.3fs\n", step, r.loss, elapsed);
            *log << line;
        }
        if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save(step, checkpoint_path(cfg.checkpoint_dir, step));
        }
    }
    if (!cfg.checkpoint_dir.empty()) {
        save(report.final_step, (std::filesystem::path(cfg.checkpoint_dir) / "final.dtrm").string());
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.model = std::move(model);
    return report;
}

} // namespace detriever
