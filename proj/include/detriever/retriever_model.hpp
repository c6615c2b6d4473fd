#pragma once

// Retrieval embedding R(x) = Σ_ℓ softmax(z)_ℓ · MLP_ℓ(h_ℓ(x)) over the kept
// layers, plus the "DTRM" checkpoint format.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detriever/detail/binary_io.hpp"
#include "detriever/detail/random.hpp"
#include "detriever/errors.hpp"
#include "detriever/hsc_store.hpp"
#include "detriever/nn_core.hpp"

namespace detriever {

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 1024;
    std::size_t embed_dim = 512;
    std::vector<std::uint16_t> layer_ids;
    Pooling pooling = Pooling::eos;
    Activation activation = Activation::relu;
    std::uint64_t seed = 0;

    MlpDims mlp_dims() const { return {input_dim, hidden_dim, embed_dim}; }
    std::size_t num_layers() const { return layer_ids.size(); }

    // Identifies the architecture; the seed is deliberately not part of it.
    std::uint64_t digest() const {
        detail::Fnv1a h;
        h.update("DTRM-config");
        h.update_value(static_cast<std::uint64_t>(input_dim));
        h.update_value(static_cast<std::uint64_t>(hidden_dim));
        h.update_value(static_cast<std::uint64_t>(embed_dim));
        h.update_value(static_cast<std::uint64_t>(layer_ids.size()));
        for (auto id : layer_ids) h.update_value(id);
        h.update_value(static_cast<std::uint8_t>(pooling));
        h.update_value(static_cast<std::uint8_t>(activation));
        return h.digest();
    }

    bool operator==(const ModelConfig&) const = default;
};

// Every kept layer id from 0 to last_layer in steps of `stride`.
inline std::vector<std::uint16_t> strided_layers(std::uint16_t last_layer, std::uint16_t stride) {
    if (stride == 0) throw ConfigError("layer stride must be positive");
    std::vector<std::uint16_t> ids;
    for (std::uint32_t l = 0; l <= last_layer; l += stride) ids.push_back(static_cast<std::uint16_t>(l));
    return ids;
}

template <typename T>
class BasicRetrieverModel {
public:
    BasicRetrieverModel() = default;

    // Zero-valued model; also serves as the gradient accumulator shape.
    explicit BasicRetrieverModel(ModelConfig cfg)
        : cfg_(std::move(cfg)), mlps_(cfg_.num_layers(), MlpParams<T>(cfg_.mlp_dims())),
          logits_(cfg_.num_layers(), T(0)) {}

    const ModelConfig& config() const noexcept { return cfg_; }
    std::size_t num_layers() const noexcept { return mlps_.size(); }

    std::vector<MlpParams<T>>& mlps() noexcept { return mlps_; }
    const std::vector<MlpParams<T>>& mlps() const noexcept { return mlps_; }
    std::vector<T>& layer_logits() noexcept { return logits_; }
    const std::vector<T>& layer_logits() const noexcept { return logits_; }

    std::vector<T> layer_weights() const { return softmax<T>(logits_); }

    std::size_t parameter_count() const {
        return mlps_.size() * cfg_.mlp_dims().parameter_count() + logits_.size();
    }

    // MLP blocks in layer order followed by the logits.
    std::vector<std::span<T>> parameter_blocks() {
        std::vector<std::span<T>> out;
        for (auto& m : mlps_) out.push_back(m.flat());
        out.push_back(logits_);
        return out;
    }
    std::vector<std::span<const T>> parameter_blocks() const {
        std::vector<std::span<const T>> out;
        for (const auto& m : mlps_) out.push_back(m.flat());
        out.push_back(logits_);
        return out;
    }

    void set_zero() {
        for (auto& m : mlps_) m.set_zero();
        std::fill(logits_.begin(), logits_.end(), T(0));
    }

    bool operator==(const BasicRetrieverModel&) const = default;

private:
    ModelConfig cfg_;
    std::vector<MlpParams<T>> mlps_;
    std::vector<T> logits_;
};

using RetrieverModel = BasicRetrieverModel<float>;

template <typename T = float>
BasicRetrieverModel<T> init_model(const ModelConfig& cfg) {
    if (cfg.layer_ids.empty()) throw ConfigError("model needs at least one kept layer");
    if (cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.embed_dim == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    BasicRetrieverModel<T> model(cfg);
    detail::Rng rng(detail::derive_seed(cfg.seed, "init"));
    for (auto& m : model.mlps()) m = init_mlp<T>(cfg.mlp_dims(), rng);
    return model;
}

template <typename T>
void check_compatible(const BasicRetrieverModel<T>& model, const ContainerHeader& h) {
    const auto& c = model.config();
    if (h.layer_ids != c.layer_ids || h.dim != c.input_dim) {
        throw CompatibilityError("container (D=" + std::to_string(h.dim) + ", " + std::to_string(h.num_layers) +
                                 " layers) does not match model (D=" + std::to_string(c.input_dim) + ", " +
                                 std::to_string(c.num_layers()) + " layers)");
    }
    if (!h.has_pooling(c.pooling)) {
        throw ValidationError("container lacks " + std::string(to_string(c.pooling)) + "-pooled states");
    }
}

// Forward intermediates needed for backprop through one embedding.
template <typename T>
struct EmbedTrace {
    std::vector<T> embedding;
    std::vector<T> weights;
    std::vector<std::vector<T>> layer_outputs;
    std::vector<MlpCache<T>> caches;
};

// `states` is the record's [L][D] tensor for the model's pooling mode.
template <typename T, typename U>
EmbedTrace<T> embed_traced(const BasicRetrieverModel<T>& model, std::span<const U> states) {
    const auto& c = model.config();
    const std::size_t L = model.num_layers();
    if (states.size() != L * c.input_dim) {
        throw CompatibilityError("state tensor has " + std::to_string(states.size()) + " floats, model expects " +
                                 std::to_string(L) + "x" + std::to_string(c.input_dim));
    }
    EmbedTrace<T> tr;
    tr.weights = model.layer_weights();
    tr.embedding.assign(c.embed_dim, T(0));
    std::vector<double> acc(c.embed_dim, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        auto out = mlp_forward(model.mlps()[l], states.subspan(l * c.input_dim, c.input_dim), c.activation);
        for (std::size_t e = 0; e < c.embed_dim; ++e) {
            acc[e] += static_cast<double>(tr.weights[l]) * static_cast<double>(out.output[e]);
        }
        tr.layer_outputs.push_back(std::move(out.output));
        tr.caches.push_back(std::move(out.cache));
    }
    for (std::size_t e = 0; e < c.embed_dim; ++e) tr.embedding[e] = static_cast<T>(acc[e]);
    return tr;
}

// Accumulates dθ of grad_embedding·R(x) into `grads` (same config as model).
template <typename T>
void embed_backward(const BasicRetrieverModel<T>& model, const EmbedTrace<T>& tr, std::span<const T> grad_embedding,
                    BasicRetrieverModel<T>& grads) {
    const auto& c = model.config();
    const std::size_t L = model.num_layers();
    if (grad_embedding.size() != c.embed_dim) throw ShapeError("embedding gradient has wrong size");
    // dL/dw_ℓ = g·out_ℓ; softmax Jacobian gives dL/dz_ℓ = w_ℓ (dL/dw_ℓ − Σ_k w_k dL/dw_k).
    std::vector<double> g_w(L);
    double mean_g = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        g_w[l] = dot<T, T>(grad_embedding, tr.layer_outputs[l]);
        mean_g += static_cast<double>(tr.weights[l]) * g_w[l];
    }
    std::vector<T> g_out(c.embed_dim);
    for (std::size_t l = 0; l < L; ++l) {
        grads.layer_logits()[l] += static_cast<T>(static_cast<double>(tr.weights[l]) * (g_w[l] - mean_g));
        for (std::size_t e = 0; e < c.embed_dim; ++e) {
            g_out[e] = static_cast<T>(static_cast<double>(tr.weights[l]) * static_cast<double>(grad_embedding[e]));
        }
        mlp_backward_accumulate<T>(model.mlps()[l], tr.caches[l], g_out, grads.mlps()[l], {}, c.activation);
    }
}

template <typename T>
std::span<const float> model_input(const BasicRetrieverModel<T>& model, const ExampleRecord& record) {
    const auto& states = record.problem.at(model.config().pooling);
    if (states.empty()) {
        throw ValidationError("record '" + record.id + "' lacks " +
                              std::string(to_string(model.config().pooling)) + "-pooled problem states");
    }
    return states;
}

template <typename T>
std::vector<T> embed(const BasicRetrieverModel<T>& model, const ExampleRecord& record) {
    return embed_traced(model, model_input(model, record)).embedding;
}

// Row-major [N][E] embedding matrix.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    std::span<const float> row(std::size_t i) const { return std::span<const float>(data).subspan(i * cols, cols); }
    std::span<float> row(std::size_t i) { return std::span<float>(data).subspan(i * cols, cols); }
    bool operator==(const EmbeddingMatrix&) const = default;
};

inline EmbeddingMatrix embed_batch(const RetrieverModel& model, std::span<const ExampleRecord> records) {
    EmbeddingMatrix m{records.size(), model.config().embed_dim, {}};
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : records) {
        auto e = embed(model, r);
        m.data.insert(m.data.end(), e.begin(), e.end());
    }
    return m;
}

// Checkpoint "DTRM" v1:
//   char[4] magic, u32 version, u32 D, u32 H, u32 E, u32 L, u16[L] layer ids,
//   u8 pooling, u8 activation, u64 step, u64 config digest, u64 seed,
//   u64 parameter count, f32[...] parameters (MLPs in layer order, then logits).
struct Checkpoint {
    static constexpr char kMagic[4] = {'D', 'T', 'R', 'M'};
    static constexpr std::uint32_t kVersion = 1;

    RetrieverModel model;
    std::uint64_t step = 0;
};

inline std::string encode_checkpoint(const RetrieverModel& model, std::uint64_t step) {
    const auto& c = model.config();
    detail::ByteWriter w;
    w.put_bytes(std::string_view(Checkpoint::kMagic, 4));
    w.put(Checkpoint::kVersion);
    w.put(static_cast<std::uint32_t>(c.input_dim));
    w.put(static_cast<std::uint32_t>(c.hidden_dim));
    w.put(static_cast<std::uint32_t>(c.embed_dim));
    w.put(static_cast<std::uint32_t>(c.layer_ids.size()));
    for (auto id : c.layer_ids) w.put(id);
    w.put(static_cast<std::uint8_t>(c.pooling));
    w.put(static_cast<std::uint8_t>(c.activation));
    w.put(step);
    w.put(c.digest());
    w.put(c.seed);
    w.put(static_cast<std::uint64_t>(model.parameter_count()));
    for (auto block : model.parameter_blocks()) w.put_floats(block);
    return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
    if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(Checkpoint::kMagic, 4)) {
        throw UnsupportedFormatError(source + ": bad magic (expected DTRM)");
    }
    detail::ByteReader rd(bytes, source);
    rd.get_bytes(4);
    const auto version = rd.get<std::uint32_t>();
    if (version != Checkpoint::kVersion) {
        throw UnsupportedFormatError(source + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.input_dim = rd.get<std::uint32_t>();
    cfg.hidden_dim = rd.get<std::uint32_t>();
    cfg.embed_dim = rd.get<std::uint32_t>();
    const auto L = rd.get<std::uint32_t>();
    if (std::uint64_t{L} * 2 > rd.remaining()) throw CorruptionError(source + ": truncated header");
    cfg.layer_ids.resize(L);
    for (auto& id : cfg.layer_ids) id = rd.get<std::uint16_t>();
    const auto pooling = rd.get<std::uint8_t>();
    const auto activation = rd.get<std::uint8_t>();
    if (pooling != 1 && pooling != 2) throw CorruptionError(source + ": bad pooling byte");
    if (activation > 1) throw CorruptionError(source + ": bad activation byte");
    cfg.pooling = static_cast<Pooling>(pooling);
    cfg.activation = static_cast<Activation>(activation);
    Checkpoint ck;
    ck.step = rd.get<std::uint64_t>();
    const auto digest = rd.get<std::uint64_t>();
    cfg.seed = rd.get<std::uint64_t>();
    if (digest != cfg.digest()) throw CompatibilityError(source + ": config digest does not match stored dims");
    const auto count = rd.get<std::uint64_t>();
    const std::uint64_t expected =
        std::uint64_t{L} * cfg.mlp_dims().parameter_count() + L;
    if (count != expected) throw CorruptionError(source + ": parameter count disagrees with dims");
    if (count * sizeof(float) != rd.remaining()) {
        throw CorruptionError(source + ": payload has " + std::to_string(rd.remaining()) + " bytes, expected " +
                              std::to_string(count * sizeof(float)));
    }
    ck.model = RetrieverModel(cfg);
    for (auto block : ck.model.parameter_blocks()) rd.get_floats(block);
    for (auto block : std::as_const(ck.model).parameter_blocks()) {
        if (!all_finite(block)) throw ValidationError(source + ": non-finite parameter");
    }
    return ck;
}

inline void save_checkpoint(const RetrieverModel& model, std::uint64_t step, const std::string& path) {
    detail::write_file(path, encode_checkpoint(model, step));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file(path), path);
}

// Additionally requires the stored architecture to match `expected`.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
    auto ck = load_checkpoint(path);
    if (ck.model.config().digest() != expected.digest()) {
        throw CompatibilityError(path + ": checkpoint config digest does not match the requested model config");
    }
    return ck;
}

} // namespace detriever
