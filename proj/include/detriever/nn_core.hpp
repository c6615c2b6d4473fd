#pragma once

// Dense numerics for the retriever: a 3-layer MLP with an analytic backward
// pass, softmax, L2 normalization and AdamW. Storage type T is float for
// models and double for gradient checks; every dot product and reduction
// accumulates in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detriever/detail/random.hpp"
#include "detriever/errors.hpp"

namespace detriever {

enum class Activation : std::uint8_t { relu = 0, gelu = 1 };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

inline Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation '" + std::string(s) + "' (expected relu|gelu)");
}

template <typename T>
T activate(Activation act, T z) {
    if (act == Activation::relu) return z > T(0) ? z : T(0);
    const double x = static_cast<double>(z);
    return static_cast<T>(0.5 * x * (1.0 + std::erf(x * (0.5 * std::numbers::sqrt2))));
}

// d act / d z. ReLU'(0) is 0.
template <typename T>
T activate_grad(Activation act, T z) {
    if (act == Activation::relu) return z > T(0) ? T(1) : T(0);
    const double x = static_cast<double>(z);
    const double cdf = 0.5 * (1.0 + std::erf(x * (0.5 * std::numbers::sqrt2)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return static_cast<T>(cdf + x * pdf);
}

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename A>
double squared_norm(std::span<const A> a) {
    return dot<A, A>(a, a);
}

template <typename T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

struct MlpDims {
    std::size_t input = 0;
    std::size_t hidden = 1024;
    std::size_t output = 512;

    std::size_t parameter_count() const {
        return hidden * input + hidden + hidden * hidden + hidden + output * hidden + output;
    }
    bool operator==(const MlpDims&) const = default;
};

// Parameters of out = W3·act(W2·act(W1·x + b1) + b2) + b3, stored flat in
// the order W1, b1, W2, b2, W3, b3 (row-major). The same type holds
// gradients.
template <typename T>
class MlpParams {
public:
    MlpParams() = default;
    explicit MlpParams(MlpDims dims) : dims_(dims), data_(dims.parameter_count(), T(0)) {}

    const MlpDims& dims() const noexcept { return dims_; }
    std::span<T> flat() noexcept { return data_; }
    std::span<const T> flat() const noexcept { return data_; }

    std::span<T> w1() { return block(0, dims_.hidden * dims_.input); }
    std::span<T> b1() { return block(off_b1(), dims_.hidden); }
    std::span<T> w2() { return block(off_w2(), dims_.hidden * dims_.hidden); }
    std::span<T> b2() { return block(off_b2(), dims_.hidden); }
    std::span<T> w3() { return block(off_w3(), dims_.output * dims_.hidden); }
    std::span<T> b3() { return block(off_b3(), dims_.output); }
    std::span<const T> w1() const { return block(0, dims_.hidden * dims_.input); }
    std::span<const T> b1() const { return block(off_b1(), dims_.hidden); }
    std::span<const T> w2() const { return block(off_w2(), dims_.hidden * dims_.hidden); }
    std::span<const T> b2() const { return block(off_b2(), dims_.hidden); }
    std::span<const T> w3() const { return block(off_w3(), dims_.output * dims_.hidden); }
    std::span<const T> b3() const { return block(off_b3(), dims_.output); }

    void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }

    bool operator==(const MlpParams&) const = default;

private:
    std::size_t off_b1() const { return dims_.hidden * dims_.input; }
    std::size_t off_w2() const { return off_b1() + dims_.hidden; }
    std::size_t off_b2() const { return off_w2() + dims_.hidden * dims_.hidden; }
    std::size_t off_w3() const { return off_b2() + dims_.hidden; }
    std::size_t off_b3() const { return off_w3() + dims_.output * dims_.hidden; }
    std::span<T> block(std::size_t off, std::size_t n) { return std::span<T>(data_).subspan(off, n); }
    std::span<const T> block(std::size_t off, std::size_t n) const {
        return std::span<const T>(data_).subspan(off, n);
    }

    MlpDims dims_;
    std::vector<T> data_;
};

// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases.
template <typename T>
MlpParams<T> init_mlp(MlpDims dims, detail::Rng& rng) {
    MlpParams<T> p(dims);
    auto fill = [&](std::span<T> w, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill(p.w1(), dims.input);
    fill(p.w2(), dims.hidden);
    fill(p.w3(), dims.hidden);
    return p;
}

template <typename T>
struct MlpCache {
    std::vector<T> input;
    std::vector<T> z1, a1;  // first hidden pre/post activation
    std::vector<T> z2, a2;  // second hidden pre/post activation
};

namespace detail {

// out[r] = bias[r] + Σ_c W[r][c]·x[c]
template <typename T>
void affine(std::span<const T> w, std::span<const T> bias, std::span<const T> x, std::span<T> out) {
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < out.size(); ++r) {
        out[r] = static_cast<T>(static_cast<double>(bias[r]) + dot<T, T>(w.subspan(r * cols, cols), x));
    }
}

} // namespace detail

template <typename T>
struct MlpOutput {
    std::vector<T> output;
    MlpCache<T> cache;
};

template <typename T, typename U>
MlpOutput<T> mlp_forward(const MlpParams<T>& p, std::span<const U> input, Activation act = Activation::relu) {
    const auto& d = p.dims();
    if (input.size() != d.input) {
        throw ShapeError("mlp input has " + std::to_string(input.size()) + " entries, expected " +
                         std::to_string(d.input));
    }
    if (!all_finite(input)) throw ValidationError("non-finite mlp input");
    MlpOutput<T> res;
    auto& c = res.cache;
    c.input.assign(input.begin(), input.end());
    c.z1.resize(d.hidden);
    c.a1.resize(d.hidden);
    c.z2.resize(d.hidden);
    c.a2.resize(d.hidden);
    res.output.resize(d.output);
    detail::affine<T>(p.w1(), p.b1(), c.input, c.z1);
    for (std::size_t i = 0; i < d.hidden; ++i) c.a1[i] = activate(act, c.z1[i]);
    detail::affine<T>(p.w2(), p.b2(), c.a1, c.z2);
    for (std::size_t i = 0; i < d.hidden; ++i) c.a2[i] = activate(act, c.z2[i]);
    detail::affine<T>(p.w3(), p.b3(), c.a2, res.output);
    return res;
}

// Adds d(grad_out·out)/dθ into `grads` and, when grad_input is nonempty,
// writes d(grad_out·out)/dx into it.
template <typename T>
void mlp_backward_accumulate(const MlpParams<T>& p, const MlpCache<T>& c, std::span<const T> grad_out,
                             MlpParams<T>& grads, std::span<T> grad_input, Activation act = Activation::relu) {
    const auto& d = p.dims();
    if (grad_out.size() != d.output || c.input.size() != d.input || c.a2.size() != d.hidden ||
        grads.dims() != d || (!grad_input.empty() && grad_input.size() != d.input)) {
        throw ShapeError("mlp backward shape mismatch");
    }
    auto w3 = p.w3();
    auto w2 = p.w2();
    auto w1 = p.w1();
    auto gw3 = grads.w3();
    auto gb3 = grads.b3();
    auto gw2 = grads.w2();
    auto gb2 = grads.b2();
    auto gw1 = grads.w1();
    auto gb1 = grads.b1();

    std::vector<double> g_a2(d.hidden, 0.0);
    for (std::size_t r = 0; r < d.output; ++r) {
        const double g = grad_out[r];
        gb3[r] += static_cast<T>(g);
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d.hidden; ++k) {
            gw3[r * d.hidden + k] += static_cast<T>(g * c.a2[k]);
            g_a2[k] += g * w3[r * d.hidden + k];
        }
    }
    std::vector<double> g_a1(d.hidden, 0.0);
    for (std::size_t r = 0; r < d.hidden; ++r) {
        const double g = g_a2[r] * static_cast<double>(activate_grad(act, c.z2[r]));
        gb2[r] += static_cast<T>(g);
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d.hidden; ++k) {
            gw2[r * d.hidden + k] += static_cast<T>(g * c.a1[k]);
            g_a1[k] += g * w2[r * d.hidden + k];
        }
    }
    std::vector<double> g_in(grad_input.empty() ? 0 : d.input, 0.0);
    for (std::size_t r = 0; r < d.hidden; ++r) {
        const double g = g_a1[r] * static_cast<double>(activate_grad(act, c.z1[r]));
        gb1[r] += static_cast<T>(g);
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d.input; ++k) {
            gw1[r * d.input + k] += static_cast<T>(g * c.input[k]);
            if (!g_in.empty()) g_in[k] += g * w1[r * d.input + k];
        }
    }
    for (std::size_t k = 0; k < g_in.size(); ++k) grad_input[k] = static_cast<T>(g_in[k]);
}

template <typename T>
struct MlpGradients {
    MlpParams<T> params;
    std::vector<T> input;
};

template <typename T>
MlpGradients<T> mlp_backward(const MlpParams<T>& p, const MlpCache<T>& c, std::span<const T> grad_out,
                             Activation act = Activation::relu) {
    MlpGradients<T> g{MlpParams<T>(p.dims()), std::vector<T>(p.dims().input)};
    mlp_backward_accumulate(p, c, grad_out, g.params, std::span<T>(g.input), act);
    return g;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
    if (logits.empty()) throw ValidationError("softmax of empty vector");
    if (!all_finite(logits)) throw ValidationError("softmax of non-finite logits");
    const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
    std::vector<double> e(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += e[i];
    }
    std::vector<T> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<T>(e[i] / sum);
    return out;
}

enum class Similarity : std::uint8_t { dot = 0, cosine = 1 };

inline std::string_view to_string(Similarity s) { return s == Similarity::dot ? "dot" : "cosine"; }

inline Similarity parse_similarity(std::string_view s) {
    if (s == "dot") return Similarity::dot;
    if (s == "cosine") return Similarity::cosine;
    throw ConfigError("unknown similarity '" + std::string(s) + "' (expected dot|cosine)");
}

inline constexpr double kNormEpsilon = 1e-12;

template <typename T>
struct Normalized {
    std::vector<T> value;
    double norm = 0.0;
    bool degenerate = false;
};

// v/||v||; a vector with norm ≤ 1e-12 maps to zero and is flagged.
template <typename T>
Normalized<T> l2_normalize(std::span<const T> v) {
    Normalized<T> r;
    r.norm = std::sqrt(squared_norm(v));
    r.value.assign(v.size(), T(0));
    if (!(r.norm > kNormEpsilon)) {
        r.degenerate = true;
        return r;
    }
    for (std::size_t i = 0; i < v.size(); ++i) r.value[i] = static_cast<T>(static_cast<double>(v[i]) / r.norm);
    return r;
}

// Gradient of L(v/||v||) w.r.t. v given g = dL/d(v/||v||):
//   (g − u·(u·g)) / ||v||,   u = v/||v||.
template <typename T>
std::vector<T> l2_normalize_backward(const Normalized<T>& n, std::span<const T> grad_unit) {
    std::vector<T> out(grad_unit.size(), T(0));
    if (n.degenerate) return out;
    const double ug = dot<T, T>(n.value, grad_unit);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<T>((static_cast<double>(grad_unit[i]) - static_cast<double>(n.value[i]) * ug) / n.norm);
    }
    return out;
}

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-8;
};

// AdamW with decoupled weight decay:
//   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
//   p ← p − lr·( m̂/(√v̂ + ε) + wd·p )
// Parameters may be split over several blocks; moments are laid out in block
// order.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg, std::size_t parameter_count = 0)
        : cfg_(cfg), m_(parameter_count, T(0)), v_(parameter_count, T(0)) {}

    const AdamWConfig& config() const noexcept { return cfg_; }
    AdamWConfig& config() noexcept { return cfg_; }
    std::uint64_t step_count() const noexcept { return t_; }
    std::span<const T> first_moment() const noexcept { return m_; }
    std::span<const T> second_moment() const noexcept { return v_; }

    void step(std::span<T> params, std::span<const T> grads) {
        std::span<T> p[] = {params};
        std::span<const T> g[] = {grads};
        step(std::span<const std::span<T>>(p), std::span<const std::span<const T>>(g));
    }

    void step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads) {
        if (params.size() != grads.size()) throw ShapeError("adamw: block count mismatch");
        std::size_t total = 0;
        for (std::size_t b = 0; b < params.size(); ++b) {
            if (params[b].size() != grads[b].size()) throw ShapeError("adamw: block size mismatch");
            if (!all_finite(grads[b])) throw ValidationError("adamw: non-finite gradient");
            total += params[b].size();
        }
        if (m_.empty() && total > 0) {
            m_.assign(total, T(0));
            v_.assign(total, T(0));
        }
        if (m_.size() != total) throw ShapeError("adamw: parameter count changed");

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        std::size_t off = 0;
        for (std::size_t b = 0; b < params.size(); ++b) {
            auto p = params[b];
            auto g = grads[b];
            for (std::size_t i = 0; i < p.size(); ++i, ++off) {
                const double gi = g[i];
                const double m = cfg_.beta1 * static_cast<double>(m_[off]) + (1.0 - cfg_.beta1) * gi;
                const double v = cfg_.beta2 * static_cast<double>(v_[off]) + (1.0 - cfg_.beta2) * gi * gi;
                m_[off] = static_cast<T>(m);
                v_[off] = static_cast<T>(v);
                const double m_hat = m / bc1;
                const double v_hat = v / bc2;
                const double pi = p[i];
                p[i] = static_cast<T>(pi - cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) +
                                                      cfg_.weight_decay * pi));
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<T> m_;
    std::vector<T> v_;
    std::uint64_t t_ = 0;
};

} // namespace detriever
