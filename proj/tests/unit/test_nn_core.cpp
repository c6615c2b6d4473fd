#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "detriever/nn_core.hpp"
#include "test_support.hpp"

using namespace detriever;
namespace t = detriever::testing;

namespace {

MlpParams<double> random_mlp(std::mt19937_64& rng, MlpDims d, double bias_scale = 0.3) {
    MlpParams<double> p(d);
    auto fill = [&](std::span<double> s, double scale) {
        auto v = t::random_doubles(rng, s.size(), scale);
        std::copy(v.begin(), v.end(), s.begin());
    };
    fill(p.w1(), 1.0);
    fill(p.w2(), 0.7);
    fill(p.w3(), 0.7);
    fill(p.b1(), bias_scale);
    fill(p.b2(), bias_scale);
    fill(p.b3(), bias_scale);
    return p;
}

t::OracleMlp to_oracle(const MlpParams<double>& p) {
    auto v = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };
    return {p.dims().input, p.dims().hidden, p.dims().output, v(p.w1()), v(p.b1()), v(p.w2()),
            v(p.b2()),      v(p.w3()),       v(p.b3())};
}

// Keeps finite-difference probes away from ReLU kinks.
bool near_kink(const MlpCache<double>& c, double margin) {
    for (double z : c.z1) {
        if (std::abs(z) < margin) return true;
    }
    for (double z : c.z2) {
        if (std::abs(z) < margin) return true;
    }
    return false;
}

} // namespace

TEST(Mlp, ZeroParamsGiveZeroOutput) {
    MlpParams<float> p(MlpDims{4, 3, 2});
    std::vector<float> x = {1, -2, 3, 0.5};
    auto out = mlp_forward(p, std::span<const float>(x));
    EXPECT_EQ(out.output, (std::vector<float>{0, 0}));
}

TEST(Mlp, IdentityWeightsHandComputed) {
    MlpParams<double> p(MlpDims{2, 2, 2});
    for (auto w : {p.w1(), p.w2(), p.w3()}) {
        w[0] = 1;
        w[3] = 1;
    }
    std::vector<double> x = {1, -1};
    auto out = mlp_forward(p, std::span<const double>(x));
    EXPECT_EQ(out.cache.a1, (std::vector<double>{1, 0}));
    EXPECT_EQ(out.cache.a2, (std::vector<double>{1, 0}));
    EXPECT_EQ(out.output, (std::vector<double>{1, 0}));
}

TEST(Mlp, ForwardMatchesStraightLineOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = random_mlp(rng, {4, 3, 2});
        auto x = t::random_doubles(rng, 4);
        auto got = mlp_forward(p, std::span<const double>(x)).output;
        auto want = t::oracle_mlp_forward(to_oracle(p), x);
        for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(got[i], want[i], 1e-6);

        MlpParams<float> pf(p.dims());
        std::copy(p.flat().begin(), p.flat().end(), pf.flat().begin());
        std::vector<float> xf(x.begin(), x.end());
        auto gotf = mlp_forward(pf, std::span<const float>(xf)).output;
        for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(gotf[i], want[i], 1e-5);
    }
}

TEST(Mlp, ShapeAndFiniteness) {
    MlpParams<float> p(MlpDims{3, 2, 2});
    std::vector<float> short_input = {1, 2};
    EXPECT_THROW(mlp_forward(p, std::span<const float>(short_input)), ShapeError);
    std::vector<float> nan_input = {1, NAN, 2};
    EXPECT_THROW(mlp_forward(p, std::span<const float>(nan_input)), ValidationError);
    std::vector<float> x = {1, 2, 3};
    auto fw = mlp_forward(p, std::span<const float>(x));
    std::vector<float> bad_grad = {1, 2, 3};
    EXPECT_THROW(mlp_backward(p, fw.cache, std::span<const float>(bad_grad)), ShapeError);
}

TEST(Mlp, PositivelyHomogeneousWithoutBiases) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_mlp(rng, {5, 4, 3}, 0.0);
        auto x = t::random_doubles(rng, 5);
        const double alpha = 0.1 + 5.0 * (rng() % 1000) / 1000.0;
        std::vector<double> ax(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) ax[i] = alpha * x[i];
        auto y = mlp_forward(p, std::span<const double>(x)).output;
        auto ay = mlp_forward(p, std::span<const double>(ax)).output;
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(ay[i], alpha * y[i], 1e-9 * (1 + std::abs(ay[i])));
    }
}

TEST(MlpBackward, ZeroCotangentGivesZeroGradients) {
    std::mt19937_64 rng(13);
    auto p = random_mlp(rng, {4, 3, 2});
    auto x = t::random_doubles(rng, 4);
    auto fw = mlp_forward(p, std::span<const double>(x));
    std::vector<double> zero(2, 0.0);
    auto g = mlp_backward(p, fw.cache, std::span<const double>(zero));
    for (double v : g.params.flat()) EXPECT_EQ(v, 0.0);
    for (double v : g.input) EXPECT_EQ(v, 0.0);
}

// Finite-difference oracle over 200 random instances with D, H, E ≤ 8.
TEST(MlpBackward, MatchesCentralDifferences) {
    for (Activation act : {Activation::relu, Activation::gelu}) {
        std::mt19937_64 rng(act == Activation::relu ? 14 : 15);
        int accepted = 0;
        double worst = 0.0;
        while (accepted < 200) {
            MlpDims d{1 + rng() % 8, 1 + rng() % 8, 1 + rng() % 8};
            auto p = random_mlp(rng, d);
            auto x = t::random_doubles(rng, d.input);
            auto cot = t::random_doubles(rng, d.output);
            auto fw = mlp_forward(p, std::span<const double>(x), act);
            if (act == Activation::relu && near_kink(fw.cache, 1e-3)) continue;
            // GELU is smooth, so the step is limited by O(h²) truncation instead.
            const double h = act == Activation::relu ? 1e-4 : 1e-5;
            ++accepted;
            auto g = mlp_backward(p, fw.cache, std::span<const double>(cot), act);

            auto objective = [&](const MlpParams<double>& q, const std::vector<double>& in) {
                auto y = mlp_forward(q, std::span<const double>(in), act).output;
                double s = 0;
                for (std::size_t i = 0; i < y.size(); ++i) s += cot[i] * y[i];
                return s;
            };
            std::vector<double> theta(p.flat().begin(), p.flat().end());
            for (std::size_t i = 0; i < theta.size(); ++i) {
                auto fd = t::central_difference(
                    [&](const std::vector<double>& th) {
                        MlpParams<double> q(d);
                        std::copy(th.begin(), th.end(), q.flat().begin());
                        return objective(q, x);
                    },
                    theta, i, h);
                worst = std::max(worst, t::gradient_error(g.params.flat()[i], fd));
            }
            for (std::size_t i = 0; i < x.size(); ++i) {
                auto fd = t::central_difference([&](const std::vector<double>& in) { return objective(p, in); }, x, i, h);
                worst = std::max(worst, t::gradient_error(g.input[i], fd));
            }
        }
        // GELU pays both truncation and cancellation error in the difference quotient.
        EXPECT_LT(worst, act == Activation::relu ? 1e-6 : 1e-5) << to_string(act);
    }
}

TEST(MlpBackward, LinearRegimeMatchesChainRule) {
    // Non-negative weights and strictly positive inputs keep every unit active,
    // so the map is linear and grad_input = W1ᵀ W2ᵀ W3ᵀ g.
    std::mt19937_64 rng(16);
    MlpDims d{3, 4, 2};
    MlpParams<double> p(d);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (auto w : {p.w1(), p.w2(), p.w3()}) {
        for (auto& v : w) v = u(rng);
    }
    std::vector<double> x = {0.5, 1.5, 2.0};
    std::vector<double> g = {0.3, -1.2};
    auto fw = mlp_forward(p, std::span<const double>(x));
    auto back = mlp_backward(p, fw.cache, std::span<const double>(g));

    std::vector<double> t3(d.hidden, 0), t2(d.hidden, 0), t1(d.input, 0);
    for (std::size_t k = 0; k < d.hidden; ++k)
        for (std::size_t r = 0; r < d.output; ++r) t3[k] += p.w3()[r * d.hidden + k] * g[r];
    for (std::size_t k = 0; k < d.hidden; ++k)
        for (std::size_t r = 0; r < d.hidden; ++r) t2[k] += p.w2()[r * d.hidden + k] * t3[r];
    for (std::size_t k = 0; k < d.input; ++k)
        for (std::size_t r = 0; r < d.hidden; ++r) t1[k] += p.w1()[r * d.input + k] * t2[r];
    for (std::size_t k = 0; k < d.input; ++k) EXPECT_NEAR(back.input[k], t1[k], 1e-12);
}

TEST(MlpBackward, ReluSubgradientAtZeroIsZero) {
    EXPECT_EQ(activate_grad(Activation::relu, 0.0), 0.0);
    EXPECT_EQ(activate_grad(Activation::relu, 1e-30), 1.0);
}

TEST(Softmax, UniformForEqualLogits) {
    std::vector<double> z(9, 0.0);
    for (double w : softmax<double>(z)) EXPECT_NEAR(w, 1.0 / 9.0, 1e-15);
}

TEST(Softmax, StableForLargeLogits) {
    std::vector<float> z = {1000.0f, 0.0f};
    auto w = softmax<float>(z);
    EXPECT_FLOAT_EQ(w[0], 1.0f);
    EXPECT_FLOAT_EQ(w[1], 0.0f);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
    std::vector<double> z = {std::log(2.0), 0.0};
    auto w = softmax<double>(z);
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto z = t::random_doubles(rng, 1 + rng() % 12, 5.0);
        auto w = softmax<double>(z);
        double sum = 0;
        for (double v : w) {
            EXPECT_GT(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
        const double c = t::random_doubles(rng, 1, 50.0)[0];
        for (auto& v : z) v += c;
        auto ws = softmax<double>(z);
        for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(ws[i], w[i], 1e-7);
    }
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(softmax<double>(std::vector<double>{}), ValidationError);
    EXPECT_THROW(softmax<double>(std::vector<double>{1.0, INFINITY}), ValidationError);
}

TEST(L2Normalize, ThreeFourFive) {
    std::vector<double> v = {3, 4};
    auto n = l2_normalize<double>(v);
    EXPECT_FALSE(n.degenerate);
    EXPECT_NEAR(n.value[0], 0.6, 1e-15);
    EXPECT_NEAR(n.value[1], 0.8, 1e-15);
}

TEST(L2Normalize, ZeroVectorIsFlagged) {
    std::vector<float> v = {0, 0};
    auto n = l2_normalize<float>(v);
    EXPECT_TRUE(n.degenerate);
    EXPECT_EQ(n.value, (std::vector<float>{0, 0}));
}

TEST(L2Normalize, RandomVectorsHaveUnitNorm) {
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 100; ++trial) {
        auto v = t::random_floats(rng, 1 + rng() % 64, 3.0);
        auto n = l2_normalize<float>(v);
        double s = 0;
        for (float x : n.value) s += double(x) * x;
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
    }
}

TEST(AdamW, ZeroGradientWithoutDecayIsIdentity) {
    AdamW<double> opt({0.1, 0.0, 0.9, 0.98, 1e-8});
    std::vector<double> p = {1.0, -2.0, 3.5};
    std::vector<double> g(3, 0.0);
    for (int i = 0; i < 5; ++i) opt.step(std::span<double>(p), std::span<const double>(g));
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
    EXPECT_EQ(opt.step_count(), 5u);
}

TEST(AdamW, SingleStepClosedForm) {
    AdamW<double> opt({0.1, 0.0, 0.9, 0.98, 1e-8});
    std::vector<double> p = {1.0};
    std::vector<double> g = {1.0};
    opt.step(std::span<double>(p), std::span<const double>(g));
    // m̂ = v̂ = 1 after bias correction.
    EXPECT_NEAR(p[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p[0], 0.9, 1e-8);
}

TEST(AdamW, DefaultsFollowTrainingSetup) {
    AdamWConfig c;
    EXPECT_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.weight_decay, 0.01);
    EXPECT_EQ(c.beta1, 0.9);
    EXPECT_EQ(c.beta2, 0.98);
    EXPECT_EQ(c.epsilon, 1e-8);
}

TEST(AdamW, TenStepsMatchReferenceRecurrence) {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        AdamWConfig cfg{1e-2, 0.01, 0.9, 0.98, 1e-8};
        AdamW<double> opt(cfg);
        t::OracleAdamW ref{cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon};
        std::vector<double> p = {t::random_doubles(rng, 1)[0]};
        double q = p[0];
        for (int s = 0; s < 10; ++s) {
            std::vector<double> g = {t::random_doubles(rng, 1)[0]};
            opt.step(std::span<double>(p), std::span<const double>(g));
            q = ref.step(q, g[0]);
            EXPECT_NEAR(p[0], q, 1e-10);
        }
    }
}

TEST(AdamW, ConstantGradientClosedForm) {
    // With a constant gradient g, m̂ = g and v̂ = g² at every step, so
    // p_t = p_{t-1}(1 − lr·wd) − lr·g/(|g| + ε).
    AdamWConfig cfg{0.05, 0.01, 0.9, 0.98, 1e-8};
    AdamW<double> opt(cfg);
    std::vector<double> p = {2.0};
    const std::vector<double> g = {-0.7};
    double q = 2.0;
    for (int s = 0; s < 10; ++s) {
        opt.step(std::span<double>(p), std::span<const double>(g));
        q = q * (1 - cfg.lr * cfg.weight_decay) - cfg.lr * g[0] / (std::abs(g[0]) + cfg.epsilon);
    }
    EXPECT_NEAR(p[0], q, 1e-10);
}

TEST(AdamW, RejectsNonFiniteGradientsAndShapeMismatch) {
    AdamW<float> opt;
    std::vector<float> p = {1.0f, 2.0f};
    std::vector<float> g = {0.0f, NAN};
    EXPECT_THROW(opt.step(std::span<float>(p), std::span<const float>(g)), ValidationError);
    EXPECT_EQ(p, (std::vector<float>{1.0f, 2.0f}));
    std::vector<float> short_g = {0.0f};
    EXPECT_THROW(opt.step(std::span<float>(p), std::span<const float>(short_g)), ShapeError);
}
