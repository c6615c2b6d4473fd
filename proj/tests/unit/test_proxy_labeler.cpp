#include <gtest/gtest.h>

#include <random>
#include <set>

#include "detriever/proxy_labeler.hpp"
#include "test_support.hpp"

using namespace detriever;
namespace t = detriever::testing;

namespace {

// Single-layer container whose ppq/eos target row is given explicitly.
HiddenStateContainer targets_container(const std::vector<std::vector<float>>& rows) {
    ContainerHeader h;
    h.layer_ids = {0};
    h.dim = static_cast<std::uint32_t>(rows.at(0).size());
    h.pooling_mask = static_cast<std::uint8_t>(Pooling::eos);
    h.target_mask = static_cast<std::uint8_t>(TargetKind::problem_plus_query);
    std::vector<ExampleRecord> recs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ExampleRecord r;
        char buf[16];
        std::snprintf(buf, sizeof buf, "e%03zu", i);
        r.id = buf;
        r.schema_id = "db";
        r.problem.eos.assign(h.dim, 0.0f);
        r.target.eos = rows[i];
        recs.push_back(std::move(r));
    }
    return HiddenStateContainer(h, std::move(recs));
}

double oracle_dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

double oracle_cosine(const std::vector<float>& a, const std::vector<float>& b) {
    return oracle_dot(a, b) / std::sqrt(oracle_dot(a, a) * oracle_dot(b, b));
}

ProxyConfig small_proxy(std::size_t n_pos, std::size_t n_neg, Similarity sim = Similarity::dot) {
    ProxyConfig c;
    c.n_pos = n_pos;
    c.n_neg = n_neg;
    c.similarity = sim;
    c.seed = 3;
    return c;
}

} // namespace

TEST(ProxyScores, SelfSimilarityUnderCosineIsOne) {
    std::mt19937_64 rng(1);
    auto c = targets_container({t::random_floats(rng, 6)});
    auto cfg = small_proxy(1, 1, Similarity::cosine);
    auto s = compute_proxy_scores(c.records()[0], c.records(), c.header(), cfg);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_NEAR(s[0].score, 1.0, 1e-6);
}

TEST(ProxyScores, OrthogonalTargetsScoreZero) {
    auto c = targets_container({{1, 0, 0}, {0, 1, 0}});
    for (Similarity sim : {Similarity::dot, Similarity::cosine}) {
        auto s = compute_proxy_scores(c.records()[0], std::span(c.records()).subspan(1), c.header(),
                                      small_proxy(1, 1, sim));
        EXPECT_EQ(s[0].score, 0.0);
    }
}

TEST(ProxyScores, MatchesBruteForceAndRanksDescending) {
    std::mt19937_64 rng(2);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 60; ++i) rows.push_back(t::random_floats(rng, 7));
    auto c = targets_container(rows);
    for (Similarity sim : {Similarity::dot, Similarity::cosine}) {
        auto s = compute_proxy_scores(c.records()[0], c.records(), c.header(), small_proxy(1, 1, sim));
        ASSERT_EQ(s.size(), rows.size());
        for (std::size_t k = 0; k + 1 < s.size(); ++k) EXPECT_GE(s[k].score, s[k + 1].score);
        for (const auto& si : s) {
            const std::size_t j = std::stoul(si.id.substr(1));
            const double want = sim == Similarity::dot ? oracle_dot(rows[0], rows[j]) : oracle_cosine(rows[0], rows[j]);
            EXPECT_NEAR(si.score, want, 1e-5 * (1 + std::abs(want)));
        }
    }
}

TEST(ProxyScores, TiesBreakByAscendingId) {
    auto c = targets_container({{1, 0}, {1, 0}, {1, 0}, {0, 1}});
    auto s = compute_proxy_scores(c.records()[0], std::span(c.records()).subspan(1), c.header(), small_proxy(1, 1));
    EXPECT_EQ(s[0].id, "e001");
    EXPECT_EQ(s[1].id, "e002");
    EXPECT_EQ(s[2].id, "e003");
}

TEST(ProxyScores, MissingTargetsAreRejected) {
    auto c = targets_container({{1, 0}});
    auto cfg = small_proxy(1, 1);
    cfg.target_mode = TargetKind::query_only;
    EXPECT_THROW(compute_proxy_scores(c.records()[0], c.records(), c.header(), cfg), ValidationError);
    cfg = small_proxy(1, 1);
    cfg.target_layer = 7;
    EXPECT_THROW(compute_proxy_scores(c.records()[0], c.records(), c.header(), cfg), ConfigError);
}

TEST(ProxyConfigDefaults, TargetLayerIsMiddleKeptLayer) {
    ContainerHeader h;
    h.layer_ids = {0, 5, 10, 15, 20, 25, 30, 35, 40};
    EXPECT_EQ(resolve_target_layer(ProxyConfig{}, h), 20);
    ProxyConfig d;
    EXPECT_EQ(d.n_pos, 40u);
    EXPECT_EQ(d.n_neg, 100u);
    EXPECT_EQ(d.target_mode, TargetKind::problem_plus_query);
    EXPECT_EQ(d.target_pooling, Pooling::eos);
}

TEST(LabelSet, SinglePositiveIsTheArgmax) {
    std::mt19937_64 rng(3);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 30; ++i) rows.push_back(t::random_floats(rng, 5));
    auto c = targets_container(rows);
    auto ls = build_label_set(c, small_proxy(1, 10));
    for (std::size_t a = 0; a < rows.size(); ++a) {
        double best = -1e300;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (j == a) continue;
            const double s = oracle_dot(rows[a], rows[j]);
            if (s > best) best = s, arg = j;
        }
        ASSERT_EQ(ls.anchors[a].positives.size(), 1u);
        EXPECT_EQ(ls.anchors[a].positives[0].id, c.records()[arg].id);
    }
}

TEST(LabelSet, ListsAreDisjointSizedAndExcludeAnchor) {
    std::mt19937_64 rng(4);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 40; ++i) rows.push_back(t::random_floats(rng, 4));
    auto c = targets_container(rows);
    for (auto mode : {NegativeSampling::uniform, NegativeSampling::hard}) {
        auto cfg = small_proxy(5, 12);
        cfg.negative_sampling = mode;
        auto ls = build_label_set(c, cfg);
        ASSERT_EQ(ls.anchors.size(), rows.size());
        for (const auto& a : ls.anchors) {
            EXPECT_EQ(a.positives.size(), 5u);
            EXPECT_EQ(a.negatives.size(), 12u);
            std::set<std::string> ids;
            for (const auto& s : a.positives) ids.insert(s.id);
            for (const auto& s : a.negatives) ids.insert(s.id);
            EXPECT_EQ(ids.size(), 17u);
            EXPECT_EQ(ids.count(a.id), 0u);
            // every positive outranks every negative
            EXPECT_FALSE(ranks_before(a.negatives.front(), a.positives.back()));
        }
    }
}

TEST(LabelSet, HardNegativesAreTheNextRanks) {
    std::mt19937_64 rng(5);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 25; ++i) rows.push_back(t::random_floats(rng, 4));
    auto c = targets_container(rows);
    auto cfg = small_proxy(3, 4);
    cfg.negative_sampling = NegativeSampling::hard;
    auto ls = build_label_set(c, cfg);
    for (std::size_t a = 0; a < rows.size(); ++a) {
        std::vector<ScoredId> all;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (j != a) all.push_back({c.records()[j].id, oracle_dot(rows[a], rows[j])});
        }
        std::sort(all.begin(), all.end(), [](const ScoredId& x, const ScoredId& y) { return x.score > y.score; });
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(ls.anchors[a].negatives[k].id, all[3 + k].id);
    }
}

TEST(LabelSet, IsDeterministicForAFixedSeedAndVariesWithSeed) {
    std::mt19937_64 rng(6);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 50; ++i) rows.push_back(t::random_floats(rng, 4));
    auto c = targets_container(rows);
    auto cfg = small_proxy(3, 10);
    auto a = build_label_set(c, cfg);
    auto b = build_label_set(c, cfg);
    EXPECT_EQ(a, b);
    EXPECT_EQ(encode_label_set(a), encode_label_set(b));
    cfg.seed = 4;
    EXPECT_NE(encode_label_set(build_label_set(c, cfg)), encode_label_set(a));
}

TEST(LabelSet, TooSmallCorpusNeedsOptIn) {
    auto c = targets_container({{1, 0}, {0, 1}, {1, 1}});
    EXPECT_THROW(build_label_set(c, small_proxy(2, 2)), ValidationError);
    auto cfg = small_proxy(2, 2);
    cfg.allow_corpus_limited = true;
    auto ls = build_label_set(c, cfg);
    EXPECT_TRUE(ls.corpus_limited);
    EXPECT_EQ(ls.anchors[0].positives.size(), 2u);
    EXPECT_EQ(ls.anchors[0].negatives.size(), 0u);
}

// Property: with well-separated clusters, positives come from the anchor's own
// cluster whenever n_pos does not exceed the cluster size minus one.
TEST(LabelSet, ClusteredTargetsYieldSameClusterPositives) {
    std::mt19937_64 rng(7);
    const std::size_t K = 4, per = 10, D = 8;
    std::vector<std::vector<float>> centers;
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<float> c(D, 0.0f);
        c[k] = 10.0f;
        centers.push_back(c);
    }
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < K * per; ++i) {
        auto v = centers[i % K];
        auto n = t::random_floats(rng, D, 0.1);
        for (std::size_t d = 0; d < D; ++d) v[d] += n[d];
        rows.push_back(v);
    }
    auto c = targets_container(rows);
    auto ls = build_label_set(c, small_proxy(per - 1, 5, Similarity::cosine));
    for (std::size_t a = 0; a < rows.size(); ++a) {
        for (const auto& p : ls.anchors[a].positives) EXPECT_EQ(std::stoul(p.id.substr(1)) % K, a % K);
    }
}

TEST(LabelFile, RoundTripsExactly) {
    t::TempDir dir;
    std::mt19937_64 rng(8);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 20; ++i) rows.push_back(t::random_floats(rng, 3));
    auto ls = build_label_set(targets_container(rows), small_proxy(4, 6, Similarity::cosine));
    write_label_set(ls, dir.file("labels.json"));
    auto back = read_label_set(dir.file("labels.json"));
    EXPECT_EQ(back, ls);
    EXPECT_EQ(encode_label_set(back), encode_label_set(ls));
}

TEST(LabelFile, MissingNPosIsParseError) {
    std::mt19937_64 rng(9);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 5; ++i) rows.push_back(t::random_floats(rng, 3));
    auto ls = build_label_set(targets_container(rows), small_proxy(2, 2));
    auto j = nlohmann::json::parse(encode_label_set(ls));
    j["config"].erase("n_pos");
    EXPECT_THROW(decode_label_set(j.dump()), ParseError);
}

TEST(LabelFile, EmptyAnchorsAndGarbageAreParseErrors) {
    std::mt19937_64 rng(10);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 5; ++i) rows.push_back(t::random_floats(rng, 3));
    auto j = nlohmann::json::parse(encode_label_set(build_label_set(targets_container(rows), small_proxy(2, 2))));
    auto empty = j;
    empty["anchors"] = nlohmann::json::array();
    EXPECT_THROW(decode_label_set(empty.dump()), ParseError);
    auto extra = j;
    extra["surprise"] = 1;
    EXPECT_THROW(decode_label_set(extra.dump()), ParseError);
    EXPECT_THROW(decode_label_set("{not json"), ParseError);
    EXPECT_THROW(read_label_set("/nonexistent/labels.json"), IoError);
}
