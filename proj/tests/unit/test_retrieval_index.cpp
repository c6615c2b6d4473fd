#include <gtest/gtest.h>

#include <random>

#include "detriever/retrieval_index.hpp"
#include "test_support.hpp"

using namespace detriever;
namespace t = detriever::testing;

namespace {

EmbeddingMatrix matrix(const std::vector<std::vector<float>>& rows) {
    EmbeddingMatrix m{rows.size(), rows.at(0).size(), {}};
    for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
    return m;
}

std::vector<std::string> numbered(std::size_t n, const char* prefix = "c") {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
        out.push_back(buf);
    }
    return out;
}

// Brute-force reference: score all admitted candidates in double, stable-sort
// by (score desc, id asc), keep k.
std::vector<ScoredId> oracle_top_k(const std::vector<std::vector<float>>& rows, const std::vector<std::string>& ids,
                                   const std::vector<std::string>& schemas, const std::vector<float>& q,
                                   std::size_t k, Similarity sim, const RetrievalFilter& f) {
    auto norm = [](const std::vector<float>& v) {
        double s = 0;
        for (float x : v) s += double(x) * x;
        return std::sqrt(s);
    };
    std::vector<ScoredId> all;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!f.admits(ids[i], schemas[i])) continue;
        double s = 0;
        for (std::size_t d = 0; d < q.size(); ++d) s += double(q[d]) * rows[i][d];
        if (sim == Similarity::cosine) s /= norm(q) * norm(rows[i]);
        all.push_back({ids[i], s});
    }
    std::sort(all.begin(), all.end(), [](const ScoredId& a, const ScoredId& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

} // namespace

TEST(Retrieve, OrthogonalPairPicksAlignedCandidate) {
    auto idx = make_index(matrix({{1, 0}, {0, 1}}), {"x", "y"}, {"a", "a"}, Similarity::dot);
    std::vector<float> q = {1, 0};
    auto r = retrieve(idx, q, 1);
    ASSERT_EQ(r.hits.size(), 1u);
    EXPECT_EQ(r.hits[0].id, "x");
    EXPECT_EQ(r.hits[0].score, 1.0);
}

TEST(Retrieve, CosineIgnoresScaleButDotDoesNot) {
    std::vector<std::vector<float>> rows = {{10, 10}, {1, 0}};
    std::vector<float> q = {1, 0.1f};
    auto cos = make_index(matrix(rows), {"big", "axis"}, {"a", "a"}, Similarity::cosine);
    auto dp = make_index(matrix(rows), {"big", "axis"}, {"a", "a"}, Similarity::dot);
    EXPECT_EQ(retrieve(cos, q, 1).hits[0].id, "axis");
    EXPECT_EQ(retrieve(dp, q, 1).hits[0].id, "big");
    std::vector<float> q_scaled = {50, 5};
    EXPECT_EQ(retrieve(cos, q, 2).hits, retrieve(cos, q_scaled, 2).hits);
}

TEST(Retrieve, MatchesBruteForceOracle) {
    std::mt19937_64 rng(1);
    const std::size_t N = 200, E = 12;
    std::vector<std::vector<float>> rows;
    std::vector<std::string> schemas;
    for (std::size_t i = 0; i < N; ++i) {
        rows.push_back(t::random_floats(rng, E));
        schemas.push_back("db" + std::to_string(i % 7));
    }
    auto ids = numbered(N);
    for (Similarity sim : {Similarity::dot, Similarity::cosine}) {
        auto idx = make_index(matrix(rows), ids, schemas, sim);
        for (int qn = 0; qn < 20; ++qn) {
            auto q = t::random_floats(rng, E);
            for (std::size_t k : {1u, 5u, 50u}) {
                for (const auto& f : {RetrievalFilter::none(), RetrievalFilter::ood("db3"),
                                      RetrievalFilter::in_domain("db2", ids[2])}) {
                    auto got = retrieve(idx, q, k, f).hits;
                    auto want = oracle_top_k(rows, ids, schemas, q, k, sim, f);
                    ASSERT_EQ(got.size(), want.size());
                    for (std::size_t i = 0; i < got.size(); ++i) {
                        EXPECT_EQ(got[i].id, want[i].id);
                        EXPECT_NEAR(got[i].score, want[i].score, 1e-5 * (1 + std::abs(want[i].score)));
                    }
                }
            }
        }
    }
}

TEST(Retrieve, TiesBreakByAscendingId) {
    auto idx = make_index(matrix({{1, 0}, {1, 0}, {1, 0}}), {"c", "a", "b"}, {"s", "s", "s"}, Similarity::dot);
    std::vector<float> q = {1, 0};
    auto r = retrieve(idx, q, 3);
    EXPECT_EQ(r.hits[0].id, "a");
    EXPECT_EQ(r.hits[1].id, "b");
    EXPECT_EQ(r.hits[2].id, "c");
}

TEST(Retrieve, BatchEqualsIndividualQueries) {
    std::mt19937_64 rng(2);
    std::vector<std::vector<float>> rows, queries;
    for (int i = 0; i < 30; ++i) rows.push_back(t::random_floats(rng, 5));
    for (int i = 0; i < 8; ++i) queries.push_back(t::random_floats(rng, 5));
    auto ids = numbered(30);
    std::vector<std::string> schemas(30, "s");
    auto idx = make_index(matrix(rows), ids, schemas, Similarity::cosine);
    std::vector<RetrievalFilter> filters(8);
    auto batch = retrieve_batch(idx, matrix(queries), 4, filters);
    for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_EQ(batch[i].hits, retrieve(idx, queries[i], 4).hits);
}

TEST(Retrieve, FiltersAreRespected) {
    std::mt19937_64 rng(3);
    std::vector<std::vector<float>> rows;
    std::vector<std::string> schemas;
    for (int i = 0; i < 40; ++i) {
        rows.push_back(t::random_floats(rng, 4));
        schemas.push_back("db" + std::to_string(i % 4));
    }
    auto ids = numbered(40);
    auto idx = make_index(matrix(rows), ids, schemas, Similarity::cosine);
    auto q = rows[5];
    for (const auto& h : retrieve(idx, q, 40, RetrievalFilter::ood("db1")).hits) {
        EXPECT_NE(schemas[std::stoul(h.id.substr(1))], "db1");
    }
    auto in = retrieve(idx, q, 40, RetrievalFilter::in_domain("db1", ids[5])).hits;
    EXPECT_EQ(in.size(), 9u);
    for (const auto& h : in) {
        EXPECT_EQ(schemas[std::stoul(h.id.substr(1))], "db1");
        EXPECT_NE(h.id, ids[5]);
    }
    // Without a filter the query's own row is its best cosine match.
    EXPECT_EQ(retrieve(idx, q, 1).hits[0].id, ids[5]);
    EXPECT_EQ(RetrievalFilter::none().describe(), "none");
    EXPECT_EQ(RetrievalFilter::ood("db1").describe(), "exclude_schema(db1)");
}

TEST(Retrieve, FewerThanKAndNoCandidates) {
    auto idx = make_index(matrix({{1, 0}, {0, 1}, {1, 1}}), {"a", "b", "c"}, {"s1", "s1", "s2"}, Similarity::dot);
    std::vector<float> q = {1, 0};
    EXPECT_EQ(retrieve(idx, q, 10, RetrievalFilter::ood("s1")).hits.size(), 1u);
    RetrievalFilter nothing;
    nothing.only_schemas = {"s3"};
    EXPECT_THROW(retrieve(idx, q, 1, nothing), NoCandidatesError);
    EXPECT_THROW(retrieve(idx, q, 0), ValidationError);
    std::vector<float> wrong = {1, 0, 0};
    EXPECT_THROW(retrieve(idx, wrong, 1), ShapeError);
}

TEST(Retrieve, FilterModeParsing) {
    EXPECT_EQ(parse_filter_mode("ood"), FilterMode::ood);
    EXPECT_EQ(parse_filter_mode("id"), FilterMode::in_domain);
    EXPECT_EQ(parse_filter_mode("none"), FilterMode::none);
    EXPECT_THROW(parse_filter_mode("other"), ConfigError);
}

TEST(MakeIndex, RejectsDuplicatesAndNonFinite) {
    EXPECT_THROW(make_index(matrix({{1, 0}, {0, 1}}), {"a", "a"}, {"s", "s"}, Similarity::dot), ValidationError);
    EXPECT_THROW(make_index(matrix({{1, NAN}}), {"a"}, {"s"}, Similarity::dot), ValidationError);
    EXPECT_THROW(make_index(matrix({{1, 0}}), {"a", "b"}, {"s", "s"}, Similarity::dot), ShapeError);
}

TEST(IndexFile, RoundTripIsBitExact) {
    t::TempDir dir;
    std::mt19937_64 rng(4);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 25; ++i) rows.push_back(t::random_floats(rng, 6));
    auto idx = make_index(matrix(rows), numbered(25), std::vector<std::string>(25, "db"), Similarity::cosine, 1234);
    save_index(idx, dir.file("i.dtri"));
    auto back = load_index(dir.file("i.dtri"));
    EXPECT_EQ(back, idx);
    EXPECT_EQ(encode_index(back), encode_index(idx));
}

TEST(IndexFile, BadMagicVersionAndTruncation) {
    auto idx = make_index(matrix({{1, 0}, {0, 1}}), {"a", "b"}, {"s", "s"}, Similarity::dot);
    auto bytes = encode_index(idx);
    auto bad = bytes;
    bad[1] = '?';
    EXPECT_THROW(decode_index(bad), UnsupportedFormatError);
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_index(bad), UnsupportedFormatError);
    EXPECT_THROW(decode_index(std::string_view(bytes).substr(0, bytes.size() - 2)), CorruptionError);
    EXPECT_THROW(decode_index(bytes + "zz"), CorruptionError);
    EXPECT_THROW(load_index("/nonexistent/i.dtri"), IoError);
}

TEST(BuildIndex, EmbedsEveryRecordWithModelDigest) {
    std::mt19937_64 rng(5);
    t::ContainerShape s;
    s.records = 10;
    s.dim = 4;
    auto c = random_container(rng, s);
    ModelConfig mc;
    mc.input_dim = 4;
    mc.hidden_dim = 6;
    mc.embed_dim = 3;
    mc.layer_ids = s.layers;
    auto model = init_model(mc);
    auto idx = build_index(model, c);
    EXPECT_EQ(idx.size(), 10u);
    EXPECT_EQ(idx.model_digest, mc.digest());
    EXPECT_EQ(idx.ids[3], c.records()[3].id);
    EXPECT_EQ(idx.schema_ids[3], c.records()[3].schema_id);
    auto q = embed(model, c.records()[3]);
    EXPECT_EQ(retrieve(idx, q, 1).hits[0].id, c.records()[3].id);
}
