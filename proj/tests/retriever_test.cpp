#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "redefix/retriever.hpp"
#include "support/concept_embedder.hpp"

using namespace redefix::retrieval;
using redefix::kb::KbDocument;
using redefix::layout::RlfType;
namespace fs = std::filesystem;
using redefix::testing::ConceptEmbedder;

namespace {

const fs::path kToy = fs::path(REDEFIX_SOURCE_DIR) / "tests/fixtures/retrieval";

nlohmann::json read(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

Bm25Index bm25_toy() {
    std::vector<std::pair<std::int64_t, std::vector<std::string>>> docs;
    for (const auto& d : read(kToy / "bm25_toy.json")) docs.emplace_back(d["id"].get<std::int64_t>(), tokenize(d["text"].get<std::string>()));
    return Bm25Index(docs);
}

KbDocument toy_doc(std::int64_t id, const std::string& title, const std::string& question, const std::string& answer) {
    KbDocument d;
    d.rlf_type = RlfType::ElementProtrusion;
    d.metadata = {id, "https://stackoverflow.com/q/" + std::to_string(id), title, "<p>" + question + "</p>"};
    d.cleaned_question = question;
    d.answers = {answer};
    return d;
}

std::vector<KbDocument> rrf_toy() {
    std::vector<KbDocument> out;
    for (const auto& d : read(kToy / "rrf_toy.json"))
        out.push_back(toy_doc(d["id"], d["title"], d["question"], d["answer"]));
    return out;
}

std::vector<std::int64_t> ids(const std::vector<RankedResult>& r) {
    std::vector<std::int64_t> out;
    for (const auto& x : r) out.push_back(x.doc_id);
    return out;
}

}  // namespace

TEST(Tokenize, Examples) {
    EXPECT_EQ(tokenize("Box-Sizing: border-box;"), (std::vector<std::string>{"box-sizing", "border-box"}));
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_EQ(tokenize("width100%"), std::vector<std::string>{"width100"});
    EXPECT_EQ(tokenize("a - b -- c"), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Bm25, ToyCorpusMatchesHandComputedValues) {
    // IDF(width) = ln(1 + 1.5/2.5) = ln 1.6, avgdl = 6.
    // doc 1: tf 2, len 7: ln1.6 * 2*2.2 / (2 + 1.2*(0.25 + 0.75*7/6)).
    // doc 3: tf 1, len 5: ln1.6 * 2.2 / (1 + 1.2*(0.25 + 0.75*5/6)).
    auto idx = bm25_toy();
    EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 6.0);
    EXPECT_NEAR(idx.score({"width"}, 1), 0.6173181996063395, 1e-9);
    EXPECT_NEAR(idx.score({"width"}, 2), 0.0, 1e-9);
    EXPECT_NEAR(idx.score({"width"}, 3), 0.5043941387027407, 1e-9);
    EXPECT_NEAR(idx.score({"box-sizing"}, 2), 0.9808292530117263, 1e-9);
    EXPECT_NEAR(idx.score({"width", "border-box"}, 2), 0.9808292530117263, 1e-9);
}

TEST(Bm25, AbsentTermsAndRepeats) {
    auto idx = bm25_toy();
    EXPECT_EQ(idx.score({"flexbox"}, 1), 0.0);
    EXPECT_GT(idx.score({"width", "width"}, 1), idx.score({"width"}, 1));
    EXPECT_NEAR(idx.score({"width", "width"}, 1), 1.234636399212679, 1e-9);
    EXPECT_THROW(idx.score({"width"}, 99), RetrievalError);
}

TEST(Bm25, AddingUnrelatedDocumentKeepsOrder) {
    std::vector<std::pair<std::int64_t, std::vector<std::string>>> docs;
    for (const auto& d : read(kToy / "bm25_toy.json")) docs.emplace_back(d["id"].get<std::int64_t>(), tokenize(d["text"].get<std::string>()));
    const auto before = Bm25Index(docs).rank({"width"});
    docs.emplace_back(4, tokenize("flexbox gap and grid template areas are unrelated"));
    const auto after = Bm25Index(docs).rank({"width"});
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].first, after[i].first);
}

TEST(HashingEmbedder, DeterministicOrderFreeNormalized) {
    HashingEmbedder e;
    EXPECT_EQ(e.dimension(), 256);
    EXPECT_EQ(e.embed("margin padding").values, e.embed("margin padding").values);
    EXPECT_TRUE(e.embed("").is_zero());
    EXPECT_NEAR(cosine(e.embed("margin padding"), e.embed("padding margin")), 1.0, 1e-12);
    double sq = 0;
    for (double x : e.embed("a b c width").values) sq += x * x;
    EXPECT_NEAR(sq, 1.0, 1e-12);
}

TEST(Fusion, HandComputedRrfOnFourDocCorpus) {
    ConceptEmbedder emb;
    HybridIndex index(rrf_toy(), emb);
    const std::string q = "width box-sizing";
    // BM25 (hand evaluation): 12 = 1.7435, 11 = 1.1566, 13 = 0.6860, 14 = 0.
    EXPECT_EQ(index.bm25_order(q), (std::vector<std::int64_t>{12, 11, 13}));
    // Concept cosines: 14 = 1, 11 = 1/sqrt2, 12 = 3/sqrt20, 13 = 1/sqrt20.
    EXPECT_EQ(index.dense_order(q), (std::vector<std::int64_t>{14, 11, 12, 13}));

    auto r = index.ensemble_rank(q, {0.8, 0.2}, 5);
    ASSERT_EQ(ids(r), (std::vector<std::int64_t>{12, 11, 13, 14}));
    EXPECT_NEAR(r[0].fused_score, 0.8 / 61 + 0.2 / 63, 1e-12);
    EXPECT_NEAR(r[1].fused_score, 0.8 / 62 + 0.2 / 62, 1e-12);
    EXPECT_NEAR(r[2].fused_score, 0.8 / 63 + 0.2 / 64, 1e-12);
    EXPECT_NEAR(r[3].fused_score, 0.2 / 61, 1e-12);
    EXPECT_EQ(r[3].bm25_rank, std::nullopt);
    EXPECT_EQ(r[3].dense_rank, 1);
    EXPECT_EQ(r[0].bm25_rank, 1);
    EXPECT_EQ(r[0].dense_rank, 3);
}

TEST(Fusion, DegenerateWeightsReproduceSingleRetrievers) {
    ConceptEmbedder emb;
    HybridIndex index(rrf_toy(), emb);
    const std::string q = "width box-sizing";
    EXPECT_EQ(ids(index.ensemble_rank(q, {1.0, 0.0}, 10)), index.bm25_order(q));
    EXPECT_EQ(ids(index.ensemble_rank(q, {0.0, 0.7}, 10)), index.dense_order(q));
    EXPECT_EQ(index.ensemble_rank(q, {0.8, 0.2}, 2).size(), 2u);
    EXPECT_EQ(index.ensemble_rank(q, {0.8, 0.2}, 100).size(), 4u);
    EXPECT_THROW(index.ensemble_rank(q, {0, 0}, 5), RetrievalError);
    EXPECT_THROW(index.ensemble_rank(q, {-1, 2}, 5), RetrievalError);
}

TEST(Fusion, TiesBreakByAscendingId) {
    auto r = fuse_rankings({7, 3}, {3, 7}, {0.5, 0.5}, 5);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].doc_id, 3);
    EXPECT_EQ(r[0].fused_score, r[1].fused_score);
}

TEST(Fusion, MonotoneInEitherRank) {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::int64_t> a = {1, 2, 3, 4, 5, 6}, b = a;
        std::shuffle(a.begin(), a.end(), rng);
        std::shuffle(b.begin(), b.end(), rng);
        const auto pos = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
        const auto doc = a[pos];
        auto score_of = [&](const std::vector<std::int64_t>& x, const std::vector<std::int64_t>& y) {
            for (const auto& r : fuse_rankings(x, y, {0.8, 0.2}, 10))
                if (r.doc_id == doc) return r.fused_score;
            return 0.0;
        };
        auto improved = a;
        std::swap(improved[pos], improved[pos - 1]);
        EXPECT_GE(score_of(improved, b), score_of(a, b));
    }
}

TEST(Fusion, EmptyStoreGivesEmptyList) {
    HashingEmbedder emb;
    HybridIndex index({}, emb);
    EXPECT_TRUE(index.ensemble_rank("width", {}, 5).empty());
}

TEST(Fusion, DeterministicOutput) {
    HashingEmbedder emb;
    auto run = [&] {
        HybridIndex index(rrf_toy(), emb);
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : index.ensemble_rank("width box-sizing overflow", {}, 5))
            j.push_back({r.doc_id, r.fused_score, r.bm25_rank.value_or(-1), r.dense_rank.value_or(-1)});
        return j.dump();
    };
    EXPECT_EQ(run(), run());
}

TEST(RetrieveContext, QueryJoinAndOrdering) {
    EXPECT_EQ(properties_query({"width", "box-sizing"}), "width box-sizing");
    EXPECT_THROW(properties_query({}), RetrievalError);

    redefix::kb::KbStore store;
    for (auto& d : rrf_toy()) store.add(d);
    ConceptEmbedder emb;
    auto docs = retrieve_context({"width", "box-sizing"}, RlfType::ElementProtrusion, store, emb);
    std::vector<std::int64_t> got;
    for (const auto& d : docs) got.push_back(d.metadata.id);
    EXPECT_EQ(got, (std::vector<std::int64_t>{12, 11, 13, 14}));
    EXPECT_TRUE(retrieve_context({"width"}, RlfType::ElementCollision, store, emb).empty());
}

TEST(RetrieveContext, SingleMatchingDocumentComesFirst) {
    redefix::kb::KbStore store;
    store.add(toy_doc(1, "Fonts", "font looks odd", "use a web font"));
    store.add(toy_doc(2, "Sizing", "the width is too big", "set it smaller"));
    HashingEmbedder emb;
    auto docs = retrieve_context({"width"}, RlfType::ElementProtrusion, store, emb);
    ASSERT_FALSE(docs.empty());
    EXPECT_EQ(docs[0].metadata.id, 2);
}
