#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "redefix/error.hpp"
#include "redefix/knowledge_base.hpp"
#include "redefix/text.hpp"

namespace redefix::retrieval {

using text::tokenize;

class RetrievalError : public Error {
public:
    using Error::Error;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

class Bm25Index {
public:
    Bm25Index() = default;
    /// One entry per document: (doc id, tokens). Ids must be unique.
    Bm25Index(const std::vector<std::pair<std::int64_t, std::vector<std::string>>>& docs, Bm25Params params = {});

    /// Okapi BM25 with IDF = ln(1 + (N - df + 0.5) / (df + 0.5)). Repeated
    /// query tokens count once per occurrence. Throws on an unknown id.
    double score(const std::vector<std::string>& query_tokens, std::int64_t doc_id) const;

    /// Documents with a positive score, best first, ties by ascending id.
    std::vector<std::pair<std::int64_t, double>> rank(const std::vector<std::string>& query_tokens) const;

    std::size_t size() const { return ids_.size(); }
    double avg_doc_length() const { return avg_len_; }
    int doc_freq(const std::string& term) const;

private:
    Bm25Params params_;
    std::vector<std::int64_t> ids_;
    std::unordered_map<std::int64_t, std::size_t> pos_;
    std::vector<std::unordered_map<std::string, int>> tf_;
    std::vector<int> lengths_;
    std::unordered_map<std::string, int> df_;
    double avg_len_ = 0;
};

struct EmbeddingVector {
    std::vector<double> values;
    double norm = 0;  // L2 norm of values

    bool is_zero() const { return norm == 0; }
};

/// 0 when either vector is zero.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual int dimension() const = 0;
};

/// Feature hashing of tokens (FNV-1a, sign from a separate hash bit) into a
/// fixed number of buckets, then L2 normalisation. Bag of tokens, so word
/// order does not matter.
class HashingEmbedder : public Embedder {
public:
    explicit HashingEmbedder(int dimension = 256);
    EmbeddingVector embed(std::string_view text) const override;
    int dimension() const override { return dim_; }

private:
    int dim_;
};

struct RemoteEmbedderOptions {
    std::string endpoint;  // full URL, POST {input:[text]} -> {vectors:[[...]]}
    int dimension = 256;
    bool fallback_to_hashing = false;
    int timeout_seconds = 30;
};

class RemoteEmbedder : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderOptions options);
    EmbeddingVector embed(std::string_view text) const override;
    int dimension() const override { return options_.dimension; }

private:
    RemoteEmbedderOptions options_;
    HashingEmbedder fallback_;
};

struct EnsembleWeights {
    double bm25 = 0.8;
    double dense = 0.2;
};

void validate(const EnsembleWeights& w);

inline constexpr int kRrfConstant = 60;
inline constexpr int kDefaultTopK = 5;

struct RankedResult {
    std::int64_t doc_id = 0;
    double fused_score = 0;
    std::optional<int> bm25_rank;   // 1-based
    std::optional<int> dense_rank;  // 1-based

    friend bool operator==(const RankedResult&, const RankedResult&) = default;
};

/// Weighted reciprocal rank fusion of two rankings (ids best first):
/// fused = sum of w / (60 + rank). Documents with fused score 0 are dropped;
/// the rest sorted by score, ties by ascending id, cut to k.
std::vector<RankedResult> fuse_rankings(const std::vector<std::int64_t>& bm25_order,
                                        const std::vector<std::int64_t>& dense_order, const EnsembleWeights& weights,
                                        int k);

/// Text a document is indexed under: title, question, answers, comments.
std::string document_text(const kb::KbDocument& d);

/// BM25 plus dense index over one store's documents.
class HybridIndex {
public:
    HybridIndex(std::vector<kb::KbDocument> docs, const Embedder& embedder, Bm25Params params = {});

    std::vector<RankedResult> ensemble_rank(std::string_view query, const EnsembleWeights& weights,
                                            int k = kDefaultTopK) const;
    std::vector<std::int64_t> bm25_order(std::string_view query) const;
    /// All documents with a non-zero vector by cosine, ties by ascending id;
    /// empty when the query embeds to zero.
    std::vector<std::int64_t> dense_order(std::string_view query) const;

    const kb::KbDocument& document(std::int64_t id) const;
    std::size_t size() const { return docs_.size(); }

private:
    std::vector<kb::KbDocument> docs_;
    std::unordered_map<std::int64_t, std::size_t> pos_;
    const Embedder& embedder_;
    Bm25Index bm25_;
    std::vector<EmbeddingVector> vectors_;
};

/// Property names joined by single spaces.
std::string properties_query(const std::vector<std::string>& properties);

/// Top-k documents of the type's store, in fused order.
std::vector<kb::KbDocument> retrieve_context(const std::vector<std::string>& properties, layout::RlfType type,
                                             const kb::KbStore& store, const Embedder& embedder,
                                             const EnsembleWeights& weights = {}, int k = kDefaultTopK,
                                             Bm25Params params = {});

}  // namespace redefix::retrieval
