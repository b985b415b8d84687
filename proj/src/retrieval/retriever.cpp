#include "redefix/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "redefix/url.hpp"

namespace redefix::retrieval {

// ---------------------------------------------------------------------------
// BM25

Bm25Index::Bm25Index(const std::vector<std::pair<std::int64_t, std::vector<std::string>>>& docs, Bm25Params params)
    : params_(params) {
    if (params.k1 < 0 || params.b < 0 || params.b > 1) throw RetrievalError("BM25 needs k1 >= 0 and 0 <= b <= 1");
    long total = 0;
    for (const auto& [id, tokens] : docs) {
        if (!pos_.emplace(id, ids_.size()).second) throw RetrievalError("duplicate document id " + std::to_string(id));
        ids_.push_back(id);
        auto& tf = tf_.emplace_back();
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [t, _] : tf) ++df_[t];
        lengths_.push_back(static_cast<int>(tokens.size()));
        total += static_cast<long>(tokens.size());
    }
    avg_len_ = ids_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(ids_.size());
}

int Bm25Index::doc_freq(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
}

double Bm25Index::score(const std::vector<std::string>& query_tokens, std::int64_t doc_id) const {
    auto p = pos_.find(doc_id);
    if (p == pos_.end()) throw RetrievalError("unknown document id " + std::to_string(doc_id));
    const auto& tf = tf_[p->second];
    const double n = static_cast<double>(ids_.size());
    const double len_norm = avg_len_ > 0 ? lengths_[p->second] / avg_len_ : 0.0;
    double s = 0;
    for (const auto& t : query_tokens) {
        auto f = tf.find(t);
        if (f == tf.end()) continue;
        const double df = doc_freq(t);
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double freq = f->second;
        s += idf * freq * (params_.k1 + 1) / (freq + params_.k1 * (1 - params_.b + params_.b * len_norm));
    }
    return s;
}

std::vector<std::pair<std::int64_t, double>> Bm25Index::rank(const std::vector<std::string>& query_tokens) const {
    std::vector<std::pair<std::int64_t, double>> out;
    for (auto id : ids_) {
        const double s = score(query_tokens, id);
        if (s > 0) out.emplace_back(id, s);
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    return out;
}

// ---------------------------------------------------------------------------
// Embeddings

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.is_zero() || b.is_zero()) return 0.0;
    if (a.values.size() != b.values.size()) throw RetrievalError("embedding dimensions differ");
    double dot = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return dot / (a.norm * b.norm);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

EmbeddingVector normalized(std::vector<double> v) {
    double sq = 0;
    for (double x : v) sq += x * x;
    EmbeddingVector out{std::move(v), 0};
    if (sq == 0) return out;
    const double n = std::sqrt(sq);
    for (auto& x : out.values) x /= n;
    out.norm = 1.0;
    return out;
}

}  // namespace

HashingEmbedder::HashingEmbedder(int dimension) : dim_(dimension) {
    if (dimension < 1) throw RetrievalError("embedding dimension must be >= 1");
}

EmbeddingVector HashingEmbedder::embed(std::string_view text) const {
    std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& tok : tokenize(text)) {
        const auto h = fnv1a(tok);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        v[h % static_cast<std::uint64_t>(dim_)] += sign;
    }
    return normalized(std::move(v));
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderOptions options) : options_(std::move(options)), fallback_(options_.dimension) {
    if (options_.endpoint.empty()) throw RetrievalError("remote embedder needs an endpoint");
}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
    try {
        const auto [origin, path] = split_url(options_.endpoint);
        httplib::Client cli(origin);
        cli.set_connection_timeout(options_.timeout_seconds);
        cli.set_read_timeout(options_.timeout_seconds);
        const nlohmann::json req = {{"input", {std::string(text)}}};
        auto res = cli.Post(path, req.dump(), "application/json");
        if (!res) throw RetrievalError("embedding endpoint unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200) throw RetrievalError("embedding endpoint returned HTTP " + std::to_string(res->status));
        auto values = nlohmann::json::parse(res->body).at("vectors").at(0).get<std::vector<double>>();
        if (static_cast<int>(values.size()) != options_.dimension)
            throw RetrievalError("embedding endpoint returned dimension " + std::to_string(values.size()));
        return normalized(std::move(values));
    } catch (const std::exception& e) {
        if (!options_.fallback_to_hashing) {
            if (dynamic_cast<const RetrievalError*>(&e)) throw;
            throw RetrievalError(std::string("embedding endpoint: ") + e.what());
        }
        return fallback_.embed(text);
    }
}

// ---------------------------------------------------------------------------
// Fusion

void validate(const EnsembleWeights& w) {
    if (w.bm25 < 0 || w.dense < 0 || w.bm25 + w.dense <= 0)
        throw RetrievalError("ensemble weights must be >= 0 with a positive sum");
}

std::vector<RankedResult> fuse_rankings(const std::vector<std::int64_t>& bm25_order,
                                        const std::vector<std::int64_t>& dense_order, const EnsembleWeights& weights,
                                        int k) {
    validate(weights);
    if (k < 1) throw RetrievalError("k must be >= 1");
    std::map<std::int64_t, RankedResult> acc;
    for (std::size_t i = 0; i < bm25_order.size(); ++i) {
        auto& r = acc[bm25_order[i]];
        r.doc_id = bm25_order[i];
        r.bm25_rank = static_cast<int>(i + 1);
    }
    for (std::size_t i = 0; i < dense_order.size(); ++i) {
        auto& r = acc[dense_order[i]];
        r.doc_id = dense_order[i];
        r.dense_rank = static_cast<int>(i + 1);
    }
    std::vector<RankedResult> out;
    for (auto& [id, r] : acc) {
        // Summed in a fixed order so equal inputs give bit-equal scores.
        double s = 0;
        if (r.bm25_rank) s += weights.bm25 / (kRrfConstant + *r.bm25_rank);
        if (r.dense_rank) s += weights.dense / (kRrfConstant + *r.dense_rank);
        r.fused_score = s;
        if (s > 0) out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const RankedResult& a, const RankedResult& b) {
        return a.fused_score != b.fused_score ? a.fused_score > b.fused_score : a.doc_id < b.doc_id;
    });
    if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
    return out;
}

std::string document_text(const kb::KbDocument& d) {
    std::string s = d.metadata.title + "\n" + d.cleaned_question;
    for (const auto& a : d.answers) s += "\n" + a;
    for (const auto& c : d.comments) s += "\n" + c;
    return text::strip_code_markers(s);
}

HybridIndex::HybridIndex(std::vector<kb::KbDocument> docs, const Embedder& embedder, Bm25Params params)
    : docs_(std::move(docs)), embedder_(embedder) {
    std::vector<std::pair<std::int64_t, std::vector<std::string>>> tokenized;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const auto text = document_text(docs_[i]);
        pos_[docs_[i].metadata.id] = i;
        tokenized.emplace_back(docs_[i].metadata.id, tokenize(text));
        vectors_.push_back(embedder_.embed(text));
    }
    bm25_ = Bm25Index(tokenized, params);
}

std::vector<std::int64_t> HybridIndex::bm25_order(std::string_view query) const {
    std::vector<std::int64_t> out;
    for (const auto& [id, _] : bm25_.rank(tokenize(query))) out.push_back(id);
    return out;
}

std::vector<std::int64_t> HybridIndex::dense_order(std::string_view query) const {
    const auto q = embedder_.embed(query);
    if (q.is_zero()) return {};
    std::vector<std::pair<std::int64_t, double>> scored;
    for (std::size_t i = 0; i < docs_.size(); ++i)
        if (!vectors_[i].is_zero()) scored.emplace_back(docs_[i].metadata.id, cosine(q, vectors_[i]));
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    std::vector<std::int64_t> out;
    for (const auto& [id, _] : scored) out.push_back(id);
    return out;
}

std::vector<RankedResult> HybridIndex::ensemble_rank(std::string_view query, const EnsembleWeights& weights, int k) const {
    if (docs_.empty()) return {};
    return fuse_rankings(bm25_order(query), dense_order(query), weights, k);
}

const kb::KbDocument& HybridIndex::document(std::int64_t id) const {
    auto it = pos_.find(id);
    if (it == pos_.end()) throw RetrievalError("unknown document id " + std::to_string(id));
    return docs_[it->second];
}

std::string properties_query(const std::vector<std::string>& properties) {
    if (properties.empty()) throw RetrievalError("retrieval needs at least one property");
    std::string q;
    for (const auto& p : properties) {
        if (!q.empty()) q += ' ';
        q += p;
    }
    return q;
}

std::vector<kb::KbDocument> retrieve_context(const std::vector<std::string>& properties, layout::RlfType type,
                                             const kb::KbStore& store, const Embedder& embedder,
                                             const EnsembleWeights& weights, int k, Bm25Params params) {
    const auto query = properties_query(properties);
    HybridIndex index(store.documents(type), embedder, params);
    std::vector<kb::KbDocument> out;
    for (const auto& r : index.ensemble_rank(query, weights, k)) out.push_back(index.document(r.doc_id));
    return out;
}

}  // namespace redefix::retrieval
