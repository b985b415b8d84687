#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "redefix/error.hpp"
#include "redefix/layout_model.hpp"

namespace redefix::kb {

using layout::RlfType;

class KbError : public Error {
public:
    using Error::Error;
};

struct KeywordSet {
    RlfType rlf_type = RlfType::ElementCollision;
    std::vector<std::string> phrases;
};

/// Checks the phrase rules (non-empty list, lowercase, 1 to 6 words).
void validate(const KeywordSet& k);

struct SoQuestion {
    std::int64_t id = 0;
    std::string link;
    std::string title;
    std::string body;
    int score = 0;
    std::vector<std::string> tags;
    int answer_count = 0;
    int comment_count = 0;
};

struct SoAnswer {
    std::int64_t id = 0;
    std::int64_t question_id = 0;
    int score = 0;
    std::string body;
};

/// A comment on a question or on one of its answers.
struct SoComment {
    std::int64_t id = 0;
    std::int64_t post_id = 0;
    std::string body;
};

struct KbMetadata {
    std::int64_t id = 0;
    std::string link;
    std::string title;
    std::string body;  // raw question HTML
};

struct KbDocument {
    RlfType rlf_type = RlfType::ElementCollision;
    KbMetadata metadata;
    std::string cleaned_question;
    std::vector<std::string> answers;
    std::vector<std::string> comments;

    friend bool operator==(const KbDocument&, const KbDocument&) = default;
};

/// Throws KbError when a loaded document breaks the store invariants.
void validate(const KbDocument& d);

void to_json(nlohmann::json& j, const KbDocument& d);
void from_json(const nlohmann::json& j, KbDocument& d);
void from_json(const nlohmann::json& j, SoQuestion& q);
void from_json(const nlohmann::json& j, SoAnswer& a);
void from_json(const nlohmann::json& j, SoComment& c);

/// RAKE: candidates split at stopwords and punctuation, word score
/// degree/frequency, phrase score the sum. Sorted by score descending then
/// first occurrence. Repeated phrases appear once.
std::vector<std::pair<std::string, double>> rake_keywords(std::string_view text, const std::set<std::string>& stopwords);

/// Strips every tag except <code>/</code> (kept literally, inner text
/// verbatim), decodes entities, collapses whitespace outside code. A decoded
/// or stray '<' is written as "&lt;" so the only '<' left belong to code tags.
std::string clean_html(std::string_view body);

/// Whole-token match of any lexicon property against the tokenized text.
bool mentions_any(std::string_view cleaned, const std::vector<std::string>& lexicon);

std::optional<KbDocument> filter_and_bundle(RlfType type, const SoQuestion& q, const std::vector<SoAnswer>& answers,
                                            const std::vector<SoComment>& comments,
                                            const std::vector<std::string>& property_lexicon);

// ---------------------------------------------------------------------------
// Stack Exchange access

struct SearchPage {
    std::vector<SoQuestion> items;
    bool has_more = false;
};

class QuotaExhaustedError : public KbError {
public:
    QuotaExhaustedError(const std::string& what, std::chrono::seconds retry_after)
        : KbError(what), retry_after(retry_after) {}

    std::chrono::seconds retry_after;
    std::vector<SoQuestion> partial;                // filled by fetch_questions
    std::vector<std::string> completed_phrases;     // filled by fetch_questions
};

class StackExchangeClient {
public:
    virtual ~StackExchangeClient() = default;
    /// One page (1-based) of search results for `phrase` restricted to `tag`.
    virtual SearchPage search(const std::string& phrase, const std::string& tag, int page) = 0;
    virtual std::vector<SoAnswer> answers(const std::vector<std::int64_t>& question_ids) = 0;
    /// Comments attached to any of the given posts (questions or answers).
    virtual std::vector<SoComment> comments(const std::vector<std::int64_t>& post_ids) = 0;
};

/// Serves a directory of canned API data: questions.json, answers.json and
/// comments.json (Stack Exchange item arrays) plus an optional config.json
/// {"page_size": n, "max_requests": n}. Search matches the phrase as a
/// case-insensitive substring of title or body.
class FixtureClient : public StackExchangeClient {
public:
    explicit FixtureClient(const std::filesystem::path& dir);

    SearchPage search(const std::string& phrase, const std::string& tag, int page) override;
    std::vector<SoAnswer> answers(const std::vector<std::int64_t>& question_ids) override;
    std::vector<SoComment> comments(const std::vector<std::int64_t>& post_ids) override;

    int requests() const { return requests_; }

private:
    void count_request();

    std::vector<SoQuestion> questions_;
    std::vector<SoAnswer> answers_;
    std::vector<SoComment> comments_;
    int page_size_ = 100;
    std::optional<int> max_requests_;
    int requests_ = 0;
};

struct HttpClientOptions {
    std::string base_url = "https://api.stackexchange.com";
    std::string api_prefix = "/2.3";
    std::string site = "stackoverflow";
    std::string api_key;  // empty = anonymous quota
    double max_requests_per_second = 25.0;
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{30};
};

/// Live Stack Exchange API v2.x client (gzip JSON over HTTPS).
class HttpStackExchangeClient : public StackExchangeClient {
public:
    explicit HttpStackExchangeClient(HttpClientOptions options);
    ~HttpStackExchangeClient() override;

    SearchPage search(const std::string& phrase, const std::string& tag, int page) override;
    std::vector<SoAnswer> answers(const std::vector<std::int64_t>& question_ids) override;
    std::vector<SoComment> comments(const std::vector<std::int64_t>& post_ids) override;

private:
    nlohmann::json get(const std::string& path, const std::vector<std::pair<std::string, std::string>>& params);
    template <typename T>
    std::vector<T> get_all(const std::string& path_prefix, const std::vector<std::int64_t>& ids);

    HttpClientOptions options_;
    std::mutex mutex_;
    std::chrono::steady_clock::time_point next_allowed_{};
};

struct FetchOptions {
    std::vector<std::string> tags = {"css", "html"};
    int max_pages = 10;
};

/// One query per phrase and tag, paginated, de-duplicated by id in
/// first-seen order. On quota exhaustion rethrows with partial results.
std::vector<SoQuestion> fetch_questions(const KeywordSet& keywords, StackExchangeClient& api,
                                        const FetchOptions& options = {});

// ---------------------------------------------------------------------------
// Store

struct TypeStats {
    int questions = 0;
    int answers = 0;
    int comments = 0;
    int fetched = 0;
};

struct KbStats {
    bool complete = true;
    std::map<RlfType, TypeStats> per_type;
    std::vector<std::string> completed_phrases;  // only meaningful when incomplete
    int retry_after_seconds = 0;

    TypeStats totals() const;
};

void to_json(nlohmann::json& j, const KbStats& s);
void from_json(const nlohmann::json& j, KbStats& s);

struct KbBuildConfig {
    std::filesystem::path output_dir;
    std::map<RlfType, KeywordSet> keywords;
    std::map<RlfType, std::vector<std::string>> lexicons;
    FetchOptions fetch;
};

/// Types that get a store: every type except SmallRange.
std::vector<RlfType> repairable_types();

/// File name of a type's store, e.g. "element_collision.jsonl".
std::string store_file_name(RlfType t);

/// Fetches, filters and writes one JSONL per repairable type plus stats.json.
/// A quota stop still writes what was gathered, with stats.complete = false.
KbStats build_kb(const KbBuildConfig& config, StackExchangeClient& api);

/// Read-only view of a built knowledge base.
class KbStore {
public:
    KbStore() = default;
    /// Loads and re-validates every document; missing type files read as empty.
    static KbStore load(const std::filesystem::path& dir);

    const std::vector<KbDocument>& documents(RlfType t) const;
    const KbStats& stats() const { return stats_; }
    void add(KbDocument d);

private:
    std::map<RlfType, std::vector<KbDocument>> docs_;
    KbStats stats_;
};

// ---------------------------------------------------------------------------
// Shipped configuration data

std::map<RlfType, KeywordSet> load_keywords(const std::filesystem::path& file);
std::map<RlfType, std::vector<std::string>> load_lexicons(const std::filesystem::path& file);
std::set<std::string> load_stopwords(const std::filesystem::path& file);

}  // namespace redefix::kb
