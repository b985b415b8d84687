#include <algorithm>
#include <ctime>
#include <fstream>
#include <regex>
#include <thread>
#include <type_traits>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "redefix/knowledge_base.hpp"
#include "redefix/text.hpp"

namespace redefix::kb {

using nlohmann::json;

void from_json(const json& j, SoQuestion& q) {
    q.id = j.at("question_id").get<std::int64_t>();
    q.link = j.value("link", "");
    q.title = j.value("title", "");
    q.body = j.value("body", "");
    q.score = j.value("score", 0);
    q.tags = j.value("tags", std::vector<std::string>{});
    q.answer_count = j.value("answer_count", 0);
    q.comment_count = j.value("comment_count", 0);
    if (q.id <= 0) throw KbError("question id must be positive");
}

void from_json(const json& j, SoAnswer& a) {
    a.id = j.at("answer_id").get<std::int64_t>();
    a.question_id = j.at("question_id").get<std::int64_t>();
    a.score = j.value("score", 0);
    a.body = j.value("body", "");
}

void from_json(const json& j, SoComment& c) {
    c.id = j.at("comment_id").get<std::int64_t>();
    c.post_id = j.at("post_id").get<std::int64_t>();
    c.body = j.value("body", "");
}

namespace {

json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw KbError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw KbError(p.string() + ": " + e.what());
    }
}

template <typename T>
std::vector<T> read_items(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) return {};
    json j = read_json_file(p);
    if (j.is_object()) j = j.value("items", json::array());
    return j.get<std::vector<T>>();
}

std::string join_ids(const std::vector<std::int64_t>& ids, std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (!out.empty()) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

std::chrono::seconds until_utc_midnight() {
    const auto now = std::time(nullptr);
    return std::chrono::seconds(86400 - now % 86400);
}

}  // namespace

// ---------------------------------------------------------------------------
// FixtureClient

FixtureClient::FixtureClient(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw KbError("fixture directory not found: " + dir.string());
    questions_ = read_items<SoQuestion>(dir / "questions.json");
    answers_ = read_items<SoAnswer>(dir / "answers.json");
    comments_ = read_items<SoComment>(dir / "comments.json");
    if (std::filesystem::exists(dir / "config.json")) {
        const auto cfg = read_json_file(dir / "config.json");
        page_size_ = cfg.value("page_size", page_size_);
        if (cfg.contains("max_requests")) max_requests_ = cfg.at("max_requests").get<int>();
    }
    if (page_size_ < 1) throw KbError("fixture page_size must be >= 1");
}

void FixtureClient::count_request() {
    if (max_requests_ && requests_ >= *max_requests_)
        throw QuotaExhaustedError("fixture quota exhausted after " + std::to_string(requests_) + " requests",
                                  std::chrono::seconds(3600));
    ++requests_;
}

SearchPage FixtureClient::search(const std::string& phrase, const std::string& tag, int page) {
    count_request();
    const auto needle = text::to_lower(phrase);
    std::vector<SoQuestion> hits;
    for (const auto& q : questions_) {
        if (std::find(q.tags.begin(), q.tags.end(), tag) == q.tags.end()) continue;
        if (text::to_lower(q.title).find(needle) == std::string::npos &&
            text::to_lower(q.body).find(needle) == std::string::npos)
            continue;
        hits.push_back(q);
    }
    SearchPage out;
    const std::size_t from = static_cast<std::size_t>(page - 1) * page_size_;
    for (std::size_t i = from; i < hits.size() && i < from + page_size_; ++i) out.items.push_back(hits[i]);
    out.has_more = from + page_size_ < hits.size();
    return out;
}

std::vector<SoAnswer> FixtureClient::answers(const std::vector<std::int64_t>& question_ids) {
    count_request();
    const std::unordered_set<std::int64_t> want(question_ids.begin(), question_ids.end());
    std::vector<SoAnswer> out;
    for (const auto& a : answers_)
        if (want.contains(a.question_id)) out.push_back(a);
    return out;
}

std::vector<SoComment> FixtureClient::comments(const std::vector<std::int64_t>& post_ids) {
    count_request();
    const std::unordered_set<std::int64_t> want(post_ids.begin(), post_ids.end());
    std::vector<SoComment> out;
    for (const auto& c : comments_)
        if (want.contains(c.post_id)) out.push_back(c);
    return out;
}

// ---------------------------------------------------------------------------
// HttpStackExchangeClient

HttpStackExchangeClient::HttpStackExchangeClient(HttpClientOptions options) : options_(std::move(options)) {
    if (options_.max_requests_per_second <= 0) throw KbError("max_requests_per_second must be positive");
}

HttpStackExchangeClient::~HttpStackExchangeClient() = default;

json HttpStackExchangeClient::get(const std::string& path, const std::vector<std::pair<std::string, std::string>>& params) {
    httplib::Params query(params.begin(), params.end());
    query.emplace("site", options_.site);
    if (!options_.api_key.empty()) query.emplace("key", options_.api_key);

    auto backoff = options_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        {
            // Shared limiter: requests are spaced at least 1/rate apart.
            std::unique_lock lock(mutex_);
            const auto now = std::chrono::steady_clock::now();
            const auto start = std::max(now, next_allowed_);
            next_allowed_ = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(1.0 / options_.max_requests_per_second));
            lock.unlock();
            std::this_thread::sleep_until(start);
        }

        httplib::Client cli(options_.base_url);
        cli.set_connection_timeout(options_.timeout);
        cli.set_read_timeout(options_.timeout);
        cli.set_follow_location(true);
        auto res = cli.Get(options_.api_prefix + path, query, httplib::Headers{{"Accept-Encoding", "gzip"}});

        const bool transient = !res || res->status >= 500 || res->status == 429;
        if (transient) {
            if (attempt >= options_.max_retries)
                throw KbError("Stack Exchange request " + path + " failed: " +
                              (res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error())));
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
            continue;
        }

        json body;
        try {
            body = json::parse(res->body);
        } catch (const json::exception& e) {
            throw KbError("Stack Exchange returned invalid JSON for " + path + ": " + e.what());
        }
        if (res->status != 200) {
            const int error_id = body.value("error_id", 0);
            const std::string message = body.value("error_message", "");
            if (error_id == 502) {
                std::smatch m;
                std::chrono::seconds retry = until_utc_midnight();
                if (std::regex_search(message, m, std::regex(R"((\d+) seconds)"))) retry = std::chrono::seconds(std::stol(m[1]));
                throw QuotaExhaustedError("Stack Exchange throttle: " + message, retry);
            }
            throw KbError("Stack Exchange error " + std::to_string(res->status) + " on " + path + ": " + message);
        }
        if (body.contains("backoff")) {
            std::lock_guard lock(mutex_);
            next_allowed_ = std::max(next_allowed_, std::chrono::steady_clock::now() +
                                                        std::chrono::seconds(body.at("backoff").get<int>()));
        }
        if (body.value("quota_remaining", 1) <= 0 && !body.value("has_more", false)) {
            // Last request of the day; the next one would be refused.
            std::lock_guard lock(mutex_);
            next_allowed_ = std::chrono::steady_clock::time_point::max();
        }
        return body;
    }
}

SearchPage HttpStackExchangeClient::search(const std::string& phrase, const std::string& tag, int page) {
    {
        std::lock_guard lock(mutex_);
        if (next_allowed_ == std::chrono::steady_clock::time_point::max())
            throw QuotaExhaustedError("Stack Exchange daily quota exhausted", until_utc_midnight());
    }
    const auto body = get("/search/advanced", {{"q", phrase},
                                               {"tagged", tag},
                                               {"page", std::to_string(page)},
                                               {"pagesize", "100"},
                                               {"order", "desc"},
                                               {"sort", "relevance"},
                                               {"filter", "withbody"}});
    SearchPage out;
    out.items = body.value("items", json::array()).get<std::vector<SoQuestion>>();
    out.has_more = body.value("has_more", false);
    return out;
}

template <typename T>
std::vector<T> HttpStackExchangeClient::get_all(const std::string& path_prefix, const std::vector<std::int64_t>& ids) {
    std::vector<T> out;
    for (std::size_t from = 0; from < ids.size(); from += 100) {
        const auto batch = join_ids(ids, from, std::min(ids.size(), from + 100));
        for (int page = 1;; ++page) {
            {
                std::lock_guard lock(mutex_);
                if (next_allowed_ == std::chrono::steady_clock::time_point::max())
                    throw QuotaExhaustedError("Stack Exchange daily quota exhausted", until_utc_midnight());
            }
            const auto body = get(path_prefix + "/" + batch + (std::is_same<T, SoAnswer>::value ? "/answers" : "/comments"),
                                  {{"page", std::to_string(page)}, {"pagesize", "100"}, {"filter", "withbody"}});
            for (const auto& item : body.value("items", json::array())) out.push_back(item.template get<T>());
            if (!body.value("has_more", false)) break;
        }
    }
    return out;
}

std::vector<SoAnswer> HttpStackExchangeClient::answers(const std::vector<std::int64_t>& question_ids) {
    return get_all<SoAnswer>("/questions", question_ids);
}

std::vector<SoComment> HttpStackExchangeClient::comments(const std::vector<std::int64_t>& post_ids) {
    return get_all<SoComment>("/posts", post_ids);
}

// ---------------------------------------------------------------------------

std::vector<SoQuestion> fetch_questions(const KeywordSet& keywords, StackExchangeClient& api, const FetchOptions& options) {
    validate(keywords);
    std::vector<SoQuestion> out;
    std::unordered_set<std::int64_t> seen;
    std::vector<std::string> completed;
    try {
        for (const auto& phrase : keywords.phrases) {
            for (const auto& tag : options.tags) {
                for (int page = 1; page <= options.max_pages; ++page) {
                    auto result = api.search(phrase, tag, page);
                    for (auto& q : result.items)
                        if (seen.insert(q.id).second) out.push_back(std::move(q));
                    if (!result.has_more) break;
                }
            }
            completed.push_back(phrase);
        }
    } catch (QuotaExhaustedError& e) {
        QuotaExhaustedError err(e.what(), e.retry_after);
        err.partial = std::move(out);
        err.completed_phrases = std::move(completed);
        throw err;
    }
    return out;
}

}  // namespace redefix::kb
