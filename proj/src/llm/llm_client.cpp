#include "redefix/llm_client.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "redefix/url.hpp"

namespace redefix::llm {

void validate(const LlmConfig& c) {
    if (c.max_context_tokens <= 0) throw LlmError("max_context_tokens must be > 0");
    if (c.max_retries < 0) throw LlmError("max_retries must be >= 0");
    if (!c.sampling.is_object()) throw LlmError("sampling must be a JSON object");
    if (!c.mock_script && c.endpoint.empty()) throw LlmError("llm endpoint is required unless a mock script is given");
}

void to_json(nlohmann::json& j, const LlmConfig& c) {
    j = {{"endpoint", c.endpoint},
         {"model_id", c.model_id},
         {"max_context_tokens", c.max_context_tokens},
         {"sampling", c.sampling},
         {"max_retries", c.max_retries},
         {"backoff_ms", c.backoff.count()},
         {"timeout_seconds", c.timeout_seconds}};
    if (c.mock_script) j["mock_script"] = c.mock_script->string();
}

void from_json(const nlohmann::json& j, LlmConfig& c) {
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model_id = j.value("model_id", c.model_id);
    c.max_context_tokens = j.value("max_context_tokens", c.max_context_tokens);
    if (j.contains("sampling")) c.sampling = j.at("sampling");
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long long>(c.backoff.count())));
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.api_key = j.value("api_key", c.api_key);
    if (j.contains("mock_script") && !j.at("mock_script").is_null()) c.mock_script = j.at("mock_script").get<std::string>();
}

void to_json(nlohmann::json& j, const PatchCandidate& c) {
    j = {{"raw_response", c.raw_response},
         {"patch", patch::serialize(c.patch)},
         {"normalized_key", c.normalized_key},
         {"votes", c.votes}};
}

std::string base64(const std::string& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

nlohmann::json chat_request(const prompt::Prompt& p, const LlmConfig& c) {
    auto content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", p.text()}});
    for (const auto& img : p.images)
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64(img.png_bytes)}}}});
    nlohmann::json body = c.sampling;
    body["model"] = c.model_id;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", content}}});
    return body;
}

std::string response_text(const nlohmann::json& body) {
    try {
        const auto& content = body.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        std::string out;
        for (const auto& part : content)
            if (part.value("type", "") == "text") out += part.at("text").get<std::string>();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw LlmError(std::string("malformed chat-completion response: ") + e.what());
    }
}

PatchCandidate vote(const std::vector<PatchCandidate>& candidates) {
    if (candidates.empty()) throw AllRunsUnparseable("no run produced a parseable CSS patch");
    std::map<std::string, int> counts;
    for (const auto& c : candidates) ++counts[c.normalized_key];
    const PatchCandidate* best = nullptr;
    for (const auto& c : candidates)  // first occurrence wins ties
        if (!best || counts[c.normalized_key] > counts[best->normalized_key]) best = &c;
    PatchCandidate out = *best;
    out.votes = counts[out.normalized_key];
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> load_script(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw LlmError("cannot read mock script " + file.string());
    try {
        return nlohmann::json::parse(in).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw LlmError("mock script " + file.string() + " must be a JSON array of strings: " + e.what());
    }
}

bool mentions_context_limit(const std::string& body) {
    std::string lower;
    for (char ch : body) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return lower.find("context") != std::string::npos &&
           (lower.find("length") != std::string::npos || lower.find("too long") != std::string::npos ||
            lower.find("maximum") != std::string::npos || lower.find("exceed") != std::string::npos);
}

}  // namespace

LlmClient::LlmClient(LlmConfig config) : config_(std::move(config)) {
    validate(config_);
    if (config_.mock_script) script_ = load_script(*config_.mock_script);
}

LlmClient::LlmClient(LlmConfig config, std::vector<std::string> script)
    : config_(std::move(config)), script_(std::move(script)) {
    config_.mock_script.reset();
    if (config_.endpoint.empty()) config_.endpoint = "mock:";
    validate(config_);
}

int LlmClient::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::string LlmClient::complete(const prompt::Prompt& p) {
    if (p.token_estimate > config_.max_context_tokens)
        throw ContextOverflow("prompt estimate " + std::to_string(p.token_estimate) + " exceeds max_context_tokens " +
                              std::to_string(config_.max_context_tokens));
    if (script_) {
        std::lock_guard lock(mu_);
        if (next_ >= script_->size())
            throw MockExhausted("mock script exhausted after " + std::to_string(script_->size()) + " responses");
        ++calls_;
        return (*script_)[next_++];
    }
    {
        std::lock_guard lock(mu_);
        ++calls_;
    }
    return complete_http(p);
}

std::string LlmClient::complete_http(const prompt::Prompt& p) {
    const auto [origin, path] = split_url(config_.endpoint);
    std::string key = config_.api_key;
    if (key.empty())
        if (const char* env = std::getenv(kApiKeyEnv)) key = env;
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    const auto body = chat_request(p, config_).dump();

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        auto wait = config_.backoff * (1 << attempt);
        httplib::Client cli(origin);
        cli.set_connection_timeout(config_.timeout_seconds);
        cli.set_read_timeout(config_.timeout_seconds);
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
        } else if (res->status == 200) {
            try {
                return response_text(nlohmann::json::parse(res->body));
            } catch (const nlohmann::json::parse_error& e) {
                throw LlmError(std::string("chat-completion response is not JSON: ") + e.what());
            }
        } else if (res->status == 429) {
            last_error = "rate limited (HTTP 429)";
            if (res->has_header("Retry-After")) {
                try {
                    wait = std::chrono::seconds(std::stoi(res->get_header_value("Retry-After")));
                } catch (const std::exception&) {
                }
            }
        } else if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else if (mentions_context_limit(res->body)) {
            throw ContextOverflow("provider rejected the prompt as too long: " + res->body.substr(0, 300));
        } else {
            throw LlmError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));
        }
        if (attempt < config_.max_retries) std::this_thread::sleep_for(wait);
    }
    throw LlmError("chat endpoint failed after " + std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

PatchCandidate LlmClient::majority_patch(const prompt::Prompt& p, int n) {
    if (n < 1) throw LlmError("majority vote needs n >= 1");
    std::vector<PatchCandidate> candidates;
    for (int i = 0; i < n; ++i) {
        auto text = complete(p);
        try {
            auto patch = patch::extract_patch(text);
            auto key = patch::normalized_key(patch);
            candidates.push_back({std::move(text), std::move(patch), std::move(key)});
        } catch (const patch::PatchError&) {
            // unparseable runs do not vote
        }
    }
    if (candidates.empty()) throw AllRunsUnparseable("all " + std::to_string(n) + " runs were unparseable");
    return vote(candidates);
}

}  // namespace redefix::llm
