#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "redefix/error.hpp"
#include "redefix/patch_engine.hpp"
#include "redefix/prompt_builder.hpp"

namespace redefix::llm {

class LlmError : public Error {
public:
    using Error::Error;
};

/// Prompt too large for the model, detected locally or reported by the provider.
class ContextOverflow : public LlmError {
public:
    using LlmError::LlmError;
};

class MockExhausted : public LlmError {
public:
    using LlmError::LlmError;
};

class AllRunsUnparseable : public LlmError {
public:
    using LlmError::LlmError;
};

inline constexpr const char* kApiKeyEnv = "REDEFIX_LLM_API_KEY";

struct LlmConfig {
    std::string endpoint;  // full chat-completions URL
    std::string model_id = "mistral-small-3.1-24b";
    int max_context_tokens = 128000;
    nlohmann::json sampling = nlohmann::json::object();  // merged into the request body as-is
    std::optional<std::filesystem::path> mock_script;
    std::string api_key;  // empty: read kApiKeyEnv at call time
    int max_retries = 3;
    std::chrono::milliseconds backoff{1000};
    int timeout_seconds = 300;
};

void validate(const LlmConfig& c);
/// Leaves api_key out.
void to_json(nlohmann::json& j, const LlmConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, LlmConfig& c);

struct PatchCandidate {
    std::string raw_response;
    patch::CssPatch patch;
    std::string normalized_key;
    int votes = 1;
};

void to_json(nlohmann::json& j, const PatchCandidate& c);

/// Request body for one chat completion: the whole prompt as a single user
/// message, images attached as base64 PNG data URLs.
nlohmann::json chat_request(const prompt::Prompt& p, const LlmConfig& c);

/// Assistant text of a chat-completion response body.
std::string response_text(const nlohmann::json& body);

std::string base64(const std::string& bytes);

/// Picks the most frequent normalized_key; ties go to the earliest first
/// occurrence. Throws AllRunsUnparseable on an empty list.
PatchCandidate vote(const std::vector<PatchCandidate>& candidates);

class LlmClient {
public:
    /// Mock mode when config.mock_script is set; the script is read here.
    explicit LlmClient(LlmConfig config);
    /// Mock mode with an in-memory script.
    LlmClient(LlmConfig config, std::vector<std::string> script);

    std::string complete(const prompt::Prompt& p);

    /// n completions, each run through extract_patch, then vote().
    PatchCandidate majority_patch(const prompt::Prompt& p, int n = 5);

    bool mock() const { return script_.has_value(); }
    int calls() const;
    const LlmConfig& config() const { return config_; }

private:
    std::string complete_http(const prompt::Prompt& p);

    LlmConfig config_;
    std::optional<std::vector<std::string>> script_;
    mutable std::mutex mu_;
    std::size_t next_ = 0;
    int calls_ = 0;
};

}  // namespace redefix::llm
