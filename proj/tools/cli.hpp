#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "redefix/browser_harness.hpp"
#include "redefix/error.hpp"
#include "redefix/knowledge_base.hpp"
#include "redefix/llm_client.hpp"
#include "redefix/repair_loop.hpp"
#include "redefix/retriever.hpp"

namespace redefix::cli {

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kError = 1;
inline constexpr int kKbPartial = 2;
inline constexpr int kFailuresFound = 3;
inline constexpr int kNotAllRepaired = 4;
}  // namespace exit_code

inline constexpr const char* kSoApiKeyEnv = "REDEFIX_SO_API_KEY";
inline constexpr const char* kConfigEnv = "REDEFIX_CONFIG";
inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kIndexFile = "index.html";

struct EmbedderConfig {
    std::string type = "hashing";  // or "remote"
    int dimension = 256;
    retrieval::RemoteEmbedderOptions remote;
};

struct StackExchangeConfig {
    kb::HttpClientOptions http;
    kb::FetchOptions fetch;
};

/// Everything a command needs. Data files are resolved against the config
/// file's directory; kb_path and output_dir against the working directory.
struct RunConfig {
    repair::SweepConfig sweep;
    std::filesystem::path kb_path = "redefix-kb";
    retrieval::EnsembleWeights weights;
    int top_k = retrieval::kDefaultTopK;
    int max_iterations = 5;
    int n_majority = 5;
    int completion_reserve = 4096;
    bool include_images = true;
    llm::LlmConfig llm;
    browser::HarnessOptions harness;
    std::filesystem::path output_dir = "redefix-out";
    EmbedderConfig embedder;
    StackExchangeConfig stackexchange;

    std::filesystem::path keywords_file;
    std::filesystem::path lexicons_file;
    std::filesystem::path definitions_file;
    std::filesystem::path prompt_template_file;
};

void validate(const RunConfig& c);

/// Reads a JSON config; missing keys keep defaults. Secrets come from the
/// environment: REDEFIX_SO_API_KEY and REDEFIX_LLM_API_KEY override the file.
RunConfig load_config(const std::filesystem::path& file);

/// Config file used when --config is absent: $REDEFIX_CONFIG, else the
/// shipped data/config.json.
std::filesystem::path default_config_path();

repair::RepairConfig repair_config(const RunConfig& c, bool zero_shot);

std::unique_ptr<retrieval::Embedder> make_embedder(const EmbedderConfig& c);

// Commands. Each returns its process exit code and never throws.

struct KbBuildFlags {
    std::optional<std::filesystem::path> fixture;  // canned API directory
};
int cmd_kb_build(const RunConfig& config, const KbBuildFlags& flags, std::ostream& out, std::ostream& err);
int cmd_kb_stats(const RunConfig& config, std::ostream& out, std::ostream& err);

int cmd_detect(const std::string& url, const RunConfig& config, std::ostream& out, std::ostream& err);

struct RepairFlags {
    std::optional<int> rlf_index;
    std::optional<std::filesystem::path> mock_llm;
    std::optional<std::filesystem::path> localization_file;
    bool zero_shot = false;
};
int cmd_repair(const std::string& url, const RunConfig& config, const RepairFlags& flags, std::ostream& out,
               std::ostream& err);

int cmd_report(const std::filesystem::path& output_dir, std::ostream& out, std::ostream& err);

/// Renders index.html content from a parsed report.json.
std::string render_report_html(const nlohmann::json& report);

/// Full command line, as main() sees it.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace redefix::cli
