#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "redefix/browser_harness.hpp"
#include "redefix/error.hpp"
#include "redefix/knowledge_base.hpp"
#include "redefix/layout_model.hpp"
#include "redefix/llm_client.hpp"
#include "redefix/patch_engine.hpp"
#include "redefix/prompt_builder.hpp"
#include "redefix/retriever.hpp"

namespace redefix::repair {

class RepairError : public Error {
public:
    using Error::Error;
};

/// No (element, property) pair measurably reduces the failure.
class EmptyCandidates : public RepairError {
public:
    using RepairError::RepairError;
};

// ---------------------------------------------------------------------------
// Detection over a viewport sweep

struct SweepConfig {
    int min = 320;
    int max = 1400;
    int step = 10;
    int small_range_threshold = layout::kDefaultSmallRangeThreshold;
    bool refine = true;
};

void validate(const SweepConfig& s);
/// min, min+step, ..., always ending at max.
std::vector<int> sweep_widths(const SweepConfig& s);

struct Detection {
    layout::ResponsiveLayoutGraph rlg;
    std::vector<layout::RlfRecord> records;
};

/// Snapshots every sweep width, detects, then refines failure boundaries
/// with extra snapshots and detects again.
Detection detect_page(browser::PageDriver& page, const SweepConfig& sweep);

// ---------------------------------------------------------------------------
// Localization

struct LocalizedPair {
    std::string xpath;
    std::string property;
    double score = 0;

    friend bool operator==(const LocalizedPair&, const LocalizedPair&) = default;
};

struct LocalizationResult {
    std::vector<LocalizedPair> ranked;  // score descending
};

void to_json(nlohmann::json& j, const LocalizedPair& p);
void from_json(const nlohmann::json& j, LocalizedPair& p);

inline constexpr std::size_t kMaxLocalized = 10;

/// Trial value that switches a property's influence off, or nullopt for
/// properties that are not probed (font-size among them).
std::optional<std::string> neutral_value(const std::string& property);

/// Reads an external localization file: JSON [{xpath, property, score}].
LocalizationResult load_localization(const std::filesystem::path& file);

/// Checks a localization against the failure: non-empty, scores
/// non-increasing, each xpath a participant or an ancestor of one in `at`.
void validate(const LocalizationResult& loc, const layout::RlfRecord& rlf, const layout::LayoutSnapshot& at);

/// Perturbation probing at failure_range.min: candidates are the
/// participants and up to two ancestor levels, crossed with `lexicon`;
/// score = drop in failure_magnitude when the property is neutralized.
/// Keeps positive scores, best kMaxLocalized. Throws EmptyCandidates.
LocalizationResult localize(browser::PageDriver& page, const layout::RlfRecord& rlf,
                            const layout::ResponsiveLayoutGraph& rlg, const std::vector<std::string>& lexicon);

// ---------------------------------------------------------------------------
// Validation

struct ValidationResult {
    bool fixed = false;
    std::vector<layout::RlfRecord> introduced;

    bool accepted() const { return fixed && introduced.empty(); }
};

/// Injects the patch under `marker`, re-detects and diffs against
/// `baseline`. The patch stays installed only when accepted.
ValidationResult validate_patch(browser::PageDriver& page, const layout::RlfRecord& rlf,
                                const std::vector<layout::RlfRecord>& baseline, const patch::MediaScopedPatch& scoped,
                                const std::string& marker, const SweepConfig& sweep);

// ---------------------------------------------------------------------------
// The loop

enum class RepairStatus { Repaired, FailedTokenBudget, FailedMaxIterations, FailedUnparseable, FailedLocalization };

std::string_view to_string(RepairStatus s);

struct IterationRecord {
    int index = 0;
    int prompt_tokens = 0;
    std::string prompt;
    std::optional<llm::PatchCandidate> candidate;  // absent when every run was unparseable
    std::optional<patch::MediaScopedPatch> scoped;
    ValidationResult validation;

    bool accepted() const { return validation.accepted(); }
};

struct RepairOutcome {
    layout::RlfRecord rlf;
    RepairStatus status = RepairStatus::FailedMaxIterations;
    std::string detail;
    LocalizationResult localization;
    std::vector<std::int64_t> retrieved_ids;  // retriever output, before any budget trimming
    std::string so_posts_section;             // as built into the first prompt
    std::vector<IterationRecord> iterations;
    std::optional<patch::MediaScopedPatch> final_patch;
    std::optional<Screenshot> before;  // at failure_range.min
    std::optional<Screenshot> after;   // same width, patch installed
};

void to_json(nlohmann::json& j, const IterationRecord& r);
void to_json(nlohmann::json& j, const RepairOutcome& o);

struct RepairConfig {
    SweepConfig sweep;
    int max_iterations = 5;
    int n_majority = 5;
    int completion_reserve = 4096;  // tokens kept free for the answer
    retrieval::EnsembleWeights weights;
    int top_k = retrieval::kDefaultTopK;
    bool zero_shot = false;
    bool include_images = true;
    prompt::TokenCost token_cost;
    double screenshot_padding = browser::kDefaultScreenshotPadding;
};

void validate(const RepairConfig& c);

struct RepairResources {
    const prompt::PromptTemplate* prompt_template = nullptr;
    std::map<layout::RlfType, std::string> definitions;
    std::map<layout::RlfType, std::vector<std::string>> lexicons;
    const kb::KbStore* kb = nullptr;  // never read in zero-shot mode
    const retrieval::Embedder* embedder = nullptr;
};

std::map<layout::RlfType, std::string> load_definitions(const std::filesystem::path& file);

/// detect-localize-retrieve-prompt-generate-inject-validate until a patch
/// is accepted or a limit is hit. `external` replaces heuristic
/// localization. Style markers are `marker_prefix` + "-it" + k.
RepairOutcome repair(browser::PageDriver& page, const layout::RlfRecord& rlf, const Detection& baseline,
                     const RepairResources& resources, llm::LlmClient& client, const RepairConfig& config,
                     const std::optional<LocalizationResult>& external = std::nullopt,
                     const std::string& marker_prefix = "redefix-patch");

}  // namespace redefix::repair
