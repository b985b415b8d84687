#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "redefix/error.hpp"
#include "redefix/knowledge_base.hpp"
#include "redefix/layout_model.hpp"
#include "redefix/patch_engine.hpp"
#include "redefix/screenshot.hpp"

namespace redefix::prompt {

class PromptError : public Error {
public:
    using Error::Error;
};

/// The prompt (or a retry) no longer fits the model's context.
class BudgetExceeded : public PromptError {
public:
    using PromptError::PromptError;
};

enum class SectionKind { Role, Task, Context, SoPosts, CoT };

inline constexpr SectionKind kSectionOrder[] = {SectionKind::Role, SectionKind::Task, SectionKind::Context,
                                                SectionKind::SoPosts, SectionKind::CoT};

std::string_view to_string(SectionKind k);

inline constexpr std::string_view kCotSentence = "Let's think step by step";
inline constexpr std::size_t kMaxExcerptChars = 4000;

struct TokenCost {
    int chars_per_token = 4;
    int per_image = 1600;
};

/// ceil(chars / chars_per_token) + images * per_image. An approximation.
int estimate_tokens(std::string_view text, std::size_t images, const TokenCost& cost = {});

struct RlfContext {
    layout::RlfRecord rlf;
    std::string definition;
    std::vector<patch::LocalizedTarget> localized;  // best first
    std::map<std::string, std::string> selectors;   // xpath -> CSS selector, optional
    std::map<std::string, layout::BoundingBox> coordinates;  // at failure_range.min
    std::optional<Screenshot> screenshot_inside;
    std::optional<Screenshot> screenshot_outside;
    std::string page_excerpt;
};

struct Prompt {
    std::vector<std::pair<SectionKind, std::string>> sections;
    std::vector<std::string> continuations;  // retry texts, oldest first
    std::vector<Screenshot> images;
    int token_estimate = 0;

    /// Non-empty sections then continuations, joined by blank lines.
    std::string text() const;
    const std::string& section(SectionKind k) const;
};

/// Section texts with {{placeholders}}, loaded from a template file.
class PromptTemplate {
public:
    static PromptTemplate load(const std::filesystem::path& file);
    static PromptTemplate parse(std::string_view text);

    const std::string& section(SectionKind k) const { return sections_.at(k); }

private:
    std::map<SectionKind, std::string> sections_;
};

struct BuildOptions {
    TokenCost cost;
    bool include_images = true;  // false for text-only models
};

/// Five sections in fixed order. Over budget: drop the lowest-ranked posts,
/// then shorten the page excerpt, then throw BudgetExceeded.
Prompt build_prompt(const RlfContext& ctx, const std::vector<kb::KbDocument>& retrieved, int budget,
                    const PromptTemplate& tmpl, const BuildOptions& options = {});

/// The retry sentence for one failed patch.
std::string retry_text(const patch::CssPatch& failed_patch);

/// Appends retry_text to the previous prompt; throws BudgetExceeded when the
/// result does not fit.
Prompt build_retry(const Prompt& previous, const patch::CssPatch& failed_patch, int budget, const TokenCost& cost = {});

}  // namespace redefix::prompt
