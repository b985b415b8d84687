#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "redefix/error.hpp"
#include "redefix/layout_model.hpp"

namespace redefix::patch {

class PatchError : public Error {
public:
    using Error::Error;
};

struct CssDeclaration {
    std::string property;  // lowercase
    std::string value;
    bool important = false;

    friend bool operator==(const CssDeclaration&, const CssDeclaration&) = default;
};

struct CssRule {
    std::string selector;
    std::vector<CssDeclaration> declarations;

    friend bool operator==(const CssRule&, const CssRule&) = default;
};

struct CssPatch {
    std::vector<CssRule> rules;

    friend bool operator==(const CssPatch&, const CssPatch&) = default;
};

struct MediaScopedPatch {
    int min_width = 0;
    int max_width = 0;
    CssPatch patch;

    friend bool operator==(const MediaScopedPatch&, const MediaScopedPatch&) = default;
};

/// Throws PatchError unless the patch has >= 1 rule, each with >= 1
/// declaration, properties matching [a-z-]+ and non-empty values.
void validate(const CssPatch& p);

/// Lenient parser for a run of CSS rules. Comments are skipped, rules
/// nested in @media blocks are flattened, other at-rules ignored.
/// Declarations with an empty or malformed property or an empty value are
/// dropped, then rules left without declarations. Throws PatchError when
/// nothing remains.
CssPatch parse_css(std::string_view css);

/// Parses text produced by serialize(MediaScopedPatch), bounds included.
MediaScopedPatch parse_scoped(std::string_view css);

/// Plain rules, same layout as inside the media block but unindented.
std::string serialize(const CssPatch& p);

/// `@media (min-width: Apx) and (max-width: Bpx) {` + indented rules + `}`,
/// LF newlines, every declaration written with !important.
std::string serialize(const MediaScopedPatch& p);

/// Marks every declaration !important and attaches the inclusive bounds.
MediaScopedPatch scope_patch(const CssPatch& p, layout::WidthRange failure_range);

/// Canonical form used for majority voting: lowercase properties, whitespace
/// squeezed, declarations sorted by property, rules sorted by selector.
std::string normalized_key(const CssPatch& p);

/// Looks a CSS patch up in free text: the last ```css block, else the last
/// fenced block that parses, else every `selector { ... }` group found in
/// the prose. Throws PatchError ("no patch found") otherwise.
CssPatch extract_patch(std::string_view response);

// ---------------------------------------------------------------------------
// Selectors

struct ElementStep {
    std::string tag;  // lowercase
    std::string id;   // empty when absent
    int child_index = 1;  // 1-based among element siblings
};

/// Live-document questions the selector logic needs.
class DocumentQuery {
public:
    virtual ~DocumentQuery() = default;
    /// Element chain from the root element down to the xpath's target, or
    /// nullopt when the xpath does not resolve.
    virtual std::optional<std::vector<ElementStep>> ancestry(const std::string& xpath) = 0;
    /// XPaths (probe format) of every element the selector matches. Invalid
    /// selectors match nothing.
    virtual std::vector<std::string> matches(const std::string& selector) = 0;
};

/// `#id` when the element has an id, otherwise an `tag:nth-child(k)` chain
/// rooted at the nearest ancestor with an id, or at body. Verified to match
/// exactly the element.
std::string selector_for(const std::string& xpath, DocumentQuery& doc);

/// One localized (xpath, property) pair; best first in the input list.
struct LocalizedTarget {
    std::string xpath;
    std::string property;
};

/// Keeps a rule's selector only if it matches exactly one element and that
/// element is localized. Otherwise the rule is pointed at a localized
/// element (one it already matched, else the best one whose property it
/// sets, else the top one) via selector_for.
CssPatch retarget(const CssPatch& p, const std::vector<LocalizedTarget>& localized, DocumentQuery& doc);

}  // namespace redefix::patch
