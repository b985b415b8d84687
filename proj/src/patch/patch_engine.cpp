#include "redefix/patch_engine.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "redefix/text.hpp"

namespace redefix::patch {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && is_space(s[a])) ++a;
    while (b > a && is_space(s[b - 1])) --b;
    return std::string(s.substr(a, b - a));
}

std::string squeeze(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            space = true;
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

bool valid_property(std::string_view p) {
    return !p.empty() && std::all_of(p.begin(), p.end(), [](char c) { return (c >= 'a' && c <= 'z') || c == '-'; }) &&
           p.find_first_not_of('-') != std::string_view::npos;
}

std::string strip_comments(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size();) {
        if (s.substr(i, 2) == "/*") {
            const auto end = s.find("*/", i + 2);
            i = end == std::string_view::npos ? s.size() : end + 2;
            out.push_back(' ');
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

// Index of the '}' closing the '{' at `open`, honouring quotes and nesting.
std::size_t matching_brace(std::string_view s, std::size_t open) {
    int depth = 0;
    char quote = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (quote) {
            if (c == '\\') ++i;
            else if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i;
        }
    }
    return std::string_view::npos;
}

// Splits on `sep` outside quotes and parentheses.
std::vector<std::string> split_top(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    int paren = 0;
    char quote = 0;
    for (char c : s) {
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '(') {
            ++paren;
        } else if (c == ')') {
            paren = std::max(0, paren - 1);
        } else if (c == sep && paren == 0) {
            out.push_back(cur);
            cur.clear();
            continue;
        }
        cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

std::vector<CssDeclaration> parse_declarations(std::string_view block) {
    std::vector<CssDeclaration> out;
    for (const auto& raw : split_top(block, ';')) {
        const auto colon = raw.find(':');
        if (colon == std::string::npos) continue;
        CssDeclaration d;
        d.property = text::to_lower(trim(raw.substr(0, colon)));
        std::string value = squeeze(raw.substr(colon + 1));
        static const std::regex important(R"(\s*!\s*important\s*$)", std::regex::icase);
        std::smatch m;
        if (std::regex_search(value, m, important)) {
            d.important = true;
            value = trim(value.substr(0, static_cast<std::size_t>(m.position(0))));
        }
        d.value = value;
        if (!valid_property(d.property) || d.value.empty()) continue;
        out.push_back(std::move(d));
    }
    return out;
}

// Rejects prose and code that happens to contain braces.
bool plausible_selector(std::string_view sel) {
    if (sel.empty() || sel.size() > 300) return false;
    int bracket = 0;
    for (char c : sel) {
        if (c == '[') ++bracket;
        else if (c == ']') --bracket;
        else if ((c == '=' && bracket == 0) || c == ';' || c == '{' || c == '}' || c == '`' || c == '!' || c == '?')
            return false;
    }
    return bracket == 0;
}

void parse_block(std::string_view s, std::vector<CssRule>& out) {
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (is_space(s[i]) || s[i] == ';' || s[i] == '}')) ++i;
        if (i >= s.size()) break;
        const auto open = s.find('{', i);
        const auto semi = s.find(';', i);
        if (s[i] == '@' && semi != std::string_view::npos && (open == std::string_view::npos || semi < open)) {
            i = semi + 1;  // @import and friends
            continue;
        }
        if (open == std::string_view::npos) break;
        const auto close = matching_brace(s, open);
        const auto prelude = squeeze(s.substr(i, open - i));
        const auto body = s.substr(open + 1, (close == std::string_view::npos ? s.size() : close) - open - 1);
        i = close == std::string_view::npos ? s.size() : close + 1;
        if (prelude.starts_with("@")) {
            if (text::to_lower(prelude).starts_with("@media") || text::to_lower(prelude).starts_with("@supports"))
                parse_block(body, out);
            continue;
        }
        if (!plausible_selector(prelude)) continue;
        auto decls = parse_declarations(body);
        if (!decls.empty()) out.push_back({prelude, std::move(decls)});
    }
}

std::string squeeze_around_punct(std::string_view s) {
    std::string in = squeeze(s), out;
    static const std::string punct = ",()>+~:";
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] == ' ') {
            const bool before = !out.empty() && punct.find(out.back()) != std::string::npos;
            const bool after = i + 1 < in.size() && punct.find(in[i + 1]) != std::string::npos;
            if (before || after) continue;
        }
        out.push_back(in[i]);
    }
    return out;
}

}  // namespace

void validate(const CssPatch& p) {
    if (p.rules.empty()) throw PatchError("patch has no rules");
    for (const auto& r : p.rules) {
        if (trim(r.selector).empty()) throw PatchError("rule with empty selector");
        if (r.declarations.empty()) throw PatchError("rule '" + r.selector + "' has no declarations");
        for (const auto& d : r.declarations) {
            if (!valid_property(d.property)) throw PatchError("invalid property name '" + d.property + "'");
            if (trim(d.value).empty()) throw PatchError("empty value for " + d.property);
        }
    }
}

CssPatch parse_css(std::string_view css) {
    CssPatch p;
    parse_block(strip_comments(css), p.rules);
    if (p.rules.empty()) throw PatchError("no CSS rules found");
    return p;
}

MediaScopedPatch parse_scoped(std::string_view css) {
    static const std::regex prelude(R"(@media\s*\(\s*min-width\s*:\s*(-?\d+)px\s*\)\s*and\s*\(\s*max-width\s*:\s*(-?\d+)px\s*\))");
    std::cmatch m;
    if (!std::regex_search(css.begin(), css.end(), m, prelude)) throw PatchError("missing media bounds");
    MediaScopedPatch out;
    out.min_width = std::stoi(m[1]);
    out.max_width = std::stoi(m[2]);
    out.patch = parse_css(css);
    return out;
}

std::string serialize(const CssPatch& p) {
    std::string out;
    for (const auto& r : p.rules) {
        out += r.selector + " {\n";
        for (const auto& d : r.declarations) out += "  " + d.property + ": " + d.value + (d.important ? " !important" : "") + ";\n";
        out += "}\n";
    }
    return out;
}

std::string serialize(const MediaScopedPatch& p) {
    std::string out = "@media (min-width: " + std::to_string(p.min_width) + "px) and (max-width: " +
                      std::to_string(p.max_width) + "px) {\n";
    for (const auto& r : p.patch.rules) {
        out += "  " + r.selector + " {\n";
        for (const auto& d : r.declarations) out += "    " + d.property + ": " + d.value + " !important;\n";
        out += "  }\n";
    }
    out += "}\n";
    return out;
}

MediaScopedPatch scope_patch(const CssPatch& p, layout::WidthRange range) {
    validate(p);
    if (range.min > range.max) throw PatchError("failure range min exceeds max");
    MediaScopedPatch out{range.min, range.max, p};
    for (auto& r : out.patch.rules)
        for (auto& d : r.declarations) d.important = true;
    return out;
}

std::string normalized_key(const CssPatch& p) {
    std::vector<std::pair<std::string, std::string>> rules;
    for (const auto& r : p.rules) {
        std::vector<std::string> decls;
        for (const auto& d : r.declarations)
            decls.push_back(text::to_lower(trim(d.property)) + ":" + squeeze_around_punct(d.value) +
                            (d.important ? "!important" : ""));
        std::stable_sort(decls.begin(), decls.end(), [](const std::string& a, const std::string& b) {
            return a.substr(0, a.find(':')) < b.substr(0, b.find(':'));
        });
        std::string body;
        for (const auto& d : decls) body += d + ";";
        rules.emplace_back(squeeze_around_punct(r.selector), body);
    }
    std::stable_sort(rules.begin(), rules.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string key;
    for (const auto& [sel, body] : rules) key += sel + "{" + body + "}";
    return key;
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

struct Fence {
    std::string tag;
    std::string body;
};

std::vector<Fence> fenced_blocks(std::string_view s) {
    std::vector<Fence> out;
    std::size_t i = 0;
    while (true) {
        const auto open = s.find("```", i);
        if (open == std::string_view::npos) break;
        const auto eol = s.find('\n', open + 3);
        if (eol == std::string_view::npos) break;
        const auto close = s.find("```", eol + 1);
        if (close == std::string_view::npos) break;
        out.push_back({text::to_lower(trim(s.substr(open + 3, eol - open - 3))), std::string(s.substr(eol + 1, close - eol - 1))});
        i = close + 3;
    }
    return out;
}

std::optional<CssPatch> try_parse(std::string_view css) {
    try {
        return parse_css(css);
    } catch (const PatchError&) {
        return std::nullopt;
    }
}

const std::set<std::string>& html_tags() {
    static const std::set<std::string> tags = {
        "a", "article", "aside", "body", "button", "div", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6",
        "header", "html", "img", "input", "label", "li", "main", "nav", "ol", "p", "section", "span", "table",
        "td", "th", "tr", "ul", "figure", "picture", "video", "iframe", "textarea", "select", "pre", "code"};
    return tags;
}

bool selector_token(const std::string& t) {
    if (t.empty()) return false;
    if (t == ">" || t == "+" || t == "~" || t == "*") return true;
    if (t[0] == '.' || t[0] == '#' || t[0] == '[' || t[0] == ':' || t[0] == '*') return true;
    std::string head;
    for (char c : t) {
        if (!std::isalnum(static_cast<unsigned char>(c))) break;
        head.push_back(c);
    }
    if (!html_tags().contains(text::to_lower(head))) return false;
    return head.size() == t.size() || std::string_view(".#:[,").find(t[head.size()]) != std::string_view::npos;
}

// The selector is the longest run of selector-looking words ending at `open`.
std::string selector_before(std::string_view s, std::size_t open) {
    std::size_t start = open;
    while (start > 0 && s[start - 1] != '\n' && s[start - 1] != '}' && s[start - 1] != ';') --start;
    std::vector<std::string> words;
    std::string w;
    for (char c : s.substr(start, open - start)) {
        if (is_space(c)) {
            if (!w.empty()) words.push_back(w);
            w.clear();
        } else {
            w.push_back(c);
        }
    }
    if (!w.empty()) words.push_back(w);
    std::size_t keep = words.size();
    while (keep > 0) {
        auto t = words[keep - 1];
        while (!t.empty() && t.back() == ',') t.pop_back();
        if (!selector_token(t)) break;
        --keep;
    }
    std::string sel;
    for (std::size_t i = keep; i < words.size(); ++i) sel += (sel.empty() ? "" : " ") + words[i];
    while (!sel.empty() && (sel.front() == '>' || sel.front() == '+' || sel.front() == '~' || sel.front() == ' '))
        sel.erase(sel.begin());
    return sel;
}

}  // namespace

CssPatch extract_patch(std::string_view response) {
    const auto blocks = fenced_blocks(response);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
        if (it->tag == "css")
            if (auto p = try_parse(it->body)) return *p;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
        if (auto p = try_parse(it->body)) return *p;

    CssPatch found;
    const std::string clean = strip_comments(response);
    const std::string_view s = clean;
    for (std::size_t i = s.find('{'); i != std::string_view::npos;) {
        const auto close = matching_brace(s, i);
        if (close == std::string_view::npos) break;
        const auto sel = selector_before(s, i);
        if (!sel.empty() && plausible_selector(sel)) {
            auto decls = parse_declarations(s.substr(i + 1, close - i - 1));
            if (!decls.empty()) found.rules.push_back({sel, std::move(decls)});
        }
        i = s.find('{', close + 1);
    }
    if (found.rules.empty()) throw PatchError("no patch found in model response");
    return found;
}

// ---------------------------------------------------------------------------
// Selectors

namespace {

bool plain_ident(const std::string& id) {
    if (id.empty() || std::isdigit(static_cast<unsigned char>(id[0])) || id[0] == '-') return false;
    return std::all_of(id.begin(), id.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

std::string id_selector(const std::string& id) {
    if (plain_ident(id)) return "#" + id;
    std::string escaped;
    for (char c : id) {
        if (c == '"' || c == '\\') escaped.push_back('\\');
        escaped.push_back(c);
    }
    return "[id=\"" + escaped + "\"]";
}

}  // namespace

std::string selector_for(const std::string& xpath, DocumentQuery& doc) {
    const auto chain = doc.ancestry(xpath);
    if (!chain || chain->empty()) throw PatchError("xpath does not resolve: " + xpath);
    const auto& target = chain->back();

    std::string sel;
    if (!target.id.empty()) {
        sel = id_selector(target.id);
    } else if (chain->size() <= 2) {
        sel = target.tag;  // html or body
    } else {
        // Walk up to the nearest id-bearing ancestor, stopping at body.
        std::size_t root = 1;
        for (std::size_t i = chain->size() - 1; i-- > 1;) {
            if (!(*chain)[i].id.empty()) {
                root = i;
                break;
            }
        }
        sel = (*chain)[root].id.empty() ? (*chain)[root].tag : id_selector((*chain)[root].id);
        for (std::size_t i = root + 1; i < chain->size(); ++i)
            sel += " > " + (*chain)[i].tag + ":nth-child(" + std::to_string((*chain)[i].child_index) + ")";
    }

    const auto hits = doc.matches(sel);
    if (hits.size() != 1 || hits[0] != xpath)
        throw PatchError("selector " + sel + " does not match exactly " + xpath + " (" + std::to_string(hits.size()) +
                         " matches)");
    return sel;
}

CssPatch retarget(const CssPatch& p, const std::vector<LocalizedTarget>& localized, DocumentQuery& doc) {
    if (localized.empty()) throw PatchError("cannot retarget without localized elements");
    auto rank_of = [&](const std::string& xpath) {
        for (std::size_t i = 0; i < localized.size(); ++i)
            if (localized[i].xpath == xpath) return i;
        return localized.size();
    };
    CssPatch out;
    for (const auto& rule : p.rules) {
        const auto hits = doc.matches(rule.selector);
        std::vector<std::string> local_hits;
        for (const auto& h : hits)
            if (rank_of(h) < localized.size()) local_hits.push_back(h);
        if (hits.size() == 1 && local_hits.size() == 1) {
            out.rules.push_back(rule);
            continue;
        }
        std::string target;
        if (!local_hits.empty()) {
            target = *std::min_element(local_hits.begin(), local_hits.end(),
                                       [&](const auto& a, const auto& b) { return rank_of(a) < rank_of(b); });
        } else {
            for (const auto& l : localized) {
                const bool sets = std::any_of(rule.declarations.begin(), rule.declarations.end(),
                                              [&](const CssDeclaration& d) { return d.property == l.property; });
                if (sets) {
                    target = l.xpath;
                    break;
                }
            }
            if (target.empty()) target = localized.front().xpath;
        }
        out.rules.push_back({selector_for(target, doc), rule.declarations});
    }
    return out;
}

}  // namespace redefix::patch
