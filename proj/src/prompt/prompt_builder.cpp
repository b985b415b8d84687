#include "redefix/prompt_builder.hpp"

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

namespace redefix::prompt {

std::string_view to_string(SectionKind k) {
    switch (k) {
        case SectionKind::Role: return "Role";
        case SectionKind::Task: return "Task";
        case SectionKind::Context: return "Context";
        case SectionKind::SoPosts: return "SoPosts";
        case SectionKind::CoT: return "CoT";
    }
    return "?";
}

int estimate_tokens(std::string_view text, std::size_t images, const TokenCost& cost) {
    if (cost.chars_per_token < 1 || cost.per_image < 0) throw PromptError("invalid token cost settings");
    const auto chars = static_cast<long long>(text.size());
    const long long text_tokens = (chars + cost.chars_per_token - 1) / cost.chars_per_token;
    return static_cast<int>(text_tokens + static_cast<long long>(images) * cost.per_image);
}

std::string Prompt::text() const {
    std::string out;
    auto add = [&](const std::string& part) {
        if (part.empty()) return;
        if (!out.empty()) out += "\n\n";
        out += part;
    };
    for (const auto& [_, t] : sections) add(t);
    for (const auto& c : continuations) add(c);
    return out;
}

const std::string& Prompt::section(SectionKind k) const {
    for (const auto& [kind, t] : sections)
        if (kind == k) return t;
    throw PromptError("prompt has no " + std::string(to_string(k)) + " section");
}

// ---------------------------------------------------------------------------
// Template

namespace {

std::string trim_lines(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string render(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t i = 0;
    while (true) {
        const auto open = tmpl.find("{{", i);
        if (open == std::string::npos) break;
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string::npos) throw PromptError("unterminated placeholder in template");
        const auto name = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end()) throw PromptError("unknown template placeholder {{" + name + "}}");
        out.append(tmpl, i, open - i);
        out += it->second;
        i = close + 2;
    }
    out.append(tmpl, i);
    return out;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    if (s == "-0") s = "0";
    return s;
}

std::string render_post(std::size_t index, const kb::KbDocument& d) {
    std::string s = "[Post " + std::to_string(index) + "]\nTITLE: " + d.metadata.title + "\nLINK: " + d.metadata.link +
                    "\nQUESTION: " + d.cleaned_question;
    for (std::size_t i = 0; i < d.answers.size(); ++i) s += "\nANSWER " + std::to_string(i + 1) + ": " + d.answers[i];
    for (std::size_t i = 0; i < d.comments.size(); ++i) s += "\nCOMMENT " + std::to_string(i + 1) + ": " + d.comments[i];
    return s;
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
    static const std::regex header(R"(^\[\[(\w+)\]\]\s*$)");
    PromptTemplate t;
    std::optional<SectionKind> current;
    std::string buf;
    auto flush = [&] {
        if (current) t.sections_[*current] = trim_lines(buf);
        buf.clear();
    };
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (std::regex_match(line, m, header)) {
            flush();
            current.reset();
            for (auto k : kSectionOrder)
                if (to_string(k) == m[1].str()) current = k;
            if (!current) throw PromptError("unknown template section [[" + m[1].str() + "]]");
            if (t.sections_.contains(*current)) throw PromptError("duplicate template section [[" + m[1].str() + "]]");
            continue;
        }
        if (!current) continue;  // preamble
        buf += line + "\n";
    }
    flush();
    for (auto k : kSectionOrder)
        if (!t.sections_.contains(k)) throw PromptError("template lacks section [[" + std::string(to_string(k)) + "]]");
    if (!t.sections_[SectionKind::CoT].ends_with(kCotSentence))
        throw PromptError("CoT section must end with \"" + std::string(kCotSentence) + "\"");
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw PromptError("cannot read prompt template " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

// ---------------------------------------------------------------------------

namespace {

Prompt assemble(const RlfContext& ctx, const std::vector<kb::KbDocument>& docs, std::size_t n_docs,
                const std::string& excerpt, const PromptTemplate& tmpl, const BuildOptions& options) {
    std::map<std::string, std::string> v;
    v["rlf_type"] = std::string(layout::display_name(ctx.rlf.type));
    v["definition"] = ctx.definition;
    v["min_width"] = std::to_string(ctx.rlf.failure_range.min);
    v["failure_range"] = std::to_string(ctx.rlf.failure_range.min) + "px to " + std::to_string(ctx.rlf.failure_range.max) + "px";

    std::string pairs;
    for (std::size_t i = 0; i < ctx.localized.size(); ++i) {
        const auto& l = ctx.localized[i];
        auto sel = ctx.selectors.find(l.xpath);
        pairs += (i ? "\n" : "") + std::to_string(i + 1) + ". " + l.xpath +
                 (sel != ctx.selectors.end() ? " (selector: " + sel->second + ")" : "") + " property: " + l.property;
    }
    v["localized_pairs"] = pairs;

    std::string coords;
    for (const auto& [xpath, b] : ctx.coordinates)
        coords += (coords.empty() ? "" : "\n") + std::string("- ") + xpath + ": x=" + num(b.x) + ", y=" + num(b.y) +
                  ", width=" + num(b.width) + ", height=" + num(b.height);
    v["coordinates"] = coords;

    Prompt p;
    std::string shots;
    if (options.include_images) {
        if (ctx.screenshot_inside) {
            p.images.push_back(*ctx.screenshot_inside);
            shots += "Image 1 shows the elements at " + std::to_string(ctx.screenshot_inside->viewport_width) +
                     "px, inside the failing range.";
        }
        if (ctx.screenshot_outside) {
            p.images.push_back(*ctx.screenshot_outside);
            shots += std::string(shots.empty() ? "" : "\n") + "Image " + std::to_string(p.images.size()) +
                     " shows them at " + std::to_string(ctx.screenshot_outside->viewport_width) +
                     "px, just outside the failing range.";
        }
    }
    v["screenshots"] = shots;
    v["excerpt"] = excerpt;

    std::string posts;
    for (std::size_t i = 0; i < n_docs; ++i) posts += (i ? "\n\n" : "") + render_post(i + 1, docs[i]);
    v["so_posts"] = posts;

    for (auto k : kSectionOrder) {
        std::string body;
        if (k != SectionKind::SoPosts || n_docs > 0) body = trim_lines(render(tmpl.section(k), v));
        p.sections.emplace_back(k, std::move(body));
    }
    p.token_estimate = estimate_tokens(p.text(), p.images.size(), options.cost);
    return p;
}

}  // namespace

Prompt build_prompt(const RlfContext& ctx, const std::vector<kb::KbDocument>& retrieved, int budget,
                    const PromptTemplate& tmpl, const BuildOptions& options) {
    if (retrieved.size() > 5) throw PromptError("at most five retrieved documents are allowed");
    if (ctx.localized.empty()) throw PromptError("prompt context needs localized elements");
    std::string excerpt = ctx.page_excerpt.substr(0, kMaxExcerptChars);

    std::size_t n = retrieved.size();
    Prompt p = assemble(ctx, retrieved, n, excerpt, tmpl, options);
    while (p.token_estimate > budget && n > 0) p = assemble(ctx, retrieved, --n, excerpt, tmpl, options);

    static const std::string marker = "\n[excerpt truncated]";
    while (p.token_estimate > budget && !excerpt.empty()) {
        const auto over = static_cast<std::size_t>(p.token_estimate - budget) * options.cost.chars_per_token;
        const auto base = excerpt.ends_with(marker) ? excerpt.size() - marker.size() : excerpt.size();
        const auto cut = over + marker.size();
        excerpt = cut >= base ? "" : excerpt.substr(0, base - cut) + marker;
        p = assemble(ctx, retrieved, n, excerpt, tmpl, options);
    }
    if (p.token_estimate > budget)
        throw BudgetExceeded("prompt needs " + std::to_string(p.token_estimate) + " tokens without posts or excerpt; budget " +
                             std::to_string(budget));
    return p;
}

std::string retry_text(const patch::CssPatch& failed_patch) {
    auto serialized = patch::serialize(failed_patch);
    while (!serialized.empty() && serialized.back() == '\n') serialized.pop_back();
    return "The fixed version is still not correct-" + serialized + ". Please fix it again. " + std::string(kCotSentence) + ".";
}

Prompt build_retry(const Prompt& previous, const patch::CssPatch& failed_patch, int budget, const TokenCost& cost) {
    Prompt p = previous;
    p.continuations.push_back(retry_text(failed_patch));
    p.token_estimate = estimate_tokens(p.text(), p.images.size(), cost);
    if (p.token_estimate > budget)
        throw BudgetExceeded("retry prompt needs " + std::to_string(p.token_estimate) + " tokens; budget " +
                             std::to_string(budget));
    return p;
}

}  // namespace redefix::prompt
