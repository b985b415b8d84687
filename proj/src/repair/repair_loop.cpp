#include "redefix/repair_loop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace redefix::repair {

// ---------------------------------------------------------------------------
// Detection

void validate(const SweepConfig& s) {
    if (s.min >= s.max) throw RepairError("sweep min must be < max");
    if (s.step < 1) throw RepairError("sweep step must be >= 1");
    if (s.min < 200 || s.max > 4000) throw RepairError("sweep widths must lie within [200, 4000]");
    if (s.small_range_threshold < 1) throw RepairError("small_range_threshold must be >= 1");
}

std::vector<int> sweep_widths(const SweepConfig& s) {
    validate(s);
    std::vector<int> out;
    for (int w = s.min; w < s.max; w += s.step) out.push_back(w);
    out.push_back(s.max);
    return out;
}

Detection detect_page(browser::PageDriver& page, const SweepConfig& sweep) {
    std::vector<layout::LayoutSnapshot> snaps;
    for (int w : sweep_widths(sweep)) snaps.push_back(page.snapshot_at(w));
    Detection d{layout::build_rlg(std::move(snaps)), {}};
    d.records = layout::detect_rlfs(d.rlg, sweep.small_range_threshold);
    if (sweep.refine && !d.records.empty()) {
        d.rlg = layout::refine_boundaries(d.rlg, d.records, [&](int w) { return page.snapshot_at(w); });
        d.records = layout::detect_rlfs(d.rlg, sweep.small_range_threshold);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Localization

void to_json(nlohmann::json& j, const LocalizedPair& p) {
    j = {{"xpath", p.xpath}, {"property", p.property}, {"score", p.score}};
}

void from_json(const nlohmann::json& j, LocalizedPair& p) {
    p.xpath = j.at("xpath").get<std::string>();
    p.property = j.at("property").get<std::string>();
    p.score = j.at("score").get<double>();
}

std::optional<std::string> neutral_value(const std::string& property) {
    static const std::map<std::string, std::string> values = {
        {"width", "auto"},        {"max-width", "100%"},  {"min-width", "0"},          {"position", "static"},
        {"float", "none"},        {"display", "block"},   {"margin", "0"},             {"padding", "0"},
        {"border", "0"},          {"top", "auto"},        {"left", "auto"},            {"right", "auto"},
        {"flex-wrap", "wrap"},    {"overflow", "hidden"}, {"overflow-x", "hidden"},    {"box-sizing", "border-box"},
        {"white-space", "normal"},
    };
    auto it = values.find(property);
    if (it == values.end()) return std::nullopt;
    return it->second;
}

LocalizationResult load_localization(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw RepairError("cannot read localization file " + file.string());
    try {
        return {nlohmann::json::parse(in).get<std::vector<LocalizedPair>>()};
    } catch (const nlohmann::json::exception& e) {
        throw RepairError("localization file " + file.string() + " must be [{xpath, property, score}]: " + e.what());
    }
}

namespace {

std::set<std::string> participants_and_ancestors(const layout::RlfRecord& rlf, const layout::LayoutSnapshot& at, int levels) {
    std::set<std::string> out;
    for (const auto& p : rlf.participants) {
        std::optional<std::string> x = p;
        for (int k = 0; x && k <= levels; ++k) {
            out.insert(*x);
            x = at.parent_of(*x);
        }
    }
    return out;
}

}  // namespace

void validate(const LocalizationResult& loc, const layout::RlfRecord& rlf, const layout::LayoutSnapshot& at) {
    if (loc.ranked.empty()) throw EmptyCandidates("localization is empty");
    const auto allowed = participants_and_ancestors(rlf, at, 1 << 20);
    for (std::size_t i = 0; i < loc.ranked.size(); ++i) {
        const auto& p = loc.ranked[i];
        if (p.property.empty()) throw RepairError("localized pair " + std::to_string(i) + " has no property");
        if (!std::isfinite(p.score)) throw RepairError("localized pair " + std::to_string(i) + " has a non-finite score");
        if (i > 0 && p.score > loc.ranked[i - 1].score) throw RepairError("localization scores must be non-increasing");
        if (!allowed.contains(p.xpath))
            throw RepairError("localized element " + p.xpath + " is neither a participant nor an ancestor of one");
    }
}

LocalizationResult localize(browser::PageDriver& page, const layout::RlfRecord& rlf,
                            const layout::ResponsiveLayoutGraph& rlg, const std::vector<std::string>& lexicon) {
    const int width = rlf.failure_range.min;
    const auto base = page.snapshot_at(width);
    const double m0 = layout::failure_magnitude(rlf, rlg, base);
    if (m0 <= 0) throw EmptyCandidates("the failure is not measurable at " + std::to_string(width) + " px");

    std::vector<std::string> candidates;
    for (const auto& p : rlf.participants) {
        std::optional<std::string> x = p;
        for (int k = 0; x && k <= 2; ++k) {
            if (std::find(candidates.begin(), candidates.end(), *x) == candidates.end()) candidates.push_back(*x);
            x = base.parent_of(*x);
        }
    }

    static const std::string marker = "redefix-localize-probe";
    std::vector<LocalizedPair> scored;
    for (const auto& xpath : candidates) {
        std::string selector;
        try {
            selector = patch::selector_for(xpath, page);
        } catch (const patch::PatchError&) {
            continue;
        }
        for (const auto& property : lexicon) {
            const auto value = neutral_value(property);
            if (!value) continue;
            page.inject_style(selector + " { " + property + ": " + *value + " !important; }", marker);
            layout::LayoutSnapshot trial;
            try {
                trial = page.snapshot_at(width);
            } catch (...) {
                page.remove_style(marker);
                throw;
            }
            page.remove_style(marker);
            const double score = m0 - layout::failure_magnitude(rlf, rlg, trial);
            if (score > 1e-9) scored.push_back({xpath, property, score});
        }
    }
    if (scored.empty())
        throw EmptyCandidates("no element/property neutralization reduces the " + std::string(layout::display_name(rlf.type)));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (scored.size() > kMaxLocalized) scored.resize(kMaxLocalized);
    return {std::move(scored)};
}

// ---------------------------------------------------------------------------
// Validation

ValidationResult validate_patch(browser::PageDriver& page, const layout::RlfRecord& rlf,
                                const std::vector<layout::RlfRecord>& baseline, const patch::MediaScopedPatch& scoped,
                                const std::string& marker, const SweepConfig& sweep) {
    page.inject_style(patch::serialize(scoped), marker);
    ValidationResult v;
    try {
        const auto after = detect_page(page, sweep);
        const auto diff = layout::diff_rlfs(baseline, after.records);
        v.fixed = std::any_of(diff.eliminated.begin(), diff.eliminated.end(),
                              [&](const auto& r) { return layout::records_match(r, rlf); });
        v.introduced = diff.introduced;
    } catch (...) {
        page.remove_style(marker);
        throw;
    }
    if (!v.accepted()) page.remove_style(marker);
    return v;
}

// ---------------------------------------------------------------------------
// Reports

std::string_view to_string(RepairStatus s) {
    switch (s) {
        case RepairStatus::Repaired: return "repaired";
        case RepairStatus::FailedTokenBudget: return "failed_token_budget";
        case RepairStatus::FailedMaxIterations: return "failed_max_iterations";
        case RepairStatus::FailedUnparseable: return "failed_unparseable";
        case RepairStatus::FailedLocalization: return "failed_localization";
    }
    return "?";
}

void to_json(nlohmann::json& j, const IterationRecord& r) {
    j = {{"index", r.index},
         {"prompt_tokens", r.prompt_tokens},
         {"prompt", r.prompt},
         {"candidate", nullptr},
         {"scoped_patch", nullptr},
         {"validation", {{"fixed", r.validation.fixed}, {"introduced", r.validation.introduced}}},
         {"accepted", r.accepted()}};
    if (r.candidate) j["candidate"] = *r.candidate;
    if (r.scoped) j["scoped_patch"] = patch::serialize(*r.scoped);
}

void to_json(nlohmann::json& j, const RepairOutcome& o) {
    j = {{"rlf", o.rlf},
         {"status", std::string(to_string(o.status))},
         {"detail", o.detail},
         {"localization", o.localization.ranked},
         {"retrieval", {{"question_ids", o.retrieved_ids}, {"so_posts_section", o.so_posts_section}}},
         {"iterations", o.iterations},
         {"final_patch", nullptr}};
    if (o.final_patch) j["final_patch"] = patch::serialize(*o.final_patch);
}

// ---------------------------------------------------------------------------
// The loop

void validate(const RepairConfig& c) {
    validate(c.sweep);
    if (c.max_iterations < 1) throw RepairError("max_iterations must be >= 1");
    if (c.n_majority < 1) throw RepairError("n_majority must be >= 1");
    if (c.completion_reserve < 0) throw RepairError("completion_reserve must be >= 0");
    if (c.top_k < 1) throw RepairError("top_k must be >= 1");
    retrieval::validate(c.weights);
}

std::map<layout::RlfType, std::string> load_definitions(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw RepairError("cannot read definitions " + file.string());
    const auto doc = nlohmann::json::parse(in);
    std::map<layout::RlfType, std::string> out;
    for (const auto& [key, value] : doc.items()) {
        if (key.starts_with("_")) continue;
        out[layout::rlf_type_from_string(key)] = value.get<std::string>();
    }
    return out;
}

namespace {

std::optional<Screenshot> try_screenshot(browser::PageDriver& page, int width, const std::vector<std::string>& xpaths,
                                         double padding) {
    if (width < 200 || width > 4000) return std::nullopt;
    try {
        return page.screenshot_region(width, xpaths, padding);
    } catch (const browser::ElementNotFound&) {
        return std::nullopt;
    }
}

}  // namespace

RepairOutcome repair(browser::PageDriver& page, const layout::RlfRecord& rlf, const Detection& baseline,
                     const RepairResources& resources, llm::LlmClient& client, const RepairConfig& config,
                     const std::optional<LocalizationResult>& external, const std::string& marker_prefix) {
    validate(config);
    if (rlf.type == layout::RlfType::SmallRange) throw RepairError("small-range failures are not repaired");
    if (!resources.prompt_template) throw RepairError("repair needs a prompt template");

    RepairOutcome out;
    out.rlf = rlf;
    const int width = rlf.failure_range.min;
    const auto at_min = page.snapshot_at(width);

    // Localize.
    try {
        if (external) {
            validate(*external, rlf, at_min);
            out.localization = *external;
        } else {
            auto lex = resources.lexicons.find(rlf.type);
            if (lex == resources.lexicons.end()) throw EmptyCandidates("no property lexicon for this RLF type");
            out.localization = localize(page, rlf, baseline.rlg, lex->second);
        }
    } catch (const EmptyCandidates& e) {
        out.status = RepairStatus::FailedLocalization;
        out.detail = e.what();
        return out;
    }

    // Context.
    prompt::RlfContext ctx;
    ctx.rlf = rlf;
    if (auto d = resources.definitions.find(rlf.type); d != resources.definitions.end()) ctx.definition = d->second;
    std::vector<std::string> xpaths = rlf.participants;
    std::vector<std::string> properties;
    for (const auto& p : out.localization.ranked) {
        ctx.localized.push_back({p.xpath, p.property});
        if (std::find(xpaths.begin(), xpaths.end(), p.xpath) == xpaths.end()) xpaths.push_back(p.xpath);
        if (std::find(properties.begin(), properties.end(), p.property) == properties.end()) properties.push_back(p.property);
    }
    for (const auto& x : xpaths) {
        if (const auto* n = at_min.find(x)) ctx.coordinates[x] = n->box;
        if (ctx.selectors.contains(x)) continue;
        try {
            ctx.selectors[x] = patch::selector_for(x, page);
        } catch (const patch::PatchError&) {
        }
    }
    out.before = try_screenshot(page, width, rlf.participants, config.screenshot_padding);
    if (config.include_images) {
        ctx.screenshot_inside = out.before;
        ctx.screenshot_outside = try_screenshot(page, rlf.failure_range.max + 1, rlf.participants, config.screenshot_padding);
    }
    ctx.page_excerpt = page.source_excerpt(xpaths, prompt::kMaxExcerptChars);

    // Retrieve.
    std::vector<kb::KbDocument> retrieved;
    if (!config.zero_shot) {
        if (!resources.kb || !resources.embedder) throw RepairError("retrieval needs a knowledge base and an embedder");
        retrieved = retrieval::retrieve_context(properties, rlf.type, *resources.kb, *resources.embedder, config.weights,
                                                config.top_k);
    }

    const int budget = client.config().max_context_tokens - config.completion_reserve;
    prompt::BuildOptions options{config.token_cost, config.include_images};
    prompt::Prompt current;
    try {
        current = prompt::build_prompt(ctx, retrieved, budget, *resources.prompt_template, options);
        for (const auto& d : retrieved) out.retrieved_ids.push_back(d.metadata.id);
        out.so_posts_section = current.section(prompt::SectionKind::SoPosts);
    } catch (const prompt::BudgetExceeded& e) {
        out.status = RepairStatus::FailedTokenBudget;
        out.detail = e.what();
        return out;
    }

    std::optional<patch::CssPatch> last_failed;
    for (int k = 1; k <= config.max_iterations; ++k) {
        if (last_failed) {
            try {
                current = prompt::build_retry(current, *last_failed, budget, config.token_cost);
            } catch (const prompt::BudgetExceeded& e) {
                out.status = RepairStatus::FailedTokenBudget;
                out.detail = e.what();
                return out;
            }
        }
        IterationRecord rec;
        rec.index = k;
        rec.prompt_tokens = current.token_estimate;
        rec.prompt = current.text();
        try {
            rec.candidate = client.majority_patch(current, config.n_majority);
        } catch (const llm::AllRunsUnparseable& e) {
            out.iterations.push_back(std::move(rec));
            out.status = RepairStatus::FailedUnparseable;
            out.detail = e.what();
            return out;
        }
        const auto applied = patch::retarget(rec.candidate->patch, ctx.localized, page);
        rec.scoped = patch::scope_patch(applied, rlf.failure_range);
        rec.validation = validate_patch(page, rlf, baseline.records, *rec.scoped,
                                        marker_prefix + "-it" + std::to_string(k), config.sweep);
        const bool accepted = rec.accepted();
        out.iterations.push_back(std::move(rec));
        if (accepted) {
            out.status = RepairStatus::Repaired;
            out.final_patch = out.iterations.back().scoped;
            out.after = try_screenshot(page, width, rlf.participants, config.screenshot_padding);
            return out;
        }
        last_failed = applied;
    }
    out.status = RepairStatus::FailedMaxIterations;
    out.detail = "no accepted patch after " + std::to_string(config.max_iterations) + " iterations";
    return out;
}

}  // namespace redefix::repair
