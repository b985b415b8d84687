#include <gtest/gtest.h>

#include "redefix/prompt_builder.hpp"

using namespace redefix;
using namespace redefix::prompt;

namespace {

PromptTemplate real_template() { return PromptTemplate::load(std::string(REDEFIX_SOURCE_DIR) + "/data/prompt_template.txt"); }

RlfContext sample_context() {
    RlfContext c;
    c.rlf = {layout::RlfType::ElementProtrusion, {"/html/body/div[1]", "/html/body/div[1]/div[1]"}, {320, 479}};
    c.definition = "An element protrudes out of its container.";
    c.localized = {{"/html/body/div[1]/div[1]", "width"}, {"/html/body/div[1]", "overflow"}};
    c.selectors["/html/body/div[1]/div[1]"] = "body > div:nth-child(1) > div:nth-child(1)";
    c.coordinates["/html/body/div[1]"] = {8, 8, 304, 50};
    c.coordinates["/html/body/div[1]/div[1]"] = {8, 8, 480.5, 20};
    c.page_excerpt = "<div class=\"card\"><div class=\"inner\">Hello</div></div>";
    return c;
}

kb::KbDocument doc(int id, std::size_t answer_chars = 40) {
    kb::KbDocument d;
    d.rlf_type = layout::RlfType::ElementProtrusion;
    d.metadata = {id, "https://stackoverflow.com/q/" + std::to_string(id), "Title " + std::to_string(id), "<p>q</p>"};
    d.cleaned_question = "question " + std::to_string(id);
    d.answers = {std::string(answer_chars, 'a')};
    d.comments = {"comment " + std::to_string(id)};
    return d;
}

std::vector<kb::KbDocument> docs(int n, std::size_t answer_chars = 40) {
    std::vector<kb::KbDocument> out;
    for (int i = 1; i <= n; ++i) out.push_back(doc(i, answer_chars));
    return out;
}

constexpr int kHuge = 1'000'000;

Screenshot shot(int width) { return {std::string("\x89PNG\r\n\x1a\n", 8) + std::string(4, '\0') + "IHDR" + std::string(17, '\0'), width, {0, 0, 10, 10}}; }

}  // namespace

TEST(EstimateTokens, Examples) {
    EXPECT_EQ(estimate_tokens("12345678", 0), 2);
    EXPECT_EQ(estimate_tokens("123456789", 0), 3);
    EXPECT_EQ(estimate_tokens("", 0), 0);
    EXPECT_EQ(estimate_tokens("", 1), 1600);
    EXPECT_EQ(estimate_tokens("abcd", 2, {2, 10}), 22);
    EXPECT_THROW(estimate_tokens("x", 0, {0, 0}), PromptError);
}

TEST(BuildPrompt, FiveSectionsInOrderEndingWithCot) {
    const auto p = build_prompt(sample_context(), docs(2), kHuge, real_template());
    ASSERT_EQ(p.sections.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(p.sections[i].first, kSectionOrder[i]);
    for (const auto& [k, t] : p.sections) EXPECT_FALSE(t.empty()) << to_string(k);
    const auto text = p.text();
    EXPECT_TRUE(text.ends_with("Let's think step by step"));
    EXPECT_TRUE(text.starts_with(p.section(SectionKind::Role)));
    EXPECT_EQ(p.token_estimate, estimate_tokens(text, 0));

    const auto& ctx = p.section(SectionKind::Context);
    EXPECT_NE(ctx.find("RLF type: Element Protrusion"), std::string::npos) << ctx;
    EXPECT_NE(ctx.find("320px to 479px"), std::string::npos);
    EXPECT_NE(ctx.find("1. /html/body/div[1]/div[1] (selector: body > div:nth-child(1) > div:nth-child(1)) property: width"),
              std::string::npos);
    EXPECT_NE(ctx.find("2. /html/body/div[1] property: overflow"), std::string::npos);
    EXPECT_NE(ctx.find("- /html/body/div[1]/div[1]: x=8, y=8, width=480.5, height=20"), std::string::npos);
    EXPECT_NE(ctx.find("Element coordinates at 320px:"), std::string::npos);
    EXPECT_EQ(ctx.find("{{"), std::string::npos);

    const auto& posts = p.section(SectionKind::SoPosts);
    EXPECT_NE(posts.find("[Post 1]\nTITLE: Title 1\nLINK: https://stackoverflow.com/q/1\nQUESTION: question 1\nANSWER 1: "),
              std::string::npos);
    EXPECT_LT(posts.find("[Post 1]"), posts.find("[Post 2]"));
    EXPECT_NE(posts.find("COMMENT 1: comment 2"), std::string::npos);
}

TEST(BuildPrompt, ZeroShotHasEmptyPostsSection) {
    const auto p = build_prompt(sample_context(), {}, kHuge, real_template());
    ASSERT_EQ(p.sections.size(), 5u);
    EXPECT_EQ(p.section(SectionKind::SoPosts), "");
    EXPECT_EQ(p.text().find("Stack Overflow"), std::string::npos);
    EXPECT_EQ(p.text().find("[Post"), std::string::npos);
    EXPECT_TRUE(p.text().ends_with("Let's think step by step"));
}

TEST(BuildPrompt, OverBudgetDropsLowestRankedPostsFirst) {
    const auto tmpl = real_template();
    const auto all = docs(5, 2000);  // about 500 tokens per post
    const std::vector<kb::KbDocument> top3(all.begin(), all.begin() + 3);
    const auto reference = build_prompt(sample_context(), top3, kHuge, tmpl);
    const auto full = build_prompt(sample_context(), all, kHuge, tmpl);
    ASSERT_GT(full.token_estimate, reference.token_estimate);

    const auto p = build_prompt(sample_context(), all, reference.token_estimate, tmpl);
    EXPECT_LE(p.token_estimate, reference.token_estimate);
    EXPECT_EQ(p.text(), reference.text());
    const auto& posts = p.section(SectionKind::SoPosts);
    EXPECT_NE(posts.find("TITLE: Title 3"), std::string::npos);
    EXPECT_EQ(posts.find("TITLE: Title 4"), std::string::npos);
    EXPECT_EQ(posts.find("TITLE: Title 5"), std::string::npos);
    EXPECT_EQ(p.section(SectionKind::Context), full.section(SectionKind::Context));  // excerpt untouched
}

TEST(BuildPrompt, ExcerptIsClampedThenTruncatedThenBudgetExceeded) {
    const auto tmpl = real_template();
    auto ctx = sample_context();
    ctx.page_excerpt = std::string(5000, 'x');
    const auto clamped = build_prompt(ctx, {}, kHuge, tmpl);
    EXPECT_NE(clamped.text().find(std::string(4000, 'x')), std::string::npos);
    EXPECT_EQ(clamped.text().find(std::string(4001, 'x')), std::string::npos);

    auto bare = ctx;
    bare.page_excerpt.clear();
    const int floor = build_prompt(bare, {}, kHuge, tmpl).token_estimate;
    const int budget = floor + 300;  // room for part of the excerpt only
    const auto p = build_prompt(ctx, docs(5), budget, tmpl);
    EXPECT_LE(p.token_estimate, budget);
    EXPECT_EQ(p.section(SectionKind::SoPosts), "");
    EXPECT_NE(p.text().find("[excerpt truncated]"), std::string::npos);
    EXPECT_NE(p.text().find(std::string(500, 'x')), std::string::npos);
    EXPECT_TRUE(p.text().ends_with("Let's think step by step"));

    EXPECT_NO_THROW(build_prompt(ctx, {}, floor, tmpl));
    EXPECT_THROW(build_prompt(ctx, docs(5), floor - 1, tmpl), BudgetExceeded);
}

TEST(BuildPrompt, ImagesCountTowardsTheBudget) {
    auto ctx = sample_context();
    ctx.screenshot_inside = shot(320);
    ctx.screenshot_outside = shot(480);
    const auto tmpl = real_template();
    const auto with = build_prompt(ctx, {}, kHuge, tmpl);
    ASSERT_EQ(with.images.size(), 2u);
    EXPECT_EQ(with.token_estimate, estimate_tokens(with.text(), 0) + 3200);
    EXPECT_NE(with.text().find("Image 1 shows the elements at 320px"), std::string::npos);
    EXPECT_NE(with.text().find("Image 2 shows them at 480px"), std::string::npos);

    const auto without = build_prompt(ctx, {}, kHuge, tmpl, {{}, false});
    EXPECT_TRUE(without.images.empty());
    EXPECT_EQ(without.text().find("Image 1"), std::string::npos);
    EXPECT_THROW(build_prompt(ctx, {}, 3200, tmpl), BudgetExceeded);
}

TEST(BuildPrompt, Deterministic) {
    const auto tmpl = real_template();
    const auto a = build_prompt(sample_context(), docs(4, 900), 1500, tmpl);
    const auto b = build_prompt(sample_context(), docs(4, 900), 1500, tmpl);
    EXPECT_EQ(a.text(), b.text());
    EXPECT_EQ(a.token_estimate, b.token_estimate);
}

TEST(BuildPrompt, RejectsBadInput) {
    const auto tmpl = real_template();
    EXPECT_THROW(build_prompt(sample_context(), docs(6), kHuge, tmpl), PromptError);
    auto ctx = sample_context();
    ctx.localized.clear();
    EXPECT_THROW(build_prompt(ctx, {}, kHuge, tmpl), PromptError);
}

TEST(Retry, ExactText) {
    const patch::CssPatch bad{{{".inner", {{"width", "320px"}}}}};
    EXPECT_EQ(retry_text(bad),
              "The fixed version is still not correct-.inner {\n  width: 320px;\n}. Please fix it again. Let's think step by step.");
}

TEST(Retry, AppendsInOrderAsStrictExtension) {
    const auto tmpl = real_template();
    const auto base = build_prompt(sample_context(), docs(2), kHuge, tmpl);
    const patch::CssPatch first{{{".inner", {{"width", "320px"}}}}};
    const patch::CssPatch second{{{".inner", {{"max-width", "90%"}}}}};
    const auto r1 = build_retry(base, first, kHuge);
    EXPECT_TRUE(r1.text().starts_with(base.text()));
    EXPECT_GT(r1.text().size(), base.text().size());
    EXPECT_EQ(r1.text(), base.text() + "\n\n" + retry_text(first));
    const auto r2 = build_retry(r1, second, kHuge);
    EXPECT_EQ(r2.text(), r1.text() + "\n\n" + retry_text(second));
    ASSERT_EQ(r2.continuations.size(), 2u);
    EXPECT_EQ(r2.continuations[0], retry_text(first));
    EXPECT_EQ(r2.token_estimate, estimate_tokens(r2.text(), 0));
    EXPECT_EQ(r2.sections, base.sections);
}

TEST(Retry, PastBudgetThrows) {
    const auto base = build_prompt(sample_context(), {}, kHuge, real_template());
    const patch::CssPatch bad{{{".inner", {{"width", "320px"}}}}};
    EXPECT_THROW(build_retry(base, bad, base.token_estimate), BudgetExceeded);
    EXPECT_NO_THROW(build_retry(base, bad, estimate_tokens(base.text() + "\n\n" + retry_text(bad), 0)));
}

TEST(Template, ParseRules) {
    const std::string good = "# comment\n[[Role]]\nR\n[[Task]]\nT {{rlf_type}}\n[[Context]]\nC\n[[SoPosts]]\n{{so_posts}}\n[[CoT]]\nLet's think step by step\n";
    const auto t = PromptTemplate::parse(good);
    EXPECT_EQ(t.section(SectionKind::Role), "R");
    EXPECT_EQ(t.section(SectionKind::Task), "T {{rlf_type}}");
    EXPECT_THROW(PromptTemplate::parse("[[Role]]\nR\n"), PromptError);
    EXPECT_THROW(PromptTemplate::parse(good + "[[Extra]]\n"), PromptError);
    std::string bad_cot = good;
    bad_cot.replace(bad_cot.find("Let's"), 5, "Lets");
    EXPECT_THROW(PromptTemplate::parse(bad_cot), PromptError);
    std::string unknown = good;
    unknown.replace(unknown.find("\nR\n"), 3, "\n{{nope}}\n");
    EXPECT_THROW(build_prompt(sample_context(), {}, kHuge, PromptTemplate::parse(unknown)), PromptError);
    EXPECT_THROW(PromptTemplate::load("/nonexistent/template.txt"), PromptError);
}

TEST(Screenshot, PngSignature) {
    EXPECT_TRUE(looks_like_png(shot(1).png_bytes));
    EXPECT_FALSE(looks_like_png("GIF89a"));
    EXPECT_FALSE(looks_like_png(""));
}
