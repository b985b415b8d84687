#include <gtest/gtest.h>

#include <map>

#include "redefix/patch_engine.hpp"

using namespace redefix::patch;

namespace {

// Canned document: ancestry chains and selector answers are listed by hand.
class FakeDoc : public DocumentQuery {
public:
    std::map<std::string, std::vector<ElementStep>> chains;
    std::map<std::string, std::vector<std::string>> answers;

    std::optional<std::vector<ElementStep>> ancestry(const std::string& xpath) override {
        auto it = chains.find(xpath);
        if (it == chains.end()) return std::nullopt;
        return it->second;
    }
    std::vector<std::string> matches(const std::string& selector) override {
        auto it = answers.find(selector);
        return it == answers.end() ? std::vector<std::string>{} : it->second;
    }
};

FakeDoc sample_doc() {
    FakeDoc d;
    const ElementStep html{"html", "", 1}, body{"body", "", 2};
    d.chains["/html/body/nav[1]"] = {html, body, {"nav", "nav", 1}};
    d.chains["/html/body/div[2]"] = {html, body, {"div", "", 2}};
    d.chains["/html/body/div[1]/section[1]/p[1]"] = {html, body, {"div", "main", 1}, {"section", "", 3}, {"p", "", 1}};
    d.chains["/html/body"] = {html, body};
    d.answers["#nav"] = {"/html/body/nav[1]"};
    d.answers["body > div:nth-child(2)"] = {"/html/body/div[2]"};
    d.answers["#main > section:nth-child(3) > p:nth-child(1)"] = {"/html/body/div[1]/section[1]/p[1]"};
    d.answers["body"] = {"/html/body"};
    d.answers[".card"] = {"/html/body/div[2]"};
    d.answers["div"] = {"/html/body/div[1]", "/html/body/div[2]"};
    return d;
}

const char* kOneRule = "@media (min-width: 320px) and (max-width: 767px) {\n  .a {\n    width: 50% !important;\n  }\n}\n";

}  // namespace

TEST(ScopePatch, MarksImportantAndKeepsOrder) {
    CssPatch p{{{".a", {{"width", "50%", false}, {"padding", "0", true}}}}};
    auto s = scope_patch(p, {320, 767});
    EXPECT_EQ(s.min_width, 320);
    EXPECT_EQ(s.max_width, 767);
    ASSERT_EQ(s.patch.rules[0].declarations.size(), 2u);
    EXPECT_EQ(s.patch.rules[0].declarations[0].property, "width");
    EXPECT_TRUE(s.patch.rules[0].declarations[0].important);
    EXPECT_TRUE(s.patch.rules[0].declarations[1].important);
    EXPECT_EQ(scope_patch(s.patch, {320, 767}), s);  // idempotent
    auto one = scope_patch(p, {400, 400});
    EXPECT_EQ(one.min_width, one.max_width);
    EXPECT_THROW(scope_patch(p, {500, 400}), PatchError);
    EXPECT_THROW(scope_patch(CssPatch{}, {1, 2}), PatchError);
}

TEST(Serialize, BitExactFormat) {
    auto s = scope_patch(CssPatch{{{".a", {{"width", "50%", false}}}}}, {320, 767});
    EXPECT_EQ(serialize(s), kOneRule);
    EXPECT_EQ(serialize(s), serialize(s));
    CssPatch two{{{"#x", {{"width", "100%"}, {"box-sizing", "border-box"}}}, {"p", {{"margin", "0"}}}}};
    EXPECT_EQ(serialize(scope_patch(two, {1, 2})),
              "@media (min-width: 1px) and (max-width: 2px) {\n"
              "  #x {\n    width: 100% !important;\n    box-sizing: border-box !important;\n  }\n"
              "  p {\n    margin: 0 !important;\n  }\n"
              "}\n");
}

TEST(Serialize, RoundTripIsAFixedPoint) {
    const std::vector<CssPatch> patches = {
        {{{".a", {{"width", "50%"}}}}},
        {{{"body > div:nth-child(2)", {{"width", "calc(100% - 20px)"}, {"font-family", "\"A B\", serif"}}},
          {"#main", {{"padding", "0 1px"}}}}},
    };
    for (const auto& p : patches) {
        const auto once = serialize(scope_patch(p, {320, 479}));
        const auto parsed = parse_scoped(once);
        EXPECT_EQ(parsed.min_width, 320);
        EXPECT_EQ(parsed.max_width, 479);
        EXPECT_EQ(parsed.patch, scope_patch(p, {320, 479}).patch);
        EXPECT_EQ(serialize(parsed), once);
    }
}

TEST(ParseCss, LenientRules) {
    auto p = parse_css("/* c */ .a { WIDTH : 50% ; ; color: ; : x; height: 1px !IMPORTANT }\n@import url(x.css);\n"
                       "@media (max-width: 10px) { .b { margin: 0 } }\n.empty { }");
    ASSERT_EQ(p.rules.size(), 2u);
    EXPECT_EQ(p.rules[0].selector, ".a");
    ASSERT_EQ(p.rules[0].declarations.size(), 2u);
    EXPECT_EQ(p.rules[0].declarations[0], (CssDeclaration{"width", "50%", false}));
    EXPECT_EQ(p.rules[0].declarations[1], (CssDeclaration{"height", "1px", true}));
    EXPECT_EQ(p.rules[1].selector, ".b");
    EXPECT_THROW(parse_css("no rules here"), PatchError);
    EXPECT_THROW(parse_css(".a { }"), PatchError);
}

TEST(ExtractPatch, Examples) {
    auto p = extract_patch("Here you go:\n```css\n.a { width: 50%; }\n```\n");
    ASSERT_EQ(p.rules.size(), 1u);
    EXPECT_EQ(p.rules[0].declarations.size(), 1u);
    EXPECT_THROW(extract_patch("I think the layout is fine as it is."), PatchError);
    p = extract_patch("Step 1... then\n```css\n.a { width: 10px; }\n```\nBetter:\n```css\n.b { width: 20px; }\n```\nDone.");
    ASSERT_EQ(p.rules.size(), 1u);
    EXPECT_EQ(p.rules[0].selector, ".b");
}

TEST(ExtractPatch, PrecedenceFallbacks) {
    // Untagged fence that parses beats prose.
    auto p = extract_patch("Use .x { color: red; } maybe.\n```\n.y { width: 1px; }\n```\n```js\nlet a = 1;\n```");
    EXPECT_EQ(p.rules[0].selector, ".y");
    // A css fence that does not parse falls through to other fences.
    p = extract_patch("```\n.z { margin: 0; }\n```\n```css\nnot css at all\n```");
    EXPECT_EQ(p.rules[0].selector, ".z");
    // Prose scan picks the selector words right before the brace.
    p = extract_patch("You should add .card .inner { width: 100%; box-sizing: border-box; } to fix it.");
    ASSERT_EQ(p.rules.size(), 1u);
    EXPECT_EQ(p.rules[0].selector, ".card .inner");
    EXPECT_EQ(p.rules[0].declarations.size(), 2u);
    p = extract_patch("Try div > p { margin: 0 } and #nav{display:block}");
    ASSERT_EQ(p.rules.size(), 2u);
    EXPECT_EQ(p.rules[0].selector, "div > p");
    EXPECT_EQ(p.rules[1].selector, "#nav");
    EXPECT_THROW(extract_patch("function f() { return x; }"), PatchError);
}

TEST(NormalizedKey, IgnoresOrderCaseAndSpacing) {
    auto a = extract_patch("```css\n.a { width: 50%; Box-Sizing: border-box; }\n.b{margin:0 auto}\n```");
    auto b = extract_patch("```css\n.b {  margin : 0   auto ; }\n.a {\n box-sizing:border-box;\n width : 50% }\n```");
    EXPECT_EQ(normalized_key(a), normalized_key(b));
    auto c = extract_patch("```css\n.a { width: 51%; }\n```");
    EXPECT_NE(normalized_key(a), normalized_key(c));
    EXPECT_EQ(normalized_key(extract_patch("```css\nbody>div:nth-child( 2 ){width:calc(1px + 2px)}\n```")),
              normalized_key(extract_patch("```css\nbody > div:nth-child(2) { width: calc(1px + 2px) }\n```")));
}

TEST(SelectorFor, Rules) {
    auto doc = sample_doc();
    EXPECT_EQ(selector_for("/html/body/nav[1]", doc), "#nav");
    EXPECT_EQ(selector_for("/html/body/div[2]", doc), "body > div:nth-child(2)");
    EXPECT_EQ(selector_for("/html/body/div[1]/section[1]/p[1]", doc), "#main > section:nth-child(3) > p:nth-child(1)");
    EXPECT_EQ(selector_for("/html/body", doc), "body");
    EXPECT_THROW(selector_for("/html/body/missing[1]", doc), PatchError);
    doc.answers["#nav"].push_back("/html/body/div[9]");
    EXPECT_THROW(selector_for("/html/body/nav[1]", doc), PatchError);  // ambiguous guard
}

TEST(Retarget, KeepsGoodSelectorsAndFixesBadOnes) {
    auto doc = sample_doc();
    const std::vector<LocalizedTarget> loc = {{"/html/body/div[2]", "width"}, {"/html/body/nav[1]", "display"}};
    CssPatch p{{{".card", {{"width", "50%"}}},           // unique and localized: kept
                {".hallucinated", {{"display", "none"}}},  // matches nothing: property picks nav
                {"div", {{"margin", "0"}}},              // matches two: narrowed to div[2]
                {".ghost", {{"color", "red"}}}}};        // nothing relevant: top target
    auto r = retarget(p, loc, doc);
    ASSERT_EQ(r.rules.size(), 4u);
    EXPECT_EQ(r.rules[0].selector, ".card");
    EXPECT_EQ(r.rules[1].selector, "#nav");
    EXPECT_EQ(r.rules[2].selector, "body > div:nth-child(2)");
    EXPECT_EQ(r.rules[3].selector, "body > div:nth-child(2)");
    EXPECT_EQ(r.rules[1].declarations, p.rules[1].declarations);
    EXPECT_THROW(retarget(p, {}, doc), PatchError);
}
