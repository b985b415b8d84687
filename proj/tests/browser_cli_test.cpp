#include <gtest/gtest.h>

#include "support/browser_env.hpp"
#include "support/cli_env.hpp"
#include "support/temp_dir.hpp"

using redefix::testing::fixture_page;
using redefix::testing::read_json;
using redefix::testing::run_cli;
using redefix::testing::slurp;
using redefix::testing::TempDir;
using redefix::testing::webdriver_endpoint;
using redefix::testing::write_config;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kGood = "```css\n.inner { box-sizing: border-box; width: 100%; }\n```";
const std::string kBad = "```css\n.inner { width: 320px; }\n```";

fs::path config_in(const TempDir& dir, json overrides = json::object()) {
    overrides["webdriver_endpoint"] = webdriver_endpoint();
    if (!overrides.contains("n_majority")) overrides["n_majority"] = 2;
    return write_config(dir.path(), overrides);
}

fs::path mock_script(const TempDir& dir, const std::string& name, const std::vector<std::string>& responses) {
    const auto file = dir.path() / name;
    std::ofstream(file) << json(responses).dump();
    return file;
}

json without_metadata(json report) {
    report.erase("metadata");
    return report;
}

}  // namespace

TEST(DetectCommand, CleanAndCollide) {
    TempDir dir;
    const auto cfg = config_in(dir).string();
    const auto clean = run_cli({"--config", cfg, "detect", fixture_page("clean")});
    EXPECT_EQ(clean.code, 0) << clean.err;
    EXPECT_EQ(clean.out, "[]\n");

    const auto collide = run_cli({"--config", cfg, "detect", fixture_page("collide")});
    EXPECT_EQ(collide.code, 3) << collide.err;
    const auto records = json::parse(collide.out);
    ASSERT_EQ(records.size(), 1u);
    EXPECT_EQ(records[0]["type"], "element_collision");
    EXPECT_EQ(records[0]["range"], json({320, 400}));
}

TEST(DetectCommand, HarnessErrorsExitOne) {
    TempDir dir;
    const auto cfg = config_in(dir).string();
    EXPECT_EQ(run_cli({"--config", cfg, "detect", "--webdriver", "http://127.0.0.1:1", fixture_page("clean")}).code, 1);
    EXPECT_EQ(run_cli({"--config", cfg, "detect", fixture_page("no-such-page")}).code, 1);
}

TEST(RepairCommand, GoodMockRepairsAndIsDeterministic) {
    TempDir dir;
    const auto cfg = config_in(dir).string();
    const auto mock = mock_script(dir, "good.json", {kGood, kGood}).string();
    const auto a = (dir.path() / "a").string(), b = (dir.path() / "b").string();

    const auto r1 = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm",
                             mock, "--output-dir", a});
    ASSERT_EQ(r1.code, 0) << r1.err;
    const auto report = read_json(fs::path(a) / "report.json");
    EXPECT_EQ(report["schema_version"], 1);
    EXPECT_EQ(report["totals"], json({{"attempted", 1}, {"repaired", 1}}));
    EXPECT_EQ(report["llm"]["calls"], 2);
    const auto& o = report["outcomes"][0];
    EXPECT_EQ(o["status"], "repaired");
    EXPECT_TRUE(report["metadata"].contains("generated_at"));
    for (const char* k : {"patch", "before", "after"}) {
        ASSERT_TRUE(o["artifacts"][k].is_string()) << k;
        EXPECT_TRUE(fs::exists(fs::path(a) / o["artifacts"][k].get<std::string>())) << k;
    }
    EXPECT_EQ(slurp(fs::path(a) / "patches/rlf-0.css"), o["final_patch"].get<std::string>());

    const auto r2 = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm",
                             mock, "--output-dir", b});
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(without_metadata(report).dump(2), without_metadata(read_json(fs::path(b) / "report.json")).dump(2));

    const auto rep = run_cli({"report", a});
    ASSERT_EQ(rep.code, 0) << rep.err;
    const auto html = slurp(fs::path(a) / "index.html");
    EXPECT_NE(html.find("Version 1"), std::string::npos);
    EXPECT_NE(html.find("src=\"screenshots/rlf-0-after.png\""), std::string::npos);
}

TEST(RepairCommand, AlwaysBadMockExitsFour) {
    TempDir dir;
    const auto cfg = config_in(dir, {{"max_iterations", 2}, {"n_majority", 1}}).string();
    const auto mock = mock_script(dir, "bad.json", {kBad, kBad}).string();
    const auto r = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm", mock});
    EXPECT_EQ(r.code, 4) << r.err;
    const auto report = read_json(dir.path() / "out/report.json");
    EXPECT_EQ(report["totals"], json({{"attempted", 1}, {"repaired", 0}}));
    EXPECT_EQ(report["outcomes"][0]["status"], "failed_max_iterations");
    EXPECT_EQ(report["outcomes"][0]["iterations"].size(), 2u);
    EXPECT_TRUE(report["outcomes"][0]["artifacts"]["patch"].is_null());
    EXPECT_FALSE(fs::exists(dir.path() / "out/patches"));
}

// The KB path is a sentinel: it must not exist afterwards, and a corrupt
// store there must not matter either.
TEST(RepairCommand, ZeroShotNeverReadsTheKnowledgeBase) {
    TempDir dir;
    const auto sentinel = dir.path() / "sentinel-kb";
    const auto cfg = config_in(dir, {{"kb_path", sentinel.string()}, {"n_majority", 1}}).string();
    const auto mock = mock_script(dir, "good.json", {kGood}).string();
    auto r = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm", mock});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(fs::exists(sentinel));
    const auto report = read_json(dir.path() / "out/report.json");
    EXPECT_EQ(report["mode"], "zero_shot");
    EXPECT_EQ(report["outcomes"][0]["retrieval"]["so_posts_section"], "");
    EXPECT_EQ(report["outcomes"][0]["retrieval"]["question_ids"], json::array());
    EXPECT_EQ(report["outcomes"][0]["iterations"][0]["prompt"].get<std::string>().find("[Post"), std::string::npos);

    fs::create_directories(sentinel);
    std::ofstream(sentinel / "element_protrusion.jsonl") << "not json\n";
    r = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm", mock});
    EXPECT_EQ(r.code, 0) << r.err;
    r = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--mock-llm", mock});
    EXPECT_EQ(r.code, 1);  // the same store is rejected once retrieval needs it
}

TEST(RepairCommand, RetrievalModeUsesBuiltKnowledgeBase) {
    TempDir dir;
    const auto cfg = config_in(dir, {{"n_majority", 1}}).string();
    const auto canned = std::string(REDEFIX_SOURCE_DIR) + "/tests/fixtures/canned-api";
    ASSERT_EQ(run_cli({"--config", cfg, "kb", "build", "--fixture", canned}).code, 0);
    const auto mock = mock_script(dir, "m.json", {"```css\n#banner-left { width: 50%; }\n```"}).string();
    const auto r = run_cli({"--config", cfg, "repair", fixture_page("collide-width"), "--mock-llm", mock});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = read_json(dir.path() / "out/report.json");
    const auto& o = report["outcomes"][0];
    EXPECT_EQ(report["mode"], "retrieval");
    EXPECT_EQ(o["status"], "repaired");
    EXPECT_EQ(o["retrieval"]["question_ids"][0], 101);
    EXPECT_NE(o["retrieval"]["so_posts_section"].get<std::string>().find("TITLE: Two elements overlap on mobile"),
              std::string::npos);
    EXPECT_NE(o["final_patch"].get<std::string>().find("#banner-left"), std::string::npos);
}

TEST(RepairCommand, IndexSelectionAndSkips) {
    TempDir dir;
    const auto cfg = config_in(dir, {{"n_majority", 1}}).string();
    const auto mock = mock_script(dir, "m.json", {kGood}).string();
    EXPECT_EQ(run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm", mock,
                       "--rlf-index", "1"})
                  .code,
              1);
    EXPECT_EQ(run_cli({"--config", cfg, "repair", fixture_page("small-range"), "--zero-shot", "--mock-llm", mock,
                       "--rlf-index", "0"})
                  .code,
              1);
    const auto r = run_cli({"--config", cfg, "repair", fixture_page("small-range"), "--zero-shot", "--mock-llm", mock});
    EXPECT_EQ(r.code, 0) << r.err;
    const auto report = read_json(dir.path() / "out/report.json");
    EXPECT_EQ(report["totals"], json({{"attempted", 0}, {"repaired", 0}}));
    EXPECT_EQ(report["skipped"].size(), 1u);
    EXPECT_EQ(report["baseline_rlfs"][0]["type"], "small_range");

    std::ofstream(dir.path() / "loc.json") << R"([{"xpath": "/html/body/div[1]/div[1]", "property": "box-sizing", "score": 1}])";
    const auto ext = run_cli({"--config", cfg, "repair", fixture_page("protrude-element"), "--zero-shot", "--mock-llm",
                              mock, "--localization-file", (dir.path() / "loc.json").string()});
    EXPECT_EQ(ext.code, 0) << ext.err;
    EXPECT_EQ(read_json(dir.path() / "out/report.json")["outcomes"][0]["localization"][0]["property"], "box-sizing");
}
