#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "redefix/llm_client.hpp"
#include "support/temp_dir.hpp"

using namespace redefix;
using namespace redefix::llm;

namespace {

prompt::Prompt small_prompt(int tokens = 10) {
    prompt::Prompt p;
    p.sections = {{prompt::SectionKind::Role, "R"}, {prompt::SectionKind::CoT, "Let's think step by step"}};
    p.token_estimate = tokens;
    return p;
}

std::string fenced(const std::string& css) { return "Reasoning...\n```css\n" + css + "\n```\n"; }

const std::string A = fenced(".a { width: 50%; }");
const std::string A_shuffled = fenced(".a {\n  WIDTH :  50% ;\n}");
const std::string B = fenced(".b { margin: 0; }");
const std::string C = fenced(".c { display: block; }");

LlmConfig mock_config() { return LlmConfig{}; }

// Local chat-completion server that records every request it receives.
class FakeProvider {
public:
    std::atomic<int> hits{0};
    std::vector<nlohmann::json> bodies;
    std::vector<std::string> auth;
    std::function<void(const httplib::Request&, httplib::Response&, int)> respond;

    FakeProvider() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = hits++;
            {
                std::lock_guard lock(mu_);
                bodies.push_back(nlohmann::json::parse(req.body));
                auth.push_back(req.get_header_value("Authorization"));
            }
            if (respond) respond(req, res, n);
            else res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"ok"}}]})", "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeProvider() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

private:
    httplib::Server server_;
    std::thread thread_;
    std::mutex mu_;
    int port_ = 0;
};

}  // namespace

TEST(Mock, ScriptedSequenceThenExhausted) {
    LlmClient c(mock_config(), {"resp1", "resp2"});
    EXPECT_TRUE(c.mock());
    EXPECT_EQ(c.complete(small_prompt()), "resp1");
    EXPECT_EQ(c.complete(small_prompt()), "resp2");
    EXPECT_THROW(c.complete(small_prompt()), MockExhausted);
    EXPECT_EQ(c.calls(), 2);
}

TEST(Mock, ScriptFileIsAJsonArrayOfStrings) {
    redefix::testing::TempDir dir;
    const auto good = dir.path() / "script.json";
    std::ofstream(good) << R"(["one", "two"])";
    LlmConfig cfg;
    cfg.mock_script = good;
    LlmClient c(cfg);
    EXPECT_EQ(c.complete(small_prompt()), "one");
    const auto bad = dir.path() / "bad.json";
    std::ofstream(bad) << R"({"not": "an array"})";
    cfg.mock_script = bad;
    EXPECT_THROW(LlmClient{cfg}, LlmError);
    cfg.mock_script = dir.path() / "missing.json";
    EXPECT_THROW(LlmClient{cfg}, LlmError);
}

TEST(Mock, OversizedPromptFailsBeforeAnyCall) {
    LlmConfig cfg;
    cfg.max_context_tokens = 100;
    LlmClient c(cfg, {"resp"});
    EXPECT_THROW(c.complete(small_prompt(101)), ContextOverflow);
    EXPECT_EQ(c.calls(), 0);
    EXPECT_EQ(c.complete(small_prompt(100)), "resp");
}

TEST(Mock, NoNetworkActivity) {
    FakeProvider sentinel;
    redefix::testing::TempDir dir;
    std::ofstream(dir.path() / "s.json") << nlohmann::json(std::vector<std::string>(5, A)).dump();
    LlmConfig cfg;
    cfg.endpoint = sentinel.url();
    cfg.mock_script = dir.path() / "s.json";
    LlmClient c(cfg);
    auto cand = c.majority_patch(small_prompt(), 5);
    EXPECT_EQ(cand.votes, 5);
    EXPECT_EQ(sentinel.hits.load(), 0);
}

TEST(Majority, ModeWins) {
    LlmClient c(mock_config(), {A, B, A, A, C});
    const auto cand = c.majority_patch(small_prompt(), 5);
    EXPECT_EQ(cand.normalized_key, patch::normalized_key(patch::extract_patch(A)));
    EXPECT_EQ(cand.votes, 3);
    EXPECT_EQ(cand.raw_response, A);
    EXPECT_EQ(c.calls(), 5);
}

TEST(Majority, TieGoesToFirstOccurrence) {
    LlmClient ab(mock_config(), {A, B});
    EXPECT_EQ(ab.majority_patch(small_prompt(), 2).raw_response, A);
    LlmClient ba(mock_config(), {B, A});
    EXPECT_EQ(ba.majority_patch(small_prompt(), 2).raw_response, B);
}

TEST(Majority, ShuffledDeclarationsShareAKey) {
    LlmClient c(mock_config(), {B, A, A_shuffled});
    const auto cand = c.majority_patch(small_prompt(), 3);
    EXPECT_EQ(cand.votes, 2);
    EXPECT_EQ(cand.raw_response, A);
}

TEST(Majority, PermutationInvariantWhenModeUnique) {
    std::vector<std::string> responses = {A, B, A, C, A_shuffled, B, "no css here"};
    std::sort(responses.begin(), responses.end());
    const auto expected = patch::normalized_key(patch::extract_patch(A));
    int permutations = 0;
    do {
        LlmClient c(mock_config(), responses);
        ASSERT_EQ(c.majority_patch(small_prompt(), 7).normalized_key, expected);
        ++permutations;
    } while (std::next_permutation(responses.begin(), responses.end()) && permutations < 500);
    EXPECT_EQ(permutations, 500);
}

TEST(Majority, UnparseableRunsExcludedThenAllFail) {
    LlmClient c(mock_config(), {"prose", B, "more prose"});
    const auto cand = c.majority_patch(small_prompt(), 3);
    EXPECT_EQ(cand.raw_response, B);
    EXPECT_EQ(cand.votes, 1);
    LlmClient none(mock_config(), {"prose", "nothing"});
    EXPECT_THROW(none.majority_patch(small_prompt(), 2), AllRunsUnparseable);
    EXPECT_THROW(none.majority_patch(small_prompt(), 0), LlmError);
    EXPECT_THROW(vote({}), AllRunsUnparseable);
}

TEST(Http, RequestShapeAndResponseText) {
    FakeProvider provider;
    provider.respond = [](const httplib::Request&, httplib::Response& res, int) {
        res.set_content(R"({"choices":[{"message":{"content":[{"type":"text","text":"part1 "},{"type":"text","text":"part2"}]}}]})",
                        "application/json");
    };
    LlmConfig cfg;
    cfg.endpoint = provider.url();
    cfg.model_id = "test-model";
    cfg.api_key = "k123";
    cfg.sampling = {{"temperature", 0.7}};
    LlmClient c(cfg);
    auto p = small_prompt();
    p.images.push_back({"PNGDATA", 320, {}});
    EXPECT_EQ(c.complete(p), "part1 part2");
    ASSERT_EQ(provider.bodies.size(), 1u);
    const auto& body = provider.bodies[0];
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_EQ(body["temperature"], 0.7);
    ASSERT_EQ(body["messages"].size(), 1u);
    EXPECT_EQ(body["messages"][0]["role"], "user");
    const auto& content = body["messages"][0]["content"];
    ASSERT_EQ(content.size(), 2u);
    EXPECT_EQ(content[0]["text"], p.text());
    EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,UE5HREFUQQ==");
    EXPECT_EQ(provider.auth[0], "Bearer k123");
}

TEST(Http, RetriesTransientFailuresAndHonorsRetryAfter) {
    FakeProvider provider;
    provider.respond = [](const httplib::Request&, httplib::Response& res, int n) {
        if (n == 0) res.status = 503;
        else if (n == 1) {
            res.status = 429;
            res.set_header("Retry-After", "0");
        } else res.set_content(R"({"choices":[{"message":{"content":"third time"}}]})", "application/json");
    };
    LlmConfig cfg;
    cfg.endpoint = provider.url();
    cfg.backoff = std::chrono::milliseconds(1);
    LlmClient c(cfg);
    EXPECT_EQ(c.complete(small_prompt()), "third time");
    EXPECT_EQ(provider.hits.load(), 3);

    FakeProvider down;
    down.respond = [](const httplib::Request&, httplib::Response& res, int) { res.status = 500; };
    cfg.endpoint = down.url();
    cfg.max_retries = 2;
    EXPECT_THROW(LlmClient(cfg).complete(small_prompt()), LlmError);
    EXPECT_EQ(down.hits.load(), 3);
}

TEST(Http, ProviderContextOverflowAndClientErrors) {
    FakeProvider provider;
    provider.respond = [](const httplib::Request&, httplib::Response& res, int n) {
        res.status = 400;
        res.set_content(n == 0 ? R"({"error":"This model's maximum context length is 128000 tokens"})" : R"({"error":"bad"})",
                        "application/json");
    };
    LlmConfig cfg;
    cfg.endpoint = provider.url();
    LlmClient c(cfg);
    EXPECT_THROW(c.complete(small_prompt()), ContextOverflow);
    EXPECT_THROW(c.complete(small_prompt()), LlmError);
    EXPECT_EQ(provider.hits.load(), 2);  // no retries on 4xx
}

TEST(Http, UnreachableEndpoint) {
    LlmConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    cfg.max_retries = 1;
    cfg.backoff = std::chrono::milliseconds(1);
    cfg.timeout_seconds = 2;
    EXPECT_THROW(LlmClient(cfg).complete(small_prompt()), LlmError);
}

TEST(Config, ValidationAndJson) {
    LlmConfig cfg;
    EXPECT_THROW(validate(cfg), LlmError);  // no endpoint, no mock
    cfg.endpoint = "http://x/v1";
    EXPECT_NO_THROW(validate(cfg));
    cfg.max_context_tokens = 0;
    EXPECT_THROW(validate(cfg), LlmError);
    const auto parsed = nlohmann::json::parse(R"({"endpoint":"http://e/v1","max_context_tokens":64000})").get<LlmConfig>();
    EXPECT_EQ(parsed.endpoint, "http://e/v1");
    EXPECT_EQ(parsed.max_context_tokens, 64000);
    EXPECT_EQ(parsed.model_id, LlmConfig{}.model_id);
    EXPECT_EQ(base64(""), "");
    EXPECT_EQ(base64("ab"), "YWI=");
}
