#include "cli.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace redefix::cli {

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef REDEFIX_VERSION
#define REDEFIX_VERSION "0.0.0"
#endif
#ifndef REDEFIX_DEFAULT_CONFIG
#define REDEFIX_DEFAULT_CONFIG "data/config.json"
#endif

// ---------------------------------------------------------------------------
// Configuration

namespace {

template <typename T>
void read(const json& j, const char* key, T& target) {
    if (j.contains(key)) target = j.at(key).get<T>();
}

void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

std::string env(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

}  // namespace

fs::path default_config_path() {
    if (auto p = env(kConfigEnv); !p.empty()) return p;
    return REDEFIX_DEFAULT_CONFIG;
}

void validate(const RunConfig& c) {
    try {
        repair::validate(repair_config(c, false));
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (c.embedder.type != "hashing" && c.embedder.type != "remote")
        throw ConfigError("embedder.type must be \"hashing\" or \"remote\"");
    if (c.embedder.dimension < 1) throw ConfigError("embedder.dimension must be >= 1");
    if (c.embedder.type == "remote" && c.embedder.remote.endpoint.empty())
        throw ConfigError("embedder.endpoint is required for a remote embedder");
    if (c.harness.window_height < 100) throw ConfigError("harness.window_height must be >= 100");
    if (c.stackexchange.fetch.max_pages < 1) throw ConfigError("stackexchange.max_pages must be >= 1");
}

RunConfig load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    RunConfig c;
    const fs::path base = file.parent_path();
    try {
        const json j = json::parse(in);
        check_keys(j, "config",
                   {"sweep", "kb_path", "weights", "top_k", "max_iterations", "n_majority", "completion_reserve",
                    "include_images", "llm", "webdriver_endpoint", "harness", "output_dir", "embedder",
                    "stackexchange", "data"});
        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            check_keys(s, "sweep", {"min", "max", "step", "small_range_threshold", "refine"});
            read(s, "min", c.sweep.min);
            read(s, "max", c.sweep.max);
            read(s, "step", c.sweep.step);
            read(s, "small_range_threshold", c.sweep.small_range_threshold);
            read(s, "refine", c.sweep.refine);
        }
        if (j.contains("kb_path")) c.kb_path = j.at("kb_path").get<std::string>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("weights")) {
            check_keys(j.at("weights"), "weights", {"bm25", "dense"});
            read(j.at("weights"), "bm25", c.weights.bm25);
            read(j.at("weights"), "dense", c.weights.dense);
        }
        read(j, "top_k", c.top_k);
        read(j, "max_iterations", c.max_iterations);
        read(j, "n_majority", c.n_majority);
        read(j, "completion_reserve", c.completion_reserve);
        read(j, "include_images", c.include_images);
        if (j.contains("llm")) {
            c.llm = j.at("llm").get<llm::LlmConfig>();
            if (c.llm.mock_script && c.llm.mock_script->is_relative()) c.llm.mock_script = base / *c.llm.mock_script;
        }
        read(j, "webdriver_endpoint", c.harness.webdriver_endpoint);
        if (j.contains("harness")) {
            const auto& h = j.at("harness");
            check_keys(h, "harness", {"navigation_timeout_ms", "settle_delay_ms", "window_height"});
            if (h.contains("navigation_timeout_ms"))
                c.harness.navigation_timeout = std::chrono::milliseconds(h.at("navigation_timeout_ms").get<int>());
            if (h.contains("settle_delay_ms"))
                c.harness.settle_delay = std::chrono::milliseconds(h.at("settle_delay_ms").get<int>());
            read(h, "window_height", c.harness.window_height);
        }
        if (j.contains("embedder")) {
            const auto& e = j.at("embedder");
            check_keys(e, "embedder", {"type", "dimension", "endpoint", "fallback_to_hashing", "timeout_seconds"});
            read(e, "type", c.embedder.type);
            read(e, "dimension", c.embedder.dimension);
            read(e, "endpoint", c.embedder.remote.endpoint);
            read(e, "fallback_to_hashing", c.embedder.remote.fallback_to_hashing);
            read(e, "timeout_seconds", c.embedder.remote.timeout_seconds);
            c.embedder.remote.dimension = c.embedder.dimension;
        }
        if (j.contains("stackexchange")) {
            const auto& s = j.at("stackexchange");
            check_keys(s, "stackexchange",
                       {"base_url", "api_prefix", "site", "api_key", "max_requests_per_second", "max_retries", "tags",
                        "max_pages"});
            auto& h = c.stackexchange.http;
            read(s, "base_url", h.base_url);
            read(s, "api_prefix", h.api_prefix);
            read(s, "site", h.site);
            read(s, "api_key", h.api_key);
            read(s, "max_requests_per_second", h.max_requests_per_second);
            read(s, "max_retries", h.max_retries);
            read(s, "tags", c.stackexchange.fetch.tags);
            read(s, "max_pages", c.stackexchange.fetch.max_pages);
        }
        json data = j.value("data", json::object());
        check_keys(data, "data", {"keywords", "lexicons", "definitions", "prompt_template"});
        c.keywords_file = base / data.value("keywords", "keywords.json");
        c.lexicons_file = base / data.value("lexicons", "lexicons.json");
        c.definitions_file = base / data.value("definitions", "definitions.json");
        c.prompt_template_file = base / data.value("prompt_template", "prompt_template.txt");
    } catch (const json::exception& e) {
        throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    if (auto k = env(kSoApiKeyEnv); !k.empty()) c.stackexchange.http.api_key = k;
    if (auto k = env(llm::kApiKeyEnv); !k.empty()) c.llm.api_key = k;
    validate(c);
    return c;
}

repair::RepairConfig repair_config(const RunConfig& c, bool zero_shot) {
    repair::RepairConfig r;
    r.sweep = c.sweep;
    r.max_iterations = c.max_iterations;
    r.n_majority = c.n_majority;
    r.completion_reserve = c.completion_reserve;
    r.weights = c.weights;
    r.top_k = c.top_k;
    r.zero_shot = zero_shot;
    r.include_images = c.include_images;
    return r;
}

std::unique_ptr<retrieval::Embedder> make_embedder(const EmbedderConfig& c) {
    if (c.type == "remote") return std::make_unique<retrieval::RemoteEmbedder>(c.remote);
    return std::make_unique<retrieval::HashingEmbedder>(c.dimension);
}

// ---------------------------------------------------------------------------
// kb

int cmd_kb_build(const RunConfig& config, const KbBuildFlags& flags, std::ostream& out, std::ostream& err) {
    if (!flags.fixture && config.stackexchange.http.api_key.empty()) {
        err << "error: no Stack Exchange API key; set " << kSoApiKeyEnv << " or pass --fixture <dir>\n";
        return exit_code::kError;
    }
    try {
        kb::KbBuildConfig build;
        build.output_dir = config.kb_path;
        build.keywords = kb::load_keywords(config.keywords_file);
        build.lexicons = kb::load_lexicons(config.lexicons_file);
        build.fetch = config.stackexchange.fetch;
        std::unique_ptr<kb::StackExchangeClient> api;
        if (flags.fixture) api = std::make_unique<kb::FixtureClient>(*flags.fixture);
        else api = std::make_unique<kb::HttpStackExchangeClient>(config.stackexchange.http);
        const auto stats = kb::build_kb(build, *api);
        out << json(stats).dump(2) << "\n";
        if (!stats.complete) {
            err << "warning: quota exhausted; knowledge base at " << config.kb_path.string() << " is incomplete\n";
            return exit_code::kKbPartial;
        }
        return exit_code::kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
}

int cmd_kb_stats(const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        const auto store = kb::KbStore::load(config.kb_path);
        json docs = json::object();
        for (auto t : kb::repairable_types()) docs[std::string(layout::to_string(t))] = store.documents(t).size();
        out << json{{"stats", store.stats()}, {"documents", docs}}.dump(2) << "\n";
        return exit_code::kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
}

// ---------------------------------------------------------------------------
// detect

int cmd_detect(const std::string& url, const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        auto page = browser::WebDriverPage::open(url, config.harness);
        const auto d = repair::detect_page(*page, config.sweep);
        out << json(d.records).dump() << "\n";
        return d.records.empty() ? exit_code::kOk : exit_code::kFailuresFound;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
}

// ---------------------------------------------------------------------------
// repair

namespace {

std::string utc_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const fs::path& p, const std::string& bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << bytes;
    if (!f) throw Error("cannot write " + p.string());
}

struct RepairInputs {
    prompt::PromptTemplate tmpl;
    repair::RepairResources resources;
    std::optional<kb::KbStore> store;
    std::unique_ptr<retrieval::Embedder> embedder;
    std::optional<repair::LocalizationResult> external;
    llm::LlmConfig llm;
};

// Everything that can be wrong before a browser is involved.
RepairInputs prepare(const RunConfig& config, const RepairFlags& flags) {
    RepairInputs in;
    in.llm = config.llm;
    if (flags.mock_llm) in.llm.mock_script = *flags.mock_llm;
    try {
        llm::validate(in.llm);
        in.tmpl = prompt::PromptTemplate::load(config.prompt_template_file);
        in.resources.definitions = repair::load_definitions(config.definitions_file);
        in.resources.lexicons = kb::load_lexicons(config.lexicons_file);
        if (flags.localization_file) in.external = repair::load_localization(*flags.localization_file);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (!flags.zero_shot) {
        if (!fs::is_directory(config.kb_path))
            throw ConfigError("knowledge base not found at " + config.kb_path.string() +
                              "; run `redefix kb build` or pass --zero-shot");
        try {
            in.store = kb::KbStore::load(config.kb_path);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        in.embedder = make_embedder(config.embedder);
    }
    return in;
}

}  // namespace

int cmd_repair(const std::string& url, const RunConfig& config, const RepairFlags& flags, std::ostream& out,
               std::ostream& err) {
    std::optional<RepairInputs> in;
    try {
        in.emplace(prepare(config, flags));
        in->resources.prompt_template = &in->tmpl;
        if (in->store) {
            in->resources.kb = &*in->store;
            in->resources.embedder = in->embedder.get();
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }

    try {
        llm::LlmClient client(in->llm);
        auto page = browser::WebDriverPage::open(url, config.harness);
        const auto baseline = repair::detect_page(*page, config.sweep);

        std::vector<std::size_t> targets;
        json skipped = json::array();
        if (flags.rlf_index) {
            const int i = *flags.rlf_index;
            if (i < 0 || static_cast<std::size_t>(i) >= baseline.records.size())
                throw ConfigError("--rlf-index " + std::to_string(i) + " is out of range; the page has " +
                                  std::to_string(baseline.records.size()) + " RLF(s)");
            if (baseline.records[i].type == layout::RlfType::SmallRange)
                throw ConfigError("RLF " + std::to_string(i) + " is a small-range failure; those are reported only");
            targets.push_back(static_cast<std::size_t>(i));
        } else {
            for (std::size_t i = 0; i < baseline.records.size(); ++i) {
                if (baseline.records[i].type == layout::RlfType::SmallRange)
                    skipped.push_back({{"rlf_index", i}, {"reason", "small-range failures are reported only"}});
                else
                    targets.push_back(i);
            }
        }
        if (in->external && targets.size() > 1)
            throw ConfigError("--localization-file describes one RLF; select it with --rlf-index");

        const auto rcfg = repair_config(config, flags.zero_shot);
        json outcomes = json::array();
        std::string combined;
        int repaired = 0;
        for (auto i : targets) {
            const auto tag = "rlf-" + std::to_string(i);
            const auto outcome = repair::repair(*page, baseline.records[i], baseline, in->resources, client, rcfg,
                                                in->external, "redefix-" + tag);
            json o = outcome;
            o["rlf_index"] = i;
            json artifacts = {{"patch", nullptr}, {"before", nullptr}, {"after", nullptr}};
            if (outcome.final_patch) {
                const auto css = patch::serialize(*outcome.final_patch);
                write_file(config.output_dir / "patches" / (tag + ".css"), css);
                artifacts["patch"] = "patches/" + tag + ".css";
                combined += css;
                ++repaired;
            }
            if (outcome.before) {
                write_file(config.output_dir / "screenshots" / (tag + "-before.png"), outcome.before->png_bytes);
                artifacts["before"] = "screenshots/" + tag + "-before.png";
            }
            if (outcome.after) {
                write_file(config.output_dir / "screenshots" / (tag + "-after.png"), outcome.after->png_bytes);
                artifacts["after"] = "screenshots/" + tag + "-after.png";
            }
            o["artifacts"] = artifacts;
            outcomes.push_back(std::move(o));
        }
        json combined_path = nullptr;
        if (!combined.empty()) {
            write_file(config.output_dir / "patches" / "combined.css", combined);
            combined_path = "patches/combined.css";
        }

        const int attempted = static_cast<int>(targets.size());
        const json report = {
            {"schema_version", kReportSchemaVersion},
            {"metadata", {{"generated_at", utc_timestamp()}, {"tool", "redefix"}, {"version", REDEFIX_VERSION}}},
            {"page_url", url},
            {"mode", flags.zero_shot ? "zero_shot" : "retrieval"},
            {"llm", {{"model_id", in->llm.model_id}, {"mock", client.mock()}, {"calls", client.calls()}}},
            {"sweep", {{"min", config.sweep.min}, {"max", config.sweep.max}, {"step", config.sweep.step}}},
            {"baseline_rlfs", baseline.records},
            {"outcomes", outcomes},
            {"skipped", skipped},
            {"totals", {{"attempted", attempted}, {"repaired", repaired}}},
            {"combined_patch", combined_path},
        };
        write_file(config.output_dir / kReportFile, report.dump(2) + "\n");
        out << json{{"report", (config.output_dir / kReportFile).string()},
                    {"attempted", attempted},
                    {"repaired", repaired}}
                   .dump()
            << "\n";
        return repaired == attempted ? exit_code::kOk : exit_code::kNotAllRepaired;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string figure(const json& path, const char* label) {
    std::string s = "<figure><figcaption>" + std::string(label) + "</figcaption>";
    if (path.is_string())
        s += "<img src=\"" + escape(path.get<std::string>()) + "\" alt=\"" + label + "\">";
    else
        s += "<p class=\"none\">no screenshot</p>";
    return s + "</figure>";
}

}  // namespace

std::string render_report_html(const json& report) {
    std::ostringstream h;
    const auto& totals = report.at("totals");
    h << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>redefix report</title>\n"
      << "<style>body{font-family:sans-serif;margin:2em}.pair{display:flex;gap:2em}"
      << "figure{margin:0}img{max-width:45vw;border:1px solid #999}pre{background:#f4f4f4;padding:.5em}"
      << ".none{color:#888}</style>\n</head>\n<body>\n"
      << "<h1>Layout repair report</h1>\n"
      << "<p>Page: <code>" << escape(report.at("page_url").get<std::string>()) << "</code></p>\n"
      << "<p>Repaired " << totals.at("repaired").get<int>() << " of " << totals.at("attempted").get<int>()
      << " attempted failures.</p>\n";
    for (const auto& o : report.at("outcomes")) {
        const auto& rlf = o.at("rlf");
        const auto type = layout::rlf_type_from_string(rlf.at("type").get<std::string>());
        const auto range = rlf.at("range");
        h << "<section class=\"outcome\">\n<h2>RLF " << o.at("rlf_index").get<int>() << ": "
          << escape(layout::display_name(type)) << ", " << range[0].get<int>() << "px to " << range[1].get<int>()
          << "px</h2>\n<p>Elements:";
        for (const auto& p : rlf.at("participants")) h << " <code>" << escape(p.get<std::string>()) << "</code>";
        h << "</p>\n<p>Status: " << escape(o.at("status").get<std::string>()) << ", iterations "
          << o.at("iterations").size() << "</p>\n";
        if (o.at("final_patch").is_string())
            h << "<pre>" << escape(o.at("final_patch").get<std::string>()) << "</pre>\n";
        const auto& a = o.at("artifacts");
        h << "<div class=\"pair\">" << figure(a.at("before"), "Version 1") << figure(a.at("after"), "Version 2")
          << "</div>\n</section>\n";
    }
    h << "</body>\n</html>\n";
    return h.str();
}

int cmd_report(const fs::path& output_dir, std::ostream& out, std::ostream& err) {
    const auto file = output_dir / kReportFile;
    std::ifstream in(file);
    if (!in) {
        err << "error: no " << kReportFile << " in " << output_dir.string() << "\n";
        return exit_code::kError;
    }
    try {
        const auto report = json::parse(in);
        if (report.value("schema_version", 0) != kReportSchemaVersion)
            throw Error("unsupported report schema_version in " + file.string());
        write_file(output_dir / kIndexFile, render_report_html(report));
        out << (output_dir / kIndexFile).string() << "\n";
        return exit_code::kOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
}

// ---------------------------------------------------------------------------
// Command line

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Detects responsive layout failures in web pages and repairs them with model-generated CSS"};
    app.set_version_flag("--version", REDEFIX_VERSION);
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (default: $REDEFIX_CONFIG or the shipped one)");

    std::optional<std::string> kb_path, output_dir, webdriver;
    auto add_kb_path = [&](CLI::App* c) { c->add_option("--kb-path", kb_path, "Knowledge base directory"); };
    auto add_webdriver = [&](CLI::App* c) { c->add_option("--webdriver", webdriver, "WebDriver endpoint URL"); };

    auto* kb_cmd = app.add_subcommand("kb", "Knowledge base commands");
    kb_cmd->require_subcommand(1);
    KbBuildFlags build_flags;
    std::optional<std::string> fixture;
    auto* kb_build = kb_cmd->add_subcommand("build", "Fetch, filter and store Q&A posts");
    kb_build->add_option("--fixture", fixture, "Directory of canned API responses instead of the live API");
    add_kb_path(kb_build);
    auto* kb_stats = kb_cmd->add_subcommand("stats", "Print knowledge base statistics");
    add_kb_path(kb_stats);

    std::string url;
    auto* detect = app.add_subcommand("detect", "Print the page's RLFs as JSON");
    detect->add_option("url", url, "Page URL or local HTML file")->required();
    add_webdriver(detect);

    RepairFlags repair_flags;
    std::optional<std::string> mock, loc_file;
    auto* repair_cmd = app.add_subcommand("repair", "Repair the page's RLFs and write a report");
    repair_cmd->add_option("url", url, "Page URL or local HTML file")->required();
    repair_cmd->add_option("--rlf-index", repair_flags.rlf_index, "Repair only this RLF (index into detect output)");
    repair_cmd->add_option("--mock-llm", mock, "JSON array of scripted model responses; no network calls");
    repair_cmd->add_option("--localization-file", loc_file, "JSON [{xpath, property, score}] replacing localization");
    repair_cmd->add_flag("--zero-shot", repair_flags.zero_shot, "Skip retrieval; the knowledge base is not read");
    repair_cmd->add_option("--output-dir", output_dir, "Report directory");
    add_kb_path(repair_cmd);
    add_webdriver(repair_cmd);

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Render index.html for a repair report");
    report->add_option("dir", report_dir, "Directory holding report.json")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::kOk;
    } catch (const CLI::CallForVersion&) {
        out << REDEFIX_VERSION << "\n";
        return exit_code::kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }

    if (report->parsed()) return cmd_report(report_dir, out, err);

    RunConfig config;
    try {
        config = load_config(config_path.empty() ? default_config_path() : fs::path(config_path));
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::kError;
    }
    if (kb_path) config.kb_path = *kb_path;
    if (output_dir) config.output_dir = *output_dir;
    if (webdriver) config.harness.webdriver_endpoint = *webdriver;

    if (kb_build->parsed()) {
        if (fixture) build_flags.fixture = *fixture;
        return cmd_kb_build(config, build_flags, out, err);
    }
    if (kb_stats->parsed()) return cmd_kb_stats(config, out, err);
    if (detect->parsed()) return cmd_detect(url, config, out, err);
    if (mock) repair_flags.mock_llm = *mock;
    if (loc_file) repair_flags.localization_file = *loc_file;
    return cmd_repair(url, config, repair_flags, out, err);
}

}  // namespace redefix::cli
