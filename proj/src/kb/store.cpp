#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "redefix/knowledge_base.hpp"
#include "redefix/text.hpp"

namespace redefix::kb {

using nlohmann::json;

namespace {

// True when every '<' in s opens a literal <code> or </code> marker.
bool only_code_tags(std::string_view s) {
    for (std::size_t i = s.find('<'); i != std::string_view::npos; i = s.find('<', i + 1))
        if (s.substr(i, 6) != "<code>" && s.substr(i, 7) != "</code>") return false;
    return true;
}

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw KbError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw KbError(p.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw KbError("cannot write " + p.string());
    out << content;
    if (!out) throw KbError("write failed: " + p.string());
}

}  // namespace

void validate(const KbDocument& d) {
    const auto id = std::to_string(d.metadata.id);
    if (d.metadata.id <= 0) throw KbError("document id must be positive");
    if (d.metadata.link.empty() || d.metadata.title.empty() || d.metadata.body.empty())
        throw KbError("document " + id + " is missing LINK, TITLE or BODY");
    if (d.answers.empty() && d.comments.empty()) throw KbError("document " + id + " has no answers or comments");
    auto check = [&](const std::string& t) {
        if (!only_code_tags(t)) throw KbError("document " + id + " contains HTML beyond <code> tags");
    };
    check(d.cleaned_question);
    std::for_each(d.answers.begin(), d.answers.end(), check);
    std::for_each(d.comments.begin(), d.comments.end(), check);
}

void to_json(json& j, const KbDocument& d) {
    j = json{{"rlf_type", layout::to_string(d.rlf_type)},
             {"metadata",
              {{"ID", d.metadata.id}, {"LINK", d.metadata.link}, {"TITLE", d.metadata.title}, {"BODY", d.metadata.body}}},
             {"cleaned_question", d.cleaned_question},
             {"answers", d.answers},
             {"comments", d.comments}};
}

void from_json(const json& j, KbDocument& d) {
    d.rlf_type = layout::rlf_type_from_string(j.at("rlf_type").get<std::string>());
    const auto& m = j.at("metadata");
    d.metadata = {m.at("ID").get<std::int64_t>(), m.at("LINK").get<std::string>(), m.at("TITLE").get<std::string>(),
                  m.at("BODY").get<std::string>()};
    d.cleaned_question = j.at("cleaned_question").get<std::string>();
    d.answers = j.at("answers").get<std::vector<std::string>>();
    d.comments = j.at("comments").get<std::vector<std::string>>();
}

TypeStats KbStats::totals() const {
    TypeStats t;
    for (const auto& [_, s] : per_type) {
        t.questions += s.questions;
        t.answers += s.answers;
        t.comments += s.comments;
        t.fetched += s.fetched;
    }
    return t;
}

void to_json(json& j, const KbStats& s) {
    json types = json::object();
    for (const auto& [t, st] : s.per_type)
        types[std::string(layout::to_string(t))] = {
            {"questions", st.questions}, {"answers", st.answers}, {"comments", st.comments}, {"fetched", st.fetched}};
    const auto tot = s.totals();
    j = json{{"complete", s.complete}, {"questions", tot.questions}, {"answers", tot.answers},
             {"comments", tot.comments}, {"fetched", tot.fetched},  {"types", types}};
    if (!s.complete) {
        j["completed_phrases"] = s.completed_phrases;
        j["retry_after_seconds"] = s.retry_after_seconds;
    }
}

void from_json(const json& j, KbStats& s) {
    s.complete = j.at("complete").get<bool>();
    s.per_type.clear();
    for (const auto& [name, st] : j.at("types").items())
        s.per_type[layout::rlf_type_from_string(name)] = {st.at("questions").get<int>(), st.at("answers").get<int>(),
                                                          st.at("comments").get<int>(), st.value("fetched", 0)};
    s.completed_phrases = j.value("completed_phrases", std::vector<std::string>{});
    s.retry_after_seconds = j.value("retry_after_seconds", 0);
}

std::vector<RlfType> repairable_types() {
    std::vector<RlfType> out;
    for (auto t : layout::kAllRlfTypes)
        if (t != RlfType::SmallRange) out.push_back(t);
    return out;
}

std::string store_file_name(RlfType t) { return std::string(layout::to_string(t)) + ".jsonl"; }

KbStats build_kb(const KbBuildConfig& config, StackExchangeClient& api) {
    std::filesystem::create_directories(config.output_dir);
    KbStats stats;
    std::map<RlfType, std::vector<KbDocument>> stores;
    bool stopped = false;

    for (auto type : repairable_types()) {
        stats.per_type[type] = {};
        if (stopped) continue;
        const auto kw = config.keywords.find(type);
        const auto lex = config.lexicons.find(type);
        if (kw == config.keywords.end()) throw KbError("no keywords configured for " + std::string(layout::to_string(type)));
        if (lex == config.lexicons.end()) throw KbError("no lexicon configured for " + std::string(layout::to_string(type)));
        const auto prefix = std::string(layout::to_string(type)) + ":";

        std::vector<SoQuestion> questions;
        std::vector<SoAnswer> answers;
        std::vector<SoComment> comments;
        try {
            questions = fetch_questions(kw->second, api, config.fetch);
            for (const auto& p : kw->second.phrases) stats.completed_phrases.push_back(prefix + p);
            std::vector<std::int64_t> ids;
            for (const auto& q : questions) ids.push_back(q.id);
            if (!ids.empty()) {
                answers = api.answers(ids);
                for (const auto& a : answers) ids.push_back(a.id);
                comments = api.comments(ids);
            }
        } catch (QuotaExhaustedError& e) {
            // Questions without fetched answers/comments cannot be judged yet.
            stats.complete = false;
            stats.retry_after_seconds = static_cast<int>(e.retry_after.count());
            for (const auto& p : e.completed_phrases) stats.completed_phrases.push_back(prefix + p);
            stats.per_type[type].fetched = static_cast<int>(e.partial.size());
            stopped = true;
            continue;
        }
        stats.per_type[type].fetched = static_cast<int>(questions.size());

        std::unordered_map<std::int64_t, std::vector<SoAnswer>> by_question;
        std::unordered_map<std::int64_t, std::int64_t> answer_owner;
        for (const auto& a : answers) {
            by_question[a.question_id].push_back(a);
            answer_owner[a.id] = a.question_id;
        }
        std::unordered_map<std::int64_t, std::vector<SoComment>> comments_of;
        for (const auto& c : comments) {
            auto owner = answer_owner.find(c.post_id);
            comments_of[owner == answer_owner.end() ? c.post_id : owner->second].push_back(c);
        }

        std::sort(questions.begin(), questions.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        auto& docs = stores[type];
        for (const auto& q : questions) {
            auto qa = by_question[q.id];
            std::sort(qa.begin(), qa.end(), [](const auto& a, const auto& b) {
                return a.score != b.score ? a.score > b.score : a.id < b.id;
            });
            auto qc = comments_of[q.id];
            std::sort(qc.begin(), qc.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
            if (auto doc = filter_and_bundle(type, q, qa, qc, lex->second)) docs.push_back(std::move(*doc));
        }
        auto& st = stats.per_type[type];
        st.questions = static_cast<int>(docs.size());
        for (const auto& d : docs) {
            st.answers += static_cast<int>(d.answers.size());
            st.comments += static_cast<int>(d.comments.size());
        }
    }

    for (auto type : repairable_types()) {
        std::string lines;
        for (const auto& d : stores[type]) lines += json(d).dump() + "\n";
        write_text(config.output_dir / store_file_name(type), lines);
    }
    write_text(config.output_dir / "stats.json", json(stats).dump(2) + "\n");
    return stats;
}

// ---------------------------------------------------------------------------

KbStore KbStore::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw KbError("knowledge base not found: " + dir.string());
    KbStore store;
    for (auto type : repairable_types()) {
        const auto file = dir / store_file_name(type);
        auto& docs = store.docs_[type];
        if (!std::filesystem::exists(file)) continue;
        std::ifstream in(file);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            KbDocument d;
            try {
                d = json::parse(line).get<KbDocument>();
            } catch (const json::exception& e) {
                throw KbError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
            if (d.rlf_type != type) throw KbError(file.string() + ":" + std::to_string(lineno) + ": wrong rlf_type");
            validate(d);
            docs.push_back(std::move(d));
        }
    }
    if (std::filesystem::exists(dir / "stats.json")) store.stats_ = read_json(dir / "stats.json").get<KbStats>();
    return store;
}

const std::vector<KbDocument>& KbStore::documents(RlfType t) const {
    static const std::vector<KbDocument> empty;
    auto it = docs_.find(t);
    return it == docs_.end() ? empty : it->second;
}

void KbStore::add(KbDocument d) {
    validate(d);
    docs_[d.rlf_type].push_back(std::move(d));
}

// ---------------------------------------------------------------------------

std::map<RlfType, KeywordSet> load_keywords(const std::filesystem::path& file) {
    std::map<RlfType, KeywordSet> out;
    const auto doc = read_json(file);
    for (const auto& [name, phrases] : doc.items()) {
        if (name.starts_with("_")) continue;  // comments
        KeywordSet k{layout::rlf_type_from_string(name), phrases.get<std::vector<std::string>>()};
        validate(k);
        out[k.rlf_type] = std::move(k);
    }
    return out;
}

std::map<RlfType, std::vector<std::string>> load_lexicons(const std::filesystem::path& file) {
    std::map<RlfType, std::vector<std::string>> out;
    const auto doc = read_json(file);
    for (const auto& [name, props] : doc.items()) {
        if (name.starts_with("_")) continue;
        auto list = props.get<std::vector<std::string>>();
        if (list.empty()) throw KbError("empty property lexicon for " + name);
        out[layout::rlf_type_from_string(name)] = std::move(list);
    }
    return out;
}

std::set<std::string> load_stopwords(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw KbError("cannot read " + file.string());
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string w;
        while (words >> w) {
            if (w.starts_with("#")) break;
            out.insert(text::to_lower(w));
        }
    }
    return out;
}

}  // namespace redefix::kb
