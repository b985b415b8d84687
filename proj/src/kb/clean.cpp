// Text-side pieces of the knowledge base: HTML cleaning, RAKE and the
// relevance filter.

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>

#include "redefix/knowledge_base.hpp"
#include "redefix/text.hpp"

namespace redefix::kb {

namespace {

const std::set<std::string> kBlockTags = {"address", "article", "aside", "blockquote", "br",  "dd",     "div",
                                          "dl",      "dt",      "footer", "h1",         "h2",  "h3",     "h4",
                                          "h5",      "h6",      "header", "hr",         "li",  "ol",     "p",
                                          "pre",     "section", "table",  "td",         "th",  "tr",     "ul"};

void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x110000) {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes the entity starting at s[i] == '&'. Returns the decoded text and
// advances i, or returns "&" and advances by one when it is not an entity.
std::string decode_entity(std::string_view s, std::size_t& i) {
    static const std::map<std::string, std::string, std::less<>> named = {
        {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", " "},
        {"ndash", "\xE2\x80\x93"}, {"mdash", "\xE2\x80\x94"}, {"hellip", "\xE2\x80\xA6"}, {"copy", "\xC2\xA9"}};
    const auto semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 10) {
        ++i;
        return "&";
    }
    const auto name = s.substr(i + 1, semi - i - 1);
    std::string out;
    if (!name.empty() && name[0] == '#') {
        const bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
        const auto digits = name.substr(hex ? 2 : 1);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [&](char c) {
                return hex ? std::isxdigit(static_cast<unsigned char>(c)) : std::isdigit(static_cast<unsigned char>(c));
            })) {
            ++i;
            return "&";
        }
        append_utf8(out, std::stoul(std::string(digits), nullptr, hex ? 16 : 10));
    } else {
        auto it = named.find(name);
        if (it == named.end()) {
            ++i;
            return "&";
        }
        out = it->second;
    }
    i = semi + 1;
    return out;
}

// End of the tag starting at s[i] == '<' (index of '>'), honouring quotes.
std::size_t tag_end(std::string_view s, std::size_t i) {
    char quote = 0;
    for (std::size_t j = i + 1; j < s.size(); ++j) {
        const char c = s[j];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '>') {
            return j;
        }
    }
    return std::string_view::npos;
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

std::string clean_html(std::string_view s) {
    std::string out;
    bool in_code = false;
    bool pending_space = false;

    auto emit = [&](std::string_view piece) {
        if (piece.empty()) return;
        if (pending_space && !out.empty() && !is_space(static_cast<unsigned char>(out.back()))) out.push_back(' ');
        pending_space = false;
        out.append(piece);
    };
    auto emit_text = [&](std::string_view piece) {
        for (char c : piece) {
            if (!in_code && is_space(static_cast<unsigned char>(c))) {
                pending_space = true;
            } else if (c == '<') {
                emit("&lt;");
            } else {
                emit(std::string_view(&c, 1));
            }
        }
    };

    for (std::size_t i = 0; i < s.size();) {
        const char c = s[i];
        if (c == '&') {
            emit_text(decode_entity(s, i));
            continue;
        }
        if (c != '<') {
            emit_text(std::string_view(&c, 1));
            ++i;
            continue;
        }
        if (s.substr(i, 4) == "<!--") {
            const auto end = s.find("-->", i + 4);
            i = end == std::string_view::npos ? s.size() : end + 3;
            continue;
        }
        std::size_t j = i + 1;
        const bool closing = j < s.size() && s[j] == '/';
        if (closing) ++j;
        std::size_t name_end = j;
        while (name_end < s.size() && std::isalnum(static_cast<unsigned char>(s[name_end]))) ++name_end;
        const auto end = tag_end(s, i);
        const bool bang = j < s.size() && s[j] == '!';
        if ((name_end == j && !bang) || end == std::string_view::npos) {
            emit_text("<");
            ++i;
            continue;
        }
        const std::string name = text::to_lower(s.substr(j, name_end - j));
        i = end + 1;
        if (name == "code") {
            if (!closing && !in_code) {
                emit("<code>");
                in_code = true;
            } else if (closing && in_code) {
                out.append("</code>");
                in_code = false;
            }
        } else if (in_code) {
            if (name == "br") out.push_back('\n');
        } else if (kBlockTags.contains(name)) {
            pending_space = true;
        }
    }
    if (in_code) out.append("</code>");
    while (!out.empty() && is_space(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out;
}

std::vector<std::pair<std::string, double>> rake_keywords(std::string_view input, const std::set<std::string>& stopwords) {
    // Candidate phrases: runs of non-stopword words not crossing punctuation.
    std::vector<std::vector<std::string>> candidates;
    std::vector<std::string> current;
    std::string word;
    auto end_word = [&] {
        if (word.empty()) return;
        if (stopwords.contains(word)) {
            if (!current.empty()) candidates.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(word);
        }
        word.clear();
    };
    auto end_phrase = [&] {
        end_word();
        if (!current.empty()) candidates.push_back(std::move(current));
        current.clear();
    };
    for (unsigned char c : input) {
        if (std::isalnum(c) || c == '-' || c == '\'') {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            end_word();
        } else {
            end_phrase();
        }
    }
    end_phrase();

    std::unordered_map<std::string, int> freq, degree;
    for (const auto& phrase : candidates) {
        for (const auto& w : phrase) {
            ++freq[w];
            degree[w] += static_cast<int>(phrase.size());
        }
    }

    std::vector<std::pair<std::string, double>> out;
    std::set<std::string> seen;
    for (const auto& phrase : candidates) {
        std::string joined;
        double score = 0;
        for (const auto& w : phrase) {
            if (!joined.empty()) joined += ' ';
            joined += w;
            score += static_cast<double>(degree[w]) / freq[w];
        }
        if (seen.insert(joined).second) out.emplace_back(joined, score);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

bool mentions_any(std::string_view cleaned, const std::vector<std::string>& lexicon) {
    const auto tokens = text::tokenize(text::strip_code_markers(cleaned));
    const std::set<std::string> bag(tokens.begin(), tokens.end());
    return std::any_of(lexicon.begin(), lexicon.end(), [&](const std::string& p) { return bag.contains(text::to_lower(p)); });
}

std::optional<KbDocument> filter_and_bundle(RlfType type, const SoQuestion& q, const std::vector<SoAnswer>& answers,
                                            const std::vector<SoComment>& comments,
                                            const std::vector<std::string>& property_lexicon) {
    if (answers.empty() && comments.empty()) return std::nullopt;
    KbDocument doc;
    doc.rlf_type = type;
    doc.metadata = {q.id, q.link, q.title, q.body};
    doc.cleaned_question = clean_html(q.body);
    for (const auto& a : answers) {
        if (a.score <= 0) continue;
        auto cleaned = clean_html(a.body);
        if (mentions_any(cleaned, property_lexicon)) doc.answers.push_back(std::move(cleaned));
    }
    for (const auto& c : comments) {
        auto cleaned = clean_html(c.body);
        if (!cleaned.empty() && mentions_any(cleaned, property_lexicon)) doc.comments.push_back(std::move(cleaned));
    }
    if (doc.answers.empty() && doc.comments.empty()) return std::nullopt;
    return doc;
}

void validate(const KeywordSet& k) {
    if (k.phrases.empty()) throw KbError("keyword set for " + std::string(layout::to_string(k.rlf_type)) + " is empty");
    for (const auto& p : k.phrases) {
        if (p != text::to_lower(p)) throw KbError("keyword phrase not lowercase: " + p);
        std::size_t words = 0;
        bool in_word = false;
        for (unsigned char c : p) {
            if (std::isspace(c)) {
                in_word = false;
            } else if (!in_word) {
                in_word = true;
                ++words;
            }
        }
        if (words < 1 || words > 6) throw KbError("keyword phrase must have 1 to 6 words: '" + p + "'");
    }
}

}  // namespace redefix::kb
