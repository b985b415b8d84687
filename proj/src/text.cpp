#include "redefix/text.hpp"

#include <cctype>

namespace redefix::text {

namespace {

bool token_char(unsigned char c) { return std::isalnum(c) || c == '-'; }

bool all_hyphens(const std::string& s) { return s.find_first_not_of('-') == std::string::npos; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && !all_hyphens(cur)) out.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (token_char(c))
            cur.push_back(static_cast<char>(std::tolower(c)));
        else
            flush();
    }
    flush();
    return out;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string strip_code_markers(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        if (s.substr(i, 6) == "<code>") {
            out.push_back(' ');
            i += 6;
        } else if (s.substr(i, 7) == "</code>") {
            out.push_back(' ');
            i += 7;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

}  // namespace redefix::text
