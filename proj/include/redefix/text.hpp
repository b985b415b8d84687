#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace redefix::text {

/// Lowercased tokens split on anything that is not [a-z0-9-]. Hyphens stay
/// inside tokens so "box-sizing" survives; a lone "-" is dropped.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view s);

/// Removes the literal <code> and </code> markers kept by clean_html.
std::string strip_code_markers(std::string_view s);

}  // namespace redefix::text
