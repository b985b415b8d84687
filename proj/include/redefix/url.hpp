#pragma once

#include <string>
#include <string_view>

namespace redefix {

/// "scheme://host:port/path?q" split into the origin httplib wants and the rest.
struct UrlParts {
    std::string origin;
    std::string path;  // "/" when absent
};

UrlParts split_url(std::string_view url);

}  // namespace redefix
