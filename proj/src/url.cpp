#include "redefix/url.hpp"

#include "redefix/error.hpp"

namespace redefix {

UrlParts split_url(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0 || scheme_end + 3 >= url.size())
        throw Error("not an absolute URL: " + std::string(url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) return {std::string(url), "/"};
    return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

}  // namespace redefix
