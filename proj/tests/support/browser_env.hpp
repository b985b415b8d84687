#pragma once

#include <cstdlib>
#include <string>

#include "redefix/browser_harness.hpp"

namespace redefix::testing {

inline std::string webdriver_endpoint() {
    const char* env = std::getenv("REDEFIX_WEBDRIVER");
    return env && *env ? env : "http://127.0.0.1:9515";
}

inline std::string fixture_page(const std::string& name) {
    return std::string(REDEFIX_SOURCE_DIR) + "/tests/fixtures/pages/" + name + ".html";
}

// Fixture pages are static, so no settle delay is needed after load.
inline browser::HarnessOptions browser_options() {
    browser::HarnessOptions o;
    o.webdriver_endpoint = webdriver_endpoint();
    o.settle_delay = std::chrono::milliseconds(0);
    return o;
}

inline std::unique_ptr<browser::WebDriverPage> open_fixture(const std::string& name) {
    return browser::WebDriverPage::open(fixture_page(name), browser_options());
}

}  // namespace redefix::testing
