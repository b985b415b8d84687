#pragma once

#include <chrono>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "redefix/error.hpp"
#include "redefix/layout_model.hpp"
#include "redefix/patch_engine.hpp"
#include "redefix/screenshot.hpp"

namespace redefix::browser {

class BrowserError : public Error {
public:
    using Error::Error;
};
class EndpointUnreachable : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class NavigationError : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class ScriptError : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class ElementNotFound : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class DuplicateMarker : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class UnknownMarker : public BrowserError {
public:
    using BrowserError::BrowserError;
};
class InvalidHandle : public BrowserError {
public:
    using BrowserError::BrowserError;
};

/// The geometry probe source, compiled in from probe.js.
extern const std::string_view kProbeScript;

inline constexpr double kDefaultScreenshotPadding = 40;

/// Union of `boxes` grown by `padding`, clamped to [0, page_width] x
/// [0, page_height]. Throws ElementNotFound when `boxes` is empty.
layout::BoundingBox screenshot_region_for(const std::vector<layout::BoundingBox>& boxes, double padding,
                                          double page_width, double page_height);

/// Turns a probe result ({elements:[{xpath, rect, parent_index, visible}]})
/// into a snapshot at `width`.
layout::LayoutSnapshot snapshot_from_probe(const nlohmann::json& probe, int width);

/// What the detection and repair code needs from a rendered page. One
/// instance is confined to one thread.
class PageDriver : public patch::DocumentQuery {
public:
    virtual layout::LayoutSnapshot snapshot_at(int width) = 0;
    virtual Screenshot screenshot_region(int width, const std::vector<std::string>& participants,
                                         double padding = kDefaultScreenshotPadding) = 0;
    virtual void inject_style(const std::string& css_text, const std::string& marker_id) = 0;
    virtual void remove_style(const std::string& marker_id) = 0;
    virtual const std::vector<std::string>& injected_style_ids() const = 0;
    /// Markup around the elements plus the page's own style sheets, for prompts.
    virtual std::string source_excerpt(const std::vector<std::string>& xpaths, std::size_t max_chars) = 0;
    virtual std::string url() const = 0;
};

/// Raw W3C WebDriver wire protocol.
class WebDriverClient {
public:
    explicit WebDriverClient(std::string endpoint, int timeout_seconds = 120);

    /// Returns the "value" member. Maps protocol error codes to the
    /// BrowserError subclasses; connection failures to EndpointUnreachable.
    nlohmann::json command(const std::string& method, const std::string& path,
                           const nlohmann::json& body = nlohmann::json::object());
    const std::string& endpoint() const { return endpoint_; }

private:
    std::string endpoint_;
    std::string origin_;
    std::string prefix_;
    int timeout_seconds_;
};

struct HarnessOptions {
    std::string webdriver_endpoint = "http://127.0.0.1:9515";
    std::chrono::milliseconds navigation_timeout{30000};
    std::chrono::milliseconds settle_delay{200};  // after the load event
    int window_height = 900;
};

class StaticServer;

/// One browser session showing one page (the PageHandle).
class WebDriverPage : public PageDriver {
public:
    /// `target` is an http(s) URL, a file:// URL or a local path. Local
    /// files are served from their directory by an embedded HTTP server.
    static std::unique_ptr<WebDriverPage> open(const std::string& target, const HarnessOptions& options = {});
    ~WebDriverPage() override;
    WebDriverPage(const WebDriverPage&) = delete;
    WebDriverPage& operator=(const WebDriverPage&) = delete;

    layout::LayoutSnapshot snapshot_at(int width) override;
    Screenshot screenshot_region(int width, const std::vector<std::string>& participants,
                                 double padding = kDefaultScreenshotPadding) override;
    void inject_style(const std::string& css_text, const std::string& marker_id) override;
    void remove_style(const std::string& marker_id) override;
    const std::vector<std::string>& injected_style_ids() const override { return injected_; }
    std::string source_excerpt(const std::vector<std::string>& xpaths, std::size_t max_chars) override;
    std::string url() const override { return url_; }

    std::optional<std::vector<patch::ElementStep>> ancestry(const std::string& xpath) override;
    std::vector<std::string> matches(const std::string& selector) override;

    /// Resizes so the layout viewport is `width` px wide.
    void set_viewport_width(int width);
    std::string computed_style(const std::string& xpath, const std::string& property);
    nlohmann::json execute(const std::string& script, const nlohmann::json& args = nlohmann::json::array());
    /// Rect reported by the WebDriver element-rect endpoint.
    layout::BoundingBox element_rect(const std::string& xpath);
    const std::string& session_id() const { return session_id_; }
    bool is_open() const { return !session_id_.empty(); }
    void close();

private:
    WebDriverPage(WebDriverClient client, HarnessOptions options);
    void navigate(const std::string& url);
    std::string session_path(const std::string& rest) const;

    WebDriverClient client_;
    HarnessOptions options_;
    std::unique_ptr<StaticServer> server_;
    std::string session_id_;
    std::string url_;
    std::vector<std::string> injected_;
    int chrome_delta_ = 0;  // window width minus layout viewport width
    int current_width_ = -1;
};

}  // namespace redefix::browser
