#include "redefix/browser_harness.hpp"

#include <algorithm>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "redefix/url.hpp"

namespace redefix::browser {

namespace {

// Same positional XPath format as the probe.
constexpr const char* kXpathHelpers = R"JS(
function rdxStep(el) {
  var tag = el.tagName.toLowerCase();
  if (tag === 'html' || tag === 'body') return tag;
  var n = 1;
  for (var s = el.previousElementSibling; s; s = s.previousElementSibling) if (s.tagName === el.tagName) n++;
  return tag + '[' + n + ']';
}
function rdxXpath(el) {
  var p = '';
  for (var e = el; e && e.nodeType === 1; e = e.parentElement) p = '/' + rdxStep(e) + p;
  return p;
}
function rdxResolve(x) {
  try {
    return document.evaluate(x, document, null, XPathResult.FIRST_ORDERED_NODE_TYPE, null).singleNodeValue;
  } catch (e) { return null; }
}
)JS";

std::string with_helpers(const char* body) { return std::string(kXpathHelpers) + body; }

std::string base64_decode(const std::string& in) {
    std::string clean;
    clean.reserve(in.size());
    for (char c : in)
        if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
    if (clean.size() % 4 != 0) throw BrowserError("screenshot payload is not valid base64");
    std::string out(clean.size() / 4 * 3, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
    if (n < 0) throw BrowserError("screenshot payload is not valid base64");
    std::size_t pad = 0;
    if (!clean.empty() && clean.back() == '=') ++pad;
    if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

layout::BoundingBox screenshot_region_for(const std::vector<layout::BoundingBox>& boxes, double padding,
                                          double page_width, double page_height) {
    if (boxes.empty()) throw ElementNotFound("screenshot needs at least one participant");
    if (padding < 0) throw BrowserError("screenshot padding must be >= 0");
    auto u = boxes.front();
    for (const auto& b : boxes) u = layout::united(u, b);
    const double x0 = std::max(0.0, u.x - padding);
    const double y0 = std::max(0.0, u.y - padding);
    const double x1 = std::min(page_width, u.right() + padding);
    const double y1 = std::min(page_height, u.bottom() + padding);
    return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

layout::LayoutSnapshot snapshot_from_probe(const nlohmann::json& probe, int width) {
    try {
        const auto& elements = probe.at("elements");
        std::vector<layout::LayoutNode> nodes;
        std::map<std::string, std::string> parents;
        nodes.reserve(elements.size());
        for (std::size_t i = 0; i < elements.size(); ++i) {
            const auto& e = elements[i];
            const auto& r = e.at("rect");
            layout::LayoutNode n{e.at("xpath").get<std::string>(),
                                 {r.at("x").get<double>(), r.at("y").get<double>(), r.at("width").get<double>(),
                                  r.at("height").get<double>()},
                                 e.value("visible", true)};
            const int parent = e.at("parent_index").get<int>();
            if (parent >= static_cast<int>(i)) throw BrowserError("probe parent_index must reference an earlier element");
            if (parent >= 0) parents[n.xpath] = nodes[static_cast<std::size_t>(parent)].xpath;
            nodes.push_back(std::move(n));
        }
        return layout::LayoutSnapshot(width, std::move(nodes), std::move(parents));
    } catch (const nlohmann::json::exception& e) {
        throw BrowserError(std::string("malformed probe result: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Wire protocol

WebDriverClient::WebDriverClient(std::string endpoint, int timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {
    try {
        auto parts = split_url(endpoint_);
        origin_ = parts.origin;
        prefix_ = parts.path == "/" ? "" : parts.path;
        while (prefix_.ends_with('/')) prefix_.pop_back();
    } catch (const Error& e) {
        throw EndpointUnreachable(std::string("bad webdriver endpoint: ") + e.what());
    }
}

nlohmann::json WebDriverClient::command(const std::string& method, const std::string& path, const nlohmann::json& body) {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(5);
    cli.set_read_timeout(timeout_seconds_);
    const auto full = prefix_ + path;
    httplib::Result res;
    if (method == "GET") res = cli.Get(full);
    else if (method == "DELETE") res = cli.Delete(full);
    else res = cli.Post(full, body.dump(), "application/json");
    if (!res)
        throw EndpointUnreachable("webdriver endpoint " + endpoint_ + " unreachable: " + httplib::to_string(res.error()));

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw BrowserError("webdriver returned non-JSON (HTTP " + std::to_string(res->status) + ") for " + method + " " + path);
    }
    nlohmann::json value = doc.contains("value") ? doc["value"] : nlohmann::json();
    if (res->status == 200) return value;

    const std::string code = value.is_object() ? value.value("error", "unknown error") : "unknown error";
    const std::string message =
        code + ": " + (value.is_object() ? value.value("message", "") : std::string()) + " (" + method + " " + path + ")";
    if (code == "invalid session id") throw InvalidHandle(message);
    if (code == "javascript error") throw ScriptError(message);
    if (code == "no such element") throw ElementNotFound(message);
    if (code == "timeout" || code == "script timeout") throw NavigationError(message);
    throw BrowserError(message);
}

// ---------------------------------------------------------------------------
// Local files

class StaticServer {
public:
    explicit StaticServer(const std::filesystem::path& dir) {
        if (!server_.set_mount_point("/", dir.string())) throw NavigationError("cannot serve directory " + dir.string());
        // Browser keep-alive connections would otherwise hold stop() for the full keep-alive timeout.
        server_.set_keep_alive_max_count(1);
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw NavigationError("cannot bind a local port for " + dir.string());
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StaticServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    int port() const { return port_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

// ---------------------------------------------------------------------------

WebDriverPage::WebDriverPage(WebDriverClient client, HarnessOptions options)
    : client_(std::move(client)), options_(std::move(options)) {}

WebDriverPage::~WebDriverPage() {
    try {
        close();
    } catch (...) {
    }
}

std::unique_ptr<WebDriverPage> WebDriverPage::open(const std::string& target, const HarnessOptions& options) {
    WebDriverClient client(options.webdriver_endpoint,
                           static_cast<int>(std::max<long long>(60, options.navigation_timeout.count() / 1000 + 30)));
    std::unique_ptr<StaticServer> server;
    std::string url = target;
    if (!target.starts_with("http://") && !target.starts_with("https://")) {
        std::filesystem::path file = target.starts_with("file://") ? target.substr(7) : target;
        std::error_code ec;
        if (!std::filesystem::is_regular_file(file, ec)) throw NavigationError("no such file: " + file.string());
        file = std::filesystem::absolute(file);
        server = std::make_unique<StaticServer>(file.parent_path());
        std::string name;
        for (char c : file.filename().string()) name += c == ' ' ? std::string("%20") : std::string(1, c);
        url = "http://127.0.0.1:" + std::to_string(server->port()) + "/" + name;
    }

    std::unique_ptr<WebDriverPage> page(new WebDriverPage(std::move(client), options));
    page->server_ = std::move(server);
    const auto created = page->client_.command("POST", "/session", {{"capabilities", {{"alwaysMatch", nlohmann::json::object()}}}});
    page->session_id_ = created.value("sessionId", "");
    if (page->session_id_.empty()) throw BrowserError("webdriver did not return a session id");
    page->client_.command("POST", page->session_path("/timeouts"),
                          {{"pageLoad", options.navigation_timeout.count()}, {"script", 30000}});
    page->navigate(url);
    return page;
}

std::string WebDriverPage::session_path(const std::string& rest) const {
    if (session_id_.empty()) throw InvalidHandle("page is closed");
    return "/session/" + session_id_ + rest;
}

void WebDriverPage::navigate(const std::string& url) {
    try {
        client_.command("POST", session_path("/url"), {{"url", url}});
    } catch (const InvalidHandle&) {
        throw;
    } catch (const EndpointUnreachable&) {
        throw;
    } catch (const BrowserError& e) {
        throw NavigationError(std::string("cannot load ") + url + ": " + e.what());
    }
    const auto deadline = std::chrono::steady_clock::now() + options_.navigation_timeout;
    while (execute("return document.readyState;").get<std::string>() != "complete") {
        if (std::chrono::steady_clock::now() > deadline) throw NavigationError("timed out waiting for " + url + " to load");
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    const auto info = execute(R"JS(
var nav = performance.getEntriesByType('navigation')[0];
return {type: document.contentType, status: nav && nav.responseStatus ? nav.responseStatus : 0};
)JS");
    const int status = info.value("status", 0);
    if (status >= 400) throw NavigationError("loading " + url + " returned HTTP " + std::to_string(status));
    const auto type = info.value("type", "");
    if (type != "text/html" && type != "application/xhtml+xml")
        throw NavigationError(url + " is not an HTML document (" + type + ")");
    if (options_.settle_delay.count() > 0) std::this_thread::sleep_for(options_.settle_delay);
    url_ = url;
    injected_.clear();
    current_width_ = -1;
}

void WebDriverPage::close() {
    if (!session_id_.empty()) {
        const auto path = "/session/" + session_id_;
        session_id_.clear();
        try {
            client_.command("DELETE", path);
        } catch (const BrowserError&) {
        }
    }
    server_.reset();
}

nlohmann::json WebDriverPage::execute(const std::string& script, const nlohmann::json& args) {
    return client_.command("POST", session_path("/execute/sync"), {{"script", script}, {"args", args}});
}

void WebDriverPage::set_viewport_width(int width) {
    if (width < 200 || width > 4000) throw BrowserError("viewport width " + std::to_string(width) + " outside [200, 4000]");
    for (int attempt = 0; attempt < 3; ++attempt) {
        client_.command("POST", session_path("/window/rect"),
                        {{"width", width + chrome_delta_}, {"height", options_.window_height}});
        const int inner = execute("return window.innerWidth;").get<int>();
        if (inner == width) {
            current_width_ = width;
            return;
        }
        chrome_delta_ += width - inner;
    }
    current_width_ = -1;
    throw BrowserError("could not set the layout viewport to " + std::to_string(width) + " px");
}

layout::LayoutSnapshot WebDriverPage::snapshot_at(int width) {
    if (!is_open()) throw InvalidHandle("page is closed");
    if (current_width_ != width) set_viewport_width(width);
    auto probe = execute(std::string(kProbeScript));
    if (probe.at("viewport").at("width").get<int>() != width) {  // window moved under us
        set_viewport_width(width);
        probe = execute(std::string(kProbeScript));
    }
    return snapshot_from_probe(probe, width);
}

Screenshot WebDriverPage::screenshot_region(int width, const std::vector<std::string>& participants, double padding) {
    if (participants.empty()) throw ElementNotFound("screenshot needs at least one participant");
    const auto snap = snapshot_at(width);
    std::vector<layout::BoundingBox> boxes;
    for (const auto& x : participants) {
        const auto* n = snap.find(x);
        if (!n) throw ElementNotFound("element " + x + " is not rendered at " + std::to_string(width) + " px");
        boxes.push_back(n->box);
    }
    const auto page = execute(R"JS(
var d = document.documentElement, b = document.body || d;
return {w: Math.max(d.scrollWidth, b.scrollWidth), h: Math.max(d.scrollHeight, b.scrollHeight)};
)JS");
    const auto region = screenshot_region_for(boxes, padding, page.at("w").get<double>(), page.at("h").get<double>());
    if (region.width < 1 || region.height < 1) throw BrowserError("screenshot region is empty");

    execute(R"JS(
var o = document.createElement('div');
o.setAttribute('data-redefix-overlay', '1');
o.style.cssText = 'position:absolute;margin:0;border:0;padding:0;background:transparent;pointer-events:none;' +
  'z-index:2147483647;left:' + arguments[0] + 'px;top:' + arguments[1] + 'px;width:' + arguments[2] + 'px;height:' +
  arguments[3] + 'px';
document.documentElement.appendChild(o);
)JS",
            {region.x, region.y, region.width, region.height});
    std::string png;
    try {
        const auto ref = client_.command("POST", session_path("/element"),
                                         {{"using", "css selector"}, {"value", "[data-redefix-overlay]"}});
        const auto eid = ref.begin().value().get<std::string>();
        png = base64_decode(client_.command("GET", session_path("/element/" + eid + "/screenshot")).get<std::string>());
    } catch (...) {
        execute("document.querySelectorAll('[data-redefix-overlay]').forEach(function (o) { o.remove(); });");
        throw;
    }
    execute("document.querySelectorAll('[data-redefix-overlay]').forEach(function (o) { o.remove(); });");
    if (!looks_like_png(png)) throw BrowserError("element screenshot is not a PNG");
    return {std::move(png), width, region};
}

void WebDriverPage::inject_style(const std::string& css_text, const std::string& marker_id) {
    if (marker_id.empty()) throw BrowserError("style marker id must not be empty");
    if (std::find(injected_.begin(), injected_.end(), marker_id) != injected_.end())
        throw DuplicateMarker("style " + marker_id + " is already injected");
    const auto r = execute(R"JS(
if (document.getElementById(arguments[0])) return 'duplicate';
var s = document.createElement('style');
s.id = arguments[0];
s.setAttribute('data-redefix-style', '1');
s.textContent = arguments[1];
(document.head || document.documentElement).appendChild(s);
return 'ok';
)JS",
                           {marker_id, css_text});
    if (r != "ok") throw DuplicateMarker("the page already has an element with id " + marker_id);
    injected_.push_back(marker_id);
}

void WebDriverPage::remove_style(const std::string& marker_id) {
    auto it = std::find(injected_.begin(), injected_.end(), marker_id);
    if (it == injected_.end()) throw UnknownMarker("no injected style " + marker_id);
    injected_.erase(it);
    const auto r = execute(R"JS(
var s = document.getElementById(arguments[0]);
if (!s || !s.hasAttribute('data-redefix-style')) return false;
s.remove();
return true;
)JS",
                           {marker_id});
    if (!r.get<bool>()) throw UnknownMarker("style " + marker_id + " vanished from the page");
}

std::string WebDriverPage::source_excerpt(const std::vector<std::string>& xpaths, std::size_t max_chars) {
    const auto r = execute(with_helpers(R"JS(
var els = arguments[0].map(rdxResolve).filter(function (e) { return e; });
var root = null;
if (els.length) {
  root = els[0];
  for (var i = 1; i < els.length; i++) while (root && !root.contains(els[i])) root = root.parentElement;
}
if (!root || root === document.documentElement) root = document.body || document.documentElement;
var css = [];
document.querySelectorAll('style').forEach(function (s) {
  if (!s.hasAttribute('data-redefix-style')) css.push(s.textContent.trim());
});
return {html: root.outerHTML, css: css.join('\n')};
)JS"),
                           nlohmann::json::array({xpaths}));
    const auto html = r.value("html", "");
    const auto css = r.value("css", "");
    const std::string html_head = "<!-- markup -->\n", css_head = "\n<!-- page styles -->\n";
    if (max_chars <= html_head.size() + css_head.size()) return "";
    const auto room = max_chars - html_head.size() - css_head.size();
    const auto css_part = std::min(css.size(), room / 2);
    const auto html_part = std::min(html.size(), room - css_part);
    return html_head + html.substr(0, html_part) + css_head + css.substr(0, css_part);
}

std::optional<std::vector<patch::ElementStep>> WebDriverPage::ancestry(const std::string& xpath) {
    const auto r = execute(with_helpers(R"JS(
var el = rdxResolve(arguments[0]);
if (!el || rdxXpath(el) !== arguments[0]) return null;
var chain = [];
for (var e = el; e && e.nodeType === 1; e = e.parentElement) {
  var k = 1;
  for (var s = e.previousElementSibling; s; s = s.previousElementSibling) k++;
  chain.unshift({tag: e.tagName.toLowerCase(), id: e.id || '', index: k});
}
return chain;
)JS"),
                           {xpath});
    if (r.is_null()) return std::nullopt;
    std::vector<patch::ElementStep> out;
    for (const auto& s : r) out.push_back({s.at("tag").get<std::string>(), s.at("id").get<std::string>(), s.at("index").get<int>()});
    return out;
}

std::vector<std::string> WebDriverPage::matches(const std::string& selector) {
    const auto r = execute(with_helpers(R"JS(
var found;
try { found = document.querySelectorAll(arguments[0]); } catch (e) { return []; }
return Array.prototype.map.call(found, rdxXpath);
)JS"),
                           {selector});
    return r.get<std::vector<std::string>>();
}

std::string WebDriverPage::computed_style(const std::string& xpath, const std::string& property) {
    const auto r = execute(with_helpers(R"JS(
var el = rdxResolve(arguments[0]);
if (!el) return null;
return window.getComputedStyle(el).getPropertyValue(arguments[1]);
)JS"),
                           {xpath, property});
    if (r.is_null()) throw ElementNotFound("no element at " + xpath);
    return r.get<std::string>();
}

layout::BoundingBox WebDriverPage::element_rect(const std::string& xpath) {
    const auto ref = client_.command("POST", session_path("/element"), {{"using", "xpath"}, {"value", xpath}});
    const auto eid = ref.begin().value().get<std::string>();
    const auto r = client_.command("GET", session_path("/element/" + eid + "/rect"));
    return {r.at("x").get<double>(), r.at("y").get<double>(), r.at("width").get<double>(), r.at("height").get<double>()};
}

}  // namespace redefix::browser
