#include "redefix/layout_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

namespace redefix::layout {

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double w = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double h = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (w <= 0 || h <= 0) return 0.0;
    return w * h;
}

BoundingBox united(const BoundingBox& a, const BoundingBox& b) {
    const double x = std::min(a.x, b.x);
    const double y = std::min(a.y, b.y);
    return {x, y, std::max(a.right(), b.right()) - x, std::max(a.bottom(), b.bottom()) - y};
}

// ---------------------------------------------------------------------------
// LayoutSnapshot

LayoutSnapshot::LayoutSnapshot(int viewport_width, std::vector<LayoutNode> nodes,
                               std::map<std::string, std::string> parent_map)
    : viewport_width_(viewport_width), nodes_(std::move(nodes)), parent_map_(std::move(parent_map)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.xpath.empty()) throw LayoutError("snapshot node with empty xpath");
        if (n.box.width < 0 || n.box.height < 0) throw LayoutError("negative box size for " + n.xpath);
        if (!index_.emplace(n.xpath, i).second) throw LayoutError("duplicate xpath " + n.xpath);
    }
    for (const auto& [child, parent] : parent_map_) {
        if (!index_.contains(child)) throw LayoutError("parent_map names unknown node " + child);
        if (!index_.contains(parent)) throw LayoutError("parent " + parent + " of " + child + " not in snapshot");
    }
    // Walk up from every node; a chain longer than the node count is a cycle.
    for (const auto& n : nodes_) {
        std::size_t steps = 0;
        auto it = parent_map_.find(n.xpath);
        while (it != parent_map_.end()) {
            if (++steps > nodes_.size()) throw LayoutError("parent_map cycle through " + n.xpath);
            it = parent_map_.find(it->second);
        }
    }
}

const LayoutNode* LayoutSnapshot::find(std::string_view xpath) const {
    auto it = index_.find(std::string(xpath));
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

std::optional<std::string> LayoutSnapshot::parent_of(std::string_view xpath) const {
    auto it = parent_map_.find(std::string(xpath));
    if (it == parent_map_.end()) return std::nullopt;
    return it->second;
}

int LayoutSnapshot::depth(std::string_view xpath) const {
    int d = 0;
    auto it = parent_map_.find(std::string(xpath));
    while (it != parent_map_.end()) {
        ++d;
        it = parent_map_.find(it->second);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Relations

std::string_view to_string(Relation r) {
    switch (r) {
        case Relation::LeftOf: return "left-of";
        case Relation::Above: return "above";
        case Relation::Overlapping: return "overlapping";
    }
    return "?";
}

PairRelation classify_pair(const std::string& a_xpath, const BoundingBox& a, const std::string& b_xpath,
                           const BoundingBox& b) {
    const bool a_first = a_xpath < b_xpath;
    const std::string& lo = a_first ? a_xpath : b_xpath;
    const std::string& hi = a_first ? b_xpath : a_xpath;
    if (intersection_area(a, b) > kOverlapMinArea) return {lo, hi, Relation::Overlapping};
    if (a.right() <= b.x + kSeparationTolerance) return {a_xpath, b_xpath, Relation::LeftOf};
    if (b.right() <= a.x + kSeparationTolerance) return {b_xpath, a_xpath, Relation::LeftOf};
    if (a.bottom() <= b.y + kSeparationTolerance) return {a_xpath, b_xpath, Relation::Above};
    // Area <= 1 with both projections overlapping by more than the tolerance
    // is impossible, so the remaining case is b above a.
    return {b_xpath, a_xpath, Relation::Above};
}

namespace {

using PairKey = std::pair<std::string, std::string>;

PairKey unordered_key(const std::string& a, const std::string& b) {
    return a < b ? PairKey{a, b} : PairKey{b, a};
}

/// Splits sorted indices into maximal runs of consecutive values.
std::vector<std::pair<std::size_t, std::size_t>> index_runs(const std::vector<std::size_t>& idx) {
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (runs.empty() || idx[i] != runs.back().second + 1) {
            runs.emplace_back(idx[i], idx[i]);
        } else {
            runs.back().second = idx[i];
        }
    }
    return runs;
}

bool protrudes(const BoundingBox& child, const BoundingBox& parent) {
    return child.x < parent.x - kProtrusionEpsilon || child.right() > parent.right() + kProtrusionEpsilon ||
           child.y < parent.y - kProtrusionEpsilon || child.bottom() > parent.bottom() + kProtrusionEpsilon;
}

double protrusion_distance(const BoundingBox& child, const BoundingBox& parent) {
    return std::max(0.0, parent.x - child.x) + std::max(0.0, child.right() - parent.right()) +
           std::max(0.0, parent.y - child.y) + std::max(0.0, child.bottom() - parent.bottom());
}

bool exceeds_viewport(const BoundingBox& b, int viewport_width) {
    return b.x < -kProtrusionEpsilon || b.right() > viewport_width + kProtrusionEpsilon;
}

double viewport_distance(const BoundingBox& b, int viewport_width) {
    return std::max(0.0, -b.x) + std::max(0.0, b.right() - viewport_width);
}

bool share_row(const BoundingBox& a, const BoundingBox& b) {
    const double shared = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    return shared > kRowOverlapMin && intersection_area(a, b) <= kOverlapMinArea;
}

bool dropped_below(const BoundingBox& wrapped, const BoundingBox& anchor) {
    return wrapped.y - anchor.y >= wrapped.height - kWrapTolerance;
}

const LayoutNode* visible_node(const LayoutSnapshot& s, const std::string& xpath) {
    const auto* n = s.find(xpath);
    return (n && n->visible) ? n : nullptr;
}

bool are_siblings(const LayoutSnapshot& s, const std::string& a, const std::string& b) {
    auto pa = s.parent_of(a);
    auto pb = s.parent_of(b);
    return pa && pb && *pa == *pb;
}

/// Containers whose overflow is reported as viewport protrusion instead:
/// the document roots and their direct children (html, body).
bool is_root_container(const LayoutSnapshot& s, const std::string& xpath) {
    return s.depth(xpath) <= 1;
}

bool viewport_protruding(const LayoutSnapshot& s, const LayoutNode& n) {
    if (!n.visible || !exceeds_viewport(n.box, s.viewport_width())) return false;
    if (auto parent = s.parent_of(n.xpath)) {
        const auto* p = s.find(*parent);
        if (p && exceeds_viewport(p->box, s.viewport_width())) return false;
    }
    return true;
}

/// Row mates of each element at the widest width: b -> [(a, c)] with a, b, c
/// pairwise on one row and siblings.
using RowTriples = std::map<std::string, std::vector<PairKey>>;

RowTriples row_triples(const LayoutSnapshot& widest) {
    std::map<std::string, std::vector<const LayoutNode*>> by_parent;
    for (const auto& n : widest.nodes()) {
        if (!n.visible) continue;
        if (auto p = widest.parent_of(n.xpath)) by_parent[*p].push_back(&n);
    }
    RowTriples out;
    for (const auto& [parent, kids] : by_parent) {
        const std::size_t k = kids.size();
        if (k < 3) continue;
        std::vector<std::vector<bool>> row(k, std::vector<bool>(k, false));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) row[i][j] = row[j][i] = share_row(kids[i]->box, kids[j]->box);
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t c = a + 1; c < k; ++c) {
                    if (a == b || c == b) continue;
                    if (row[a][b] && row[b][c] && row[a][c]) {
                        out[kids[b]->xpath].push_back({kids[a]->xpath, kids[c]->xpath});
                        out[kids[b]->xpath].push_back({kids[c]->xpath, kids[a]->xpath});
                    }
                }
    }
    return out;
}

bool wrapped_at(const LayoutSnapshot& s, const std::string& b, const std::vector<PairKey>& mates) {
    const auto* nb = visible_node(s, b);
    if (!nb) return false;
    for (const auto& [a, c] : mates) {
        const auto* na = visible_node(s, a);
        const auto* nc = visible_node(s, c);
        if (!na || !nc) continue;
        if (!are_siblings(s, a, b) || !are_siblings(s, a, c)) continue;
        if (share_row(na->box, nc->box) && dropped_below(nb->box, na->box)) return true;
    }
    return false;
}

std::optional<PairRelation> sibling_relation(const LayoutSnapshot& s, const std::string& a, const std::string& b) {
    const auto* na = visible_node(s, a);
    const auto* nb = visible_node(s, b);
    if (!na || !nb || !are_siblings(s, a, b)) return std::nullopt;
    return classify_pair(a, na->box, b, nb->box);
}

std::size_t index_of(const std::vector<int>& widths, int w) {
    auto it = std::lower_bound(widths.begin(), widths.end(), w);
    if (it == widths.end() || *it != w) return widths.size();
    return static_cast<std::size_t>(it - widths.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph construction

const LayoutSnapshot& ResponsiveLayoutGraph::snapshot(int width) const {
    const auto i = index_of(widths_, width);
    if (i == widths_.size()) throw LayoutError("no snapshot at width " + std::to_string(width));
    return snapshots_[i];
}

ResponsiveLayoutGraph build_rlg(std::vector<LayoutSnapshot> snapshots) {
    if (snapshots.size() < 2) throw LayoutError("build_rlg needs at least two snapshots");
    std::sort(snapshots.begin(), snapshots.end(),
              [](const auto& a, const auto& b) { return a.viewport_width() < b.viewport_width(); });
    for (std::size_t i = 1; i < snapshots.size(); ++i) {
        if (snapshots[i].viewport_width() == snapshots[i - 1].viewport_width())
            throw LayoutError("duplicate snapshot width " + std::to_string(snapshots[i].viewport_width()));
    }

    ResponsiveLayoutGraph g;
    g.snapshots_ = std::move(snapshots);
    for (const auto& s : g.snapshots_) g.widths_.push_back(s.viewport_width());

    std::map<PairKey, std::vector<std::size_t>> containment;
    std::map<PairKey, std::vector<std::pair<std::size_t, PairRelation>>> pairs;

    for (std::size_t wi = 0; wi < g.snapshots_.size(); ++wi) {
        const auto& s = g.snapshots_[wi];
        std::map<std::string, std::vector<const LayoutNode*>> by_parent;
        for (const auto& [child, parent] : s.parent_map()) containment[{parent, child}].push_back(wi);
        for (const auto& n : s.nodes()) {
            if (!n.visible) continue;
            if (auto p = s.parent_of(n.xpath)) by_parent[*p].push_back(&n);
        }
        for (const auto& [parent, kids] : by_parent) {
            for (std::size_t i = 0; i < kids.size(); ++i)
                for (std::size_t j = i + 1; j < kids.size(); ++j) {
                    auto rel = classify_pair(kids[i]->xpath, kids[i]->box, kids[j]->xpath, kids[j]->box);
                    pairs[unordered_key(kids[i]->xpath, kids[j]->xpath)].emplace_back(wi, std::move(rel));
                }
        }
    }

    const auto& W = g.widths_;
    for (const auto& [key, idx] : containment) {
        for (const auto& [lo, hi] : index_runs(idx)) g.containment_.push_back({key.first, key.second, {W[lo], W[hi]}});
    }
    for (const auto& [key, seq] : pairs) {
        std::size_t start = 0;
        for (std::size_t i = 1; i <= seq.size(); ++i) {
            const bool breaks = i == seq.size() || seq[i].first != seq[i - 1].first + 1 || !(seq[i].second == seq[start].second);
            if (!breaks) continue;
            const auto& rel = seq[start].second;
            g.siblings_.push_back({rel.first, rel.second, {W[seq[start].first], W[seq[i - 1].first]}, rel.relation});
            start = i;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Records

std::string_view to_string(RlfType t) {
    switch (t) {
        case RlfType::ElementCollision: return "element_collision";
        case RlfType::ElementProtrusion: return "element_protrusion";
        case RlfType::ViewportProtrusion: return "viewport_protrusion";
        case RlfType::SmallRange: return "small_range";
        case RlfType::WrappingElements: return "wrapping_elements";
    }
    return "?";
}

RlfType rlf_type_from_string(std::string_view s) {
    for (auto t : kAllRlfTypes)
        if (to_string(t) == s) return t;
    throw LayoutError("unknown RLF type '" + std::string(s) + "'");
}

std::string_view display_name(RlfType t) {
    switch (t) {
        case RlfType::ElementCollision: return "Element Collision";
        case RlfType::ElementProtrusion: return "Element Protrusion";
        case RlfType::ViewportProtrusion: return "Viewport Protrusion";
        case RlfType::SmallRange: return "Small-Range";
        case RlfType::WrappingElements: return "Wrapping Elements";
    }
    return "?";
}

void to_json(nlohmann::json& j, const RlfRecord& r) {
    j = nlohmann::json{{"type", std::string(to_string(r.type))},
                       {"participants", r.participants},
                       {"range", {r.failure_range.min, r.failure_range.max}}};
}

void from_json(const nlohmann::json& j, RlfRecord& r) {
    r.type = rlf_type_from_string(j.at("type").get<std::string>());
    r.participants = j.at("participants").get<std::vector<std::string>>();
    const auto& range = j.at("range");
    if (!range.is_array() || range.size() != 2) throw LayoutError("RLF range must be [min, max]");
    r.failure_range = {range[0].get<int>(), range[1].get<int>()};
    if (r.failure_range.min > r.failure_range.max) throw LayoutError("RLF range min exceeds max");
    if (r.participants.empty() || r.participants.size() > 2) throw LayoutError("RLF needs 1 or 2 participants");
}

void to_json(nlohmann::json& j, const BoundingBox& b) {
    j = nlohmann::json{{"x", b.x}, {"y", b.y}, {"width", b.width}, {"height", b.height}};
}

void from_json(const nlohmann::json& j, BoundingBox& b) {
    b.x = j.at("x").get<double>();
    b.y = j.at("y").get<double>();
    b.width = j.at("width").get<double>();
    b.height = j.at("height").get<double>();
}

bool record_less(const RlfRecord& a, const RlfRecord& b) {
    auto min_participant = [](const RlfRecord& r) {
        return r.participants.empty() ? std::string{} : *std::min_element(r.participants.begin(), r.participants.end());
    };
    return std::tuple(static_cast<int>(a.type), min_participant(a), a.failure_range.min, a.participants,
                      a.failure_range.max) <
           std::tuple(static_cast<int>(b.type), min_participant(b), b.failure_range.min, b.participants,
                      b.failure_range.max);
}

// ---------------------------------------------------------------------------
// Detection

std::vector<RlfRecord> detect_rlfs(const ResponsiveLayoutGraph& rlg, int small_range_threshold) {
    const auto& W = rlg.widths();
    const auto& snaps = rlg.snapshots();
    const std::size_t last = W.size() - 1;
    std::vector<RlfRecord> out;

    // Sibling edges grouped per unordered pair, in width order.
    std::map<PairKey, std::vector<const SiblingEdge*>> pair_edges;
    for (const auto& e : rlg.sibling_edges()) pair_edges[unordered_key(e.first, e.second)].push_back(&e);
    for (auto& [key, edges] : pair_edges)
        std::sort(edges.begin(), edges.end(), [](auto* a, auto* b) { return a->range.min < b->range.min; });

    // Element collision: overlap runs on pairs that do not overlap at the widest width.
    for (const auto& [key, edges] : pair_edges) {
        const bool at_widest = std::any_of(edges.begin(), edges.end(), [&](auto* e) {
            return e->relation == Relation::Overlapping && e->range.contains(W[last]);
        });
        if (at_widest) continue;
        for (const auto* e : edges)
            if (e->relation == Relation::Overlapping)
                out.push_back({RlfType::ElementCollision, {key.first, key.second}, e->range});
    }

    // Small range: a relation run bounded on both sides by different relations.
    for (const auto& [key, edges] : pair_edges) {
        for (std::size_t i = 1; i + 1 < edges.size(); ++i) {
            const auto lo = index_of(W, edges[i]->range.min);
            const auto hi = index_of(W, edges[i]->range.max);
            const bool left_adjacent = index_of(W, edges[i - 1]->range.max) + 1 == lo;
            const bool right_adjacent = hi + 1 == index_of(W, edges[i + 1]->range.min);
            if (left_adjacent && right_adjacent && edges[i]->range.max - edges[i]->range.min <= small_range_threshold)
                out.push_back({RlfType::SmallRange, {key.first, key.second}, edges[i]->range});
        }
    }

    // Element protrusion: child escapes a non-root container.
    std::map<PairKey, std::vector<std::size_t>> protruding;  // (child, parent) -> width indices
    for (const auto& e : rlg.containment_edges()) {
        for (std::size_t wi = index_of(W, e.range.min); wi <= index_of(W, e.range.max); ++wi) {
            const auto& s = snaps[wi];
            if (is_root_container(s, e.parent)) continue;
            const auto* c = visible_node(s, e.child);
            const auto* p = visible_node(s, e.parent);
            if (c && p && protrudes(c->box, p->box)) protruding[{e.child, e.parent}].push_back(wi);
        }
    }
    for (auto& [key, idx] : protruding) {
        std::sort(idx.begin(), idx.end());
        if (idx.back() == last) continue;
        for (const auto& [lo, hi] : index_runs(idx))
            out.push_back({RlfType::ElementProtrusion, {key.first, key.second}, {W[lo], W[hi]}});
    }

    // Viewport protrusion: outermost element crossing the viewport edge.
    std::map<std::string, std::vector<std::size_t>> outside;
    for (std::size_t wi = 0; wi <= last; ++wi)
        for (const auto& n : snaps[wi].nodes())
            if (viewport_protruding(snaps[wi], n)) outside[n.xpath].push_back(wi);
    for (const auto& [xpath, idx] : outside) {
        if (idx.back() == last) continue;
        for (const auto& [lo, hi] : index_runs(idx)) out.push_back({RlfType::ViewportProtrusion, {xpath}, {W[lo], W[hi]}});
    }

    // Wrapping: a row member drops below row mates that stay on one row.
    for (const auto& [b, mates] : row_triples(snaps[last])) {
        std::vector<std::size_t> idx;
        for (std::size_t wi = 0; wi <= last; ++wi)
            if (wrapped_at(snaps[wi], b, mates)) idx.push_back(wi);
        if (idx.empty() || idx.back() == last) continue;
        for (const auto& [lo, hi] : index_runs(idx)) out.push_back({RlfType::WrappingElements, {b}, {W[lo], W[hi]}});
    }

    std::sort(out.begin(), out.end(), record_less);
    return out;
}

bool records_match(const RlfRecord& a, const RlfRecord& b) {
    if (a.type != b.type) return false;
    std::set<std::string> pa(a.participants.begin(), a.participants.end());
    std::set<std::string> pb(b.participants.begin(), b.participants.end());
    return pa == pb && a.failure_range.overlaps(b.failure_range);
}

RlfDiff diff_rlfs(std::span<const RlfRecord> baseline, std::span<const RlfRecord> current) {
    RlfDiff d;
    for (const auto& r : baseline)
        if (std::none_of(current.begin(), current.end(), [&](const auto& c) { return records_match(r, c); }))
            d.eliminated.push_back(r);
    for (const auto& c : current)
        if (std::none_of(baseline.begin(), baseline.end(), [&](const auto& r) { return records_match(r, c); }))
            d.introduced.push_back(c);
    return d;
}

// ---------------------------------------------------------------------------
// Single-width evaluation

namespace {

double magnitude_unchecked(const RlfRecord& r, const ResponsiveLayoutGraph& rlg, const LayoutSnapshot& s) {
    const auto& p = r.participants;
    switch (r.type) {
        case RlfType::ElementCollision: {
            if (p.size() != 2) return 0;
            const auto* a = visible_node(s, p[0]);
            const auto* b = visible_node(s, p[1]);
            if (!a || !b || !are_siblings(s, p[0], p[1])) return 0;
            const double area = intersection_area(a->box, b->box);
            return area > kOverlapMinArea ? area : 0;
        }
        case RlfType::ElementProtrusion: {
            if (p.size() != 2) return 0;
            const auto* c = visible_node(s, p[0]);
            const auto* parent = visible_node(s, p[1]);
            if (!c || !parent || s.parent_of(p[0]) != p[1]) return 0;
            return protrudes(c->box, parent->box) ? protrusion_distance(c->box, parent->box) : 0;
        }
        case RlfType::ViewportProtrusion: {
            if (p.size() != 1) return 0;
            const auto* n = s.find(p[0]);
            if (!n || !viewport_protruding(s, *n)) return 0;
            return viewport_distance(n->box, s.viewport_width());
        }
        case RlfType::SmallRange: {
            if (p.size() != 2) return 0;
            const auto& ref_snap = rlg.snapshot(r.failure_range.min);
            auto ref = sibling_relation(ref_snap, p[0], p[1]);
            auto now = sibling_relation(s, p[0], p[1]);
            return (ref && now && *ref == *now) ? 1.0 : 0.0;
        }
        case RlfType::WrappingElements: {
            if (p.size() != 1) return 0;
            const auto triples = row_triples(rlg.snapshot(rlg.max_width()));
            auto it = triples.find(p[0]);
            if (it == triples.end() || !wrapped_at(s, p[0], it->second)) return 0;
            const auto* b = s.find(p[0]);
            double drop = 0;
            for (const auto& [a, c] : it->second)
                if (const auto* na = visible_node(s, a)) drop = std::max(drop, b->box.y - na->box.y);
            return std::max(drop, kWrapTolerance);
        }
    }
    return 0;
}

}  // namespace

bool failure_holds(const RlfRecord& record, const ResponsiveLayoutGraph& rlg, const LayoutSnapshot& at) {
    return magnitude_unchecked(record, rlg, at) > 0;
}

double failure_magnitude(const RlfRecord& record, const ResponsiveLayoutGraph& rlg, const LayoutSnapshot& at) {
    return magnitude_unchecked(record, rlg, at);
}

ResponsiveLayoutGraph refine_boundaries(const ResponsiveLayoutGraph& rlg, std::span<const RlfRecord> records,
                                        const SnapshotSource& source) {
    const auto& W = rlg.widths();
    std::map<int, LayoutSnapshot> extra;
    auto snapshot_at = [&](int w) -> const LayoutSnapshot& {
        auto it = extra.find(w);
        if (it == extra.end()) it = extra.emplace(w, source(w)).first;
        return it->second;
    };

    for (const auto& r : records) {
        const auto lo_i = index_of(W, r.failure_range.min);
        const auto hi_i = index_of(W, r.failure_range.max);
        if (lo_i == W.size() || hi_i == W.size()) continue;

        if (hi_i + 1 < W.size()) {
            int holds = W[hi_i], fails = W[hi_i + 1];
            while (fails - holds > 1) {
                const int mid = holds + (fails - holds) / 2;
                (failure_holds(r, rlg, snapshot_at(mid)) ? holds : fails) = mid;
            }
        }
        if (lo_i > 0) {
            int fails = W[lo_i - 1], holds = W[lo_i];
            while (holds - fails > 1) {
                const int mid = fails + (holds - fails) / 2;
                (failure_holds(r, rlg, snapshot_at(mid)) ? holds : fails) = mid;
            }
        }
    }

    std::vector<LayoutSnapshot> all = rlg.snapshots();
    for (auto& [w, s] : extra) all.push_back(std::move(s));
    return build_rlg(std::move(all));
}

}  // namespace redefix::layout
