#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "redefix/error.hpp"

namespace redefix::layout {

/// Intersection area (px^2) two boxes must exceed to count as overlapping.
inline constexpr double kOverlapMinArea = 1.0;
/// Distance (px) a box must escape its container or the viewport by.
inline constexpr double kProtrusionEpsilon = 0.01;
/// Slack (px) when deciding that two boxes are horizontally/vertically apart.
inline constexpr double kSeparationTolerance = 1.0;
/// Minimum shared vertical extent (px) for two boxes to sit on one row.
inline constexpr double kRowOverlapMin = 1.0;
/// Slack (px) on the "dropped by its own height" wrapping test.
inline constexpr double kWrapTolerance = 0.5;
inline constexpr int kDefaultSmallRangeThreshold = 5;

struct BoundingBox {
    double x = 0;
    double y = 0;
    double width = 0;
    double height = 0;

    double right() const { return x + width; }
    double bottom() const { return y + height; }
    double area() const { return width * height; }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

double intersection_area(const BoundingBox& a, const BoundingBox& b);

/// Smallest box containing both.
BoundingBox united(const BoundingBox& a, const BoundingBox& b);

struct LayoutNode {
    std::string xpath;
    BoundingBox box;
    bool visible = true;
};

class LayoutError : public Error {
public:
    using Error::Error;
};

/// Geometry of one page rendered at one viewport width.
class LayoutSnapshot {
public:
    LayoutSnapshot() = default;
    /// Validates the node list: non-empty unique xpaths, non-negative sizes,
    /// every parent present, no cycles. Throws LayoutError otherwise.
    LayoutSnapshot(int viewport_width, std::vector<LayoutNode> nodes,
                   std::map<std::string, std::string> parent_map);

    int viewport_width() const { return viewport_width_; }
    const std::vector<LayoutNode>& nodes() const { return nodes_; }
    const std::map<std::string, std::string>& parent_map() const { return parent_map_; }

    const LayoutNode* find(std::string_view xpath) const;
    /// Parent xpath, or nullopt for a root.
    std::optional<std::string> parent_of(std::string_view xpath) const;
    /// Number of ancestors above the node (0 for a root).
    int depth(std::string_view xpath) const;

private:
    int viewport_width_ = 0;
    std::vector<LayoutNode> nodes_;
    std::map<std::string, std::string> parent_map_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct WidthRange {
    int min = 0;
    int max = 0;

    bool contains(int w) const { return min <= w && w <= max; }
    bool overlaps(const WidthRange& o) const { return min <= o.max && o.min <= max; }
    friend bool operator==(const WidthRange&, const WidthRange&) = default;
    friend auto operator<=>(const WidthRange&, const WidthRange&) = default;
};

enum class Relation { LeftOf, Above, Overlapping };

std::string_view to_string(Relation r);

struct ContainmentEdge {
    std::string parent;
    std::string child;
    WidthRange range;
};

/// `first` relation `second`, e.g. first LeftOf second.
/// Overlapping edges always store the lexicographically smaller xpath first.
struct SiblingEdge {
    std::string first;
    std::string second;
    WidthRange range;
    Relation relation;
};

/// Directed sibling relation of an unordered pair at one width.
struct PairRelation {
    std::string first;
    std::string second;
    Relation relation;

    friend bool operator==(const PairRelation&, const PairRelation&) = default;
};

/// Relation between two boxes, or the pair ordering that makes it hold.
/// `a_xpath`/`b_xpath` name the boxes so the result can be directed.
PairRelation classify_pair(const std::string& a_xpath, const BoundingBox& a,
                           const std::string& b_xpath, const BoundingBox& b);

class ResponsiveLayoutGraph {
public:
    const std::vector<int>& widths() const { return widths_; }
    const LayoutSnapshot& snapshot(int width) const;
    const std::vector<LayoutSnapshot>& snapshots() const { return snapshots_; }
    const std::vector<ContainmentEdge>& containment_edges() const { return containment_; }
    const std::vector<SiblingEdge>& sibling_edges() const { return siblings_; }
    int min_width() const { return widths_.front(); }
    int max_width() const { return widths_.back(); }

private:
    friend ResponsiveLayoutGraph build_rlg(std::vector<LayoutSnapshot> snapshots);

    std::vector<int> widths_;
    std::vector<LayoutSnapshot> snapshots_;  // parallel to widths_
    std::vector<ContainmentEdge> containment_;
    std::vector<SiblingEdge> siblings_;
};

/// Requires >= 2 snapshots at distinct widths. Edges span maximal runs of
/// consecutive sampled widths over which the relation holds.
ResponsiveLayoutGraph build_rlg(std::vector<LayoutSnapshot> snapshots);

enum class RlfType { ElementCollision, ElementProtrusion, ViewportProtrusion, SmallRange, WrappingElements };

inline constexpr RlfType kAllRlfTypes[] = {RlfType::ElementCollision, RlfType::ElementProtrusion,
                                           RlfType::ViewportProtrusion, RlfType::SmallRange,
                                           RlfType::WrappingElements};

/// "element_collision", "element_protrusion", ...
std::string_view to_string(RlfType t);
RlfType rlf_type_from_string(std::string_view s);
/// Human-readable name, e.g. "Element Collision".
std::string_view display_name(RlfType t);

/// One detected failure.
///
/// Participants: ElementCollision and SmallRange carry the two siblings in
/// lexicographic order; ElementProtrusion carries [child, container];
/// ViewportProtrusion and WrappingElements carry the single offending element.
struct RlfRecord {
    RlfType type = RlfType::ElementCollision;
    std::vector<std::string> participants;
    WidthRange failure_range;

    friend bool operator==(const RlfRecord&, const RlfRecord&) = default;
};

void to_json(nlohmann::json& j, const RlfRecord& r);
void from_json(const nlohmann::json& j, RlfRecord& r);
void to_json(nlohmann::json& j, const BoundingBox& b);
void from_json(const nlohmann::json& j, BoundingBox& b);

/// Ordering used by detect_rlfs.
bool record_less(const RlfRecord& a, const RlfRecord& b);

std::vector<RlfRecord> detect_rlfs(const ResponsiveLayoutGraph& rlg,
                                   int small_range_threshold = kDefaultSmallRangeThreshold);

struct RlfDiff {
    std::vector<RlfRecord> eliminated;
    std::vector<RlfRecord> introduced;
};

/// Same type, same participant set, overlapping failure ranges.
bool records_match(const RlfRecord& a, const RlfRecord& b);

RlfDiff diff_rlfs(std::span<const RlfRecord> baseline, std::span<const RlfRecord> current);

/// Whether the failure described by `record` is present in `at`. `rlg`
/// supplies the reference state (widest width, and for SmallRange the
/// relation observed at the start of the failure range).
bool failure_holds(const RlfRecord& record, const ResponsiveLayoutGraph& rlg, const LayoutSnapshot& at);

/// Size of the failure in `at`: overlap area for collisions, escaped
/// distance for protrusions, drop below the row for wrapping. 0 when the
/// failure is absent or a participant is missing.
double failure_magnitude(const RlfRecord& record, const ResponsiveLayoutGraph& rlg, const LayoutSnapshot& at);

using SnapshotSource = std::function<LayoutSnapshot(int width)>;

/// Tightens failure boundaries between sampled widths: for every record
/// edge that has an unsampled gap next to it, binary-searches the last
/// width where the failure still holds using `source`. Returns a graph that
/// also contains every extra snapshot taken; re-run detect_rlfs on it.
ResponsiveLayoutGraph refine_boundaries(const ResponsiveLayoutGraph& rlg, std::span<const RlfRecord> records,
                                        const SnapshotSource& source);

}  // namespace redefix::layout
