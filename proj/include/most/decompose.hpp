#ifndef MOST_DECOMPOSE_HPP
#define MOST_DECOMPOSE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "most/types.hpp"

namespace most
{

// ---------------------------------------------------------------------------
// Agent membership

/// Closed-boundary containment test in the box frame.
inline bool box_contains(const Box &box, const Point3 &p)
{
    const double dx = p[0] - box.center[0];
    const double dy = p[1] - box.center[1];
    const double dz = p[2] - box.center[2];
    const double c = std::cos(box.heading);
    const double s = std::sin(box.heading);
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= 0.5 * box.size[0] && std::abs(ly) <= 0.5 * box.size[1] && std::abs(dz) <= 0.5 * box.size[2];
}

/// For each point, the index into `boxes` of the box that owns it, or -1.
/// Points inside several boxes go to the nearest center, then the lower
/// track id.
inline std::vector<std::int32_t> extract_agent_elements(std::span<const Point3> points,
                                                        std::span<const AgentBox> boxes)
{
    struct Prepared
    {
        double cx, cy, cz, c, s, hl, hw, hh, radius2;
    };
    std::vector<Prepared> prep;
    prep.reserve(boxes.size());
    for (const auto &b : boxes)
    {
        const auto &bx = b.box;
        const double hl = 0.5 * bx.size[0], hw = 0.5 * bx.size[1], hh = 0.5 * bx.size[2];
        // padded bounding-sphere radius for a cheap reject
        const double r = std::sqrt(hl * hl + hw * hw + hh * hh) * (1.0 + 1e-9) + 1e-9;
        prep.push_back({bx.center[0], bx.center[1], bx.center[2], std::cos(bx.heading), std::sin(bx.heading), hl, hw,
                        hh, r * r});
    }

    std::vector<std::int32_t> owner(points.size(), -1);
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        const auto &p = points[i];
        double best_d2 = std::numeric_limits<double>::infinity();
        std::int32_t best = -1;
        for (std::size_t b = 0; b < prep.size(); ++b)
        {
            const auto &q = prep[b];
            const double dx = p[0] - q.cx, dy = p[1] - q.cy, dz = p[2] - q.cz;
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 > q.radius2)
                continue;
            const double lx = q.c * dx + q.s * dy;
            const double ly = -q.s * dx + q.c * dy;
            if (std::abs(lx) > q.hl || std::abs(ly) > q.hw || std::abs(dz) > q.hh)
                continue;
            if (best < 0 || d2 < best_d2 ||
                (d2 == best_d2 && boxes[b].track_id < boxes[static_cast<std::size_t>(best)].track_id))
            {
                best = static_cast<std::int32_t>(b);
                best_d2 = d2;
            }
        }
        owner[i] = best;
    }
    return owner;
}

// ---------------------------------------------------------------------------
// Open-set clustering

struct Clustering
{
    std::vector<std::int32_t> label;              // per input point, -1 = discarded
    std::vector<std::vector<std::uint32_t>> members; // ordered by min point index
};

namespace detail
{

class UnionFind
{
  public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0u); }

    std::uint32_t find(std::uint32_t x)
    {
        while (parent_[x] != x)
        {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::uint32_t a, std::uint32_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b)
            return;
        // smaller index becomes the root
        if (b < a)
            std::swap(a, b);
        parent_[b] = a;
    }

  private:
    std::vector<std::uint32_t> parent_;
};

struct CellKeyHash
{
    std::size_t operator()(const std::array<std::int64_t, 3> &k) const noexcept
    {
        std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 73856093ULL;
        h ^= static_cast<std::uint64_t>(k[1]) * 19349663ULL;
        h ^= static_cast<std::uint64_t>(k[2]) * 83492791ULL;
        return static_cast<std::size_t>(h);
    }
};

} // namespace detail

/// Connected components of the radius graph over `points`. A uniform grid
/// with cell edge = radius limits the pair tests to the 27 neighboring
/// cells; the components are exactly those of the all-pairs graph.
inline Clustering cluster_open_set(std::span<const Point3> points, const ClusterConfig &config)
{
    const std::size_t n = points.size();
    const double r = config.radius_m;
    const double r2 = r * r;

    using Key = std::array<std::int64_t, 3>;
    auto key_of = [r](const Point3 &p) {
        return Key{static_cast<std::int64_t>(std::floor(p[0] / r)), static_cast<std::int64_t>(std::floor(p[1] / r)),
                   static_cast<std::int64_t>(std::floor(p[2] / r))};
    };

    std::unordered_map<Key, std::vector<std::uint32_t>, detail::CellKeyHash> grid;
    grid.reserve(n);
    std::vector<Key> keys(n);
    for (std::uint32_t i = 0; i < n; ++i)
    {
        keys[i] = key_of(points[i]);
        grid[keys[i]].push_back(i);
    }

    detail::UnionFind uf(n);
    for (std::uint32_t i = 0; i < n; ++i)
    {
        const auto &k = keys[i];
        const auto &p = points[i];
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz)
                {
                    const auto it = grid.find(Key{k[0] + dx, k[1] + dy, k[2] + dz});
                    if (it == grid.end())
                        continue;
                    for (auto j : it->second)
                    {
                        if (j <= i)
                            continue;
                        const double ex = static_cast<double>(p[0]) - points[j][0];
                        const double ey = static_cast<double>(p[1]) - points[j][1];
                        const double ez = static_cast<double>(p[2]) - points[j][2];
                        if (ex * ex + ey * ey + ez * ez <= r2)
                            uf.unite(i, j);
                    }
                }
    }

    // roots are the minimum index of their component
    std::vector<std::uint32_t> size(n, 0);
    for (std::uint32_t i = 0; i < n; ++i)
        ++size[uf.find(i)];

    Clustering out;
    out.label.assign(n, -1);
    std::vector<std::int32_t> root_label(n, -1);
    for (std::uint32_t i = 0; i < n; ++i)
    {
        const auto root = uf.find(i);
        if (size[root] < static_cast<std::uint32_t>(config.min_points))
            continue;
        if (root_label[root] < 0)
        {
            root_label[root] = static_cast<std::int32_t>(out.members.size());
            out.members.emplace_back();
        }
        out.label[i] = root_label[root];
        out.members[static_cast<std::size_t>(root_label[root])].push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tight boxes

struct Vec2
{
    double x = 0.0;
    double y = 0.0;

    friend bool operator<(const Vec2 &a, const Vec2 &b) { return a.x < b.x || (a.x == b.x && a.y < b.y); }
    friend bool operator==(const Vec2 &a, const Vec2 &b) = default;
};

inline double cross(const Vec2 &o, const Vec2 &a, const Vec2 &b)
{
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Counter-clockwise hull without collinear vertices (monotone chain).
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts)
{
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3)
        return pts;
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto &p : pts)
    {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0)
            --k;
        hull[k++] = p;
    }
    const std::size_t lower = k + 1;
    for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it)
    {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0)
            --k;
        hull[k++] = *it;
    }
    hull.resize(k - 1);
    return hull;
}

struct OrientedRect
{
    Vec2 center;
    double length = 0.0; // >= width
    double width = 0.0;
    double heading = 0.0; // direction of the long side, in [0, pi)
    double area() const { return length * width; }
};

namespace detail
{

inline double canonical_half_turn(double angle)
{
    double h = std::fmod(angle, std::numbers::pi);
    if (h < 0.0)
        h += std::numbers::pi;
    if (h >= std::numbers::pi)
        h -= std::numbers::pi;
    return h;
}

inline OrientedRect make_rect(Vec2 center, double along, double across, double edge_angle)
{
    OrientedRect r;
    r.center = center;
    if (along >= across)
    {
        r.length = along;
        r.width = across;
        r.heading = canonical_half_turn(edge_angle);
    }
    else
    {
        r.length = across;
        r.width = along;
        r.heading = canonical_half_turn(edge_angle + 0.5 * std::numbers::pi);
    }
    return r;
}

} // namespace detail

/// Minimum-area enclosing rectangle of a CCW convex polygon by rotating
/// calipers. Among equal-area candidates the smallest heading wins.
inline OrientedRect min_area_rect(std::span<const Vec2> hull)
{
    const std::size_t n = hull.size();
    if (n == 0)
        return {};
    if (n == 1)
        return OrientedRect{hull[0], 0.0, 0.0, 0.0};
    if (n == 2)
    {
        const double dx = hull[1].x - hull[0].x, dy = hull[1].y - hull[0].y;
        return detail::make_rect({0.5 * (hull[0].x + hull[1].x), 0.5 * (hull[0].y + hull[1].y)},
                                 std::hypot(dx, dy), 0.0, std::atan2(dy, dx));
    }

    auto dot = [](const Vec2 &p, double ex, double ey) { return p.x * ex + p.y * ey; };
    auto next = [n](std::size_t i) { return (i + 1) % n; };

    OrientedRect best;
    bool have = false;
    std::size_t j = 1, k = 1, l = 1;

    for (std::size_t i = 0; i < n; ++i)
    {
        const Vec2 &a = hull[i];
        const Vec2 &b = hull[next(i)];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const double ex = (b.x - a.x) / len, ey = (b.y - a.y) / len;
        const double nx = -ey, ny = ex; // inward normal for a CCW polygon

        if (i == 0)
            j = next(i);
        for (std::size_t step = 0; step < n && dot(hull[next(j)], ex, ey) > dot(hull[j], ex, ey); ++step)
            j = next(j);
        if (i == 0)
            k = j;
        for (std::size_t step = 0; step < n && dot(hull[next(k)], nx, ny) > dot(hull[k], nx, ny); ++step)
            k = next(k);
        if (i == 0)
            l = k;
        for (std::size_t step = 0; step < n && dot(hull[next(l)], ex, ey) < dot(hull[l], ex, ey); ++step)
            l = next(l);

        const double lo = dot(hull[l], ex, ey) - dot(a, ex, ey);
        const double hi = dot(hull[j], ex, ey) - dot(a, ex, ey);
        const double along = hi - lo;
        const double across = dot(hull[k], nx, ny) - dot(a, nx, ny);
        const double mid_along = 0.5 * (lo + hi);
        const Vec2 center{a.x + ex * mid_along + nx * 0.5 * across, a.y + ey * mid_along + ny * 0.5 * across};
        const OrientedRect cand = detail::make_rect(center, along, across, std::atan2(ey, ex));

        const double tol = 1e-12 * std::max(1.0, cand.area());
        if (!have || cand.area() < best.area() - tol ||
            (std::abs(cand.area() - best.area()) <= tol && cand.heading < best.heading))
        {
            best = cand;
            have = true;
        }
    }
    return best;
}

inline constexpr double kMinBoxSize = 0.05;

/// Tight 7-DoF box of a cluster: minimum-area rectangle in xy, z extent
/// from the point range, every size floored at kMinBoxSize.
inline Box fit_tight_box(std::span<const Point3> cluster)
{
    Box box;
    if (cluster.empty())
        return box;
    std::vector<Vec2> xy;
    xy.reserve(cluster.size());
    double zmin = std::numeric_limits<double>::infinity();
    double zmax = -std::numeric_limits<double>::infinity();
    for (const auto &p : cluster)
    {
        xy.push_back({p[0], p[1]});
        zmin = std::min<double>(zmin, p[2]);
        zmax = std::max<double>(zmax, p[2]);
    }
    const auto hull = convex_hull(std::move(xy));
    const auto rect = min_area_rect(hull);
    box.center = {rect.center.x, rect.center.y, 0.5 * (zmin + zmax)};
    box.size = {std::max(rect.length, kMinBoxSize), std::max(rect.width, kMinBoxSize),
                std::max(zmax - zmin, kMinBoxSize)};
    box.heading = rect.width == 0.0 && rect.length == 0.0 ? 0.0 : rect.heading;
    return box;
}

// ---------------------------------------------------------------------------
// Partition and token assignment

enum class PointClass : std::uint8_t
{
    ground = 0,
    agent = 1,
    open_set = 2,
    discarded = 3,
};

struct PointLabel
{
    PointClass cls = PointClass::discarded;
    std::int64_t source = -1; // agent track id, per-frame cluster id, or ground tile index

    friend bool operator==(const PointLabel &, const PointLabel &) = default;
};

/// Per-frame point labels and cluster inventories.
struct PointPartition
{
    std::vector<std::vector<PointLabel>> labels;
    std::vector<Clustering> clusters;
};

struct AgentCandidate
{
    std::int64_t track_id = 0;
    std::vector<BoxRow> boxes;
    std::vector<std::uint8_t> frame_valid;
};

struct OpenSetCandidate
{
    std::vector<BoxRow> boxes;
    std::vector<std::uint8_t> frame_valid;
    std::size_t point_count = 0;
};

struct TokenAssignment
{
    std::vector<SceneElement> elements;
    std::unordered_map<std::int64_t, std::int32_t> agent_token; // track id -> token
    std::vector<std::int32_t> open_set_token;                   // per candidate, -1 if dropped
    std::vector<std::int32_t> ground_token;                     // per tile
    std::vector<std::int64_t> dropped_agents;
    std::vector<std::size_t> dropped_open_set;
    std::vector<std::string> warnings;
};

namespace detail
{
/// Distance to the origin of the latest valid box.
inline double latest_center_distance(const AgentCandidate &a)
{
    for (std::size_t t = a.frame_valid.size(); t-- > 0;)
    {
        if (a.frame_valid[t])
        {
            const auto &r = a.boxes[t];
            return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        }
    }
    return std::numeric_limits<double>::infinity();
}
} // namespace detail

/// Assigns contiguous token ids: agents, then open-set tracks, then ground
/// tiles. Over-budget agents are dropped farthest-from-origin first;
/// over-budget open-set tracks smallest (by total points) first.
inline TokenAssignment assign_token_ids(std::span<const AgentCandidate> agents,
                                        std::span<const OpenSetCandidate> open_set,
                                        std::span<const SceneElement> ground_tiles, const ElementBudget &budget)
{
    TokenAssignment out;

    std::vector<std::size_t> agent_order(agents.size());
    std::iota(agent_order.begin(), agent_order.end(), 0);
    if (agents.size() > static_cast<std::size_t>(budget.agent))
    {
        std::vector<double> dist(agents.size());
        for (std::size_t i = 0; i < agents.size(); ++i)
            dist[i] = detail::latest_center_distance(agents[i]);
        std::sort(agent_order.begin(), agent_order.end(), [&](std::size_t a, std::size_t b) {
            if (dist[a] != dist[b])
                return dist[a] < dist[b];
            return agents[a].track_id < agents[b].track_id;
        });
        for (std::size_t i = static_cast<std::size_t>(budget.agent); i < agent_order.size(); ++i)
            out.dropped_agents.push_back(agents[agent_order[i]].track_id);
        agent_order.resize(static_cast<std::size_t>(budget.agent));
        std::sort(out.dropped_agents.begin(), out.dropped_agents.end());
    }
    std::sort(agent_order.begin(), agent_order.end(),
              [&](std::size_t a, std::size_t b) { return agents[a].track_id < agents[b].track_id; });

    std::vector<std::size_t> open_order(open_set.size());
    std::iota(open_order.begin(), open_order.end(), 0);
    if (open_set.size() > static_cast<std::size_t>(budget.open_set))
    {
        std::stable_sort(open_order.begin(), open_order.end(), [&](std::size_t a, std::size_t b) {
            return open_set[a].point_count > open_set[b].point_count;
        });
        for (std::size_t i = static_cast<std::size_t>(budget.open_set); i < open_order.size(); ++i)
            out.dropped_open_set.push_back(open_order[i]);
        open_order.resize(static_cast<std::size_t>(budget.open_set));
        std::sort(open_order.begin(), open_order.end());
        std::sort(out.dropped_open_set.begin(), out.dropped_open_set.end());
    }

    std::int32_t next = 0;
    for (auto i : agent_order)
    {
        SceneElement e;
        e.token_id = next++;
        e.kind = ElementKind::agent;
        e.source_id = agents[i].track_id;
        e.boxes = agents[i].boxes;
        e.frame_valid = agents[i].frame_valid;
        out.agent_token[agents[i].track_id] = e.token_id;
        out.elements.push_back(std::move(e));
    }
    out.open_set_token.assign(open_set.size(), -1);
    for (auto i : open_order)
    {
        SceneElement e;
        e.token_id = next++;
        e.kind = ElementKind::open_set;
        e.source_id = static_cast<std::int64_t>(i);
        e.boxes = open_set[i].boxes;
        e.frame_valid = open_set[i].frame_valid;
        out.open_set_token[i] = e.token_id;
        out.elements.push_back(std::move(e));
    }
    // ground tiles are already capped by tile_ground
    const std::size_t n_ground = std::min(ground_tiles.size(), static_cast<std::size_t>(budget.ground));
    out.ground_token.assign(ground_tiles.size(), -1);
    for (std::size_t i = 0; i < n_ground; ++i)
    {
        SceneElement e = ground_tiles[i];
        e.token_id = next++;
        e.kind = ElementKind::ground;
        out.ground_token[i] = e.token_id;
        out.elements.push_back(std::move(e));
    }

    if (!out.dropped_agents.empty())
    {
        std::string msg = "agent budget " + std::to_string(budget.agent) + " exceeded; dropped tracks:";
        for (auto id : out.dropped_agents)
            msg += " " + std::to_string(id);
        out.warnings.push_back(std::move(msg));
    }
    if (!out.dropped_open_set.empty())
    {
        std::string msg = "open-set budget " + std::to_string(budget.open_set) + " exceeded; dropped tracks:";
        for (auto id : out.dropped_open_set)
            msg += " " + std::to_string(id);
        out.warnings.push_back(std::move(msg));
    }
    if (ground_tiles.size() > n_ground)
        out.warnings.push_back("ground budget " + std::to_string(budget.ground) + " exceeded; dropped " +
                               std::to_string(ground_tiles.size() - n_ground) + " tiles");
    return out;
}

} // namespace most

#endif // MOST_DECOMPOSE_HPP
