#ifndef MOST_GROUND_HPP
#define MOST_GROUND_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "most/error.hpp"
#include "most/rng.hpp"
#include "most/types.hpp"

namespace most
{

/// Plane {p : normal . p + offset = 0} with unit normal and normal.z >= 0.
struct GroundPlane
{
    Vec3 normal{0.0, 0.0, 1.0};
    double offset = 0.0;
    std::size_t inlier_count = 0;

    double signed_distance(const Point3 &p) const
    {
        return normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] + offset;
    }
};

namespace detail
{

inline void canonicalize(GroundPlane &plane)
{
    const double norm = std::sqrt(plane.normal[0] * plane.normal[0] + plane.normal[1] * plane.normal[1] +
                                  plane.normal[2] * plane.normal[2]);
    for (auto &c : plane.normal)
        c /= norm;
    plane.offset /= norm;
    bool flip = plane.normal[2] < 0.0;
    // vertical planes: orient by the first non-zero component
    if (plane.normal[2] == 0.0)
        flip = plane.normal[0] < 0.0 || (plane.normal[0] == 0.0 && plane.normal[1] < 0.0);
    if (flip)
    {
        for (auto &c : plane.normal)
            c = -c;
        plane.offset = -plane.offset;
    }
}

/// Total least squares plane through the given points.
inline GroundPlane least_squares_plane(std::span<const Point3> pts, std::span<const std::uint32_t> subset)
{
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (auto i : subset)
        centroid += Eigen::Vector3d(pts[i][0], pts[i][1], pts[i][2]);
    centroid /= static_cast<double>(subset.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto i : subset)
    {
        const Eigen::Vector3d d = Eigen::Vector3d(pts[i][0], pts[i][1], pts[i][2]) - centroid;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    const Eigen::Vector3d n = solver.eigenvectors().col(0);
    GroundPlane plane;
    plane.normal = {n.x(), n.y(), n.z()};
    plane.offset = -n.dot(centroid);
    canonicalize(plane);
    return plane;
}

inline bool lex_less(const Point3 &a, const Point3 &b) { return a < b; }

} // namespace detail

/// RANSAC plane fit followed by least-squares refinement on the winning
/// inlier set. Points are sorted before sampling so the result does not
/// depend on input order.
inline GroundPlane fit_ground_plane(std::span<const Point3> points, const RansacConfig &config, std::uint64_t seed)
{
    if (points.size() < 3)
        throw Error(ErrorCode::DegenerateInput, "plane fit needs at least 3 points, got " +
                                                    std::to_string(points.size()));

    std::vector<Point3> sorted(points.begin(), points.end());
    std::sort(sorted.begin(), sorted.end(), detail::lex_less);

    auto as_vec = [](const Point3 &p) { return Eigen::Vector3d(p[0], p[1], p[2]); };

    // Reject fully collinear input up front.
    {
        const Eigen::Vector3d a = as_vec(sorted.front());
        const Eigen::Vector3d b = as_vec(sorted.back());
        double best = 0.0;
        const Eigen::Vector3d ab = b - a;
        for (const auto &p : sorted)
            best = std::max(best, ab.cross(as_vec(p) - a).norm());
        const double scale = std::max(1.0, ab.squaredNorm());
        if (ab.norm() == 0.0 || best <= 1e-12 * scale)
            throw Error(ErrorCode::DegenerateInput, "all points are collinear");
    }

    const double threshold = config.inlier_threshold_m;
    const std::size_t n = sorted.size();
    Rng rng(seed);

    std::size_t best_count = 0;
    Eigen::Vector3d best_normal(0, 0, 1);
    double best_offset = 0.0;
    bool found = false;

    for (int it = 0; it < config.iterations; ++it)
    {
        const auto i0 = uniform_index(rng, n);
        auto i1 = uniform_index(rng, n - 1);
        if (i1 >= i0)
            ++i1;
        auto i2 = uniform_index(rng, n - 2);
        // map i2 into [0, n) skipping i0 and i1
        const auto lo = std::min(i0, i1);
        const auto hi = std::max(i0, i1);
        if (i2 >= lo)
            ++i2;
        if (i2 >= hi)
            ++i2;

        const Eigen::Vector3d a = as_vec(sorted[i0]);
        const Eigen::Vector3d nrm = (as_vec(sorted[i1]) - a).cross(as_vec(sorted[i2]) - a);
        const double len = nrm.norm();
        if (!(len > 1e-12))
            continue;
        const Eigen::Vector3d unit = nrm / len;
        const double offset = -unit.dot(a);

        std::size_t count = 0;
        for (const auto &p : sorted)
        {
            const double d = unit.x() * p[0] + unit.y() * p[1] + unit.z() * p[2] + offset;
            count += std::abs(d) <= threshold ? 1 : 0;
        }
        if (!found || count > best_count)
        {
            found = true;
            best_count = count;
            best_normal = unit;
            best_offset = offset;
        }
    }

    std::vector<std::uint32_t> inliers;
    if (found)
    {
        for (std::uint32_t i = 0; i < n; ++i)
        {
            const auto &p = sorted[i];
            const double d = best_normal.x() * p[0] + best_normal.y() * p[1] + best_normal.z() * p[2] + best_offset;
            if (std::abs(d) <= threshold)
                inliers.push_back(i);
        }
    }
    if (inliers.size() < 3)
    {
        inliers.resize(n);
        for (std::uint32_t i = 0; i < n; ++i)
            inliers[i] = i;
    }

    GroundPlane plane = detail::least_squares_plane(sorted, inliers);
    plane.inlier_count = 0;
    for (const auto &p : sorted)
        plane.inlier_count += std::abs(plane.signed_distance(p)) <= threshold ? 1 : 0;
    return plane;
}

/// true where |n . p + d| <= threshold
inline std::vector<std::uint8_t> segment_ground(std::span<const Point3> points, const GroundPlane &plane,
                                                double threshold)
{
    std::vector<std::uint8_t> mask(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        mask[i] = std::abs(plane.signed_distance(points[i])) <= threshold ? 1 : 0;
    return mask;
}

struct GroundCell
{
    std::int64_t ix = 0;
    std::int64_t iy = 0;
    std::size_t count = 0;
    double mean_z = 0.0;
};

struct GroundTiling
{
    std::vector<GroundCell> cells;       // retained cells, sorted by (ix, iy)
    std::vector<SceneElement> elements;  // aligned with cells, token ids unassigned
    std::vector<std::int32_t> point_tile; // per input point: index into cells, -1 when its cell was dropped
    std::size_t occupied_cells = 0;
};

/// Grid cell of a coordinate; cells are half-open [k*s, (k+1)*s).
inline std::int64_t cell_index(double coordinate, double tile_size)
{
    return static_cast<std::int64_t>(std::floor(coordinate / tile_size));
}

/// Bins merged ground points into world-anchored square tiles. When more
/// cells are occupied than `max_tiles`, the most populated ones survive
/// (ties broken by lexicographic cell index).
inline GroundTiling tile_ground(std::span<const Point3> points, double tile_size, std::size_t max_tiles, int frames)
{
    struct Acc
    {
        std::size_t count = 0;
        double z_sum = 0.0;
    };
    std::map<std::pair<std::int64_t, std::int64_t>, Acc> cells;
    std::vector<std::pair<std::int64_t, std::int64_t>> keys(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        const auto key = std::make_pair(cell_index(points[i][0], tile_size), cell_index(points[i][1], tile_size));
        keys[i] = key;
        auto &acc = cells[key];
        ++acc.count;
        acc.z_sum += points[i][2];
    }

    std::vector<std::pair<std::pair<std::int64_t, std::int64_t>, Acc>> ranked(cells.begin(), cells.end());
    if (ranked.size() > max_tiles)
    {
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto &a, const auto &b) { return a.second.count > b.second.count; });
        ranked.resize(max_tiles);
        std::sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
    }

    GroundTiling out;
    out.occupied_cells = cells.size();
    std::map<std::pair<std::int64_t, std::int64_t>, std::int32_t> index;
    for (const auto &[key, acc] : ranked)
    {
        GroundCell cell{key.first, key.second, acc.count, acc.z_sum / static_cast<double>(acc.count)};
        index[key] = static_cast<std::int32_t>(out.cells.size());

        SceneElement e;
        e.kind = ElementKind::ground;
        e.source_id = static_cast<std::int64_t>(out.cells.size());
        const BoxRow row{(static_cast<double>(cell.ix) + 0.5) * tile_size,
                         (static_cast<double>(cell.iy) + 0.5) * tile_size, cell.mean_z, 0.0, 0.0, 0.0, 0.0};
        e.boxes.assign(static_cast<std::size_t>(frames), row);
        e.frame_valid.assign(static_cast<std::size_t>(frames), 1);
        out.cells.push_back(cell);
        out.elements.push_back(std::move(e));
    }

    out.point_tile.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        const auto it = index.find(keys[i]);
        out.point_tile[i] = it == index.end() ? -1 : it->second;
    }
    return out;
}

} // namespace most

#endif // MOST_GROUND_HPP
