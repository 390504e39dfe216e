#ifndef MOST_PROJECT_HPP
#define MOST_PROJECT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "most/error.hpp"
#include "most/types.hpp"

namespace most
{

struct Pixel
{
    double u = 0.0;
    double v = 0.0;
};

inline constexpr double kMinDepth = 1e-6;

inline Vec3 to_camera(const Point3 &p, const CameraFrame &cam)
{
    const auto &R = cam.rotation;
    const auto &t = cam.translation;
    const double x = p[0], y = p[1], z = p[2];
    return {R[0] * x + R[1] * y + R[2] * z + t[0], R[3] * x + R[4] * y + R[5] * z + t[1],
            R[6] * x + R[7] * y + R[8] * z + t[2]};
}

/// Pinhole projection of a camera-frame point; nullopt when behind the
/// camera or outside [0, W) x [0, H).
inline std::optional<Pixel> project_camera_point(const Vec3 &pc, const CameraFrame &cam)
{
    if (!(pc[2] > kMinDepth))
        return std::nullopt;
    const auto &K = cam.intrinsics;
    const double u = K.fx * pc[0] / pc[2] + K.cx;
    const double v = K.fy * pc[1] / pc[2] + K.cy;
    if (!(u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height))
        return std::nullopt;
    return Pixel{u, v};
}

inline std::optional<Pixel> project_point(const Point3 &p, const CameraFrame &cam)
{
    return project_camera_point(to_camera(p, cam), cam);
}

/// Nearest-cell lookup: feature_map[floor(v), floor(u)].
inline std::span<const float> sample_feature(const CameraFrame &cam, double u, double v)
{
    const int col = std::clamp(static_cast<int>(std::floor(u)), 0, cam.width - 1);
    const int row = std::clamp(static_cast<int>(std::floor(v)), 0, cam.height - 1);
    return cam.feature(row, col);
}

/// Bilinear interpolation between cell centers, clamped at the borders.
inline void sample_feature_bilinear(const CameraFrame &cam, double u, double v, std::span<float> out)
{
    const double x = std::clamp(u - 0.5, 0.0, static_cast<double>(cam.width - 1));
    const double y = std::clamp(v - 0.5, 0.0, static_cast<double>(cam.height - 1));
    const int c0 = static_cast<int>(std::floor(x));
    const int r0 = static_cast<int>(std::floor(y));
    const int c1 = std::min(c0 + 1, cam.width - 1);
    const int r1 = std::min(r0 + 1, cam.height - 1);
    const double ax = x - c0, ay = y - r0;
    const auto f00 = cam.feature(r0, c0), f01 = cam.feature(r0, c1);
    const auto f10 = cam.feature(r1, c0), f11 = cam.feature(r1, c1);
    for (std::size_t d = 0; d < out.size(); ++d)
    {
        const double top = (1.0 - ax) * f00[d] + ax * f01[d];
        const double bottom = (1.0 - ax) * f10[d] + ax * f11[d];
        out[d] = static_cast<float>((1.0 - ay) * top + ay * bottom);
    }
}

struct PointFeatures
{
    int dim = 0;
    std::vector<float> values;        // N x dim
    std::vector<std::uint8_t> valid;  // N

    std::span<const float> row(std::size_t i) const
    {
        return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
    }
};

namespace detail
{

inline std::vector<const CameraFrame *> cameras_for_frame(std::span<const CameraFrame> cameras, int frame_index,
                                                          int dim)
{
    std::vector<const CameraFrame *> out;
    for (const auto &cam : cameras)
    {
        if (cam.frame_index != frame_index || !cam.valid)
            continue;
        if (cam.dim != dim)
            throw Error(ErrorCode::DimensionMismatch, "camera " + std::to_string(cam.camera_id) + " has D=" +
                                                          std::to_string(cam.dim) + ", expected " +
                                                          std::to_string(dim));
        out.push_back(&cam);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const CameraFrame *a, const CameraFrame *b) { return a->camera_id < b->camera_id; });
    return out;
}

inline void features_for_point(const Point3 &p, const std::vector<const CameraFrame *> &cams,
                               const ProjectionConfig &config, std::span<float> out, std::uint8_t &valid,
                               std::vector<float> &scratch)
{
    std::fill(out.begin(), out.end(), 0.0f);
    valid = 0;
    int hits = 0;
    for (const auto *cam : cams)
    {
        const auto px = project_point(p, *cam);
        if (!px)
            continue;
        std::span<const float> value;
        if (config.sampling == Sampling::nearest)
        {
            value = sample_feature(*cam, px->u, px->v);
        }
        else
        {
            scratch.resize(out.size());
            sample_feature_bilinear(*cam, px->u, px->v, scratch);
            value = scratch;
        }
        if (config.overlap == OverlapRule::first_camera)
        {
            std::copy(value.begin(), value.end(), out.begin());
            valid = 1;
            return;
        }
        for (std::size_t d = 0; d < out.size(); ++d)
            out[d] += value[d];
        ++hits;
    }
    if (hits > 0)
    {
        for (auto &v : out)
            v /= static_cast<float>(hits);
        valid = 1;
    }
}

} // namespace detail

/// Image features for the points of one frame. Points seen by no camera get
/// a zero row and valid = 0.
inline PointFeatures build_point_features(std::span<const Point3> points, int frame_index,
                                          std::span<const CameraFrame> cameras, int dim,
                                          const ProjectionConfig &config = {})
{
    const auto cams = detail::cameras_for_frame(cameras, frame_index, dim);
    PointFeatures out;
    out.dim = dim;
    out.values.assign(points.size() * static_cast<std::size_t>(dim), 0.0f);
    out.valid.assign(points.size(), 0);
    std::vector<float> scratch;
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        std::span<float> row(out.values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
        detail::features_for_point(points[i], cams, config, row, out.valid[i], scratch);
    }
    return out;
}

/// All frames concatenated in frame order.
inline PointFeatures build_point_features(std::span<const PointCloudFrame> frames,
                                          std::span<const CameraFrame> cameras, int dim,
                                          const ProjectionConfig &config = {})
{
    PointFeatures out;
    out.dim = dim;
    for (const auto &frame : frames)
    {
        auto part = build_point_features(frame.points, frame.frame_index, cameras, dim, config);
        out.values.insert(out.values.end(), part.values.begin(), part.values.end());
        out.valid.insert(out.valid.end(), part.valid.begin(), part.valid.end());
    }
    return out;
}

} // namespace most

#endif // MOST_PROJECT_HPP
