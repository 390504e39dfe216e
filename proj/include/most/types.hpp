#ifndef MOST_TYPES_HPP
#define MOST_TYPES_HPP

// Domain types shared by every stage of the tokenizer, plus bundle and
// config validation.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "most/error.hpp"

namespace most
{

using Point3 = std::array<float, 3>;
using Vec3 = std::array<double, 3>;

/// center xyz, size (length, width, height), heading
using BoxRow = std::array<double, 7>;
inline constexpr std::size_t kBoxWidth = 7;

/// Maps any angle onto [-pi, pi).
inline double normalize_heading(double radians)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double h = std::fmod(radians + std::numbers::pi, two_pi);
    if (h < 0.0)
        h += two_pi;
    h -= std::numbers::pi;
    // fmod can land exactly on +pi after the shift for inputs just below -pi
    if (h >= std::numbers::pi)
        h -= two_pi;
    return h;
}

struct Box
{
    Vec3 center{};
    Vec3 size{}; // length, width, height
    double heading = 0.0;

    BoxRow row() const
    {
        return {center[0], center[1], center[2], size[0], size[1], size[2], heading};
    }

    static Box from_row(const BoxRow &r)
    {
        return Box{{r[0], r[1], r[2]}, {r[3], r[4], r[5]}, r[6]};
    }

    friend bool operator==(const Box &, const Box &) = default;
};

struct AgentBox
{
    std::int64_t track_id = 0;
    int frame_index = 0;
    Box box;
    std::int32_t class_label = 0;

    friend bool operator==(const AgentBox &, const AgentBox &) = default;
};

struct PointCloudFrame
{
    int frame_index = 0;
    std::vector<Point3> points;

    friend bool operator==(const PointCloudFrame &, const PointCloudFrame &) = default;
};

struct Intrinsics
{
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    friend bool operator==(const Intrinsics &, const Intrinsics &) = default;
};

/// One camera at one frame. Intrinsics are expressed at feature-map
/// resolution; rotation/translation map world coordinates into the camera
/// frame (x right, y down, z forward).
struct CameraFrame
{
    int camera_id = 0;
    int frame_index = 0;
    int height = 0;
    int width = 0;
    int dim = 0;
    std::vector<float> features; // height x width x dim, row-major
    Intrinsics intrinsics;
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major
    Vec3 translation{};
    bool valid = true;

    std::span<const float> feature(int row, int col) const
    {
        const auto offset = (static_cast<std::size_t>(row) * width + col) * dim;
        return {features.data() + offset, static_cast<std::size_t>(dim)};
    }

    friend bool operator==(const CameraFrame &, const CameraFrame &) = default;
};

/// Raw multi-frame scene input. All geometry lives in one world frame.
struct SceneBundle
{
    double frame_dt = 0.1;
    std::vector<PointCloudFrame> frames;
    std::vector<AgentBox> agents;
    std::vector<CameraFrame> cameras;

    std::size_t point_count() const
    {
        std::size_t n = 0;
        for (const auto &f : frames)
            n += f.points.size();
        return n;
    }

    friend bool operator==(const SceneBundle &, const SceneBundle &) = default;
};

enum class ElementKind : std::uint8_t
{
    agent = 0,
    open_set = 1,
    ground = 2,
};

inline const char *to_string(ElementKind kind)
{
    switch (kind)
    {
    case ElementKind::agent: return "agent";
    case ElementKind::open_set: return "open-set";
    case ElementKind::ground: return "ground";
    }
    return "?";
}

struct SceneElement
{
    std::int32_t token_id = -1;
    ElementKind kind = ElementKind::ground;
    std::int64_t source_id = -1; // agent track id, open-set track index or ground tile index
    std::vector<BoxRow> boxes;   // one row per frame, zeros where invalid
    std::vector<std::uint8_t> frame_valid;

    friend bool operator==(const SceneElement &, const SceneElement &) = default;
};

/// Compacted model input. Rows past the sampled points are padding with
/// point_valid = 0 and index (-1, -1).
struct TokenizedScene
{
    int frames = 0;
    int dim = 0;
    std::vector<Point3> xyz;                       // N_pts
    std::vector<std::array<std::int32_t, 2>> ind;  // (frame id, token id)
    std::vector<std::uint8_t> point_valid;         // N_pts
    std::vector<float> features;                   // N_pts x dim
    std::vector<std::uint8_t> feature_valid;       // N_pts
    std::vector<double> boxes;                     // N_elem x frames x 7
    std::vector<std::uint8_t> elem_valid;          // N_elem x frames
    std::vector<SceneElement> elements;

    std::size_t row_count() const { return xyz.size(); }
    std::size_t element_count() const { return elements.size(); }
};

/// One embedding per scene element.
struct SceneTokens
{
    int dim = 0;
    int frames = 0;
    std::vector<float> embeddings; // N_elem x dim
    std::vector<SceneElement> elements;

    friend bool operator==(const SceneTokens &, const SceneTokens &) = default;
};

enum class Sampling
{
    nearest,
    bilinear,
};

enum class OverlapRule
{
    first_camera,
    average,
};

struct ElementBudget
{
    int agent = 128;
    int open_set = 384;
    int ground = 256;

    int total() const { return agent + open_set + ground; }
};

struct PointBudget
{
    int agent = 16384;
    int open_set = 24576;
    int ground = 24576;

    int sum() const { return agent + open_set + ground; }
};

struct RansacConfig
{
    int iterations = 256;
    double inlier_threshold_m = 0.2;
};

struct ClusterConfig
{
    double radius_m = 0.5;
    int min_points = 3;
};

struct TrackConfig
{
    double gate_m = 2.0;
    double process_noise = 1e-2;     // velocity diagonal of Q
    double measurement_noise = 1e-2; // position diagonal of R
    double initial_velocity_variance = 10.0;
    int max_missed_frames = 3;
};

struct ProjectionConfig
{
    Sampling sampling = Sampling::nearest;
    OverlapRule overlap = OverlapRule::first_camera;
};

struct PipelineConfig
{
    int frames = 11;
    int dim = 256;
    ElementBudget elements;
    int total_points = 65536;
    PointBudget points;
    double tile_size_m = 10.0;
    RansacConfig ransac;
    ClusterConfig cluster;
    TrackConfig track;
    ProjectionConfig projection;
    int hidden_dim = 128;
    int heads = 2;
    bool attention = true;
    std::uint64_t seed = 0;
};

/// Throws ValidationError listing every violated constraint.
inline void validate_config(const PipelineConfig &c)
{
    std::vector<Issue> issues;
    auto require = [&](bool ok, const std::string &what) {
        if (!ok)
            issues.push_back({ErrorCode::BadConfig, what});
    };
    require(c.frames > 0, "frames must be > 0");
    require(c.dim > 0, "dim must be > 0");
    require(c.elements.agent > 0 && c.elements.open_set > 0 && c.elements.ground > 0,
            "element budgets must be > 0");
    require(c.points.agent > 0 && c.points.open_set > 0 && c.points.ground > 0, "point budgets must be > 0");
    require(c.points.sum() == c.total_points,
            "point budgets sum to " + std::to_string(c.points.sum()) + " but total_points is " +
                std::to_string(c.total_points));
    require(c.tile_size_m > 0.0 && std::isfinite(c.tile_size_m), "tile_size_m must be > 0");
    require(c.ransac.iterations > 0, "ransac.iterations must be > 0");
    require(c.ransac.inlier_threshold_m > 0.0, "ransac.inlier_threshold_m must be > 0");
    require(c.cluster.radius_m > 0.0, "cluster.radius_m must be > 0");
    require(c.cluster.min_points > 0, "cluster.min_points must be > 0");
    require(c.track.gate_m > 0.0, "track.gate_m must be > 0");
    require(c.track.process_noise >= 0.0 && c.track.measurement_noise >= 0.0, "track noise must be >= 0");
    require(c.track.max_missed_frames >= 0, "track.max_missed_frames must be >= 0");
    require(c.hidden_dim > 0, "hidden_dim must be > 0");
    require(c.heads > 0 && c.dim % c.heads == 0, "dim must be divisible by heads");
    if (!issues.empty())
        throw ValidationError(std::move(issues));
}

namespace detail
{
inline bool finite3(const Vec3 &v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }
} // namespace detail

/// Checks every bundle invariant against the configured frame count and
/// returns the bundle unchanged when all hold.
inline const SceneBundle &validate_bundle(const SceneBundle &bundle, const PipelineConfig &config)
{
    std::vector<Issue> issues;
    const int frames = config.frames;

    if (static_cast<int>(bundle.frames.size()) != frames)
        issues.push_back({ErrorCode::FrameCountMismatch, "bundle has " + std::to_string(bundle.frames.size()) +
                                                             " frames, config expects " + std::to_string(frames)});
    if (!(bundle.frame_dt > 0.0) || !std::isfinite(bundle.frame_dt))
        issues.push_back({ErrorCode::BadConfig, "frame_dt must be positive and finite"});

    for (std::size_t f = 0; f < bundle.frames.size(); ++f)
    {
        const auto &frame = bundle.frames[f];
        if (frame.frame_index != static_cast<int>(f))
            issues.push_back({ErrorCode::BadFrameIndex, "frame " + std::to_string(f) + " carries frame_index " +
                                                            std::to_string(frame.frame_index)});
        for (std::size_t r = 0; r < frame.points.size(); ++r)
        {
            const auto &p = frame.points[r];
            if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
                issues.push_back({ErrorCode::NonFiniteCoordinate,
                                  "frame " + std::to_string(f) + " row " + std::to_string(r)});
        }
    }

    std::set<std::pair<std::int64_t, int>> seen;
    for (std::size_t i = 0; i < bundle.agents.size(); ++i)
    {
        const auto &a = bundle.agents[i];
        const std::string where = "agent box " + std::to_string(i) + " (track " + std::to_string(a.track_id) +
                                  ", frame " + std::to_string(a.frame_index) + ")";
        if (a.frame_index < 0 || a.frame_index >= frames)
            issues.push_back({ErrorCode::BadFrameIndex, where});
        if (!detail::finite3(a.box.center) || !detail::finite3(a.box.size) || !std::isfinite(a.box.heading))
            issues.push_back({ErrorCode::NonFiniteCoordinate, where});
        else
        {
            if (!(a.box.size[0] > 0.0 && a.box.size[1] > 0.0 && a.box.size[2] > 0.0))
                issues.push_back({ErrorCode::BadBoxSize, where});
            if (a.box.heading < -std::numbers::pi || a.box.heading >= std::numbers::pi)
                issues.push_back({ErrorCode::BadHeading, where});
        }
        if (!seen.insert({a.track_id, a.frame_index}).second)
            issues.push_back({ErrorCode::DuplicateTrackFrame, where});
    }

    for (std::size_t i = 0; i < bundle.cameras.size(); ++i)
    {
        const auto &cam = bundle.cameras[i];
        const std::string where =
            "camera " + std::to_string(cam.camera_id) + " frame " + std::to_string(cam.frame_index);
        if (cam.frame_index < 0 || cam.frame_index >= frames)
            issues.push_back({ErrorCode::BadFrameIndex, where});
        if (cam.height <= 0 || cam.width <= 0 || cam.dim <= 0 ||
            cam.features.size() != static_cast<std::size_t>(cam.height) * cam.width * cam.dim)
        {
            issues.push_back({ErrorCode::BadFeatureMap, where + ": feature map shape"});
        }
        else
        {
            for (float v : cam.features)
            {
                if (!std::isfinite(v))
                {
                    issues.push_back({ErrorCode::BadFeatureMap, where + ": non-finite feature"});
                    break;
                }
            }
        }
        const auto &R = cam.rotation;
        bool rotation_ok = true;
        for (double v : R)
            rotation_ok = rotation_ok && std::isfinite(v);
        for (int r = 0; rotation_ok && r < 3; ++r)
        {
            for (int c = 0; c < 3; ++c)
            {
                // (R^T R)_{rc}
                double dot = 0.0;
                for (int k = 0; k < 3; ++k)
                    dot += R[k * 3 + r] * R[k * 3 + c];
                if (std::abs(dot - (r == c ? 1.0 : 0.0)) > 1e-6)
                    rotation_ok = false;
            }
        }
        if (!rotation_ok)
            issues.push_back({ErrorCode::BadRotation, where});
        const auto &K = cam.intrinsics;
        if (!detail::finite3(cam.translation) || !std::isfinite(K.fx) || !std::isfinite(K.fy) ||
            !std::isfinite(K.cx) || !std::isfinite(K.cy))
            issues.push_back({ErrorCode::NonFiniteCoordinate, where + ": calibration"});
    }

    if (!issues.empty())
        throw ValidationError(std::move(issues));
    return bundle;
}

} // namespace most

#endif // MOST_TYPES_HPP
