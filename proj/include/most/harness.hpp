#ifndef MOST_HARNESS_HPP
#define MOST_HARNESS_HPP

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "most/decompose.hpp"
#include "most/error.hpp"
#include "most/pipeline.hpp"
#include "most/rng.hpp"
#include "most/types.hpp"

namespace most
{

struct SynthSpec
{
    int n_agents = 8;
    int n_clutter = 12;
    double area_m = 60.0; // square [-area/2, area/2)^2
    int frames = 11;
    int cameras = 4;
    int ground_points_per_frame = 3000;
    int points_per_agent = 200;
    int clutter_points_per_axis = 3;
    double clutter_spacing_m = 0.35;
    double ground_slope = 0.0; // z = slope * x
    double agent_speed = 1.0;
    double clutter_speed = 0.0;
    double frame_dt = 0.1;
    int feature_dim = 8;
    int feature_height = 16;
    int feature_width = 32;
    double separation_m = 0.6; // minimum point gap between objects
};

/// The default full-size workload: point pools just above the default
/// budgets, 768 occupied elements, D = 256.
inline SynthSpec full_size_spec()
{
    SynthSpec s;
    s.n_agents = 128;
    s.n_clutter = 384;
    s.area_m = 160.0;
    s.frames = 11;
    s.ground_points_per_frame = 2400;
    s.points_per_agent = 12;
    s.clutter_points_per_axis = 2;
    s.clutter_spacing_m = 0.3;
    s.feature_dim = 256;
    return s;
}

struct TruthLabel
{
    PointClass cls = PointClass::ground;
    std::int64_t object = -1; // agent track id or clutter index

    friend bool operator==(const TruthLabel &, const TruthLabel &) = default;
};

struct SyntheticScene
{
    SceneBundle bundle;
    std::vector<std::vector<TruthLabel>> truth; // per frame, per point
};

namespace detail
{

inline double ground_height(const SynthSpec &spec, double x) { return spec.ground_slope * x; }

struct SynthObject
{
    bool agent = false;
    double cx = 0.0, cy = 0.0; // position at frame 0
    double vx = 0.0, vy = 0.0;
    double length = 0.0, width = 0.0, height = 0.0;
    double heading = 0.0;
    double radius = 0.0; // footprint bounding circle
};

/// Pinhole camera at (0, 0, 2) looking along yaw, 90 degree horizontal FOV.
inline CameraFrame make_camera(int camera_id, int frame_index, int n_cameras, const SynthSpec &spec)
{
    CameraFrame cam;
    cam.camera_id = camera_id;
    cam.frame_index = frame_index;
    cam.height = spec.feature_height;
    cam.width = spec.feature_width;
    cam.dim = spec.feature_dim;
    const double yaw = 2.0 * std::numbers::pi * camera_id / std::max(1, n_cameras);
    const double c = std::cos(yaw), s = std::sin(yaw);
    // rows: camera right, down, forward expressed in world coordinates
    cam.rotation = {s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0};
    const Vec3 eye{0.0, 0.0, 2.0};
    for (int r = 0; r < 3; ++r)
        cam.translation[static_cast<std::size_t>(r)] =
            -(cam.rotation[static_cast<std::size_t>(3 * r)] * eye[0] +
              cam.rotation[static_cast<std::size_t>(3 * r + 1)] * eye[1] +
              cam.rotation[static_cast<std::size_t>(3 * r + 2)] * eye[2]);
    const double f = 0.5 * spec.feature_width; // tan(45 deg) = 1
    cam.intrinsics = {f, f, 0.5 * spec.feature_width, 0.5 * spec.feature_height};
    cam.features.assign(static_cast<std::size_t>(cam.height) * cam.width * cam.dim, 0.0f);
    return cam;
}

/// Z-buffered label map: each cell holds (camera_id + 1) * onehot(label) of
/// the nearest point projecting into it.
inline void render_labels(CameraFrame &cam, const std::vector<Point3> &points, const std::vector<TruthLabel> &truth)
{
    std::vector<double> depth(static_cast<std::size_t>(cam.height) * cam.width,
                              std::numeric_limits<double>::infinity());
    std::vector<int> label(depth.size(), -1);
    for (std::size_t i = 0; i < points.size(); ++i)
    {
        const auto pc = to_camera(points[i], cam);
        const auto px = project_camera_point(pc, cam);
        if (!px)
            continue;
        const auto cell = static_cast<std::size_t>(std::floor(px->v)) * cam.width +
                          static_cast<std::size_t>(std::floor(px->u));
        if (pc[2] < depth[cell])
        {
            depth[cell] = pc[2];
            label[cell] = static_cast<int>(truth[i].cls);
        }
    }
    const float scale = static_cast<float>(cam.camera_id + 1);
    for (std::size_t cell = 0; cell < label.size(); ++cell)
        if (label[cell] >= 0 && label[cell] < cam.dim)
            cam.features[cell * cam.dim + static_cast<std::size_t>(label[cell])] = scale;
}

} // namespace detail

/// Deterministic synthetic scene with ground-truth point labels. Objects
/// occupy disjoint layout slots so they stay separated for all frames.
inline SyntheticScene generate_scene(std::uint64_t seed, const SynthSpec &spec)
{
    if (spec.frames <= 0 || spec.area_m <= 0.0 || spec.n_agents < 0 || spec.n_clutter < 0 || spec.frame_dt <= 0.0 ||
        spec.cameras < 0 || spec.feature_dim <= 0 || spec.feature_height <= 0 || spec.feature_width <= 0 ||
        spec.clutter_points_per_axis <= 0 || spec.points_per_agent < 0 || spec.ground_points_per_frame < 0)
        throw Error(ErrorCode::BadConfig, "invalid synthetic scene spec");

    Rng rng(mix_seed(seed, 0x5eed));
    const double half = 0.5 * spec.area_m;
    const double duration = spec.frame_dt * (spec.frames - 1);

    constexpr double max_agent_length = 4.5, max_agent_width = 2.0;
    const double agent_radius = 0.5 * std::hypot(max_agent_length, max_agent_width);
    const double blob = (spec.clutter_points_per_axis - 1) * spec.clutter_spacing_m;
    const double clutter_radius = 0.5 * std::hypot(blob, blob);
    const double max_radius = std::max(spec.n_agents > 0 ? agent_radius : 0.0, clutter_radius);
    const double travel = std::max(spec.n_agents > 0 ? spec.agent_speed : 0.0, spec.clutter_speed) * duration;
    const double slot = 2.0 * max_radius + travel + spec.separation_m;

    const int per_axis = static_cast<int>(std::floor(spec.area_m / slot));
    const int n_objects = spec.n_agents + spec.n_clutter;
    if (n_objects > 0 && per_axis * per_axis < n_objects)
        throw Error(ErrorCode::BadConfig, "area " + std::to_string(spec.area_m) + " m fits " +
                                              std::to_string(per_axis * per_axis) + " objects, " +
                                              std::to_string(n_objects) + " requested");

    std::vector<int> slots(static_cast<std::size_t>(std::max(0, per_axis * per_axis)));
    for (std::size_t i = 0; i < slots.size(); ++i)
        slots[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_objects); ++i)
        std::swap(slots[i], slots[i + uniform_index(rng, slots.size() - i)]);

    std::vector<detail::SynthObject> objects;
    for (int k = 0; k < n_objects; ++k)
    {
        detail::SynthObject o;
        o.agent = k < spec.n_agents;
        const int sx = slots[static_cast<std::size_t>(k)] % per_axis;
        const int sy = slots[static_cast<std::size_t>(k)] / per_axis;
        const double slot_cx = (sx + 0.5 - 0.5 * per_axis) * slot;
        const double slot_cy = (sy + 0.5 - 0.5 * per_axis) * slot;
        if (o.agent)
        {
            o.length = uniform_real(rng, 3.0, max_agent_length);
            o.width = uniform_real(rng, 1.6, max_agent_width);
            o.height = uniform_real(rng, 1.4, 1.8);
            o.heading = uniform_real(rng, -std::numbers::pi, std::numbers::pi);
            o.vx = spec.agent_speed * std::cos(o.heading);
            o.vy = spec.agent_speed * std::sin(o.heading);
            o.radius = 0.5 * std::hypot(o.length, o.width);
        }
        else
        {
            o.length = o.width = o.height = blob;
            const double dir = uniform_real(rng, -std::numbers::pi, std::numbers::pi);
            o.vx = spec.clutter_speed * std::cos(dir);
            o.vy = spec.clutter_speed * std::sin(dir);
            o.radius = clutter_radius;
        }
        // centre the trajectory's midpoint in the slot
        o.cx = slot_cx - 0.5 * o.vx * duration;
        o.cy = slot_cy - 0.5 * o.vy * duration;
        objects.push_back(o);
    }

    SyntheticScene out;
    out.bundle.frame_dt = spec.frame_dt;
    out.truth.resize(static_cast<std::size_t>(spec.frames));

    for (int f = 0; f < spec.frames; ++f)
    {
        const double t = f * spec.frame_dt;
        PointCloudFrame frame;
        frame.frame_index = f;
        auto &truth = out.truth[static_cast<std::size_t>(f)];

        std::vector<Box> footprints;
        for (std::size_t k = 0; k < objects.size(); ++k)
        {
            const auto &o = objects[k];
            const double x = o.cx + o.vx * t, y = o.cy + o.vy * t;
            const double base = detail::ground_height(spec, x);
            if (o.agent)
            {
                const auto id = static_cast<std::int64_t>(k);
                Box box;
                box.center = {x, y, base + 0.5 * o.height};
                box.size = {o.length, o.width, o.height};
                box.heading = normalize_heading(o.heading);
                out.bundle.agents.push_back({id, f, box, 1});
                footprints.push_back(box);

                // shell points on the faces, area-weighted, inset 2 cm
                const double inset = 0.02;
                const double hl = 0.5 * o.length - inset, hw = 0.5 * o.width - inset, hh = 0.5 * o.height - inset;
                const double a_top = 4 * hl * hw, a_side = 4 * hl * hh, a_end = 4 * hw * hh;
                const double total = 2 * (a_top + a_side + a_end);
                const double c = std::cos(o.heading), s = std::sin(o.heading);
                for (int p = 0; p < spec.points_per_agent; ++p)
                {
                    const double pick = uniform01(rng) * total;
                    const double u = uniform_real(rng, -1.0, 1.0), v = uniform_real(rng, -1.0, 1.0);
                    const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
                    double lx, ly, lz;
                    if (pick < 2 * a_top)
                        lx = u * hl, ly = v * hw, lz = sign * hh;
                    else if (pick < 2 * (a_top + a_side))
                        lx = u * hl, ly = sign * hw, lz = v * hh;
                    else
                        lx = sign * hl, ly = u * hw, lz = v * hh;
                    frame.points.push_back({static_cast<float>(x + c * lx - s * ly),
                                            static_cast<float>(y + s * lx + c * ly),
                                            static_cast<float>(box.center[2] + lz)});
                    truth.push_back({PointClass::agent, id});
                }
            }
            else
            {
                const int n = spec.clutter_points_per_axis;
                const double z0 = base + 0.5;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        for (int l = 0; l < n; ++l)
                        {
                            frame.points.push_back(
                                {static_cast<float>(x - 0.5 * blob + i * spec.clutter_spacing_m),
                                 static_cast<float>(y - 0.5 * blob + j * spec.clutter_spacing_m),
                                 static_cast<float>(z0 + l * spec.clutter_spacing_m)});
                            truth.push_back({PointClass::open_set, static_cast<std::int64_t>(k)});
                        }
            }
        }

        // ground, leaving agent footprints empty
        int placed = 0;
        while (placed < spec.ground_points_per_frame)
        {
            const double x = uniform_real(rng, -half, half), y = uniform_real(rng, -half, half);
            const Point3 p{static_cast<float>(x), static_cast<float>(y),
                           static_cast<float>(detail::ground_height(spec, x))};
            bool covered = false;
            for (const auto &fp : footprints)
            {
                Box grown = fp;
                grown.size[0] += 0.1;
                grown.size[1] += 0.1;
                grown.size[2] += 1.0;
                if (box_contains(grown, p))
                {
                    covered = true;
                    break;
                }
            }
            if (covered)
                continue;
            frame.points.push_back(p);
            truth.push_back({PointClass::ground, -1});
            ++placed;
        }

        for (int c = 0; c < spec.cameras; ++c)
        {
            auto cam = detail::make_camera(c, f, spec.cameras, spec);
            detail::render_labels(cam, frame.points, truth);
            out.bundle.cameras.push_back(std::move(cam));
        }
        out.bundle.frames.push_back(std::move(frame));
    }
    return out;
}

struct Ablation
{
    SceneBundle bundle;
    std::vector<std::int64_t> dropped; // ascending track ids
};

/// Removes floor(ratio * n) agent tracks, all frames, chosen uniformly by
/// seed. Points are left untouched.
inline Ablation drop_agents(const SceneBundle &bundle, double ratio, std::uint64_t seed)
{
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw Error(ErrorCode::BadConfig, "drop ratio must lie in [0, 1]");
    std::vector<std::int64_t> ids;
    for (const auto &a : bundle.agents)
        ids.push_back(a.track_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ids.size()) + 1e-9));
    Rng rng(mix_seed(seed, 0xab1a7e));
    for (std::size_t i = 0; i < k; ++i)
        std::swap(ids[i], ids[i + uniform_index(rng, ids.size() - i)]);
    Ablation out;
    out.dropped.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.dropped.begin(), out.dropped.end());

    out.bundle = bundle;
    std::erase_if(out.bundle.agents, [&](const AgentBox &a) {
        return std::binary_search(out.dropped.begin(), out.dropped.end(), a.track_id);
    });
    return out;
}

struct BenchRow
{
    std::string stage;
    int repetitions = 0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchReport
{
    std::vector<BenchRow> rows;
    std::vector<std::array<double, 6>> samples;

    std::string text() const
    {
        std::ostringstream os;
        os << "stage      reps    p50_ms    p95_ms\n";
        for (const auto &r : rows)
        {
            char line[96];
            std::snprintf(line, sizeof line, "%-9s %5d %9.3f %9.3f\n", r.stage.c_str(), r.repetitions, r.p50_ms,
                          r.p95_ms);
            os << line;
        }
        return os.str();
    }

    std::string csv() const
    {
        std::ostringstream os;
        os << "stage,repetitions,p50_ms,p95_ms\n";
        for (const auto &r : rows)
            os << r.stage << ',' << r.repetitions << ',' << r.p50_ms << ',' << r.p95_ms << '\n';
        return os.str();
    }
};

/// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<double> v, double p)
{
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline BenchReport bench_tokenize(const SceneBundle &bundle, const PipelineConfig &config, int repetitions)
{
    BenchReport report;
    for (int r = 0; r < repetitions; ++r)
        report.samples.push_back(tokenize(bundle, config).stage_ms);
    std::vector<double> total;
    for (const auto &s : report.samples)
    {
        double sum = 0.0;
        for (double v : s)
            sum += v;
        total.push_back(sum);
    }
    for (std::size_t k = 0; k < kStageNames.size(); ++k)
    {
        std::vector<double> col;
        for (const auto &s : report.samples)
            col.push_back(s[k]);
        report.rows.push_back({kStageNames[k], repetitions, percentile(col, 50), percentile(col, 95)});
    }
    report.rows.push_back({"total", repetitions, percentile(total, 50), percentile(total, 95)});
    return report;
}

/// A pipeline config matching a synthetic spec's frame count and feature
/// dimension.
inline PipelineConfig config_for(const SynthSpec &spec)
{
    PipelineConfig c;
    c.frames = spec.frames;
    c.dim = spec.feature_dim;
    return c;
}

} // namespace most

#endif // MOST_HARNESS_HPP
