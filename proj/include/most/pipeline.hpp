#ifndef MOST_PIPELINE_HPP
#define MOST_PIPELINE_HPP

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "most/compact.hpp"
#include "most/decompose.hpp"
#include "most/fuse.hpp"
#include "most/ground.hpp"
#include "most/project.hpp"
#include "most/track.hpp"
#include "most/types.hpp"

namespace most
{

inline constexpr std::array<const char *, 6> kStageNames = {"validate", "ground",  "decompose",
                                                            "track",    "project", "compact"};

enum Stage : std::size_t
{
    kValidate = 0,
    kGround,
    kDecompose,
    kTrack,
    kProject,
    kCompact,
};

struct TokenizeResult
{
    TokenizedScene scene;
    ImageFeatures image;
    std::optional<GroundPlane> plane;
    PointPartition partition;
    std::vector<std::vector<std::int32_t>> point_token; // per frame, per point; -1 = discarded
    TrackingResult tracking;
    std::vector<std::string> warnings;
    std::array<double, 6> stage_ms{};

    std::size_t count(ElementKind kind) const
    {
        std::size_t n = 0;
        for (const auto &e : scene.elements)
            n += e.kind == kind ? 1 : 0;
        return n;
    }
};

namespace detail
{

class StageClock
{
  public:
    explicit StageClock(double &slot) : slot_(slot), start_(std::chrono::steady_clock::now()) {}
    ~StageClock()
    {
        slot_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }
    StageClock(const StageClock &) = delete;
    StageClock &operator=(const StageClock &) = delete;

  private:
    double &slot_;
    std::chrono::steady_clock::time_point start_;
};

} // namespace detail

/// Runs decomposition, tracking, compaction and feature pooling on a
/// validated bundle. Deterministic for a fixed config seed.
inline TokenizeResult tokenize(const SceneBundle &bundle, const PipelineConfig &config)
{
    TokenizeResult res;
    const int T = config.frames;

    {
        detail::StageClock clock(res.stage_ms[kValidate]);
        validate_config(config);
        validate_bundle(bundle, config);
    }

    // -- ground plane over the merged cloud
    {
        detail::StageClock clock(res.stage_ms[kGround]);
        std::vector<Point3> merged;
        merged.reserve(bundle.point_count());
        for (const auto &f : bundle.frames)
            merged.insert(merged.end(), f.points.begin(), f.points.end());
        if (merged.size() >= 3)
        {
            try
            {
                res.plane = fit_ground_plane(merged, config.ransac, mix_seed(config.seed, 10));
            }
            catch (const Error &e)
            {
                if (e.code() != ErrorCode::DegenerateInput)
                    throw;
                res.warnings.push_back(std::string("no ground plane: ") + e.what());
            }
        }
    }

    // -- per-frame decomposition: agents, then ground, then open-set clusters
    std::vector<std::vector<Detection>> detections(static_cast<std::size_t>(T));
    std::vector<Point3> ground_points;
    std::vector<std::pair<std::int32_t, std::uint32_t>> ground_refs;
    {
        detail::StageClock clock(res.stage_ms[kDecompose]);
        res.partition.labels.resize(static_cast<std::size_t>(T));
        res.partition.clusters.resize(static_cast<std::size_t>(T));

        std::vector<std::vector<AgentBox>> boxes_by_frame(static_cast<std::size_t>(T));
        for (const auto &a : bundle.agents)
            boxes_by_frame[static_cast<std::size_t>(a.frame_index)].push_back(a);

        for (int f = 0; f < T; ++f)
        {
            const auto &pts = bundle.frames[static_cast<std::size_t>(f)].points;
            auto &labels = res.partition.labels[static_cast<std::size_t>(f)];
            labels.assign(pts.size(), PointLabel{});

            const auto &boxes = boxes_by_frame[static_cast<std::size_t>(f)];
            const auto owner = extract_agent_elements(pts, boxes);

            std::vector<Point3> residual;
            std::vector<std::uint32_t> residual_idx;
            for (std::uint32_t i = 0; i < pts.size(); ++i)
            {
                if (owner[i] >= 0)
                {
                    labels[i] = {PointClass::agent, boxes[static_cast<std::size_t>(owner[i])].track_id};
                }
                else if (res.plane &&
                         std::abs(res.plane->signed_distance(pts[i])) <= config.ransac.inlier_threshold_m)
                {
                    labels[i] = {PointClass::ground, -1};
                    ground_points.push_back(pts[i]);
                    ground_refs.emplace_back(f, i);
                }
                else
                {
                    residual.push_back(pts[i]);
                    residual_idx.push_back(i);
                }
            }

            auto clustering = cluster_open_set(residual, config.cluster);
            for (std::size_t r = 0; r < residual.size(); ++r)
                if (clustering.label[r] >= 0)
                    labels[residual_idx[r]] = {PointClass::open_set, clustering.label[r]};

            auto &dets = detections[static_cast<std::size_t>(f)];
            std::vector<Point3> members;
            for (const auto &cluster : clustering.members)
            {
                members.clear();
                for (auto m : cluster)
                    members.push_back(residual[m]);
                dets.push_back({fit_tight_box(members), cluster.size()});
            }
            // keep the inventory in frame-point indexing
            for (auto &cluster : clustering.members)
                for (auto &m : cluster)
                    m = residual_idx[m];
            Clustering stored;
            stored.members = std::move(clustering.members);
            stored.label.assign(pts.size(), -1);
            for (std::size_t c = 0; c < stored.members.size(); ++c)
                for (auto m : stored.members[c])
                    stored.label[m] = static_cast<std::int32_t>(c);
            res.partition.clusters[static_cast<std::size_t>(f)] = std::move(stored);
        }
    }

    // -- open-set tracking
    {
        detail::StageClock clock(res.stage_ms[kTrack]);
        res.tracking = track_open_set(detections, bundle.frame_dt, config.track);
    }

    ClassPools sampled;
    std::vector<SceneElement> elements;
    {
        detail::StageClock clock(res.stage_ms[kCompact]);

        // ground aggregation happens on the merged multi-frame ground points
        const auto tiling =
            tile_ground(ground_points, config.tile_size_m, static_cast<std::size_t>(config.elements.ground), T);
        if (tiling.occupied_cells > tiling.cells.size())
            res.warnings.push_back("ground budget " + std::to_string(config.elements.ground) + " exceeded; kept " +
                                   std::to_string(tiling.cells.size()) + " of " +
                                   std::to_string(tiling.occupied_cells) + " tiles");

        std::map<std::int64_t, AgentCandidate> agents;
        for (const auto &a : bundle.agents)
        {
            auto &c = agents[a.track_id];
            if (c.boxes.empty())
            {
                c.track_id = a.track_id;
                c.boxes.assign(static_cast<std::size_t>(T), BoxRow{});
                c.frame_valid.assign(static_cast<std::size_t>(T), 0);
            }
            c.boxes[static_cast<std::size_t>(a.frame_index)] = a.box.row();
            c.frame_valid[static_cast<std::size_t>(a.frame_index)] = 1;
        }
        std::vector<AgentCandidate> agent_list;
        for (auto &[id, c] : agents)
            agent_list.push_back(std::move(c));

        std::vector<OpenSetCandidate> open_list;
        for (const auto &t : res.tracking.tracks)
            open_list.push_back({t.boxes, t.frame_valid, t.point_count});

        auto assignment = assign_token_ids(agent_list, open_list, tiling.elements, config.elements);
        for (auto &w : assignment.warnings)
            res.warnings.push_back(std::move(w));
        elements = std::move(assignment.elements);

        for (std::size_t g = 0; g < ground_refs.size(); ++g)
        {
            const auto [f, i] = ground_refs[g];
            auto &label = res.partition.labels[static_cast<std::size_t>(f)][i];
            const auto tile = tiling.point_tile[g];
            if (tile < 0 || assignment.ground_token[static_cast<std::size_t>(tile)] < 0)
                label = {PointClass::discarded, -1};
            else
                label.source = tile;
        }

        res.point_token.resize(static_cast<std::size_t>(T));
        ClassPools pools;
        for (int f = 0; f < T; ++f)
        {
            auto &labels = res.partition.labels[static_cast<std::size_t>(f)];
            auto &tokens = res.point_token[static_cast<std::size_t>(f)];
            tokens.assign(labels.size(), -1);
            for (std::uint32_t i = 0; i < labels.size(); ++i)
            {
                auto &label = labels[i];
                std::int32_t token = -1;
                switch (label.cls)
                {
                case PointClass::agent: {
                    const auto it = assignment.agent_token.find(label.source);
                    token = it == assignment.agent_token.end() ? -1 : it->second;
                    break;
                }
                case PointClass::open_set: {
                    const auto track = res.tracking.detection_track[static_cast<std::size_t>(f)]
                                                                   [static_cast<std::size_t>(label.source)];
                    token = assignment.open_set_token[static_cast<std::size_t>(track)];
                    break;
                }
                case PointClass::ground:
                    token = assignment.ground_token[static_cast<std::size_t>(label.source)];
                    break;
                case PointClass::discarded:
                    break;
                }
                if (token < 0)
                {
                    label = {PointClass::discarded, -1};
                    continue;
                }
                tokens[i] = token;
                const PointRef ref{f, i, token};
                if (label.cls == PointClass::agent)
                    pools.agent.push_back(ref);
                else if (label.cls == PointClass::open_set)
                    pools.open_set.push_back(ref);
                else
                    pools.ground.push_back(ref);
            }
        }
        sampled = downsample_pools(pools, config.points, mix_seed(config.seed, 20));
    }

    // -- image features for the sampled points only
    PointFeatures features;
    const auto rows = sampled.concatenated();
    {
        detail::StageClock clock(res.stage_ms[kProject]);
        features.dim = config.dim;
        features.values.assign(rows.size() * static_cast<std::size_t>(config.dim), 0.0f);
        features.valid.assign(rows.size(), 0);
        std::vector<std::vector<const CameraFrame *>> cams(static_cast<std::size_t>(T));
        for (int f = 0; f < T; ++f)
            cams[static_cast<std::size_t>(f)] = detail::cameras_for_frame(bundle.cameras, f, config.dim);
        std::vector<float> scratch;
        for (std::size_t r = 0; r < rows.size(); ++r)
        {
            const auto &ref = rows[r];
            const auto &p = bundle.frames[static_cast<std::size_t>(ref.frame)].points[ref.index];
            std::span<float> out(features.values.data() + r * static_cast<std::size_t>(config.dim),
                                 static_cast<std::size_t>(config.dim));
            detail::features_for_point(p, cams[static_cast<std::size_t>(ref.frame)], config.projection, out,
                                       features.valid[r], scratch);
        }
    }

    {
        detail::StageClock clock(res.stage_ms[kCompact]);
        res.scene = build_tokenized_scene(elements, sampled, bundle.frames, features, config);
        res.image = pool_image_features(res.scene);
    }
    return res;
}

/// Runs the fusion network on a tokenized scene.
template <typename S>
SceneTokens embed(const TokenizedScene &scene, const ImageFeatures &image, const FusionParams<S> &params)
{
    const auto inputs = make_fusion_inputs<S>(scene, image);
    const Mat<S> out = scene_forward(params, inputs);
    SceneTokens tokens;
    tokens.dim = static_cast<int>(out.cols());
    tokens.frames = scene.frames;
    tokens.embeddings.resize(static_cast<std::size_t>(out.size()));
    for (Eigen::Index i = 0; i < out.size(); ++i)
        tokens.embeddings[static_cast<std::size_t>(i)] = static_cast<float>(out.data()[i]);
    tokens.elements = scene.elements;
    return tokens;
}

} // namespace most

#endif // MOST_PIPELINE_HPP
