#ifndef MOST_COMPACT_HPP
#define MOST_COMPACT_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "most/error.hpp"
#include "most/project.hpp"
#include "most/rng.hpp"
#include "most/types.hpp"

namespace most
{

/// Uniform sample of `budget` indices out of [0, pool) without replacement,
/// returned in ascending order. Keeps everything when pool <= budget.
inline std::vector<std::size_t> downsample(std::size_t pool, std::size_t budget, std::uint64_t seed)
{
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (pool <= budget)
        return idx;
    Rng rng(seed);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < budget; ++i)
    {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, pool - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(budget);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// A point of the raw bundle together with its token.
struct PointRef
{
    std::int32_t frame = 0;
    std::uint32_t index = 0;
    std::int32_t token = 0;

    friend bool operator==(const PointRef &, const PointRef &) = default;
};

struct ClassPools
{
    std::vector<PointRef> agent;
    std::vector<PointRef> open_set;
    std::vector<PointRef> ground;

    std::size_t size() const { return agent.size() + open_set.size() + ground.size(); }

    /// agent, open-set, ground: the row order of the tokenized scene
    std::vector<PointRef> concatenated() const
    {
        std::vector<PointRef> out;
        out.reserve(size());
        out.insert(out.end(), agent.begin(), agent.end());
        out.insert(out.end(), open_set.begin(), open_set.end());
        out.insert(out.end(), ground.begin(), ground.end());
        return out;
    }
};

/// Per-class cross-frame subsampling. Each pool is already merged across
/// frames, so per-frame counts come out variable.
inline ClassPools downsample_pools(const ClassPools &pools, const PointBudget &budget, std::uint64_t seed)
{
    auto pick = [](const std::vector<PointRef> &pool, int n, std::uint64_t s) {
        std::vector<PointRef> out;
        for (auto i : downsample(pool.size(), static_cast<std::size_t>(n), s))
            out.push_back(pool[i]);
        return out;
    };
    ClassPools out;
    out.agent = pick(pools.agent, budget.agent, mix_seed(seed, 1));
    out.open_set = pick(pools.open_set, budget.open_set, mix_seed(seed, 2));
    out.ground = pick(pools.ground, budget.ground, mix_seed(seed, 3));
    return out;
}

/// Assembles the fixed-size model input. `features` holds one row per
/// sampled point in concatenated (agent, open-set, ground) order.
inline TokenizedScene build_tokenized_scene(const std::vector<SceneElement> &elements, const ClassPools &sampled,
                                            std::span<const PointCloudFrame> frames, const PointFeatures &features,
                                            const PipelineConfig &config)
{
    const auto &budget = config.points;
    if (sampled.agent.size() > static_cast<std::size_t>(budget.agent) ||
        sampled.open_set.size() > static_cast<std::size_t>(budget.open_set) ||
        sampled.ground.size() > static_cast<std::size_t>(budget.ground))
        throw Error(ErrorCode::BudgetMismatch, "a class pool exceeds its point budget");
    if (budget.sum() != config.total_points)
        throw Error(ErrorCode::BudgetMismatch, "point budgets sum to " + std::to_string(budget.sum()) +
                                                   ", expected " + std::to_string(config.total_points));

    const auto rows = sampled.concatenated();
    const int dim = config.dim;
    if (features.dim != dim || features.valid.size() != rows.size() ||
        features.values.size() != rows.size() * static_cast<std::size_t>(dim))
        throw Error(ErrorCode::ShapeMismatch, "point features do not align with the sampled rows");

    const int T = config.frames;
    const auto n_pts = static_cast<std::size_t>(config.total_points);
    const auto n_elem = elements.size();

    TokenizedScene scene;
    scene.frames = T;
    scene.dim = dim;
    scene.xyz.assign(n_pts, Point3{0.0f, 0.0f, 0.0f});
    scene.ind.assign(n_pts, {-1, -1});
    scene.point_valid.assign(n_pts, 0);
    scene.features.assign(n_pts * static_cast<std::size_t>(dim), 0.0f);
    scene.feature_valid.assign(n_pts, 0);

    for (std::size_t r = 0; r < rows.size(); ++r)
    {
        const auto &ref = rows[r];
        if (ref.token < 0 || static_cast<std::size_t>(ref.token) >= n_elem || ref.frame < 0 || ref.frame >= T)
            throw Error(ErrorCode::ShapeMismatch, "row " + std::to_string(r) + " references token " +
                                                      std::to_string(ref.token) + " frame " +
                                                      std::to_string(ref.frame));
        scene.xyz[r] = frames[static_cast<std::size_t>(ref.frame)].points[ref.index];
        scene.ind[r] = {ref.frame, ref.token};
        scene.point_valid[r] = 1;
        scene.feature_valid[r] = features.valid[r];
        if (features.valid[r])
        {
            const auto src = features.row(r);
            std::copy(src.begin(), src.end(), scene.features.begin() + static_cast<std::ptrdiff_t>(r * dim));
        }
    }

    scene.boxes.assign(n_elem * static_cast<std::size_t>(T) * kBoxWidth, 0.0);
    scene.elem_valid.assign(n_elem * static_cast<std::size_t>(T), 0);
    for (std::size_t e = 0; e < n_elem; ++e)
    {
        const auto &el = elements[e];
        if (el.token_id != static_cast<std::int32_t>(e))
            throw Error(ErrorCode::ShapeMismatch, "elements must be ordered by token id");
        if (el.boxes.size() != static_cast<std::size_t>(T) || el.frame_valid.size() != static_cast<std::size_t>(T))
            throw Error(ErrorCode::ShapeMismatch, "element " + std::to_string(e) + " has wrong frame count");
        for (int t = 0; t < T; ++t)
        {
            const auto slot = e * static_cast<std::size_t>(T) + static_cast<std::size_t>(t);
            if (!el.frame_valid[static_cast<std::size_t>(t)])
                continue;
            scene.elem_valid[slot] = 1;
            std::copy(el.boxes[static_cast<std::size_t>(t)].begin(), el.boxes[static_cast<std::size_t>(t)].end(),
                      scene.boxes.begin() + static_cast<std::ptrdiff_t>(slot * kBoxWidth));
        }
    }
    scene.elements = elements;

    if (scene.row_count() != n_pts)
        throw Error(ErrorCode::BudgetMismatch, "row count differs from total_points");
    return scene;
}

/// Per-element, per-frame pooled image features.
struct ImageFeatures
{
    int elements = 0;
    int frames = 0;
    int dim = 0;
    std::vector<double> values;      // elements x frames x dim
    std::vector<std::uint8_t> valid; // elements x frames
};

/// Mean of valid point features per (token, frame) cell. Open-set elements
/// are further averaged over their valid frames and the result is
/// broadcast to every frame slot.
inline ImageFeatures pool_image_features(std::span<const float> features, std::span<const std::uint8_t> feature_valid,
                                         std::span<const std::array<std::int32_t, 2>> ind,
                                         std::span<const std::uint8_t> point_valid,
                                         std::span<const ElementKind> kinds, int frames, int dim)
{
    const auto n_elem = kinds.size();
    const auto T = static_cast<std::size_t>(frames);
    const auto D = static_cast<std::size_t>(dim);
    if (feature_valid.size() != ind.size() || point_valid.size() != ind.size() || features.size() != ind.size() * D)
        throw Error(ErrorCode::ShapeMismatch, "point feature arrays disagree in length");

    ImageFeatures out;
    out.elements = static_cast<int>(n_elem);
    out.frames = frames;
    out.dim = dim;
    out.values.assign(n_elem * T * D, 0.0);
    out.valid.assign(n_elem * T, 0);
    std::vector<std::size_t> count(n_elem * T, 0);

    for (std::size_t r = 0; r < ind.size(); ++r)
    {
        if (!point_valid[r] || !feature_valid[r])
            continue;
        const auto [frame, token] = ind[r];
        if (frame < 0 || static_cast<std::size_t>(frame) >= T || token < 0 || static_cast<std::size_t>(token) >= n_elem)
            throw Error(ErrorCode::ShapeMismatch, "index row " + std::to_string(r) + " out of range");
        const auto cell = static_cast<std::size_t>(token) * T + static_cast<std::size_t>(frame);
        ++count[cell];
        double *dst = out.values.data() + cell * D;
        const float *src = features.data() + r * D;
        for (std::size_t d = 0; d < D; ++d)
            dst[d] += src[d];
    }
    for (std::size_t cell = 0; cell < n_elem * T; ++cell)
    {
        if (count[cell] == 0)
            continue;
        out.valid[cell] = 1;
        const double inv = 1.0 / static_cast<double>(count[cell]);
        double *dst = out.values.data() + cell * D;
        for (std::size_t d = 0; d < D; ++d)
            dst[d] *= inv;
    }

    std::vector<double> avg(D);
    for (std::size_t e = 0; e < n_elem; ++e)
    {
        if (kinds[e] != ElementKind::open_set)
            continue;
        std::fill(avg.begin(), avg.end(), 0.0);
        std::size_t n_valid = 0;
        for (std::size_t t = 0; t < T; ++t)
        {
            const auto cell = e * T + t;
            if (!out.valid[cell])
                continue;
            ++n_valid;
            for (std::size_t d = 0; d < D; ++d)
                avg[d] += out.values[cell * D + d];
        }
        if (n_valid == 0)
            continue;
        for (auto &v : avg)
            v /= static_cast<double>(n_valid);
        for (std::size_t t = 0; t < T; ++t)
        {
            const auto cell = e * T + t;
            std::copy(avg.begin(), avg.end(), out.values.begin() + static_cast<std::ptrdiff_t>(cell * D));
            out.valid[cell] = 1;
        }
    }
    return out;
}

inline ImageFeatures pool_image_features(const TokenizedScene &scene)
{
    std::vector<ElementKind> kinds;
    kinds.reserve(scene.elements.size());
    for (const auto &e : scene.elements)
        kinds.push_back(e.kind);
    return pool_image_features(scene.features, scene.feature_valid, scene.ind, scene.point_valid, kinds,
                               scene.frames, scene.dim);
}

} // namespace most

#endif // MOST_COMPACT_HPP
