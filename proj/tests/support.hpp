#ifndef MOST_TESTS_SUPPORT_HPP
#define MOST_TESTS_SUPPORT_HPP

#include <cstdint>
#include <vector>

#include "most/most.hpp"

namespace support
{

/// Random fusion inputs with some masked slots and invalid point rows.
inline most::FusionInputs<double> toy_inputs(int E, int T, int D, int rows, std::uint64_t seed,
                                             double mask_rate = 0.25)
{
    most::Rng rng(most::mix_seed(seed, 77));
    most::FusionInputs<double> in;
    in.elements = E;
    in.frames = T;
    in.points.resize(rows, 3);
    for (int r = 0; r < rows; ++r)
    {
        for (int c = 0; c < 3; ++c)
            in.points(r, c) = most::uniform_real(rng, -3.0, 3.0);
        in.ind.push_back({static_cast<std::int32_t>(most::uniform_index(rng, static_cast<std::uint64_t>(T))),
                          static_cast<std::int32_t>(most::uniform_index(rng, static_cast<std::uint64_t>(E)))});
        in.point_valid.push_back(most::uniform01(rng) < 0.9 ? 1 : 0);
    }
    in.boxes.resize(E * T, 7);
    in.image.resize(E * T, D);
    in.mask.assign(static_cast<std::size_t>(E * T), 1);
    for (int s = 0; s < E * T; ++s)
    {
        in.mask[static_cast<std::size_t>(s)] = most::uniform01(rng) < mask_rate ? 0 : 1;
        for (int c = 0; c < 7; ++c)
            in.boxes(s, c) = in.mask[static_cast<std::size_t>(s)] ? most::uniform_real(rng, -2.0, 2.0) : 0.0;
        for (int d = 0; d < D; ++d)
            in.image(s, d) = most::uniform_real(rng, -1.0, 1.0);
    }
    return in;
}

inline most::FusionConfig toy_config(int T, int D, int H = 6, int heads = 2, bool attention = true)
{
    most::FusionConfig c;
    c.frames = T;
    c.dim = D;
    c.hidden = H;
    c.heads = heads;
    c.attention = attention;
    return c;
}

/// Random per-point features for the pooling oracle; invalid rows are zero.
struct PoolCase
{
    int elements = 0, frames = 0, dim = 0;
    std::vector<float> features;
    std::vector<std::uint8_t> feature_valid, point_valid;
    std::vector<std::array<std::int32_t, 2>> ind;
    std::vector<most::ElementKind> kinds;
};

inline PoolCase random_pool_case(std::uint64_t seed)
{
    most::Rng rng(most::mix_seed(seed, 99));
    PoolCase c;
    c.elements = 1 + static_cast<int>(most::uniform_index(rng, 12));
    c.frames = 1 + static_cast<int>(most::uniform_index(rng, 5));
    c.dim = 1 + static_cast<int>(most::uniform_index(rng, 8));
    const int rows = static_cast<int>(most::uniform_index(rng, 400));
    for (int e = 0; e < c.elements; ++e)
        c.kinds.push_back(static_cast<most::ElementKind>(most::uniform_index(rng, 3)));
    for (int r = 0; r < rows; ++r)
    {
        const bool pad = most::uniform01(rng) < 0.1;
        const bool valid = !pad && most::uniform01(rng) < 0.8;
        c.point_valid.push_back(pad ? 0 : 1);
        c.feature_valid.push_back(valid ? 1 : 0);
        c.ind.push_back(pad ? std::array<std::int32_t, 2>{-1, -1}
                            : std::array<std::int32_t, 2>{
                                  static_cast<std::int32_t>(most::uniform_index(rng, static_cast<std::uint64_t>(c.frames))),
                                  static_cast<std::int32_t>(
                                      most::uniform_index(rng, static_cast<std::uint64_t>(c.elements)))});
        for (int d = 0; d < c.dim; ++d)
            c.features.push_back(valid ? static_cast<float>(most::uniform_real(rng, -10.0, 10.0)) : 0.0f);
    }
    return c;
}

} // namespace support

#endif // MOST_TESTS_SUPPORT_HPP
