#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "most/ground.hpp"
#include "oracles/oracles.hpp"

using namespace most;

namespace
{

std::vector<Point3> sloped_with_outliers(std::uint64_t seed, std::size_t n, double outlier_rate,
                                         std::vector<Point3> *inliers = nullptr)
{
    Rng rng(seed);
    std::vector<Point3> pts;
    for (std::size_t i = 0; i < n; ++i)
    {
        const double x = uniform_real(rng, -20, 20), y = uniform_real(rng, -20, 20);
        Point3 p{static_cast<float>(x), static_cast<float>(y), static_cast<float>(0.1 * x)};
        if (uniform01(rng) < outlier_rate)
            p[2] += 5.0f;
        else if (inliers)
            inliers->push_back(p);
        pts.push_back(p);
    }
    return pts;
}

} // namespace

TEST(FitGroundPlane, FlatCloudGivesUpNormal)
{
    std::vector<Point3> pts;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j)
            pts.push_back({static_cast<float>(i), static_cast<float>(j * 1.5), 0.0f});
    const auto plane = fit_ground_plane(pts, {}, 1);
    EXPECT_NEAR(plane.normal[0], 0.0, 1e-12);
    EXPECT_NEAR(plane.normal[1], 0.0, 1e-12);
    EXPECT_NEAR(plane.normal[2], 1.0, 1e-12);
    EXPECT_NEAR(plane.offset, 0.0, 1e-12);
    EXPECT_EQ(plane.inlier_count, 100u);
}

TEST(FitGroundPlane, MatchesLeastSquaresOnTrueInliersWithTenPercentOutliers)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        std::vector<Point3> inliers;
        const auto pts = sloped_with_outliers(seed, 2000, 0.1, &inliers);
        const auto plane = fit_ground_plane(pts, {}, seed);
        const auto ref = oracle::ls_plane(inliers);
        const Eigen::Vector3d n(plane.normal[0], plane.normal[1], plane.normal[2]);
        EXPECT_LT(oracle::angle_between(n, ref.normal), 1e-3) << "seed " << seed;
        EXPECT_NEAR(n.norm(), 1.0, 1e-9);
        EXPECT_GE(n.z(), 0.0);
    }
}

TEST(FitGroundPlane, DegenerateInputs)
{
    const std::vector<Point3> two{{0, 0, 0}, {1, 1, 1}};
    EXPECT_THROW(fit_ground_plane(two, {}, 0), Error);
    std::vector<Point3> line;
    for (int i = 0; i < 20; ++i)
        line.push_back({static_cast<float>(i), static_cast<float>(2 * i), 0.0f});
    try
    {
        fit_ground_plane(line, {}, 0);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
    }
}

TEST(FitGroundPlane, InvariantToPointOrder)
{
    auto pts = sloped_with_outliers(3, 500, 0.2);
    const auto a = fit_ground_plane(pts, {}, 11);
    Rng rng(4);
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto b = fit_ground_plane(pts, {}, 11);
    EXPECT_EQ(a.normal, b.normal);
    EXPECT_EQ(a.offset, b.offset);
    EXPECT_EQ(a.inlier_count, b.inlier_count);
}

TEST(SegmentGround, ThresholdExamples)
{
    GroundPlane plane;
    plane.normal = {0, 0, 1};
    plane.offset = 0;
    const std::vector<Point3> pts{{1, 2, 0}, {1, 2, 0.3f}, {0, 0, -0.15f}};
    const auto mask = segment_ground(pts, plane, 0.2);
    EXPECT_EQ(mask, (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(SegmentGround, MatchesDirectDistance)
{
    Rng rng(9);
    GroundPlane plane;
    Eigen::Vector3d n(0.1, -0.2, 1.0);
    n.normalize();
    plane.normal = {n.x(), n.y(), n.z()};
    plane.offset = 0.3;
    std::vector<Point3> pts;
    for (int i = 0; i < 5000; ++i)
        pts.push_back({static_cast<float>(uniform_real(rng, -10, 10)), static_cast<float>(uniform_real(rng, -10, 10)),
                       static_cast<float>(uniform_real(rng, -3, 3))});
    const auto mask = segment_ground(pts, plane, 0.25);
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
        const double d = n.x() * pts[i][0] + n.y() * pts[i][1] + n.z() * pts[i][2] + 0.3;
        EXPECT_EQ(mask[i], std::abs(d) <= 0.25 ? 1 : 0);
    }
}

TEST(TileGround, SinglePointLandsInCellCenter)
{
    const std::vector<Point3> pts{{3, 4, 0}};
    const auto tiles = tile_ground(pts, 10.0, 256, 11);
    ASSERT_EQ(tiles.elements.size(), 1u);
    const auto &e = tiles.elements[0];
    EXPECT_EQ(e.kind, ElementKind::ground);
    ASSERT_EQ(e.boxes.size(), 11u);
    for (const auto &row : e.boxes)
        EXPECT_EQ(row, (BoxRow{5, 5, 0, 0, 0, 0, 0}));
    EXPECT_EQ(e.frame_valid, std::vector<std::uint8_t>(11, 1));
}

TEST(TileGround, EnumeratesOccupiedCells)
{
    std::vector<Point3> pts;
    for (double x = 0.0; x < 25.0; x += 0.5)
        for (double y = 0.0; y < 5.0; y += 1.0)
            pts.push_back({static_cast<float>(x), static_cast<float>(y), 0.0f});
    const auto tiles = tile_ground(pts, 10.0, 256, 1);
    std::set<std::pair<std::int64_t, std::int64_t>> brute;
    for (const auto &p : pts)
        brute.insert({static_cast<std::int64_t>(std::floor(p[0] / 10.0)),
                      static_cast<std::int64_t>(std::floor(p[1] / 10.0))});
    ASSERT_EQ(tiles.cells.size(), 3u);
    EXPECT_EQ(brute.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
    {
        EXPECT_EQ(tiles.cells[i].ix, static_cast<std::int64_t>(i));
        EXPECT_DOUBLE_EQ(tiles.elements[i].boxes[0][0], 10.0 * i + 5.0);
    }
}

TEST(TileGround, EmptyInput)
{
    const auto tiles = tile_ground({}, 10.0, 256, 11);
    EXPECT_TRUE(tiles.elements.empty());
    EXPECT_EQ(tiles.occupied_cells, 0u);
}

TEST(TileGround, TilesAreDisjointAndCoverAllPoints)
{
    Rng rng(2);
    std::vector<Point3> pts;
    for (int i = 0; i < 3000; ++i)
        pts.push_back({static_cast<float>(uniform_real(rng, -55, 55)), static_cast<float>(uniform_real(rng, -55, 55)),
                       static_cast<float>(uniform_real(rng, -0.1, 0.1))});
    const auto tiles = tile_ground(pts, 10.0, 1000, 2);
    std::vector<std::size_t> counted(tiles.cells.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
        const auto t = tiles.point_tile[i];
        ASSERT_GE(t, 0);
        const auto &cell = tiles.cells[static_cast<std::size_t>(t)];
        EXPECT_EQ(cell.ix, static_cast<std::int64_t>(std::floor(pts[i][0] / 10.0)));
        EXPECT_EQ(cell.iy, static_cast<std::int64_t>(std::floor(pts[i][1] / 10.0)));
        ++counted[static_cast<std::size_t>(t)];
    }
    std::size_t total = 0;
    for (std::size_t c = 0; c < counted.size(); ++c)
    {
        EXPECT_EQ(counted[c], tiles.cells[c].count);
        total += counted[c];
    }
    EXPECT_EQ(total, pts.size());
}

TEST(TileGround, GridEquivarianceUnderTileMultipleShift)
{
    Rng rng(6);
    std::vector<Point3> pts, shifted;
    for (int i = 0; i < 500; ++i)
    {
        // quarter-metre lattice keeps the shift exact in float
        const float x = static_cast<float>(uniform_index(rng, 160)) * 0.25f - 20.0f;
        const float y = static_cast<float>(uniform_index(rng, 160)) * 0.25f - 20.0f;
        pts.push_back({x, y, 0.0f});
        shifted.push_back({x + 30.0f, y - 20.0f, 0.0f});
    }
    const auto a = tile_ground(pts, 10.0, 1000, 1);
    const auto b = tile_ground(shifted, 10.0, 1000, 1);
    ASSERT_EQ(a.cells.size(), b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i)
    {
        EXPECT_EQ(b.cells[i].ix, a.cells[i].ix + 3);
        EXPECT_EQ(b.cells[i].iy, a.cells[i].iy - 2);
        EXPECT_EQ(b.cells[i].count, a.cells[i].count);
    }
}

TEST(TileGround, OverflowKeepsMostPopulatedThenLexicographic)
{
    std::vector<Point3> pts;
    auto add = [&](float x, float y, int n) {
        for (int i = 0; i < n; ++i)
            pts.push_back({x, y, 0.0f});
    };
    add(5, 5, 3);    // cell (0,0)
    add(15, 5, 1);   // cell (1,0)
    add(-5, 5, 2);   // cell (-1,0)
    add(5, -5, 2);   // cell (0,-1)
    add(25, 25, 4);  // cell (2,2)
    const auto tiles = tile_ground(pts, 10.0, 3, 1);
    ASSERT_EQ(tiles.cells.size(), 3u);
    EXPECT_EQ(tiles.occupied_cells, 5u);
    // kept: (2,2) with 4, (0,0) with 3, and of the two 2-point cells the
    // lexicographically smaller (-1,0); output sorted by index
    EXPECT_EQ(tiles.cells[0].ix, -1);
    EXPECT_EQ(tiles.cells[0].iy, 0);
    EXPECT_EQ(tiles.cells[1].ix, 0);
    EXPECT_EQ(tiles.cells[1].iy, 0);
    EXPECT_EQ(tiles.cells[2].ix, 2);
    EXPECT_EQ(tiles.cells[2].iy, 2);
    std::size_t dropped = 0;
    for (auto t : tiles.point_tile)
        dropped += t < 0 ? 1 : 0;
    EXPECT_EQ(dropped, 3u);
}

TEST(TileGround, MeanHeightAndZeroSizeHeading)
{
    const std::vector<Point3> pts{{1, 1, 0.1f}, {2, 2, 0.3f}};
    const auto tiles = tile_ground(pts, 10.0, 10, 3);
    ASSERT_EQ(tiles.elements.size(), 1u);
    const auto &row = tiles.elements[0].boxes[2];
    EXPECT_NEAR(row[2], 0.2, 1e-7);
    for (std::size_t k = 3; k < 7; ++k)
        EXPECT_EQ(row[k], 0.0);
}
