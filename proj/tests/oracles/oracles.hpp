// Reference computations for the tests. Everything here is written with
// plain loops and does not call into the library's algorithms.
#ifndef MOST_TESTS_ORACLES_HPP
#define MOST_TESTS_ORACLES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "most/fuse.hpp"

namespace oracle
{

using P2 = std::array<double, 2>;
using P3f = std::array<float, 3>;

/// Smallest bounding-rectangle area over every direction spanned by a pair
/// of input points. Hull edges are among those directions, so this is exact.
inline double min_area_rect_area(const std::vector<P2> &pts)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
        {
            const double dx = pts[j][0] - pts[i][0], dy = pts[j][1] - pts[i][1];
            const double len = std::hypot(dx, dy);
            if (len < 1e-15)
                continue;
            const double ux = dx / len, uy = dy / len;
            double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
            for (const auto &p : pts)
            {
                const double a = p[0] * ux + p[1] * uy;
                const double b = -p[0] * uy + p[1] * ux;
                lo_a = std::min(lo_a, a);
                hi_a = std::max(hi_a, a);
                lo_b = std::min(lo_b, b);
                hi_b = std::max(hi_b, b);
            }
            best = std::min(best, (hi_a - lo_a) * (hi_b - lo_b));
        }
    return std::isinf(best) ? 0.0 : best;
}

/// Connected components over all O(n^2) pairs. Clusters are numbered by
/// their smallest member index; small components get -1.
inline std::vector<int> components(const std::vector<P3f> &pts, double radius, int min_points)
{
    const std::size_t n = pts.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t a) {
        while (parent[a] != a)
            a = parent[a] = parent[parent[a]];
        return a;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
        {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c)
            {
                const double d = static_cast<double>(pts[i][c]) - static_cast<double>(pts[j][c]);
                d2 += d * d;
            }
            if (d2 <= radius * radius)
            {
                const auto a = find(i), b = find(j);
                if (a != b)
                    parent[std::max(a, b)] = std::min(a, b);
            }
        }
    std::vector<int> size(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        ++size[find(i)];
    std::vector<int> label(n, -1), id(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        const auto root = find(i);
        if (size[root] < min_points)
            continue;
        if (id[root] < 0)
            id[root] = next++;
        label[i] = id[root];
    }
    return label;
}

struct Plane
{
    Eigen::Vector3d normal;
    double offset;
};

/// Total least squares plane via SVD of the centred points, n_z >= 0.
inline Plane ls_plane(const std::vector<P3f> &pts)
{
    Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int c = 0; c < 3; ++c)
            A(static_cast<Eigen::Index>(i), c) = pts[i][c];
    const Eigen::RowVector3d centroid = A.colwise().mean();
    A.rowwise() -= centroid;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
    Eigen::Vector3d n = svd.matrixV().col(2).normalized();
    if (n.z() < 0)
        n = -n;
    return {n, -n.dot(centroid.transpose())};
}

inline double angle_between(const Eigen::Vector3d &a, const Eigen::Vector3d &b)
{
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Optimal gated assignment by enumeration: maximum number of matches,
/// then minimum total distance. Returns matched detection per track (-1).
inline std::vector<int> exhaustive_assignment(const std::vector<std::array<double, 3>> &tracks,
                                              const std::vector<std::array<double, 3>> &dets, double gate,
                                              double *total = nullptr)
{
    const std::size_t nt = tracks.size(), nd = dets.size();
    auto dist = [&](std::size_t t, std::size_t d) {
        return std::sqrt(std::pow(tracks[t][0] - dets[d][0], 2) + std::pow(tracks[t][1] - dets[d][1], 2) +
                         std::pow(tracks[t][2] - dets[d][2], 2));
    };
    std::vector<int> best(nt, -1), cur(nt, -1);
    int best_n = -1;
    double best_sum = 0.0;
    std::vector<char> used(nd, 0);
    auto rec = [&](auto &&self, std::size_t t, int n, double sum) -> void {
        if (t == nt)
        {
            if (n > best_n || (n == best_n && sum < best_sum))
            {
                best_n = n;
                best_sum = sum;
                best = cur;
            }
            return;
        }
        cur[t] = -1;
        self(self, t + 1, n, sum);
        for (std::size_t d = 0; d < nd; ++d)
        {
            if (used[d] || dist(t, d) > gate)
                continue;
            used[d] = 1;
            cur[t] = static_cast<int>(d);
            self(self, t + 1, n + 1, sum + dist(t, d));
            used[d] = 0;
            cur[t] = -1;
        }
    };
    rec(rec, 0, 0, 0.0);
    if (total)
        *total = best_sum;
    return best;
}

/// One-dimensional Kalman gain.
inline double scalar_gain(double p, double r) { return p / (p + r); }

struct Hypergeometric
{
    double mean;
    double sd;
};

/// Count of draws from a sub-population of size k when drawing n of N.
inline Hypergeometric hypergeometric(double N, double k, double n)
{
    const double mean = n * k / N;
    const double var = n * (k / N) * ((N - k) / N) * ((N - n) / (N - 1));
    return {mean, std::sqrt(var)};
}

/// O(N * E * T) group-by mean, including the open-set temporal average.
struct Pooled
{
    std::vector<double> values;
    std::vector<std::uint8_t> valid;
};

inline Pooled brute_pool(const std::vector<float> &features, const std::vector<std::uint8_t> &feature_valid,
                         const std::vector<std::array<std::int32_t, 2>> &ind,
                         const std::vector<std::uint8_t> &point_valid, const std::vector<int> &is_open_set, int T,
                         int D)
{
    const int E = static_cast<int>(is_open_set.size());
    Pooled out;
    out.values.assign(static_cast<std::size_t>(E) * T * D, 0.0);
    out.valid.assign(static_cast<std::size_t>(E) * T, 0);
    for (int e = 0; e < E; ++e)
        for (int t = 0; t < T; ++t)
        {
            std::vector<double> sum(static_cast<std::size_t>(D), 0.0);
            int count = 0;
            for (std::size_t r = 0; r < ind.size(); ++r)
            {
                if (!point_valid[r] || !feature_valid[r] || ind[r][0] != t || ind[r][1] != e)
                    continue;
                ++count;
                for (int d = 0; d < D; ++d)
                    sum[static_cast<std::size_t>(d)] += features[r * D + static_cast<std::size_t>(d)];
            }
            if (count == 0)
                continue;
            out.valid[static_cast<std::size_t>(e) * T + t] = 1;
            for (int d = 0; d < D; ++d)
                out.values[(static_cast<std::size_t>(e) * T + t) * D + d] = sum[static_cast<std::size_t>(d)] / count;
        }
    for (int e = 0; e < E; ++e)
    {
        if (!is_open_set[static_cast<std::size_t>(e)])
            continue;
        std::vector<double> avg(static_cast<std::size_t>(D), 0.0);
        int n = 0;
        for (int t = 0; t < T; ++t)
        {
            if (!out.valid[static_cast<std::size_t>(e) * T + t])
                continue;
            ++n;
            for (int d = 0; d < D; ++d)
                avg[static_cast<std::size_t>(d)] += out.values[(static_cast<std::size_t>(e) * T + t) * D + d];
        }
        if (n == 0)
            continue;
        for (int t = 0; t < T; ++t)
        {
            out.valid[static_cast<std::size_t>(e) * T + t] = 1;
            for (int d = 0; d < D; ++d)
                out.values[(static_cast<std::size_t>(e) * T + t) * D + d] = avg[static_cast<std::size_t>(d)] / n;
        }
    }
    return out;
}

/// Two-layer ReLU MLP evaluated entry by entry.
inline std::vector<double> mlp(const most::Mlp<double> &m, const std::vector<double> &x)
{
    const auto H = m.w1.rows(), D = m.w2.rows();
    std::vector<double> h(static_cast<std::size_t>(H)), y(static_cast<std::size_t>(D));
    for (Eigen::Index i = 0; i < H; ++i)
    {
        double s = m.b1(0, i);
        for (Eigen::Index j = 0; j < m.w1.cols(); ++j)
            s += m.w1(i, j) * x[static_cast<std::size_t>(j)];
        h[static_cast<std::size_t>(i)] = s > 0.0 ? s : 0.0;
    }
    for (Eigen::Index i = 0; i < D; ++i)
    {
        double s = m.b2(0, i);
        for (Eigen::Index j = 0; j < H; ++j)
            s += m.w2(i, j) * h[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = s;
    }
    return y;
}

/// F_geo evaluated as two separate paths: a per-(element, frame) pooled
/// point term and a per-slot box term. Returns (E*T) x D row-major.
inline std::vector<double> geometry_two_path(const most::FusionParams<double> &p,
                                             const most::FusionInputs<double> &in)
{
    const int E = in.elements, T = in.frames, D = p.config.dim;
    std::vector<double> pooled(static_cast<std::size_t>(E) * T * D, 0.0);
    for (int e = 0; e < E; ++e)
        for (int t = 0; t < T; ++t)
        {
            std::vector<double> sum(static_cast<std::size_t>(D), 0.0);
            int count = 0;
            for (std::size_t r = 0; r < in.ind.size(); ++r)
            {
                if (!in.point_valid[r] || in.ind[r][0] != t || in.ind[r][1] != e)
                    continue;
                const auto row = static_cast<Eigen::Index>(r);
                const auto f = mlp(p.point_mlp, {in.points(row, 0), in.points(row, 1), in.points(row, 2)});
                for (int d = 0; d < D; ++d)
                    sum[static_cast<std::size_t>(d)] += f[static_cast<std::size_t>(d)];
                ++count;
            }
            for (int d = 0; d < D && count > 0; ++d)
                pooled[(static_cast<std::size_t>(e) * T + t) * D + d] = sum[static_cast<std::size_t>(d)] / count;
        }
    std::vector<double> boxes(pooled.size(), 0.0);
    for (int s = 0; s < E * T; ++s)
    {
        std::vector<double> b(7);
        for (int c = 0; c < 7; ++c)
            b[static_cast<std::size_t>(c)] = in.boxes(s, c);
        const auto f = mlp(p.box_mlp, b);
        for (int d = 0; d < D; ++d)
            boxes[static_cast<std::size_t>(s) * D + d] = f[static_cast<std::size_t>(d)];
    }
    std::vector<double> out(pooled.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = pooled[i] + boxes[i];
    return out;
}

namespace detail
{

/// x: (E*T) x D, row = e*T + t.
inline void attention(std::vector<double> &x, const most::AttentionParams<double> &p,
                      const std::vector<std::uint8_t> &mask, int E, int T, int D, int heads, double eps,
                      bool along_time)
{
    const int R = E * T;
    std::vector<std::vector<double>> q(static_cast<std::size_t>(R)), k(q.size()), v(q.size());
    for (int r = 0; r < R; ++r)
    {
        if (!mask[static_cast<std::size_t>(r)])
            continue;
        const double *xr = &x[static_cast<std::size_t>(r) * D];
        double mean = 0.0;
        for (int d = 0; d < D; ++d)
            mean += xr[d];
        mean /= D;
        double var = 0.0;
        for (int d = 0; d < D; ++d)
            var += (xr[d] - mean) * (xr[d] - mean);
        var /= D;
        std::vector<double> y(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d)
            y[static_cast<std::size_t>(d)] = p.ln_gamma(0, d) * (xr[d] - mean) / std::sqrt(var + eps) + p.ln_beta(0, d);
        auto proj = [&](const most::Mat<double> &w, const most::Mat<double> &b) {
            std::vector<double> out(static_cast<std::size_t>(D));
            for (int i = 0; i < D; ++i)
            {
                double s = b(0, i);
                for (int j = 0; j < D; ++j)
                    s += w(i, j) * y[static_cast<std::size_t>(j)];
                out[static_cast<std::size_t>(i)] = s;
            }
            return out;
        };
        q[static_cast<std::size_t>(r)] = proj(p.wq, p.bq);
        k[static_cast<std::size_t>(r)] = proj(p.wk, p.bk);
        v[static_cast<std::size_t>(r)] = proj(p.wv, p.bv);
    }

    const int dh = D / heads;
    std::vector<double> out = x;
    const int outer = along_time ? E : T, inner = along_time ? T : E;
    for (int o = 0; o < outer; ++o)
    {
        std::vector<int> seq;
        for (int i = 0; i < inner; ++i)
        {
            const int r = along_time ? o * T + i : i * T + o;
            if (mask[static_cast<std::size_t>(r)])
                seq.push_back(r);
        }
        for (int qi : seq)
        {
            std::vector<double> att(static_cast<std::size_t>(D), 0.0);
            for (int h = 0; h < heads; ++h)
            {
                std::vector<double> logit;
                for (int kj : seq)
                {
                    double s = 0.0;
                    for (int c = h * dh; c < (h + 1) * dh; ++c)
                        s += q[static_cast<std::size_t>(qi)][static_cast<std::size_t>(c)] *
                             k[static_cast<std::size_t>(kj)][static_cast<std::size_t>(c)];
                    logit.push_back(s / std::sqrt(static_cast<double>(dh)));
                }
                const double mx = *std::max_element(logit.begin(), logit.end());
                double z = 0.0;
                for (auto &l : logit)
                    z += (l = std::exp(l - mx));
                for (std::size_t j = 0; j < seq.size(); ++j)
                    for (int c = h * dh; c < (h + 1) * dh; ++c)
                        att[static_cast<std::size_t>(c)] +=
                            logit[j] / z * v[static_cast<std::size_t>(seq[j])][static_cast<std::size_t>(c)];
            }
            for (int i = 0; i < D; ++i)
            {
                double s = p.bo(0, i);
                for (int j = 0; j < D; ++j)
                    s += p.wo(i, j) * att[static_cast<std::size_t>(j)];
                out[static_cast<std::size_t>(qi) * D + i] += s;
            }
        }
    }
    x = std::move(out);
}

} // namespace detail

/// Straight-line fusion block: sum, attend along time, attend along
/// elements, masked temporal mean. Returns E x D row-major.
inline std::vector<double> fuse(const most::FusionParams<double> &p, const std::vector<double> &image,
                                const std::vector<double> &geometry, const std::vector<std::uint8_t> &mask, int E)
{
    const auto &c = p.config;
    const int T = c.frames, D = c.dim;
    std::vector<double> x(image.size());
    for (int e = 0; e < E; ++e)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d)
            {
                const std::size_t i = (static_cast<std::size_t>(e) * T + t) * D + d;
                x[i] = image[i] + geometry[i] + p.temporal(t, d);
            }
    if (c.attention)
    {
        detail::attention(x, p.time_attn, mask, E, T, D, c.heads, c.layer_norm_eps, true);
        detail::attention(x, p.element_attn, mask, E, T, D, c.heads, c.layer_norm_eps, false);
    }
    std::vector<double> out(static_cast<std::size_t>(E) * D, 0.0);
    for (int e = 0; e < E; ++e)
    {
        int n = 0;
        for (int t = 0; t < T; ++t)
        {
            if (!mask[static_cast<std::size_t>(e) * T + t])
                continue;
            ++n;
            for (int d = 0; d < D; ++d)
                out[static_cast<std::size_t>(e) * D + d] += x[(static_cast<std::size_t>(e) * T + t) * D + d];
        }
        for (int d = 0; d < D && n > 0; ++d)
            out[static_cast<std::size_t>(e) * D + d] /= n;
    }
    return out;
}

} // namespace oracle

#endif // MOST_TESTS_ORACLES_HPP
