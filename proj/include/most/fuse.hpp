#ifndef MOST_FUSE_HPP
#define MOST_FUSE_HPP

// Scene-element feature extraction: geometry encoding (point MLP pooled by
// token/frame plus box MLP) followed by spatial-temporal fusion (temporal
// embedding, axial attention over time then elements, masked temporal mean).
//
// Every tensor of shape N_elem x T x D is stored as a row-major matrix with
// (N_elem * T) rows; row e * T + t holds element e at frame t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "most/compact.hpp"
#include "most/error.hpp"
#include "most/rng.hpp"
#include "most/types.hpp"

namespace most
{

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FusionConfig
{
    int frames = 11;
    int dim = 256;
    int hidden = 128;
    int heads = 2;
    bool attention = true;
    double layer_norm_eps = 1e-5;

    friend bool operator==(const FusionConfig &, const FusionConfig &) = default;
};

inline FusionConfig fusion_config(const PipelineConfig &c)
{
    return FusionConfig{c.frames, c.dim, c.hidden_dim, c.heads, c.attention, 1e-5};
}

/// Two-layer perceptron with ReLU: in -> hidden -> out.
template <typename S>
struct Mlp
{
    Mat<S> w1; // hidden x in
    Mat<S> b1; // 1 x hidden
    Mat<S> w2; // out x hidden
    Mat<S> b2; // 1 x out
};

/// Pre-norm single-layer multi-head self-attention with residual.
template <typename S>
struct AttentionParams
{
    Mat<S> ln_gamma, ln_beta; // 1 x D
    Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct FusionParams
{
    FusionConfig config;
    Mlp<S> point_mlp; // 3 -> H -> D
    Mlp<S> box_mlp;   // 7 -> H -> D
    Mat<S> temporal;  // T x D
    AttentionParams<S> time_attn;
    AttentionParams<S> element_attn;
};

/// Calls f(name, tensor) for every parameter tensor in a fixed order.
template <typename Params, typename F>
void visit_params(Params &p, F &&f)
{
    auto mlp = [&](const char *prefix, auto &m) {
        const std::string base(prefix);
        f(base + ".w1", m.w1);
        f(base + ".b1", m.b1);
        f(base + ".w2", m.w2);
        f(base + ".b2", m.b2);
    };
    auto attn = [&](const char *prefix, auto &a) {
        const std::string base(prefix);
        f(base + ".ln_gamma", a.ln_gamma);
        f(base + ".ln_beta", a.ln_beta);
        f(base + ".wq", a.wq);
        f(base + ".bq", a.bq);
        f(base + ".wk", a.wk);
        f(base + ".bk", a.bk);
        f(base + ".wv", a.wv);
        f(base + ".bv", a.bv);
        f(base + ".wo", a.wo);
        f(base + ".bo", a.bo);
    };
    mlp("point_mlp", p.point_mlp);
    mlp("box_mlp", p.box_mlp);
    f(std::string("temporal"), p.temporal);
    attn("time_attn", p.time_attn);
    attn("element_attn", p.element_attn);
}

template <typename S>
FusionParams<S> zeros_like(const FusionParams<S> &p)
{
    FusionParams<S> out = p;
    visit_params(out, [](const std::string &, Mat<S> &m) { m.setZero(); });
    return out;
}

template <typename To, typename From>
FusionParams<To> cast_params(const FusionParams<From> &p)
{
    FusionParams<To> out;
    out.config = p.config;
    std::vector<const Mat<From> *> src;
    visit_params(p, [&](const std::string &, const Mat<From> &m) { src.push_back(&m); });
    std::size_t i = 0;
    visit_params(out, [&](const std::string &, Mat<To> &m) { m = src[i++]->template cast<To>(); });
    return out;
}

/// Shapes every tensor and draws weights/biases from
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norm starts at (1, 0).
inline FusionParams<double> init_fusion_params(const FusionConfig &config, std::uint64_t seed)
{
    if (config.frames <= 0 || config.dim <= 0 || config.hidden <= 0 || config.heads <= 0 ||
        config.dim % config.heads != 0)
        throw Error(ErrorCode::BadConfig, "fusion dims must be positive with dim divisible by heads");
    const int D = config.dim, H = config.hidden, T = config.frames;
    Rng rng(mix_seed(seed, 0xf00d));
    auto uniform = [&](int rows, int cols, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat<double> m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = uniform_real(rng, -bound, bound);
        return m;
    };
    auto mlp = [&](int in) {
        Mlp<double> m;
        m.w1 = uniform(H, in, in);
        m.b1 = uniform(1, H, in);
        m.w2 = uniform(D, H, H);
        m.b2 = uniform(1, D, H);
        return m;
    };
    auto attn = [&]() {
        AttentionParams<double> a;
        a.ln_gamma = Mat<double>::Ones(1, D);
        a.ln_beta = Mat<double>::Zero(1, D);
        a.wq = uniform(D, D, D);
        a.bq = uniform(1, D, D);
        a.wk = uniform(D, D, D);
        a.bk = uniform(1, D, D);
        a.wv = uniform(D, D, D);
        a.bv = uniform(1, D, D);
        a.wo = uniform(D, D, D);
        a.bo = uniform(1, D, D);
        return a;
    };
    FusionParams<double> p;
    p.config = config;
    p.point_mlp = mlp(3);
    p.box_mlp = mlp(static_cast<int>(kBoxWidth));
    p.temporal = uniform(T, D, D);
    p.time_attn = attn();
    p.element_attn = attn();
    return p;
}

template <typename S>
struct FusionInputs
{
    int elements = 0;
    int frames = 0;
    Mat<S> points;                                // rows x 3
    std::vector<std::array<std::int32_t, 2>> ind; // (frame, token) per row
    std::vector<std::uint8_t> point_valid;
    Mat<S> boxes; // (elements * frames) x 7
    Mat<S> image; // (elements * frames) x D
    std::vector<std::uint8_t> mask; // elements * frames, 1 = valid slot
};

template <typename S>
FusionInputs<S> make_fusion_inputs(const TokenizedScene &scene, const ImageFeatures &image)
{
    const auto E = static_cast<Eigen::Index>(scene.elements.size());
    const auto T = static_cast<Eigen::Index>(scene.frames);
    if (image.elements != E || image.frames != T || image.dim != scene.dim)
        throw Error(ErrorCode::ShapeMismatch, "image features do not match the tokenized scene");
    FusionInputs<S> in;
    in.elements = static_cast<int>(E);
    in.frames = static_cast<int>(T);
    const auto R = static_cast<Eigen::Index>(scene.xyz.size());
    in.points.resize(R, 3);
    for (Eigen::Index r = 0; r < R; ++r)
        for (int c = 0; c < 3; ++c)
            in.points(r, c) = static_cast<S>(scene.xyz[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    in.ind = scene.ind;
    in.point_valid = scene.point_valid;
    in.boxes.resize(E * T, static_cast<Eigen::Index>(kBoxWidth));
    for (Eigen::Index i = 0; i < in.boxes.size(); ++i)
        in.boxes.data()[i] = static_cast<S>(scene.boxes[static_cast<std::size_t>(i)]);
    in.image.resize(E * T, scene.dim);
    for (Eigen::Index i = 0; i < in.image.size(); ++i)
        in.image.data()[i] = static_cast<S>(image.values[static_cast<std::size_t>(i)]);
    in.mask = scene.elem_valid;
    return in;
}

// ---------------------------------------------------------------------------
// MLP

template <typename S>
struct MlpCache
{
    Mat<S> input, pre, hidden;
};

template <typename S>
Mat<S> mlp_forward(const Mlp<S> &m, const Mat<S> &x, MlpCache<S> *cache)
{
    Mat<S> pre = x * m.w1.transpose();
    pre.rowwise() += m.b1.row(0);
    Mat<S> hidden = pre.cwiseMax(S(0));
    Mat<S> y = hidden * m.w2.transpose();
    y.rowwise() += m.b2.row(0);
    if (cache)
    {
        cache->input = x;
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return y;
}

template <typename S>
void mlp_backward(const Mlp<S> &m, const MlpCache<S> &cache, const Mat<S> &dy, Mlp<S> &grad)
{
    grad.w2 += dy.transpose() * cache.hidden;
    grad.b2 += dy.colwise().sum();
    Mat<S> dpre = dy * m.w2;
    dpre.array() *= (cache.pre.array() > S(0)).template cast<S>();
    grad.w1 += dpre.transpose() * cache.input;
    grad.b1 += dpre.colwise().sum();
}

// ---------------------------------------------------------------------------
// Geometry encoding

template <typename S>
struct GeometryCache
{
    std::vector<Eigen::Index> rows;   // valid point rows
    std::vector<Eigen::Index> slot;   // slot per valid row
    std::vector<S> inv_count;         // per slot, 0 when empty
    MlpCache<S> point, box;
};

/// Mean of per-row values grouped by slot; empty slots stay zero.
template <typename S>
Mat<S> pool_by_index(const Mat<S> &values, const std::vector<Eigen::Index> &slot, Eigen::Index slots,
                     std::vector<S> *inv_count_out = nullptr)
{
    Mat<S> out = Mat<S>::Zero(slots, values.cols());
    std::vector<std::size_t> count(static_cast<std::size_t>(slots), 0);
    for (Eigen::Index r = 0; r < values.rows(); ++r)
    {
        out.row(slot[static_cast<std::size_t>(r)]) += values.row(r);
        ++count[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])];
    }
    std::vector<S> inv(static_cast<std::size_t>(slots), S(0));
    for (Eigen::Index s = 0; s < slots; ++s)
    {
        if (count[static_cast<std::size_t>(s)] == 0)
            continue;
        inv[static_cast<std::size_t>(s)] = S(1) / static_cast<S>(count[static_cast<std::size_t>(s)]);
        out.row(s) *= inv[static_cast<std::size_t>(s)];
    }
    if (inv_count_out)
        *inv_count_out = std::move(inv);
    return out;
}

/// F_geo = pool_by_index(MLP_f(P_xyz), P_ind) + MLP_c(B).
template <typename S>
Mat<S> encode_geometry(const FusionParams<S> &params, const FusionInputs<S> &in, GeometryCache<S> *cache = nullptr)
{
    const Eigen::Index E = in.elements, T = in.frames;
    if (T != params.config.frames)
        throw Error(ErrorCode::ShapeMismatch, "inputs have " + std::to_string(T) + " frames, params expect " +
                                                  std::to_string(params.config.frames));
    if (in.points.cols() != 3 || in.points.rows() != static_cast<Eigen::Index>(in.ind.size()) ||
        in.point_valid.size() != in.ind.size() || in.boxes.rows() != E * T ||
        in.boxes.cols() != static_cast<Eigen::Index>(kBoxWidth))
        throw Error(ErrorCode::ShapeMismatch, "geometry inputs have inconsistent shapes");

    std::vector<Eigen::Index> rows, slot;
    for (std::size_t r = 0; r < in.ind.size(); ++r)
    {
        if (!in.point_valid[r])
            continue;
        const auto [frame, token] = in.ind[r];
        if (frame < 0 || frame >= T || token < 0 || token >= E)
            throw Error(ErrorCode::ShapeMismatch, "point row " + std::to_string(r) + " indexes outside the scene");
        rows.push_back(static_cast<Eigen::Index>(r));
        slot.push_back(static_cast<Eigen::Index>(token) * T + frame);
    }
    Mat<S> pts(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i)
        pts.row(static_cast<Eigen::Index>(i)) = in.points.row(rows[i]);

    MlpCache<S> *point_cache = cache ? &cache->point : nullptr;
    MlpCache<S> *box_cache = cache ? &cache->box : nullptr;
    const Mat<S> point_feat = mlp_forward(params.point_mlp, pts, point_cache);
    std::vector<S> inv_count;
    Mat<S> geo = pool_by_index(point_feat, slot, E * T, &inv_count);
    geo += mlp_forward(params.box_mlp, in.boxes, box_cache);
    if (cache)
    {
        cache->rows = std::move(rows);
        cache->slot = std::move(slot);
        cache->inv_count = std::move(inv_count);
    }
    return geo;
}

template <typename S>
void encode_geometry_backward(const FusionParams<S> &params, const GeometryCache<S> &cache, const Mat<S> &dgeo,
                              FusionParams<S> &grad)
{
    mlp_backward(params.box_mlp, cache.box, dgeo, grad.box_mlp);
    Mat<S> dpoint(static_cast<Eigen::Index>(cache.slot.size()), dgeo.cols());
    for (std::size_t i = 0; i < cache.slot.size(); ++i)
    {
        const auto s = cache.slot[i];
        dpoint.row(static_cast<Eigen::Index>(i)) = dgeo.row(s) * cache.inv_count[static_cast<std::size_t>(s)];
    }
    mlp_backward(params.point_mlp, cache.point, dpoint, grad.point_mlp);
}

// ---------------------------------------------------------------------------
// Axial attention

enum class Axis
{
    time,
    element,
};

/// Valid row indices of every sequence along `axis`. Along time there is one
/// sequence per element; along elements one per frame.
inline std::vector<std::vector<Eigen::Index>> axis_sequences(Axis axis, int elements, int frames,
                                                            const std::vector<std::uint8_t> &mask)
{
    std::vector<std::vector<Eigen::Index>> seqs;
    const int outer = axis == Axis::time ? elements : frames;
    const int inner = axis == Axis::time ? frames : elements;
    for (int o = 0; o < outer; ++o)
    {
        std::vector<Eigen::Index> seq;
        for (int i = 0; i < inner; ++i)
        {
            const Eigen::Index row = axis == Axis::time ? static_cast<Eigen::Index>(o) * frames + i
                                                        : static_cast<Eigen::Index>(i) * frames + o;
            if (mask[static_cast<std::size_t>(row)])
                seq.push_back(row);
        }
        if (!seq.empty())
            seqs.push_back(std::move(seq));
    }
    return seqs;
}

template <typename S>
struct AttentionCache
{
    Mat<S> xhat;
    std::vector<S> inv_std;
    Mat<S> y, q, k, v, o;
    std::vector<std::vector<Eigen::Index>> sequences;
    std::vector<std::vector<Mat<S>>> weights; // [sequence][head], rows sum to 1
    std::vector<std::uint8_t> active;         // row took part in attention
};

/// out = x + Attn(LN(x)) along `axis` for valid slots; masked slots are
/// neither queries nor keys and pass through unchanged.
template <typename S>
Mat<S> attn_along_axis(const Mat<S> &x, Axis axis, int elements, int frames, const AttentionParams<S> &p,
                       const std::vector<std::uint8_t> &mask, int heads, double eps,
                       AttentionCache<S> *cache = nullptr)
{
    const Eigen::Index R = x.rows(), D = x.cols();
    if (R != static_cast<Eigen::Index>(elements) * frames || static_cast<Eigen::Index>(mask.size()) != R ||
        D % heads != 0 || p.wq.rows() != D)
        throw Error(ErrorCode::ShapeMismatch, "attention input has inconsistent shape");
    const Eigen::Index dh = D / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    // layer norm over rows; masked rows are zeroed first so they stay finite
    Mat<S> xhat(R, D);
    std::vector<S> inv_std(static_cast<std::size_t>(R));
    for (Eigen::Index r = 0; r < R; ++r)
    {
        if (!mask[static_cast<std::size_t>(r)])
        {
            xhat.row(r).setZero();
            inv_std[static_cast<std::size_t>(r)] = S(0);
            continue;
        }
        const S mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).eval();
        const S var = centered.square().mean();
        const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
        inv_std[static_cast<std::size_t>(r)] = is;
        xhat.row(r) = centered.matrix() * is;
    }
    Mat<S> y = xhat.array().rowwise() * p.ln_gamma.row(0).array();
    y.rowwise() += p.ln_beta.row(0);
    for (Eigen::Index r = 0; r < R; ++r)
        if (!mask[static_cast<std::size_t>(r)])
            y.row(r).setZero();

    Mat<S> q = y * p.wq.transpose();
    q.rowwise() += p.bq.row(0);
    Mat<S> k = y * p.wk.transpose();
    k.rowwise() += p.bk.row(0);
    Mat<S> v = y * p.wv.transpose();
    v.rowwise() += p.bv.row(0);

    auto seqs = axis_sequences(axis, elements, frames, mask);
    Mat<S> o = Mat<S>::Zero(R, D);
    std::vector<std::vector<Mat<S>>> weights;
    if (cache)
        weights.resize(seqs.size());

    for (std::size_t s = 0; s < seqs.size(); ++s)
    {
        const auto &seq = seqs[s];
        for (int h = 0; h < heads; ++h)
        {
            const auto cols = Eigen::seqN(static_cast<Eigen::Index>(h) * dh, dh);
            const Mat<S> qh = q(seq, cols);
            const Mat<S> kh = k(seq, cols);
            const Mat<S> vh = v(seq, cols);
            Mat<S> a = (qh * kh.transpose()) * scale;
            for (Eigen::Index i = 0; i < a.rows(); ++i)
            {
                const S m = a.row(i).maxCoeff();
                a.row(i) = (a.row(i).array() - m).exp();
                a.row(i) /= a.row(i).sum();
            }
            o(seq, cols) = a * vh;
            if (cache)
                weights[s].push_back(std::move(a));
        }
    }

    Mat<S> out = x;
    Mat<S> z = o * p.wo.transpose();
    z.rowwise() += p.bo.row(0);
    for (Eigen::Index r = 0; r < R; ++r)
        if (mask[static_cast<std::size_t>(r)])
            out.row(r) += z.row(r);

    if (cache)
    {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->y = std::move(y);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->o = std::move(o);
        cache->sequences = std::move(seqs);
        cache->weights = std::move(weights);
        cache->active = mask;
    }
    return out;
}

/// Returns d loss / d x and accumulates parameter gradients into `grad`.
template <typename S>
Mat<S> attn_backward(const AttentionParams<S> &p, const AttentionCache<S> &c, const Mat<S> &dout, int heads,
                     AttentionParams<S> &grad)
{
    const Eigen::Index R = dout.rows(), D = dout.cols();
    const Eigen::Index dh = D / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    Mat<S> dx = dout;
    Mat<S> dz = dout;
    for (Eigen::Index r = 0; r < R; ++r)
        if (!c.active[static_cast<std::size_t>(r)])
            dz.row(r).setZero();

    grad.wo += dz.transpose() * c.o;
    grad.bo += dz.colwise().sum();
    const Mat<S> dO = dz * p.wo;

    Mat<S> dq = Mat<S>::Zero(R, D), dk = Mat<S>::Zero(R, D), dv = Mat<S>::Zero(R, D);
    for (std::size_t s = 0; s < c.sequences.size(); ++s)
    {
        const auto &seq = c.sequences[s];
        for (int h = 0; h < heads; ++h)
        {
            const auto cols = Eigen::seqN(static_cast<Eigen::Index>(h) * dh, dh);
            const Mat<S> &a = c.weights[s][static_cast<std::size_t>(h)];
            const Mat<S> qh = c.q(seq, cols);
            const Mat<S> kh = c.k(seq, cols);
            const Mat<S> vh = c.v(seq, cols);
            const Mat<S> doh = dO(seq, cols);
            const Mat<S> da = doh * vh.transpose();
            dv(seq, cols) = a.transpose() * doh;
            Mat<S> ds = a;
            for (Eigen::Index i = 0; i < a.rows(); ++i)
            {
                const S dot = a.row(i).dot(da.row(i));
                ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
            }
            dq(seq, cols) = (ds * kh) * scale;
            dk(seq, cols) = (ds.transpose() * qh) * scale;
        }
    }

    grad.wq += dq.transpose() * c.y;
    grad.bq += dq.colwise().sum();
    grad.wk += dk.transpose() * c.y;
    grad.bk += dk.colwise().sum();
    grad.wv += dv.transpose() * c.y;
    grad.bv += dv.colwise().sum();
    const Mat<S> dy = dq * p.wq + dk * p.wk + dv * p.wv;

    grad.ln_gamma += (dy.array() * c.xhat.array()).matrix().colwise().sum();
    grad.ln_beta += dy.colwise().sum();
    const Mat<S> dxhat = dy.array().rowwise() * p.ln_gamma.row(0).array();
    for (Eigen::Index r = 0; r < R; ++r)
    {
        if (!c.active[static_cast<std::size_t>(r)])
            continue;
        const S mean_d = dxhat.row(r).mean();
        const S mean_dx = dxhat.row(r).dot(c.xhat.row(r)) / static_cast<S>(D);
        dx.row(r) += ((dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx) *
                      c.inv_std[static_cast<std::size_t>(r)])
                         .matrix();
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Spatial-temporal fusion

template <typename S>
struct FusionCache
{
    GeometryCache<S> geometry;
    AttentionCache<S> time, element;
    std::vector<int> valid_frames; // per element
};

/// Sums image, geometry and temporal embedding, attends along time then
/// along elements, and averages each element over its valid frames.
/// Elements without a valid frame come out as zeros.
template <typename S>
Mat<S> fuse_scene(const Mat<S> &image, const Mat<S> &geometry, const FusionParams<S> &params,
                  const std::vector<std::uint8_t> &mask, int elements, FusionCache<S> *cache = nullptr)
{
    const auto &cfg = params.config;
    const int T = cfg.frames;
    const Eigen::Index R = static_cast<Eigen::Index>(elements) * T;
    if (image.rows() != R || geometry.rows() != R || image.cols() != cfg.dim || geometry.cols() != cfg.dim ||
        static_cast<Eigen::Index>(mask.size()) != R)
        throw Error(ErrorCode::ShapeMismatch, "fusion inputs disagree with params or element count");

    Mat<S> x = image + geometry;
    for (Eigen::Index e = 0; e < elements; ++e)
        x.middleRows(e * T, T) += params.temporal;

    if (cfg.attention)
    {
        x = attn_along_axis(x, Axis::time, elements, T, params.time_attn, mask, cfg.heads, cfg.layer_norm_eps,
                            cache ? &cache->time : nullptr);
        x = attn_along_axis(x, Axis::element, elements, T, params.element_attn, mask, cfg.heads,
                            cfg.layer_norm_eps, cache ? &cache->element : nullptr);
    }

    Mat<S> out = Mat<S>::Zero(elements, cfg.dim);
    std::vector<int> valid(static_cast<std::size_t>(elements), 0);
    for (Eigen::Index e = 0; e < elements; ++e)
    {
        for (int t = 0; t < T; ++t)
        {
            if (!mask[static_cast<std::size_t>(e * T + t)])
                continue;
            out.row(e) += x.row(e * T + t);
            ++valid[static_cast<std::size_t>(e)];
        }
        if (valid[static_cast<std::size_t>(e)] > 0)
            out.row(e) /= static_cast<S>(valid[static_cast<std::size_t>(e)]);
    }
    if (cache)
        cache->valid_frames = std::move(valid);
    return out;
}

/// Full forward pass: geometry encoding then fusion.
template <typename S>
Mat<S> scene_forward(const FusionParams<S> &params, const FusionInputs<S> &in, FusionCache<S> *cache = nullptr)
{
    if (in.image.rows() != static_cast<Eigen::Index>(in.elements) * in.frames)
        throw Error(ErrorCode::ShapeMismatch, "image tensor has the wrong number of rows");
    const Mat<S> geo = encode_geometry(params, in, cache ? &cache->geometry : nullptr);
    return fuse_scene(in.image, geo, params, in.mask, in.elements, cache);
}

/// Gradients of a loss with d loss / d F_elem = `delem` for every parameter.
template <typename S>
FusionParams<S> scene_backward(const FusionParams<S> &params, const FusionInputs<S> &in, const FusionCache<S> &cache,
                               const Mat<S> &delem)
{
    const auto &cfg = params.config;
    const int T = cfg.frames;
    const Eigen::Index E = in.elements;
    FusionParams<S> grad = zeros_like(params);

    Mat<S> dx = Mat<S>::Zero(E * T, cfg.dim);
    for (Eigen::Index e = 0; e < E; ++e)
    {
        const int n = cache.valid_frames[static_cast<std::size_t>(e)];
        if (n == 0)
            continue;
        for (int t = 0; t < T; ++t)
            if (in.mask[static_cast<std::size_t>(e * T + t)])
                dx.row(e * T + t) = delem.row(e) / static_cast<S>(n);
    }
    if (cfg.attention)
    {
        dx = attn_backward(params.element_attn, cache.element, dx, cfg.heads, grad.element_attn);
        dx = attn_backward(params.time_attn, cache.time, dx, cfg.heads, grad.time_attn);
    }
    for (Eigen::Index e = 0; e < E; ++e)
        grad.temporal += dx.middleRows(e * T, T);
    encode_geometry_backward(params, cache.geometry, dx, grad);
    return grad;
}

// ---------------------------------------------------------------------------
// Gradient verification

/// loss = sum(F_elem^2)
template <typename S>
S squared_loss(const FusionParams<S> &params, const FusionInputs<S> &in)
{
    return scene_forward(params, in).squaredNorm();
}

template <typename S>
FusionParams<S> analytic_gradient(const FusionParams<S> &params, const FusionInputs<S> &in)
{
    FusionCache<S> cache;
    const Mat<S> out = scene_forward(params, in, &cache);
    return scene_backward(params, in, cache, Mat<S>(S(2) * out));
}

/// Central differences over every parameter entry.
template <typename S>
FusionParams<S> numeric_gradient(const FusionParams<S> &params, const FusionInputs<S> &in, double step = 1e-5)
{
    FusionParams<S> probe = params;
    FusionParams<S> grad = zeros_like(params);
    std::vector<Mat<S> *> probe_tensors, grad_tensors;
    visit_params(probe, [&](const std::string &, Mat<S> &m) { probe_tensors.push_back(&m); });
    visit_params(grad, [&](const std::string &, Mat<S> &m) { grad_tensors.push_back(&m); });
    const S h = static_cast<S>(step);
    for (std::size_t t = 0; t < probe_tensors.size(); ++t)
    {
        Mat<S> &m = *probe_tensors[t];
        for (Eigen::Index i = 0; i < m.size(); ++i)
        {
            const S saved = m.data()[i];
            m.data()[i] = saved + h;
            const S plus = squared_loss(probe, in);
            m.data()[i] = saved - h;
            const S minus = squared_loss(probe, in);
            m.data()[i] = saved;
            grad_tensors[t]->data()[i] = (plus - minus) / (S(2) * h);
        }
    }
    return grad;
}

struct GradCheckReport
{
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::vector<std::pair<std::string, double>> per_tensor;
};

/// Per tensor: |a - n| / max(|a|, |n|, floor) in the Frobenius norm. The
/// floor is 1e-3 of the whole-model gradient norm, so tensors whose exact
/// gradient vanishes (the key bias, by softmax shift invariance) are judged
/// against the model scale instead of finite-difference roundoff.
template <typename S>
GradCheckReport compare_gradients(const FusionParams<S> &analytic, const FusionParams<S> &numeric,
                                  double floor_ratio = 1e-3)
{
    std::vector<const Mat<S> *> num;
    double total = 0.0;
    visit_params(numeric, [&](const std::string &, const Mat<S> &m) {
        num.push_back(&m);
        total += static_cast<double>(m.squaredNorm());
    });
    const double floor = floor_ratio * std::sqrt(total);
    GradCheckReport report;
    std::size_t i = 0;
    visit_params(analytic, [&](const std::string &name, const Mat<S> &a) {
        const Mat<S> &n = *num[i++];
        const double diff = static_cast<double>((a - n).norm());
        const double scale = std::max({static_cast<double>(a.norm()), static_cast<double>(n.norm()), floor});
        const double err = scale > 0.0 ? diff / scale : diff;
        report.per_tensor.emplace_back(name, err);
        if (report.worst_tensor.empty() || err > report.max_relative_error)
        {
            report.max_relative_error = err;
            report.worst_tensor = name;
        }
    });
    return report;
}

inline GradCheckReport grad_check(const FusionParams<double> &params, const FusionInputs<double> &in,
                                  double step = 1e-5)
{
    return compare_gradients(analytic_gradient(params, in), numeric_gradient(params, in, step));
}

} // namespace most

#endif // MOST_FUSE_HPP
