#ifndef MOST_IO_HPP
#define MOST_IO_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "most/error.hpp"
#include "most/fuse.hpp"
#include "most/harness.hpp"
#include "most/types.hpp"

namespace most
{

// ---------------------------------------------------------------- archive

inline constexpr std::array<char, 4> kMagic = {'M', 'O', 'S', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint8_t
{
    f32 = 1,
    f64 = 2,
    i32 = 3,
    i64 = 4,
    u8 = 5,
};

inline std::size_t dtype_size(DType t)
{
    switch (t)
    {
    case DType::f32:
    case DType::i32:
        return 4;
    case DType::f64:
    case DType::i64:
        return 8;
    case DType::u8:
        return 1;
    }
    return 0;
}

template <typename T> constexpr DType dtype_of()
{
    if constexpr (std::is_same_v<T, float>)
        return DType::f32;
    else if constexpr (std::is_same_v<T, double>)
        return DType::f64;
    else if constexpr (std::is_same_v<T, std::int32_t>)
        return DType::i32;
    else if constexpr (std::is_same_v<T, std::int64_t>)
        return DType::i64;
    else
    {
        static_assert(std::is_same_v<T, std::uint8_t>, "unsupported tensor element type");
        return DType::u8;
    }
}

/// Named tensor with its payload already in little-endian byte order.
struct Tensor
{
    std::string name;
    DType dtype = DType::u8;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> data;

    std::uint64_t elements() const
    {
        std::uint64_t n = 1;
        for (auto s : shape)
            n *= s;
        return n;
    }

    friend bool operator==(const Tensor &, const Tensor &) = default;
};

namespace detail
{

template <typename U> void put_le(std::vector<std::uint8_t> &out, U v)
{
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t b = 0; b < sizeof(U); ++b)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <typename U> U get_le(const std::uint8_t *p)
{
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b)
        v |= static_cast<U>(p[b]) << (8 * b);
    return v;
}

template <typename T> using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                                      std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;

} // namespace detail

template <typename T>
Tensor make_tensor(std::string name, std::vector<std::uint64_t> shape, std::span<const T> values)
{
    Tensor t;
    t.name = std::move(name);
    t.dtype = dtype_of<T>();
    t.shape = std::move(shape);
    if (t.elements() != values.size())
        throw Error(ErrorCode::ShapeMismatch, "tensor '" + t.name + "' shape holds " + std::to_string(t.elements()) +
                                                  " values, got " + std::to_string(values.size()));
    t.data.reserve(values.size() * sizeof(T));
    for (const T &v : values)
        detail::put_le(t.data, std::bit_cast<detail::Bits<T>>(v));
    return t;
}

template <typename T> Tensor make_tensor(std::string name, std::vector<std::uint64_t> shape, const std::vector<T> &v)
{
    return make_tensor<T>(std::move(name), std::move(shape), std::span<const T>(v));
}

/// Decodes the payload; the stored dtype must match T exactly.
template <typename T> std::vector<T> tensor_values(const Tensor &t)
{
    if (t.dtype != dtype_of<T>())
        throw Error(ErrorCode::ShapeHeaderMismatch, "tensor '" + t.name + "' has dtype code " +
                                                        std::to_string(static_cast<int>(t.dtype)) + ", expected " +
                                                        std::to_string(static_cast<int>(dtype_of<T>())));
    std::vector<T> out(static_cast<std::size_t>(t.elements()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::bit_cast<T>(detail::get_le<detail::Bits<T>>(t.data.data() + i * sizeof(T)));
    return out;
}

inline std::vector<std::uint8_t> encode_archive(std::span<const Tensor> tensors)
{
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    detail::put_le<std::uint32_t>(out, kFormatVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto &t : tensors)
    {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.dtype));
        out.push_back(static_cast<std::uint8_t>(t.shape.size()));
        for (auto s : t.shape)
            detail::put_le<std::uint64_t>(out, s);
        if (t.data.size() != t.elements() * dtype_size(t.dtype))
            throw Error(ErrorCode::ShapeHeaderMismatch, "tensor '" + t.name + "' payload does not match its shape");
        out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
}

inline std::vector<Tensor> decode_archive(std::span<const std::uint8_t> bytes, const std::string &source = "archive")
{
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const std::string &what) {
        if (bytes.size() - pos < n)
            throw Error(ErrorCode::ShapeHeaderMismatch, source + ": " + what + " needs " + std::to_string(n) +
                                                            " bytes at offset " + std::to_string(pos) + ", only " +
                                                            std::to_string(bytes.size() - pos) + " available");
    };
    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw Error(ErrorCode::BadMagic, source + ": missing MOST header");
    pos = kMagic.size();
    need(8, "header");
    const auto version = detail::get_le<std::uint32_t>(bytes.data() + pos);
    if (version != kFormatVersion)
        throw Error(ErrorCode::VersionUnsupported,
                    source + ": format version " + std::to_string(version) + " (supported: 1)");
    const auto count = detail::get_le<std::uint32_t>(bytes.data() + pos + 4);
    pos += 8;

    std::vector<Tensor> out;
    for (std::uint32_t k = 0; k < count; ++k)
    {
        Tensor t;
        need(4, "tensor name length");
        const auto name_len = detail::get_le<std::uint32_t>(bytes.data() + pos);
        pos += 4;
        need(name_len, "tensor name");
        t.name.assign(reinterpret_cast<const char *>(bytes.data() + pos), name_len);
        pos += name_len;
        need(2, "dtype and rank");
        t.dtype = static_cast<DType>(bytes[pos]);
        const auto rank = bytes[pos + 1];
        pos += 2;
        if (dtype_size(t.dtype) == 0)
            throw Error(ErrorCode::ShapeHeaderMismatch,
                        source + ": tensor '" + t.name + "' has unknown dtype code " + std::to_string(+bytes[pos - 2]));
        need(8u * rank, "shape");
        for (int d = 0; d < rank; ++d, pos += 8)
            t.shape.push_back(detail::get_le<std::uint64_t>(bytes.data() + pos));
        const auto payload = t.elements() * dtype_size(t.dtype);
        need(static_cast<std::size_t>(payload), "payload of '" + t.name + "'");
        t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + payload));
        pos += static_cast<std::size_t>(payload);
        out.push_back(std::move(t));
    }
    if (pos != bytes.size())
        throw Error(ErrorCode::ShapeHeaderMismatch, source + ": " + std::to_string(bytes.size() - pos) +
                                                        " trailing bytes after " + std::to_string(pos));
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError(ErrorCode::IoFailure, "read failed: " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes)
{
    if (path.has_parent_path())
    {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError(ErrorCode::IoFailure, "cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError(ErrorCode::IoFailure, "write failed: " + path.string());
}

inline void write_archive(const std::filesystem::path &path, std::span<const Tensor> tensors)
{
    write_file(path, encode_archive(tensors));
}

inline std::vector<Tensor> read_archive(const std::filesystem::path &path)
{
    if (!std::filesystem::exists(path))
        throw Error(ErrorCode::ManifestMissingEntry, "missing file " + path.string());
    return decode_archive(read_file(path), path.string());
}

inline const Tensor &find_tensor(std::span<const Tensor> tensors, const std::string &name, const std::string &source)
{
    for (const auto &t : tensors)
        if (t.name == name)
            return t;
    throw Error(ErrorCode::ManifestMissingEntry, source + ": no tensor named '" + name + "'");
}

inline void expect_shape(const Tensor &t, std::vector<std::uint64_t> shape, const std::string &source)
{
    if (t.shape != shape)
    {
        auto fmt = [](const std::vector<std::uint64_t> &s) {
            std::string out = "[";
            for (std::size_t i = 0; i < s.size(); ++i)
                out += (i ? "," : "") + std::to_string(s[i]);
            return out + "]";
        };
        throw Error(ErrorCode::ShapeHeaderMismatch,
                    source + ": tensor '" + t.name + "' has shape " + fmt(t.shape) + ", expected " + fmt(shape));
    }
}

// ---------------------------------------------------------------- bundle

namespace detail
{

inline std::string padded(int v, int width)
{
    auto s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

inline std::vector<Tensor> camera_tensors(const CameraFrame &cam)
{
    const auto &K = cam.intrinsics;
    const std::vector<double> intr{K.fx, K.fy, K.cx, K.cy};
    const std::vector<double> rot(cam.rotation.begin(), cam.rotation.end());
    const std::vector<double> trans(cam.translation.begin(), cam.translation.end());
    return {make_tensor("features",
                        {static_cast<std::uint64_t>(cam.height), static_cast<std::uint64_t>(cam.width),
                         static_cast<std::uint64_t>(cam.dim)},
                        cam.features),
            make_tensor("intrinsics", {4}, intr), make_tensor("rotation", {3, 3}, rot),
            make_tensor("translation", {3}, trans)};
}

template <typename J> const J &manifest_entry(const J &j, const char *key, const std::string &source)
{
    if (!j.contains(key))
        throw Error(ErrorCode::ManifestMissingEntry, source + ": manifest has no '" + key + "'");
    return j.at(key);
}

} // namespace detail

/// Writes one directory per scene: manifest.json plus one archive per
/// point frame, one for all agent boxes and one per camera frame.
inline void write_scene_bundle(const std::filesystem::path &dir, const SceneBundle &bundle)
{
    nlohmann::ordered_json manifest;
    manifest["format"] = "most-scene";
    manifest["version"] = kFormatVersion;
    manifest["frame_count"] = bundle.frames.size();
    manifest["frame_dt"] = bundle.frame_dt;

    auto frames = nlohmann::ordered_json::array();
    for (const auto &f : bundle.frames)
    {
        const std::string rel = "points/frame_" + detail::padded(f.frame_index, 3) + ".most";
        std::vector<float> xyz;
        xyz.reserve(f.points.size() * 3);
        for (const auto &p : f.points)
            xyz.insert(xyz.end(), p.begin(), p.end());
        const std::vector<Tensor> t{make_tensor("xyz", {f.points.size(), 3}, xyz)};
        write_archive(dir / rel, t);
        frames.push_back({{"frame_index", f.frame_index}, {"path", rel}});
    }
    manifest["frames"] = frames;

    {
        const auto n = bundle.agents.size();
        std::vector<std::int64_t> track;
        std::vector<std::int32_t> frame, cls;
        std::vector<double> center, size, heading;
        for (const auto &a : bundle.agents)
        {
            track.push_back(a.track_id);
            frame.push_back(a.frame_index);
            cls.push_back(a.class_label);
            center.insert(center.end(), a.box.center.begin(), a.box.center.end());
            size.insert(size.end(), a.box.size.begin(), a.box.size.end());
            heading.push_back(a.box.heading);
        }
        const std::vector<Tensor> t{make_tensor("track_id", {n}, track),     make_tensor("frame_index", {n}, frame),
                                    make_tensor("center", {n, 3}, center),   make_tensor("size", {n, 3}, size),
                                    make_tensor("heading", {n}, heading),    make_tensor("class", {n}, cls)};
        write_archive(dir / "agents.most", t);
        manifest["agents"] = "agents.most";
    }

    auto cameras = nlohmann::ordered_json::array();
    for (const auto &cam : bundle.cameras)
    {
        const std::string rel = "cameras/cam" + detail::padded(cam.camera_id, 2) + "_frame_" +
                                detail::padded(cam.frame_index, 3) + ".most";
        write_archive(dir / rel, detail::camera_tensors(cam));
        cameras.push_back(
            {{"camera_id", cam.camera_id}, {"frame_index", cam.frame_index}, {"path", rel}, {"valid", cam.valid}});
    }
    manifest["cameras"] = cameras;

    const auto text = manifest.dump(2) + "\n";
    write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

/// Parses a bundle directory. Only format-level checks happen here; call
/// validate_bundle for the semantic ones.
inline SceneBundle read_scene_bundle(const std::filesystem::path &dir)
{
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::is_directory(dir))
        throw IoError(ErrorCode::IoFailure, "not a bundle directory: " + dir.string());
    if (!std::filesystem::exists(manifest_path))
        throw Error(ErrorCode::ManifestMissingEntry, "missing file " + manifest_path.string());
    const auto raw = read_file(manifest_path);
    nlohmann::json manifest;
    try
    {
        manifest = nlohmann::json::parse(raw.begin(), raw.end());
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::BadMagic, manifest_path.string() + ": not valid JSON (" + e.what() + ")");
    }
    const auto src = manifest_path.string();
    try
    {
        if (detail::manifest_entry(manifest, "format", src).get<std::string>() != "most-scene")
            throw Error(ErrorCode::BadMagic, src + ": format is not 'most-scene'");
        const auto version = detail::manifest_entry(manifest, "version", src).get<std::uint32_t>();
        if (version != kFormatVersion)
            throw Error(ErrorCode::VersionUnsupported,
                        src + ": manifest version " + std::to_string(version) + " (supported: 1)");

        SceneBundle bundle;
        bundle.frame_dt = detail::manifest_entry(manifest, "frame_dt", src).get<double>();
        const auto frame_count = detail::manifest_entry(manifest, "frame_count", src).get<std::size_t>();
        const auto &frames = detail::manifest_entry(manifest, "frames", src);
        if (frames.size() != frame_count)
            throw Error(ErrorCode::ManifestMissingEntry, src + ": frame_count " + std::to_string(frame_count) +
                                                             " but " + std::to_string(frames.size()) +
                                                             " frame entries");
        for (const auto &entry : frames)
        {
            PointCloudFrame f;
            f.frame_index = detail::manifest_entry(entry, "frame_index", src).get<int>();
            const auto path = dir / detail::manifest_entry(entry, "path", src).get<std::string>();
            const auto tensors = read_archive(path);
            const auto &xyz = find_tensor(tensors, "xyz", path.string());
            if (xyz.shape.size() != 2 || xyz.shape[1] != 3)
                expect_shape(xyz, {xyz.shape.empty() ? 0 : xyz.shape[0], 3}, path.string());
            const auto v = tensor_values<float>(xyz);
            f.points.resize(v.size() / 3);
            for (std::size_t i = 0; i < f.points.size(); ++i)
                f.points[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
            bundle.frames.push_back(std::move(f));
        }

        {
            const auto path = dir / detail::manifest_entry(manifest, "agents", src).get<std::string>();
            const auto tensors = read_archive(path);
            const auto ps = path.string();
            const auto &track = find_tensor(tensors, "track_id", ps);
            const std::uint64_t n = track.shape.empty() ? 0 : track.shape[0];
            expect_shape(track, {n}, ps);
            expect_shape(find_tensor(tensors, "frame_index", ps), {n}, ps);
            expect_shape(find_tensor(tensors, "center", ps), {n, 3}, ps);
            expect_shape(find_tensor(tensors, "size", ps), {n, 3}, ps);
            expect_shape(find_tensor(tensors, "heading", ps), {n}, ps);
            expect_shape(find_tensor(tensors, "class", ps), {n}, ps);
            const auto ids = tensor_values<std::int64_t>(track);
            const auto frame = tensor_values<std::int32_t>(find_tensor(tensors, "frame_index", ps));
            const auto center = tensor_values<double>(find_tensor(tensors, "center", ps));
            const auto size = tensor_values<double>(find_tensor(tensors, "size", ps));
            const auto heading = tensor_values<double>(find_tensor(tensors, "heading", ps));
            const auto cls = tensor_values<std::int32_t>(find_tensor(tensors, "class", ps));
            for (std::size_t i = 0; i < n; ++i)
            {
                AgentBox a;
                a.track_id = ids[i];
                a.frame_index = frame[i];
                a.class_label = cls[i];
                a.box.center = {center[3 * i], center[3 * i + 1], center[3 * i + 2]};
                a.box.size = {size[3 * i], size[3 * i + 1], size[3 * i + 2]};
                a.box.heading = heading[i];
                bundle.agents.push_back(a);
            }
        }

        for (const auto &entry : detail::manifest_entry(manifest, "cameras", src))
        {
            CameraFrame cam;
            cam.camera_id = detail::manifest_entry(entry, "camera_id", src).get<int>();
            cam.frame_index = detail::manifest_entry(entry, "frame_index", src).get<int>();
            cam.valid = detail::manifest_entry(entry, "valid", src).get<bool>();
            const auto path = dir / detail::manifest_entry(entry, "path", src).get<std::string>();
            const auto ps = path.string();
            const auto tensors = read_archive(path);
            const auto &feat = find_tensor(tensors, "features", ps);
            if (feat.shape.size() != 3)
                throw Error(ErrorCode::ShapeHeaderMismatch, ps + ": features must be H x W x D");
            cam.height = static_cast<int>(feat.shape[0]);
            cam.width = static_cast<int>(feat.shape[1]);
            cam.dim = static_cast<int>(feat.shape[2]);
            cam.features = tensor_values<float>(feat);
            const auto &intr_t = find_tensor(tensors, "intrinsics", ps);
            const auto &rot_t = find_tensor(tensors, "rotation", ps);
            const auto &trans_t = find_tensor(tensors, "translation", ps);
            expect_shape(intr_t, {4}, ps);
            expect_shape(rot_t, {3, 3}, ps);
            expect_shape(trans_t, {3}, ps);
            const auto intr = tensor_values<double>(intr_t);
            cam.intrinsics = {intr[0], intr[1], intr[2], intr[3]};
            const auto rot = tensor_values<double>(rot_t);
            std::copy(rot.begin(), rot.end(), cam.rotation.begin());
            const auto trans = tensor_values<double>(trans_t);
            std::copy(trans.begin(), trans.end(), cam.translation.begin());
            bundle.cameras.push_back(std::move(cam));
        }
        return bundle;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::ManifestMissingEntry, src + ": malformed entry (" + e.what() + ")");
    }
}

// ---------------------------------------------------------------- tokens

inline std::filesystem::path meta_path(const std::filesystem::path &tokens)
{
    auto p = tokens;
    p += ".meta";
    return p;
}

/// F_elem goes to `path`, per-element metadata to `path`.meta.
inline void write_tokens(const std::filesystem::path &path, const SceneTokens &tokens)
{
    const auto n = static_cast<std::uint64_t>(tokens.elements.size());
    const auto D = static_cast<std::uint64_t>(tokens.dim);
    const auto T = static_cast<std::uint64_t>(tokens.frames);
    if (tokens.embeddings.size() != n * D)
        throw Error(ErrorCode::ShapeMismatch, "embedding matrix does not match element count");
    for (float v : tokens.embeddings)
        if (!std::isfinite(v))
            throw Error(ErrorCode::NonFiniteCoordinate, "token embeddings contain non-finite values");

    std::vector<std::int32_t> ids;
    std::vector<std::int64_t> source;
    std::vector<std::uint8_t> kind, valid;
    std::vector<double> boxes;
    for (const auto &e : tokens.elements)
    {
        if (e.boxes.size() != T || e.frame_valid.size() != T)
            throw Error(ErrorCode::ShapeMismatch, "element " + std::to_string(e.token_id) + " has wrong frame count");
        ids.push_back(e.token_id);
        source.push_back(e.source_id);
        kind.push_back(static_cast<std::uint8_t>(e.kind));
        valid.insert(valid.end(), e.frame_valid.begin(), e.frame_valid.end());
        for (const auto &row : e.boxes)
            boxes.insert(boxes.end(), row.begin(), row.end());
    }
    const std::vector<Tensor> body{make_tensor("F_elem", {n, D}, tokens.embeddings)};
    const std::vector<Tensor> meta{make_tensor("token_id", {n}, ids), make_tensor("kind", {n}, kind),
                                   make_tensor("source_id", {n}, source), make_tensor("frame_valid", {n, T}, valid),
                                   make_tensor("boxes", {n, T, kBoxWidth}, boxes)};
    write_archive(path, body);
    write_archive(meta_path(path), meta);
}

inline SceneTokens read_tokens(const std::filesystem::path &path)
{
    const auto body = read_archive(path);
    const auto meta = read_archive(meta_path(path));
    const auto ps = path.string(), ms = meta_path(path).string();

    const auto &emb = find_tensor(body, "F_elem", ps);
    if (emb.shape.size() != 2)
        throw Error(ErrorCode::ShapeHeaderMismatch, ps + ": F_elem must be N x D");
    const auto n = emb.shape[0];
    const auto &valid_t = find_tensor(meta, "frame_valid", ms);
    if (valid_t.shape.size() != 2)
        throw Error(ErrorCode::ShapeHeaderMismatch, ms + ": frame_valid must be N x T");
    const auto T = valid_t.shape[1];
    expect_shape(valid_t, {n, T}, ms);
    expect_shape(find_tensor(meta, "token_id", ms), {n}, ms);
    expect_shape(find_tensor(meta, "kind", ms), {n}, ms);
    expect_shape(find_tensor(meta, "source_id", ms), {n}, ms);
    expect_shape(find_tensor(meta, "boxes", ms), {n, T, kBoxWidth}, ms);

    SceneTokens tokens;
    tokens.dim = static_cast<int>(emb.shape[1]);
    tokens.frames = static_cast<int>(T);
    tokens.embeddings = tensor_values<float>(emb);
    const auto ids = tensor_values<std::int32_t>(find_tensor(meta, "token_id", ms));
    const auto kind = tensor_values<std::uint8_t>(find_tensor(meta, "kind", ms));
    const auto source = tensor_values<std::int64_t>(find_tensor(meta, "source_id", ms));
    const auto valid = tensor_values<std::uint8_t>(valid_t);
    const auto boxes = tensor_values<double>(find_tensor(meta, "boxes", ms));
    for (std::size_t e = 0; e < n; ++e)
    {
        if (kind[e] > 2)
            throw Error(ErrorCode::ShapeHeaderMismatch, ms + ": unknown element kind " + std::to_string(kind[e]));
        SceneElement el;
        el.token_id = ids[e];
        el.kind = static_cast<ElementKind>(kind[e]);
        el.source_id = source[e];
        el.frame_valid.assign(valid.begin() + static_cast<std::ptrdiff_t>(e * T),
                              valid.begin() + static_cast<std::ptrdiff_t>((e + 1) * T));
        el.boxes.resize(static_cast<std::size_t>(T));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t k = 0; k < kBoxWidth; ++k)
                el.boxes[t][k] = boxes[(e * T + t) * kBoxWidth + k];
        tokens.elements.push_back(std::move(el));
    }
    return tokens;
}

// ---------------------------------------------------------------- config

namespace detail
{

template <typename J> void reject_unknown(const J &j, std::initializer_list<const char *> known, const std::string &where)
{
    if (!j.is_object())
        throw Error(ErrorCode::BadConfig, where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
    {
        bool ok = false;
        for (const char *k : known)
            ok = ok || it.key() == k;
        if (!ok)
            throw Error(ErrorCode::BadConfig, "unknown key '" + it.key() + "' in " + where);
    }
}

template <typename J, typename T> void read_opt(const J &j, const char *key, T &out)
{
    if (j.contains(key))
        out = j.at(key).template get<T>();
}

} // namespace detail

inline nlohmann::ordered_json config_to_json(const PipelineConfig &c)
{
    nlohmann::ordered_json j;
    j["frames"] = c.frames;
    j["feature_dim"] = c.dim;
    j["elem_budget"] = {{"agent", c.elements.agent}, {"open_set", c.elements.open_set}, {"ground", c.elements.ground}};
    j["total_points"] = c.total_points;
    j["point_budget"] = {{"agent", c.points.agent}, {"open_set", c.points.open_set}, {"ground", c.points.ground}};
    j["tile_size_m"] = c.tile_size_m;
    j["ransac"] = {{"iterations", c.ransac.iterations}, {"inlier_threshold_m", c.ransac.inlier_threshold_m}};
    j["cluster"] = {{"radius_m", c.cluster.radius_m}, {"min_points", c.cluster.min_points}};
    j["track"] = {{"gate_m", c.track.gate_m},
                  {"process_noise", c.track.process_noise},
                  {"measurement_noise", c.track.measurement_noise},
                  {"initial_velocity_variance", c.track.initial_velocity_variance},
                  {"max_missed_frames", c.track.max_missed_frames}};
    j["projection"] = {{"sampling", c.projection.sampling == Sampling::nearest ? "nearest" : "bilinear"},
                       {"overlap", c.projection.overlap == OverlapRule::first_camera ? "first_camera" : "average"}};
    j["fusion"] = {{"hidden_dim", c.hidden_dim}, {"heads", c.heads}, {"attention", c.attention}};
    j["seed"] = c.seed;
    return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json &j)
{
    using detail::read_opt;
    PipelineConfig c;
    try
    {
        detail::reject_unknown(j,
                               {"frames", "feature_dim", "elem_budget", "total_points", "point_budget", "tile_size_m",
                                "ransac", "cluster", "track", "projection", "fusion", "seed"},
                               "config");
        read_opt(j, "frames", c.frames);
        read_opt(j, "feature_dim", c.dim);
        read_opt(j, "total_points", c.total_points);
        read_opt(j, "tile_size_m", c.tile_size_m);
        read_opt(j, "seed", c.seed);
        if (j.contains("elem_budget"))
        {
            const auto &b = j.at("elem_budget");
            detail::reject_unknown(b, {"agent", "open_set", "ground"}, "elem_budget");
            read_opt(b, "agent", c.elements.agent);
            read_opt(b, "open_set", c.elements.open_set);
            read_opt(b, "ground", c.elements.ground);
        }
        if (j.contains("point_budget"))
        {
            const auto &b = j.at("point_budget");
            detail::reject_unknown(b, {"agent", "open_set", "ground"}, "point_budget");
            read_opt(b, "agent", c.points.agent);
            read_opt(b, "open_set", c.points.open_set);
            read_opt(b, "ground", c.points.ground);
        }
        if (j.contains("ransac"))
        {
            const auto &r = j.at("ransac");
            detail::reject_unknown(r, {"iterations", "inlier_threshold_m"}, "ransac");
            read_opt(r, "iterations", c.ransac.iterations);
            read_opt(r, "inlier_threshold_m", c.ransac.inlier_threshold_m);
        }
        if (j.contains("cluster"))
        {
            const auto &r = j.at("cluster");
            detail::reject_unknown(r, {"radius_m", "min_points"}, "cluster");
            read_opt(r, "radius_m", c.cluster.radius_m);
            read_opt(r, "min_points", c.cluster.min_points);
        }
        if (j.contains("track"))
        {
            const auto &r = j.at("track");
            detail::reject_unknown(r,
                                   {"gate_m", "process_noise", "measurement_noise", "initial_velocity_variance",
                                    "max_missed_frames"},
                                   "track");
            read_opt(r, "gate_m", c.track.gate_m);
            read_opt(r, "process_noise", c.track.process_noise);
            read_opt(r, "measurement_noise", c.track.measurement_noise);
            read_opt(r, "initial_velocity_variance", c.track.initial_velocity_variance);
            read_opt(r, "max_missed_frames", c.track.max_missed_frames);
        }
        if (j.contains("projection"))
        {
            const auto &r = j.at("projection");
            detail::reject_unknown(r, {"sampling", "overlap"}, "projection");
            if (r.contains("sampling"))
            {
                const auto s = r.at("sampling").get<std::string>();
                if (s != "nearest" && s != "bilinear")
                    throw Error(ErrorCode::BadConfig, "projection.sampling must be 'nearest' or 'bilinear'");
                c.projection.sampling = s == "nearest" ? Sampling::nearest : Sampling::bilinear;
            }
            if (r.contains("overlap"))
            {
                const auto s = r.at("overlap").get<std::string>();
                if (s != "first_camera" && s != "average")
                    throw Error(ErrorCode::BadConfig, "projection.overlap must be 'first_camera' or 'average'");
                c.projection.overlap = s == "first_camera" ? OverlapRule::first_camera : OverlapRule::average;
            }
        }
        if (j.contains("fusion"))
        {
            const auto &r = j.at("fusion");
            detail::reject_unknown(r, {"hidden_dim", "heads", "attention"}, "fusion");
            read_opt(r, "hidden_dim", c.hidden_dim);
            read_opt(r, "heads", c.heads);
            read_opt(r, "attention", c.attention);
        }
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::BadConfig, std::string("config: ") + e.what());
    }
    validate_config(c);
    return c;
}

inline nlohmann::json parse_json_file(const std::filesystem::path &path)
{
    const auto raw = read_file(path);
    try
    {
        return nlohmann::json::parse(raw.begin(), raw.end());
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::BadConfig, path.string() + ": " + e.what());
    }
}

inline PipelineConfig read_config(const std::filesystem::path &path)
{
    return config_from_json(parse_json_file(path));
}

inline SynthSpec synth_spec_from_json(const nlohmann::json &j)
{
    using detail::read_opt;
    SynthSpec s;
    try
    {
        detail::reject_unknown(j,
                               {"n_agents", "n_clutter", "area_m", "frames", "cameras", "ground_points_per_frame",
                                "points_per_agent", "clutter_points_per_axis", "clutter_spacing_m", "ground_slope",
                                "agent_speed", "clutter_speed", "frame_dt", "feature_dim", "feature_height",
                                "feature_width", "separation_m"},
                               "synth spec");
        read_opt(j, "n_agents", s.n_agents);
        read_opt(j, "n_clutter", s.n_clutter);
        read_opt(j, "area_m", s.area_m);
        read_opt(j, "frames", s.frames);
        read_opt(j, "cameras", s.cameras);
        read_opt(j, "ground_points_per_frame", s.ground_points_per_frame);
        read_opt(j, "points_per_agent", s.points_per_agent);
        read_opt(j, "clutter_points_per_axis", s.clutter_points_per_axis);
        read_opt(j, "clutter_spacing_m", s.clutter_spacing_m);
        read_opt(j, "ground_slope", s.ground_slope);
        read_opt(j, "agent_speed", s.agent_speed);
        read_opt(j, "clutter_speed", s.clutter_speed);
        read_opt(j, "frame_dt", s.frame_dt);
        read_opt(j, "feature_dim", s.feature_dim);
        read_opt(j, "feature_height", s.feature_height);
        read_opt(j, "feature_width", s.feature_width);
        read_opt(j, "separation_m", s.separation_m);
    }
    catch (const nlohmann::json::exception &e)
    {
        throw Error(ErrorCode::BadConfig, std::string("synth spec: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------- checkpoint

template <typename S> void write_params(const std::filesystem::path &path, const FusionParams<S> &params)
{
    const auto &c = params.config;
    std::vector<Tensor> tensors;
    const std::vector<std::int64_t> shape_cfg{c.frames, c.dim, c.hidden, c.heads, c.attention ? 1 : 0};
    const std::vector<double> eps{c.layer_norm_eps};
    tensors.push_back(make_tensor("config.dims", {5}, shape_cfg));
    tensors.push_back(make_tensor("config.layer_norm_eps", {1}, eps));
    visit_params(params, [&](const std::string &name, const Mat<S> &m) {
        std::vector<S> v(m.data(), m.data() + m.size());
        tensors.push_back(make_tensor<S>(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                                         std::span<const S>(v)));
    });
    write_archive(path, tensors);
}

/// Loads a checkpoint stored as f32 or f64 and converts to S.
template <typename S> FusionParams<S> read_params(const std::filesystem::path &path)
{
    const auto tensors = read_archive(path);
    const auto ps = path.string();
    const auto dims = tensor_values<std::int64_t>(find_tensor(tensors, "config.dims", ps));
    const auto eps = tensor_values<double>(find_tensor(tensors, "config.layer_norm_eps", ps));
    if (dims.size() != 5 || eps.size() != 1)
        throw Error(ErrorCode::ShapeHeaderMismatch, ps + ": malformed config tensors");
    FusionConfig cfg;
    cfg.frames = static_cast<int>(dims[0]);
    cfg.dim = static_cast<int>(dims[1]);
    cfg.hidden = static_cast<int>(dims[2]);
    cfg.heads = static_cast<int>(dims[3]);
    cfg.attention = dims[4] != 0;
    cfg.layer_norm_eps = eps[0];

    auto params = cast_params<S>(init_fusion_params(cfg, 0));
    visit_params(params, [&](const std::string &name, Mat<S> &m) {
        const auto &t = find_tensor(tensors, name, ps);
        expect_shape(t, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, ps);
        if (t.dtype == DType::f64)
        {
            const auto v = tensor_values<double>(t);
            for (std::size_t i = 0; i < v.size(); ++i)
                m.data()[i] = static_cast<S>(v[i]);
        }
        else
        {
            const auto v = tensor_values<float>(t);
            for (std::size_t i = 0; i < v.size(); ++i)
                m.data()[i] = static_cast<S>(v[i]);
        }
    });
    return params;
}

} // namespace most

#endif // MOST_IO_HPP
