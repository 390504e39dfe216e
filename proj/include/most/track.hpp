#ifndef MOST_TRACK_HPP
#define MOST_TRACK_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "most/types.hpp"

namespace most
{

using StateVector = Eigen::Matrix<double, 6, 1>;
using StateMatrix = Eigen::Matrix<double, 6, 6>;

/// Constant-velocity state: position xyz then velocity xyz.
struct TrackState
{
    StateVector mean = StateVector::Zero();
    StateMatrix covariance = StateMatrix::Zero();
    Box box;
    int age = 0;
    int missed = 0;

    Vec3 position() const { return {mean(0), mean(1), mean(2)}; }
};

inline TrackState start_track(const Box &measured, const TrackConfig &config)
{
    TrackState s;
    s.mean.head<3>() = Eigen::Vector3d(measured.center[0], measured.center[1], measured.center[2]);
    s.covariance.diagonal() << config.measurement_noise, config.measurement_noise, config.measurement_noise,
        config.initial_velocity_variance, config.initial_velocity_variance, config.initial_velocity_variance;
    s.box = measured;
    s.age = 1;
    return s;
}

inline StateMatrix transition(double dt)
{
    StateMatrix F = StateMatrix::Identity();
    F.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity() * dt;
    return F;
}

/// x <- F x, P <- F P F^T + Q with Q on the velocity block only.
inline TrackState predict(const TrackState &state, double dt, const TrackConfig &config)
{
    const StateMatrix F = transition(dt);
    TrackState out = state;
    out.mean = F * state.mean;
    StateMatrix P = F * state.covariance * F.transpose();
    P.diagonal().tail<3>().array() += config.process_noise;
    out.covariance = 0.5 * (P + P.transpose());
    return out;
}

/// Kalman update with a position-only observation. Size and heading are
/// copied from the measured box.
inline TrackState update(const TrackState &state, const Box &measured, const TrackConfig &config)
{
    Eigen::Matrix<double, 3, 6> H = Eigen::Matrix<double, 3, 6>::Zero();
    H.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d R = Eigen::Matrix3d::Identity() * config.measurement_noise;
    const Eigen::Vector3d z(measured.center[0], measured.center[1], measured.center[2]);

    const Eigen::Vector3d innovation = z - H * state.mean;
    const Eigen::Matrix3d S = H * state.covariance * H.transpose() + R;
    const Eigen::Matrix<double, 6, 3> K = state.covariance * H.transpose() * S.inverse();

    TrackState out = state;
    out.mean = state.mean + K * innovation;
    const StateMatrix I_KH = StateMatrix::Identity() - K * H;
    // Joseph form keeps P symmetric positive semidefinite
    StateMatrix P = I_KH * state.covariance * I_KH.transpose() + K * R * K.transpose();
    out.covariance = 0.5 * (P + P.transpose());
    out.box = measured;
    out.age = state.age + 1;
    out.missed = 0;
    return out;
}

struct Association
{
    std::vector<std::pair<std::size_t, std::size_t>> matches; // (track, detection)
    std::vector<std::size_t> unmatched_tracks;
    std::vector<std::size_t> unmatched_detections;
};

/// Greedy nearest-first matching on center distance; pairs beyond the gate
/// are never matched.
inline Association associate(std::span<const Vec3> tracks, std::span<const Vec3> detections, double gate)
{
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < tracks.size(); ++t)
    {
        for (std::size_t d = 0; d < detections.size(); ++d)
        {
            const double dx = tracks[t][0] - detections[d][0];
            const double dy = tracks[t][1] - detections[d][1];
            const double dz = tracks[t][2] - detections[d][2];
            const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (dist <= gate)
                pairs.emplace_back(dist, t, d);
        }
    }
    std::sort(pairs.begin(), pairs.end());

    Association out;
    std::vector<std::uint8_t> track_used(tracks.size(), 0), det_used(detections.size(), 0);
    for (const auto &[dist, t, d] : pairs)
    {
        if (track_used[t] || det_used[d])
            continue;
        track_used[t] = det_used[d] = 1;
        out.matches.emplace_back(t, d);
    }
    std::sort(out.matches.begin(), out.matches.end());
    for (std::size_t t = 0; t < tracks.size(); ++t)
        if (!track_used[t])
            out.unmatched_tracks.push_back(t);
    for (std::size_t d = 0; d < detections.size(); ++d)
        if (!det_used[d])
            out.unmatched_detections.push_back(d);
    return out;
}

struct Detection
{
    Box box;
    std::size_t point_count = 0;
};

struct TrackedElement
{
    std::vector<BoxRow> boxes;             // measured box per frame, zeros where unmatched
    std::vector<std::uint8_t> frame_valid;
    std::vector<std::int32_t> detection;   // detection index per frame, -1 where unmatched
    std::size_t point_count = 0;
};

struct TrackingResult
{
    std::vector<TrackedElement> tracks;
    std::vector<std::vector<std::int32_t>> detection_track; // per frame, per detection
};

/// Runs the filter over time-ordered per-frame detections. A track that
/// misses more than `max_missed_frames` consecutive frames is retired and
/// never revived.
inline TrackingResult track_open_set(const std::vector<std::vector<Detection>> &frames, double dt,
                                     const TrackConfig &config)
{
    const std::size_t T = frames.size();
    TrackingResult out;
    out.detection_track.resize(T);

    struct Live
    {
        std::size_t id;
        TrackState state;
    };
    std::vector<Live> live;

    auto new_track = [&](std::size_t frame, std::size_t det) {
        TrackedElement e;
        e.boxes.assign(T, BoxRow{});
        e.frame_valid.assign(T, 0);
        e.detection.assign(T, -1);
        const auto &d = frames[frame][det];
        e.boxes[frame] = d.box.row();
        e.frame_valid[frame] = 1;
        e.detection[frame] = static_cast<std::int32_t>(det);
        e.point_count = d.point_count;
        const std::size_t id = out.tracks.size();
        out.tracks.push_back(std::move(e));
        live.push_back({id, start_track(d.box, config)});
        out.detection_track[frame][det] = static_cast<std::int32_t>(id);
    };

    for (std::size_t f = 0; f < T; ++f)
    {
        const auto &dets = frames[f];
        out.detection_track[f].assign(dets.size(), -1);

        if (f > 0)
            for (auto &l : live)
                l.state = predict(l.state, dt, config);

        std::vector<Vec3> track_pos;
        track_pos.reserve(live.size());
        for (const auto &l : live)
            track_pos.push_back(l.state.position());
        std::vector<Vec3> det_pos;
        det_pos.reserve(dets.size());
        for (const auto &d : dets)
            det_pos.push_back(d.box.center);

        const auto assoc = associate(track_pos, det_pos, config.gate_m);
        for (const auto &[ti, di] : assoc.matches)
        {
            auto &l = live[ti];
            l.state = update(l.state, dets[di].box, config);
            auto &e = out.tracks[l.id];
            e.boxes[f] = dets[di].box.row();
            e.frame_valid[f] = 1;
            e.detection[f] = static_cast<std::int32_t>(di);
            e.point_count += dets[di].point_count;
            out.detection_track[f][di] = static_cast<std::int32_t>(l.id);
        }
        for (auto ti : assoc.unmatched_tracks)
            ++live[ti].state.missed;

        std::erase_if(live, [&](const Live &l) { return l.state.missed > config.max_missed_frames; });

        for (auto di : assoc.unmatched_detections)
            new_track(f, di);
    }
    return out;
}

} // namespace most

#endif // MOST_TRACK_HPP
