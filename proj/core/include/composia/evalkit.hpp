// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "composia/geometry.hpp"
#include "composia/microworld.hpp"
#include "composia/tensor.hpp"

namespace composia::evalkit {

struct DetectedMarker {
    int id = -1;
    int color_index = -1;
    // ordered [near-right, near-left, far-right, far-left] in image space,
    // matching the world corner order of FiducialMap::corners_world
    std::array<Eigen::Vector2d, 4> corners;
};

/// Checkerboard-crossing detection (quadrant template correlation over several
/// radii, quadratic sub-pixel fit), color-coded identity resolved against the
/// known map by homography-verified hypothesis search. Pure per-frame function.
std::vector<DetectedMarker> detect_fiducials(const nn::Tensor& frame,
                                             const microworld::FiducialMap& map);

struct RecoveredTrajectory {
    std::vector<geometry::Pose> rig_poses;    // vehicle-axes camera pose per frame
    std::vector<double> reproj_residual_px;   // mean reprojection residual
    std::vector<bool> valid;
    double valid_fraction() const;
};

/// Per-frame plane-based pose recovery: homography initialization over the
/// detected marker corners, Gauss-Newton refinement on reprojection error.
/// Frames with fewer than 4 corner correspondences are flagged invalid.
RecoveredTrajectory recover_trajectory(const nn::Tensor& clip, const microworld::FiducialMap& map,
                                       const geometry::Intrinsics& K,
                                       double validity_residual_px = 2.0);

struct ActionMetrics {
    double rot_err = 0.0;           // radians, summed over evaluated frames
    double trans_err_scaled = 0.0;  // meters^2 x 1000
    int frames_evaluated = 0;
};

/// Trajectory metrics of a generated clip against the conditioning path.
/// Requires recovery on at least min_valid_fraction of the frames.
ActionMetrics evaluate_action(const nn::Tensor& gen_clip, const std::vector<geometry::Pose>& gt_rig,
                              const microworld::FiducialMap& map, const geometry::Intrinsics& K,
                              double min_valid_fraction = 0.8);

struct PlanRollout {
    std::vector<geometry::Pose> poses;  // pose after k steps, k = 1..horizon
    double hz = 10.0;
};

/// Constant-velocity / constant-yaw-rate extrapolation of the ego state
/// estimated from the last 0.5 s of history.
PlanRollout rollout_planner(const std::vector<geometry::Pose>& history, double hz, double horizon_s);

/// Collision flags at the 1 s / 2 s / 3 s horizons: any rollout frame within
/// the horizon whose ego footprint overlaps any agent box. Agent tracks must
/// cover history_frames + horizon.
std::array<bool, 3> collision_horizons(const PlanRollout& rollout,
                                       const std::vector<geometry::BoxTrack>& agents,
                                       int history_frames, const geometry::Box7& ego_footprint);

/// L2 position error (m) at the 1 s / 2 s / 3 s horizon endpoints.
std::array<double, 3> l2_error(const PlanRollout& rollout, const std::vector<geometry::Pose>& gt_future);

// ---- report -------------------------------------------------------------------------

struct SceneMetrics {
    std::string scene_id;
    std::optional<double> rot_err;
    std::optional<double> trans_err_scaled;
    std::optional<std::array<bool, 3>> collisions;
    std::optional<std::array<double, 3>> l2;
};

struct MetricsReport {
    std::vector<SceneMetrics> rows;

    double mean_rot_err() const;
    double mean_trans_err_scaled() const;
    std::array<double, 3> collision_rates() const;
    std::array<double, 3> mean_l2() const;

    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path, const std::string& config_echo) const;
    void write_plots(const std::filesystem::path& dir) const;
    static MetricsReport from_csv(const std::filesystem::path& path);
};

}  // namespace composia::evalkit
