// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "composia/common.hpp"

namespace composia::geometry {

using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector3d;

/// Rigid transform. Convention: `world_from_local` — applying a Pose maps
/// local coordinates into the parent (world) frame.
struct Pose {
    Matrix3d rotation = Matrix3d::Identity();
    Vector3d translation = Vector3d::Zero();

    static Pose identity() { return {}; }
    static Pose from_xy_yaw(double x, double y, double yaw, double z = 0.0);
    static Pose from_matrix(const Matrix4d& m);

    Matrix4d matrix() const;
    Pose inverse() const;
    Pose compose(const Pose& other) const;  // this * other
    Vector3d apply(const Vector3d& p) const { return rotation * p + translation; }

    /// Heading angle from the planar (x,y) block of the rotation.
    double yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

    /// R orthonormal within tol and det(R) = +1 within tol.
    bool valid(double tol = 1e-9) const;
};

struct Intrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    bool valid() const {
        return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
    }
    Matrix3d matrix() const;
};

/// One frame of a 3D box: center (m), size (length, width, height) (m), yaw (rad).
struct Box7 {
    Vector3d center = Vector3d::Zero();
    Vector3d size = Vector3d::Zero();  // length (x), width (y), height (z)
    double yaw = 0.0;

    bool valid() const {
        return size.x() > 0 && size.y() > 0 && size.z() > 0 && yaw > -M_PI - 1e-12 && yaw <= M_PI + 1e-12;
    }
    /// 8 corners in world coordinates; bit 0 = +x, bit 1 = +y, bit 2 = +z of the local box.
    std::array<Vector3d, 8> corners() const;
};

/// Per-element box sequence over a clip; absent frames are disabled.
struct BoxTrack {
    int element_id = 0;
    std::string category = "car";
    int color_id = 0;
    std::vector<Box7> boxes;
    std::vector<bool> present;

    int frames() const { return static_cast<int>(boxes.size()); }
    bool present_at(int f) const { return f >= 0 && f < frames() && present[static_cast<size_t>(f)]; }
};

/// Projected box outline: one polyline segment per box edge with a visibility flag.
struct Polyline2D {
    struct Segment {
        Vector2d a, b;
        bool visible = false;
    };
    std::vector<Segment> segments;
    bool empty_or_hidden() const {
        for (const auto& s : segments)
            if (s.visible) return false;
        return true;
    }
};

/// Per-frame planar motion residuals (dx, dy, dyaw) in the moving frame;
/// the final entry duplicates the previous one.
struct ActionResiduals {
    std::vector<Eigen::Vector3d> a;
    int frames() const { return static_cast<int>(a.size()); }
};

/// Per-frame invertible block-diagonal matrices acting on channel quadruples;
/// every 4x4 block is the homogeneous camera projection of that frame.
struct PropeMatrices {
    std::vector<Matrix4d> block;      // one 4x4 block per frame (repeated across quadruples)
    int channels = 0;                 // reduced channel count (divisible by 4)
    int blocks_per_frame() const { return channels / 4; }
    int frames() const { return static_cast<int>(block.size()); }
};

struct TrajectoryMetrics {
    double rot_err = 0.0;        // radians, summed over frames
    double trans_err = 0.0;      // meters^2, summed over frames
    double trans_err_scaled() const { return trans_err * 1000.0; }
};

// ---- operations ----------------------------------------------------------------

/// Relative transform between consecutive poses and its planar residual
/// (dx, dy, dyaw). Callers duplicate the previous residual for the final frame.
std::pair<Pose, Eigen::Vector3d> relative_transform(const Pose& t_i, const Pose& t_next);

/// Project a box outline through intrinsics K and world-to-camera extrinsics E
/// (camera axes: x right, y down, z forward). Edges are clipped against the
/// near plane; a box fully behind the camera yields an empty polyline.
Polyline2D project_box(const Box7& box, const Intrinsics& K, const Pose& world_to_camera,
                       double z_near = 0.1);

/// Project a world point; returns pixel coordinates when z > z_near.
std::optional<Vector2d> project_point(const Vector3d& p_world, const Intrinsics& K,
                                      const Pose& world_to_camera, double z_near = 0.1);

/// Homogeneous 4x4 projection K_hat * world_to_camera with unit bottom-right block.
Matrix4d homogeneous_projection(const Intrinsics& K, const Pose& world_to_camera);

/// Block-diagonal projective matrices at a reduced channel count (divisible by 4).
PropeMatrices prope_matrices(const std::vector<Intrinsics>& k_seq,
                             const std::vector<Pose>& world_to_camera_seq, int reduced_channels);

/// Sum of per-frame geodesic rotation angles after first-frame alignment.
double rot_err(const std::vector<Pose>& gen, const std::vector<Pose>& gt);

/// Sum of squared translation distances after first-frame alignment (meters^2).
/// Report scaled by 1000 where the metric tables ask for it.
double trans_err(const std::vector<Pose>& gen, const std::vector<Pose>& gt);

/// Axis-aligned-in-local-frame rectangle in the ground plane (BEV).
struct ObbRect {
    Vector2d center = Vector2d::Zero();
    double half_length = 0.0;  // along heading
    double half_width = 0.0;
    double yaw = 0.0;
};

ObbRect bev_rect(const Box7& box);

/// Separating-axis overlap test over the four candidate axes.
bool obb_overlap(const ObbRect& a, const ObbRect& b);

double wrap_angle(double a);

}  // namespace composia::geometry
