// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "composia/geometry.hpp"
#include "composia/rng.hpp"
#include "composia/tensor.hpp"

namespace composia::microworld {

using geometry::Box7;
using geometry::BoxTrack;
using geometry::Intrinsics;
using geometry::Pose;

/// Camera trajectory: per-frame intrinsics plus rig poses. Rig axes are
/// vehicle-style (x forward, y left, z up); the optical frame (x right,
/// y down, z forward) is a fixed permutation away.
struct CameraPath {
    std::vector<Intrinsics> intrinsics;
    std::vector<Pose> rig_poses;

    int frames() const { return static_cast<int>(rig_poses.size()); }
    /// World-to-optical-camera extrinsics for frame f.
    Pose world_to_camera(int f) const;
    static geometry::Matrix3d rig_to_optical();
};

/// Ground-plane marker: a grid x grid checkerboard square whose colored cells
/// carry palette index color_index. Interior lattice crossings are the
/// detectable corners.
struct Fiducial {
    int id = 0;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    double yaw = 0.0;
    double side = 2.4;
    int color_index = 0;
    int margin = 0;      // 0 = left of road, 1 = right
    int margin_rank = 0;  // position along its margin
};

struct FiducialMap {
    int grid = 3;
    std::vector<Fiducial> markers;

    /// Interior corner world positions (z = 0), ordered by (along-road, lateral).
    static std::array<Eigen::Vector3d, 4> corners_world(const Fiducial& m);
    /// Saturated palette used for marker coding; classification-friendly hues.
    static std::array<Eigen::Vector3d, 6> palette();
};

struct RoadLayout {
    int lanes = 2;
    double lane_width = 3.5;
    double curvature = 0.0;  // 1/m, 0 = straight
    double length = 120.0;
    double start_s = -20.0;

    double half_width() const { return 0.5 * lanes * lane_width; }
    /// Lane center lateral offset; lane 0 is the rightmost.
    double lane_center(int lane) const { return -half_width() + (lane + 0.5) * lane_width; }
    int lane_of(double d) const;
    /// Road-frame (s: along, d: lateral, heading) to world pose.
    Pose pose_at(double s, double d, double heading_offset = 0.0) const;
    /// Inverse mapping world (x, y) -> (s, d).
    void road_coords(double x, double y, double& s, double& d) const;
};

enum class EgoPrimitive { ConstantVelocity, LaneChangeLeft, LaneChangeRight, Stop, Accelerate };

std::string to_string(EgoPrimitive p);
EgoPrimitive ego_primitive_from_string(const std::string& s);

struct SceneParams {
    int frames = 16;
    int width = 64;
    int height = 64;
    double hz = 10.0;
    int lanes = 2;
    double lane_width = 3.5;
    int min_agents = 1;
    int max_agents = 4;
    double fiducial_spacing = 4.0;
    double fiducial_side = 2.4;
    double camera_height = 1.4;
    double focal_scale = 0.9;  // fx = fy = focal_scale * width
    std::vector<EgoPrimitive> primitives = {EgoPrimitive::ConstantVelocity, EgoPrimitive::LaneChangeLeft,
                                            EgoPrimitive::LaneChangeRight, EgoPrimitive::Stop,
                                            EgoPrimitive::Accelerate};
    bool allow_curved = true;
};

struct SceneSpec {
    int schema_version = 1;
    uint64_t seed = 0;
    int frames = 16;
    int width = 64;
    int height = 64;
    double hz = 10.0;
    RoadLayout road;
    EgoPrimitive ego_primitive = EgoPrimitive::ConstantVelocity;
    std::vector<Pose> ego_poses;     // vehicle pose on the ground per frame
    std::vector<double> ego_speed;   // m/s per frame
    int ego_lane = 0;
    Box7 ego_footprint;              // BEV footprint for collision checks
    CameraPath camera;               // derived: rig at camera height on the ego
    std::vector<BoxTrack> agents;
    FiducialMap fiducials;

    std::string to_json_string() const;
    static SceneSpec from_json_string(const std::string& s);
};

struct RenderOptions {
    int supersample = 4;
    bool id_buffer = false;
};

struct RenderedClip {
    nn::Tensor frames;  // F x H x W x 3 in [0,1]
    CameraPath camera;
    std::vector<BoxTrack> tracks;
    FiducialMap fiducials;
    std::vector<std::vector<int32_t>> ids;  // per frame H*W agent element ids (-1 none), when requested
};

struct EditSpec {
    enum class Kind { CutIn, FrontInsert, IdentitySwap, ActionBump };
    Kind kind = Kind::CutIn;
    int target_element_id = -1;  // cut_in / identity_swap target
    // cut_in
    int start_frame = 2;
    int duration_frames = 8;
    double amplitude = 1.0;  // 1 = all the way into the ego lane
    // front_insert
    double insert_distance = 25.0;  // meters ahead of the ego at frame 0
    double insert_speed = 4.0;
    // identity_swap
    std::string reference_image;  // path to a PNG/clip frame crop
    Eigen::Vector3d box_size = Eigen::Vector3d(4.5, 1.9, 1.5);  // length, width, height
    // action_bump
    double bump_amplitude = 0.25;  // meters, lateral
    int bump_start_frame = 3;
    int bump_duration_frames = 10;
    double bump_accel_bound = 12.0; // m/s^2

    std::string to_json_string() const;
    static EditSpec from_json_string(const std::string& s);
    static std::string kind_name(Kind k);
    static Kind kind_from_name(const std::string& s);
};

// ---- operations -----------------------------------------------------------------

/// Deterministic procedural scene; identical (seed, params) give byte-identical specs.
SceneSpec generate_scene(uint64_t seed, const SceneParams& params);

/// Deterministic flat-shaded render of a scene with full annotations.
RenderedClip render_clip(const SceneSpec& spec, const RenderOptions& opts = {});

/// Scene indices where a cut-in edit is applicable: ego moving forward, ego
/// lane clear ahead, and at least one adjacent-lane vehicle alongside.
std::vector<size_t> filter_cut_in_candidates(const std::vector<SceneSpec>& dataset);

/// Scene indices where a frontal insertion applies: ego moving forward with
/// no leading vehicle ahead in its lane.
std::vector<size_t> filter_front_insert_candidates(const std::vector<SceneSpec>& dataset);

bool is_cut_in_candidate(const SceneSpec& spec, int* adjacent_agent_id = nullptr);
bool is_front_insert_candidate(const SceneSpec& spec);

/// Apply a structure edit (cut_in or front_insert); everything except the
/// targeted/added track is preserved exactly.
SceneSpec apply_structure_edit(const SceneSpec& spec, const EditSpec& edit);

struct BumpParams {
    double amplitude = 0.25;       // lateral meters
    int start_frame = 3;
    int duration_frames = 10;
    double accel_bound = 12.0;     // m/s^2 cap on the added lateral acceleration
    double longitudinal_amplitude = 0.0;  // optional along-path offset, meters
    double hz = 10.0;
};

/// Smooth bump perturbation of a camera path: zero value and zero first and
/// second derivatives at the window boundaries; start/end poses preserved.
CameraPath perturb_action(const CameraPath& path, const BumpParams& bump);

/// Max amplitude satisfying the acceleration bound for a window length.
double bump_max_amplitude(double accel_bound, int duration_frames, double hz);

/// Colors for agents (by color id) and helpers shared with detection and tests.
Eigen::Vector3d agent_base_color(int color_id);

}  // namespace composia::microworld
