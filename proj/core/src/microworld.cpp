// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/microworld.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "composia/geometry.hpp"

namespace composia::microworld {

using geometry::Matrix3d;
using geometry::Vector2d;
using geometry::Vector3d;
using json = nlohmann::ordered_json;

// ---- camera ---------------------------------------------------------------------

Matrix3d CameraPath::rig_to_optical() {
    // optical x = -rig y (right), optical y = -rig z (down), optical z = rig x (forward)
    Matrix3d m;
    m << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    return m;
}

Pose CameraPath::world_to_camera(int f) const {
    COMPOSIA_CHECK(f >= 0 && f < frames());
    Pose optical;
    optical.rotation = rig_poses[static_cast<size_t>(f)].rotation * rig_to_optical().transpose();
    optical.translation = rig_poses[static_cast<size_t>(f)].translation;
    return optical.inverse();
}

// ---- fiducials --------------------------------------------------------------------

std::array<Vector3d, 4> FiducialMap::corners_world(const Fiducial& m) {
    // interior lattice crossings of the 3x3 checkerboard, ordered (along, lateral)
    const double cell = m.side / 3.0;
    const double c = std::cos(m.yaw), s = std::sin(m.yaw);
    std::array<Vector3d, 4> out;
    int k = 0;
    for (double du : {-0.5 * cell, 0.5 * cell})
        for (double dv : {-0.5 * cell, 0.5 * cell}) {
            out[static_cast<size_t>(k++)] =
                Vector3d(m.center.x() + c * du - s * dv, m.center.y() + s * du + c * dv, 0.0);
        }
    return out;
}

std::array<Vector3d, 6> FiducialMap::palette() {
    return {Vector3d(0.93, 0.12, 0.12), Vector3d(0.95, 0.85, 0.10), Vector3d(0.10, 0.80, 0.15),
            Vector3d(0.10, 0.85, 0.85), Vector3d(0.15, 0.20, 0.95), Vector3d(0.90, 0.15, 0.90)};
}

namespace {

// Cyclic sequence over 6 symbols in which every ordered pair of consecutive
// symbols is unique (Eulerian circuit over the complete pair graph). Marker
// colors follow it so any two neighboring markers identify their map index.
std::vector<int> debruijn_pair_sequence(int k) {
    std::vector<std::vector<int>> next(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
        for (int j = k - 1; j >= 0; --j) next[static_cast<size_t>(i)].push_back(j);
    std::vector<int> stack = {0};
    std::vector<int> circuit;
    while (!stack.empty()) {
        const int v = stack.back();
        if (!next[static_cast<size_t>(v)].empty()) {
            const int u = next[static_cast<size_t>(v)].back();
            next[static_cast<size_t>(v)].pop_back();
            stack.push_back(u);
        } else {
            circuit.push_back(v);
            stack.pop_back();
        }
    }
    circuit.pop_back();  // drop the duplicated start
    std::reverse(circuit.begin(), circuit.end());
    return circuit;  // length k*k
}

const std::vector<int>& marker_color_sequence() {
    static const std::vector<int> seq = debruijn_pair_sequence(6);
    return seq;
}

}  // namespace

// ---- road -----------------------------------------------------------------------------

int RoadLayout::lane_of(double d) const {
    const int lane = static_cast<int>(std::floor((d + half_width()) / lane_width));
    return std::clamp(lane, -1, lanes);  // -1 / lanes mean "off road"
}

Pose RoadLayout::pose_at(double s, double d, double heading_offset) const {
    if (curvature == 0.0) return Pose::from_xy_yaw(s, d, heading_offset);
    const double r = 1.0 / curvature;
    const double phi = s * curvature;
    const double x = (r - d) * std::sin(phi);
    const double y = r - (r - d) * std::cos(phi);
    return Pose::from_xy_yaw(x, y, geometry::wrap_angle(phi + heading_offset));
}

void RoadLayout::road_coords(double x, double y, double& s, double& d) const {
    if (curvature == 0.0) {
        s = x;
        d = y;
        return;
    }
    const double r = 1.0 / curvature;
    if (r > 0) {
        const double phi = std::atan2(x, r - y);
        d = r - std::hypot(x, r - y);
        s = phi * r;
    } else {
        const double phi = std::atan2(-x, y - r);
        d = r + std::hypot(x, y - r);
        s = phi * r;
    }
}

std::string to_string(EgoPrimitive p) {
    switch (p) {
        case EgoPrimitive::ConstantVelocity: return "constant_velocity";
        case EgoPrimitive::LaneChangeLeft: return "lane_change_left";
        case EgoPrimitive::LaneChangeRight: return "lane_change_right";
        case EgoPrimitive::Stop: return "stop";
        case EgoPrimitive::Accelerate: return "accelerate";
    }
    return "constant_velocity";
}

EgoPrimitive ego_primitive_from_string(const std::string& s) {
    if (s == "constant_velocity") return EgoPrimitive::ConstantVelocity;
    if (s == "lane_change_left") return EgoPrimitive::LaneChangeLeft;
    if (s == "lane_change_right") return EgoPrimitive::LaneChangeRight;
    if (s == "stop") return EgoPrimitive::Stop;
    if (s == "accelerate") return EgoPrimitive::Accelerate;
    COMPOSIA_THROW("unknown ego primitive " << s);
}

// ---- JSON -----------------------------------------------------------------------------

namespace {

json pose_to_json(const Pose& p) {
    json j;
    j["r"] = std::vector<double>(p.rotation.data(), p.rotation.data() + 9);  // column-major
    j["t"] = std::vector<double>{p.translation.x(), p.translation.y(), p.translation.z()};
    return j;
}

Pose pose_from_json(const json& j) {
    Pose p;
    const auto r = j.at("r").get<std::vector<double>>();
    COMPOSIA_CHECK(r.size() == 9);
    for (int i = 0; i < 9; ++i) p.rotation.data()[i] = r[static_cast<size_t>(i)];
    const auto t = j.at("t").get<std::vector<double>>();
    p.translation = Vector3d(t[0], t[1], t[2]);
    return p;
}

json box_to_json(const Box7& b) {
    return json::array({b.center.x(), b.center.y(), b.center.z(), b.size.x(), b.size.y(), b.size.z(), b.yaw});
}

Box7 box_from_json(const json& j) {
    Box7 b;
    b.center = Vector3d(j[0], j[1], j[2]);
    b.size = Vector3d(j[3], j[4], j[5]);
    b.yaw = j[6];
    return b;
}

json track_to_json(const BoxTrack& t) {
    json j;
    j["element_id"] = t.element_id;
    j["category"] = t.category;
    j["color_id"] = t.color_id;
    j["present"] = t.present;
    json boxes = json::array();
    for (const Box7& b : t.boxes) boxes.push_back(box_to_json(b));
    j["boxes"] = boxes;
    return j;
}

BoxTrack track_from_json(const json& j) {
    BoxTrack t;
    t.element_id = j.at("element_id");
    t.category = j.at("category");
    t.color_id = j.at("color_id");
    t.present = j.at("present").get<std::vector<bool>>();
    for (const auto& b : j.at("boxes")) t.boxes.push_back(box_from_json(b));
    return t;
}

json intrinsics_to_json(const Intrinsics& k) {
    json j;
    j["fx"] = k.fx;
    j["fy"] = k.fy;
    j["cx"] = k.cx;
    j["cy"] = k.cy;
    j["width"] = k.width;
    j["height"] = k.height;
    return j;
}

Intrinsics intrinsics_from_json(const json& j) {
    Intrinsics k;
    k.fx = j.at("fx");
    k.fy = j.at("fy");
    k.cx = j.at("cx");
    k.cy = j.at("cy");
    k.width = j.at("width");
    k.height = j.at("height");
    return k;
}

json camera_to_json(const CameraPath& c) {
    json j;
    json ks = json::array(), ps = json::array();
    for (const auto& k : c.intrinsics) ks.push_back(intrinsics_to_json(k));
    for (const auto& p : c.rig_poses) ps.push_back(pose_to_json(p));
    j["intrinsics"] = ks;
    j["rig_poses"] = ps;
    return j;
}

CameraPath camera_from_json(const json& j) {
    CameraPath c;
    for (const auto& k : j.at("intrinsics")) c.intrinsics.push_back(intrinsics_from_json(k));
    for (const auto& p : j.at("rig_poses")) c.rig_poses.push_back(pose_from_json(p));
    return c;
}

json fiducials_to_json(const FiducialMap& f) {
    json j;
    j["grid"] = f.grid;
    json ms = json::array();
    for (const auto& m : f.markers) {
        json e;
        e["id"] = m.id;
        e["center"] = std::vector<double>{m.center.x(), m.center.y()};
        e["yaw"] = m.yaw;
        e["side"] = m.side;
        e["color_index"] = m.color_index;
        e["margin"] = m.margin;
        e["margin_rank"] = m.margin_rank;
        ms.push_back(e);
    }
    j["markers"] = ms;
    return j;
}

FiducialMap fiducials_from_json(const json& j) {
    FiducialMap f;
    f.grid = j.at("grid");
    for (const auto& e : j.at("markers")) {
        Fiducial m;
        m.id = e.at("id");
        const auto c = e.at("center").get<std::vector<double>>();
        m.center = Vector2d(c[0], c[1]);
        m.yaw = e.at("yaw");
        m.side = e.at("side");
        m.color_index = e.at("color_index");
        m.margin = e.at("margin");
        m.margin_rank = e.at("margin_rank");
        f.markers.push_back(m);
    }
    return f;
}

}  // namespace

std::string SceneSpec::to_json_string() const {
    json j;
    j["schema_version"] = schema_version;
    j["seed"] = seed;
    j["frames"] = frames;
    j["width"] = width;
    j["height"] = height;
    j["hz"] = hz;
    j["road"] = {{"lanes", road.lanes},
                 {"lane_width", road.lane_width},
                 {"curvature", road.curvature},
                 {"length", road.length},
                 {"start_s", road.start_s}};
    j["ego_primitive"] = to_string(ego_primitive);
    json poses = json::array();
    for (const auto& p : ego_poses) poses.push_back(pose_to_json(p));
    j["ego_poses"] = poses;
    j["ego_speed"] = ego_speed;
    j["ego_lane"] = ego_lane;
    j["ego_footprint"] = box_to_json(ego_footprint);
    j["camera"] = camera_to_json(camera);
    json ag = json::array();
    for (const auto& t : agents) ag.push_back(track_to_json(t));
    j["agents"] = ag;
    j["fiducials"] = fiducials_to_json(fiducials);
    return j.dump(1);
}

SceneSpec SceneSpec::from_json_string(const std::string& s) {
    const json j = json::parse(s);
    SceneSpec spec;
    spec.schema_version = j.at("schema_version");
    COMPOSIA_CHECK(spec.schema_version == 1, << "unsupported scene schema version");
    spec.seed = j.at("seed");
    spec.frames = j.at("frames");
    spec.width = j.at("width");
    spec.height = j.at("height");
    spec.hz = j.at("hz");
    spec.road.lanes = j.at("road").at("lanes");
    spec.road.lane_width = j.at("road").at("lane_width");
    spec.road.curvature = j.at("road").at("curvature");
    spec.road.length = j.at("road").at("length");
    spec.road.start_s = j.at("road").at("start_s");
    spec.ego_primitive = ego_primitive_from_string(j.at("ego_primitive"));
    for (const auto& p : j.at("ego_poses")) spec.ego_poses.push_back(pose_from_json(p));
    spec.ego_speed = j.at("ego_speed").get<std::vector<double>>();
    spec.ego_lane = j.at("ego_lane");
    spec.ego_footprint = box_from_json(j.at("ego_footprint"));
    spec.camera = camera_from_json(j.at("camera"));
    for (const auto& t : j.at("agents")) spec.agents.push_back(track_from_json(t));
    spec.fiducials = fiducials_from_json(j.at("fiducials"));
    return spec;
}

std::string EditSpec::kind_name(Kind k) {
    switch (k) {
        case Kind::CutIn: return "cut_in";
        case Kind::FrontInsert: return "front_insert";
        case Kind::IdentitySwap: return "identity_swap";
        case Kind::ActionBump: return "action_bump";
    }
    return "cut_in";
}

EditSpec::Kind EditSpec::kind_from_name(const std::string& s) {
    if (s == "cut_in") return Kind::CutIn;
    if (s == "front_insert") return Kind::FrontInsert;
    if (s == "identity_swap") return Kind::IdentitySwap;
    if (s == "action_bump") return Kind::ActionBump;
    COMPOSIA_THROW("unknown edit kind " << s);
}

std::string EditSpec::to_json_string() const {
    json j;
    j["kind"] = kind_name(kind);
    j["target_element_id"] = target_element_id;
    j["start_frame"] = start_frame;
    j["duration_frames"] = duration_frames;
    j["amplitude"] = amplitude;
    j["insert_distance"] = insert_distance;
    j["insert_speed"] = insert_speed;
    j["reference_image"] = reference_image;
    j["box_size"] = std::vector<double>{box_size.x(), box_size.y(), box_size.z()};
    j["bump_amplitude"] = bump_amplitude;
    j["bump_start_frame"] = bump_start_frame;
    j["bump_duration_frames"] = bump_duration_frames;
    j["bump_accel_bound"] = bump_accel_bound;
    return j.dump(1);
}

EditSpec EditSpec::from_json_string(const std::string& s) {
    const json j = json::parse(s);
    EditSpec e;
    e.kind = kind_from_name(j.at("kind"));
    e.target_element_id = j.value("target_element_id", -1);
    e.start_frame = j.value("start_frame", 2);
    e.duration_frames = j.value("duration_frames", 8);
    e.amplitude = j.value("amplitude", 1.0);
    e.insert_distance = j.value("insert_distance", 25.0);
    e.insert_speed = j.value("insert_speed", 4.0);
    e.reference_image = j.value("reference_image", std::string());
    if (j.contains("box_size")) {
        const auto b = j.at("box_size").get<std::vector<double>>();
        e.box_size = Vector3d(b[0], b[1], b[2]);
    }
    e.bump_amplitude = j.value("bump_amplitude", 0.8);
    e.bump_start_frame = j.value("bump_start_frame", 4);
    e.bump_duration_frames = j.value("bump_duration_frames", 8);
    e.bump_accel_bound = j.value("bump_accel_bound", 4.0);
    return e;
}

// ---- scene generation ------------------------------------------------------------------

Eigen::Vector3d agent_base_color(int color_id) {
    // muted palette, deliberately away from the saturated marker hues
    static const std::array<Vector3d, 8> colors = {
        Vector3d(0.55, 0.16, 0.12), Vector3d(0.14, 0.22, 0.48), Vector3d(0.16, 0.38, 0.20),
        Vector3d(0.45, 0.30, 0.12), Vector3d(0.38, 0.38, 0.42), Vector3d(0.12, 0.40, 0.42),
        Vector3d(0.48, 0.20, 0.40), Vector3d(0.60, 0.42, 0.10)};
    return colors[static_cast<size_t>(color_id % static_cast<int>(colors.size()))];
}

namespace {

double smoothstep_cos(double t) {  // C1 ramp 0 -> 1
    t = std::clamp(t, 0.0, 1.0);
    return 0.5 * (1.0 - std::cos(M_PI * t));
}

Box7 agent_box(const RoadLayout& road, const std::string& category, double s, double d, double heading_offset,
               const Vector3d& size) {
    const Pose p = road.pose_at(s, d, heading_offset);
    Box7 b;
    b.center = Vector3d(p.translation.x(), p.translation.y(), 0.5 * size.z());
    b.size = size;
    b.yaw = geometry::wrap_angle(p.yaw());
    (void)category;
    return b;
}

struct EgoProfile {
    std::vector<double> s, d, speed;
};

EgoProfile make_ego_profile(EgoPrimitive prim, const RoadLayout& road, int ego_lane, int frames,
                            double dt, Rng& rng) {
    EgoProfile out;
    out.s.resize(static_cast<size_t>(frames));
    out.d.resize(static_cast<size_t>(frames));
    out.speed.resize(static_cast<size_t>(frames));
    const double v0 = rng.uniform(5.0, 9.0);
    const double d0 = road.lane_center(ego_lane);
    double target_d = d0;
    if (prim == EgoPrimitive::LaneChangeLeft) target_d = road.lane_center(ego_lane + 1);
    if (prim == EgoPrimitive::LaneChangeRight) target_d = road.lane_center(ego_lane - 1);
    const double accel = prim == EgoPrimitive::Accelerate ? rng.uniform(1.2, 2.5) : 0.0;
    const double total = frames * dt;
    const double brake = prim == EgoPrimitive::Stop ? v0 / (rng.uniform(0.55, 0.75) * total) : 0.0;
    const double lc_start = 0.15, lc_end = 0.85;
    double s = 0.0;
    for (int f = 0; f < frames; ++f) {
        const double t = f * dt;
        double v = v0 + accel * t - brake * t;
        v = std::max(0.0, v);
        out.speed[static_cast<size_t>(f)] = v;
        out.s[static_cast<size_t>(f)] = s;
        double mix = 0.0;
        if (prim == EgoPrimitive::LaneChangeLeft || prim == EgoPrimitive::LaneChangeRight) {
            mix = smoothstep_cos((t / total - lc_start) / (lc_end - lc_start));
        }
        out.d[static_cast<size_t>(f)] = d0 + mix * (target_d - d0);
        s += v * dt;
    }
    return out;
}

}  // namespace

SceneSpec generate_scene(uint64_t seed, const SceneParams& params) {
    COMPOSIA_CHECK(params.frames >= 2 && params.width > 0 && params.height > 0);
    COMPOSIA_CHECK(params.width % 8 == 0 && params.height % 8 == 0,
                   << "render dimensions must be divisible by 8 for the codec");
    Rng rng(seed ^ 0xc0de5eedULL);

    SceneSpec spec;
    spec.seed = seed;
    spec.frames = params.frames;
    spec.width = params.width;
    spec.height = params.height;
    spec.hz = params.hz;
    spec.road.lanes = params.lanes;
    spec.road.lane_width = params.lane_width;
    spec.road.length = 140.0;
    spec.road.start_s = -25.0;
    if (params.allow_curved && rng.bernoulli(0.35)) {
        const double mag = rng.uniform(1.0 / 400.0, 1.0 / 180.0);
        spec.road.curvature = rng.bernoulli(0.5) ? mag : -mag;
    } else {
        spec.road.curvature = 0.0;
    }

    const int lane_capacity = params.lanes * static_cast<int>(spec.road.length / 14.0);
    COMPOSIA_CHECK(params.min_agents <= lane_capacity,
                   << "requested agent count exceeds lane capacity " << lane_capacity);

    // ego
    spec.ego_primitive = params.primitives[rng.uniform_index(params.primitives.size())];
    int ego_lane = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(params.lanes)));
    if (spec.ego_primitive == EgoPrimitive::LaneChangeLeft && ego_lane == params.lanes - 1)
        ego_lane = params.lanes - 2;
    if (spec.ego_primitive == EgoPrimitive::LaneChangeRight && ego_lane == 0) ego_lane = 1;
    ego_lane = std::clamp(ego_lane, 0, params.lanes - 1);
    spec.ego_lane = ego_lane;

    const double dt = 1.0 / params.hz;
    const EgoProfile prof = make_ego_profile(spec.ego_primitive, spec.road, ego_lane, params.frames, dt, rng);
    spec.ego_speed = prof.speed;
    for (int f = 0; f < params.frames; ++f) {
        double heading = 0.0;
        if (f + 1 < params.frames) {
            const double dd = prof.d[static_cast<size_t>(f + 1)] - prof.d[static_cast<size_t>(f)];
            const double ds = std::max(1e-6, prof.s[static_cast<size_t>(f + 1)] - prof.s[static_cast<size_t>(f)]);
            heading = std::atan2(dd, ds);
        } else if (f > 0) {
            heading = spec.ego_poses.back().yaw() - spec.road.pose_at(prof.s[static_cast<size_t>(f - 1)], 0).yaw();
        }
        spec.ego_poses.push_back(spec.road.pose_at(prof.s[static_cast<size_t>(f)], prof.d[static_cast<size_t>(f)], heading));
    }
    spec.ego_footprint.center = Vector3d(0, 0, 0.75);
    spec.ego_footprint.size = Vector3d(4.4, 1.8, 1.5);
    spec.ego_footprint.yaw = 0.0;

    // camera rig: fixed mount on the ego
    Intrinsics k;
    k.width = params.width;
    k.height = params.height;
    k.fx = k.fy = params.focal_scale * params.width;
    k.cx = params.width / 2.0;
    k.cy = params.height / 2.0;
    for (int f = 0; f < params.frames; ++f) {
        Pose rig = spec.ego_poses[static_cast<size_t>(f)];
        rig.translation += rig.rotation * Vector3d(0.5, 0.0, params.camera_height);
        spec.camera.intrinsics.push_back(k);
        spec.camera.rig_poses.push_back(rig);
    }

    // agents
    const int n_agents = static_cast<int>(rng.uniform_int(params.min_agents, params.max_agents));
    int next_id = 1;
    for (int a = 0; a < n_agents; ++a) {
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            const double pick = rng.uniform();
            std::string category = pick < 0.7 ? "car" : (pick < 0.9 ? "truck" : "cone");
            Vector3d size;
            if (category == "car")
                size = Vector3d(rng.uniform(4.0, 4.8), rng.uniform(1.7, 2.0), rng.uniform(1.4, 1.6));
            else if (category == "truck")
                size = Vector3d(rng.uniform(6.0, 7.5), rng.uniform(2.2, 2.5), rng.uniform(2.4, 2.8));
            else
                size = Vector3d(0.4, 0.4, 0.75);
            const int lane = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(params.lanes)));
            double d = spec.road.lane_center(lane);
            double speed = category == "cone" ? 0.0 : rng.uniform(0.45, 1.05) * std::max(3.0, prof.speed[0]);
            if (category == "cone") d += rng.bernoulli(0.5) ? 0.45 * params.lane_width : -0.45 * params.lane_width;
            const double s0 = rng.uniform(-8.0, 50.0);

            BoxTrack track;
            track.element_id = next_id;
            track.category = category;
            track.color_id = static_cast<int>(rng.uniform_index(8));
            for (int f = 0; f < params.frames; ++f) {
                const double s = s0 + speed * f * dt;
                track.boxes.push_back(agent_box(spec.road, category, s, d, 0.0, size));
                track.present.push_back(true);
            }

            // reject interpenetration against ego and existing agents at any frame
            bool ok = true;
            for (int f = 0; f < params.frames && ok; ++f) {
                geometry::ObbRect cand = geometry::bev_rect(track.boxes[static_cast<size_t>(f)]);
                cand.half_length += 0.35;
                cand.half_width += 0.35;
                Box7 ego = spec.ego_footprint;
                const Pose& ep = spec.ego_poses[static_cast<size_t>(f)];
                ego.center = ep.translation + Vector3d(0, 0, 0.75);
                ego.yaw = ep.yaw();
                if (geometry::obb_overlap(cand, geometry::bev_rect(ego))) ok = false;
                for (const BoxTrack& other : spec.agents) {
                    if (!ok) break;
                    if (geometry::obb_overlap(cand, geometry::bev_rect(other.boxes[static_cast<size_t>(f)]))) ok = false;
                }
            }
            if (ok) {
                spec.agents.push_back(std::move(track));
                ++next_id;
                placed = true;
            }
        }
    }

    // fiducials painted on the road surface, staggered across lane centers so
    // the forward camera always sees several at close range
    int marker_id = 0;
    const auto& colors = marker_color_sequence();
    for (int lane = 0; lane < params.lanes; ++lane) {
        const double d = spec.road.lane_center(lane);
        const double stagger = params.fiducial_spacing * lane / params.lanes;
        int rank = 0;
        for (double s = spec.road.start_s + stagger; s <= spec.road.start_s + spec.road.length;
             s += params.fiducial_spacing) {
            const Pose p = spec.road.pose_at(s, d);
            Fiducial m;
            m.id = marker_id++;
            m.center = Vector2d(p.translation.x(), p.translation.y());
            m.yaw = p.yaw();
            m.side = params.fiducial_side;
            m.color_index = colors[static_cast<size_t>(rank) % colors.size()];
            m.margin = lane;
            m.margin_rank = rank++;
            spec.fiducials.markers.push_back(m);
        }
    }
    return spec;
}

// ---- rendering ---------------------------------------------------------------------------

namespace {

struct GroundShader {
    const RoadLayout* road;
    const FiducialMap* fid;
    std::vector<const Fiducial*> sorted;  // by center road s
    std::vector<double> sorted_s;

    explicit GroundShader(const RoadLayout& r, const FiducialMap& f) : road(&r), fid(&f) {
        for (const auto& m : f.markers) sorted.push_back(&m);
        std::sort(sorted.begin(), sorted.end(), [&](const Fiducial* a, const Fiducial* b) {
            double sa, da, sb, db;
            r.road_coords(a->center.x(), a->center.y(), sa, da);
            r.road_coords(b->center.x(), b->center.y(), sb, db);
            return sa < sb;
        });
        for (const Fiducial* m : sorted) {
            double s, d;
            r.road_coords(m->center.x(), m->center.y(), s, d);
            sorted_s.push_back(s);
        }
    }

    Vector3d shade(double x, double y) const {
        double s, d;
        road->road_coords(x, y, s, d);
        // markers first (they sit on the grass margin)
        const auto lo = std::lower_bound(sorted_s.begin(), sorted_s.end(), s - 2.5);
        for (size_t i = static_cast<size_t>(lo - sorted_s.begin()); i < sorted_s.size() && sorted_s[i] < s + 2.5; ++i) {
            const Fiducial& m = *sorted[i];
            const double c = std::cos(m.yaw), sn = std::sin(m.yaw);
            const double dx = c * (x - m.center.x()) + sn * (y - m.center.y());
            const double dy = -sn * (x - m.center.x()) + c * (y - m.center.y());
            if (std::fabs(dx) <= 0.5 * m.side && std::fabs(dy) <= 0.5 * m.side) {
                const double cell = m.side / fid->grid;
                const int ci = std::min(fid->grid - 1, static_cast<int>((dx + 0.5 * m.side) / cell));
                const int cj = std::min(fid->grid - 1, static_cast<int>((dy + 0.5 * m.side) / cell));
                if ((ci + cj) % 2 == 0) return FiducialMap::palette()[static_cast<size_t>(m.color_index)];
                return Vector3d(0.93, 0.93, 0.93);
            }
        }
        const double half = road->half_width();
        const bool on_road = std::fabs(d) <= half && s >= road->start_s && s <= road->start_s + road->length;
        if (on_road) {
            // boundary lines
            if (std::fabs(std::fabs(d) - half) < 0.13) return Vector3d(0.85, 0.85, 0.85);
            // dashed separators between lanes
            for (int l = 1; l < road->lanes; ++l) {
                const double sep = -half + l * road->lane_width;
                if (std::fabs(d - sep) < 0.09 && std::fmod(s - road->start_s, 4.0) < 2.2)
                    return Vector3d(0.88, 0.88, 0.88);
            }
            return Vector3d(0.30, 0.30, 0.32);
        }
        return Vector3d(0.16, 0.32, 0.14);
    }
};

Vector3d sky_color(double elevation) {
    const double t = std::clamp(elevation / 0.6, 0.0, 1.0);
    return (1.0 - t) * Vector3d(0.78, 0.84, 0.92) + t * Vector3d(0.34, 0.50, 0.76);
}

struct Face {
    std::vector<Vector3d> cam;  // camera-frame vertices after near clip
    double depth = 0.0;
    Vector3d color;
    int32_t id = -1;
};

std::vector<Vector3d> clip_near(const std::vector<Vector3d>& poly, double z_near) {
    std::vector<Vector3d> out;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vector3d& a = poly[i];
        const Vector3d& b = poly[(i + 1) % n];
        const bool ain = a.z() > z_near, bin = b.z() > z_near;
        if (ain) out.push_back(a);
        if (ain != bin) {
            const double t = (z_near - a.z()) / (b.z() - a.z());
            out.push_back(a + t * (b - a));
        }
    }
    return out;
}

}  // namespace

RenderedClip render_clip(const SceneSpec& spec, const RenderOptions& opts) {
    const int F = spec.frames, H = spec.height, W = spec.width, SS = std::max(1, opts.supersample);
    RenderedClip out;
    out.frames = nn::Tensor({F, H, W, 3});
    out.camera = spec.camera;
    out.tracks = spec.agents;
    out.fiducials = spec.fiducials;
    if (opts.id_buffer) out.ids.resize(static_cast<size_t>(F));

    const GroundShader ground(spec.road, spec.fiducials);
    const Vector3d light = Vector3d(0.35, 0.25, 0.9).normalized();
    const double z_near = 0.1;

    const int hs = H * SS, ws = W * SS;
    std::vector<Vector3d> buf(static_cast<size_t>(hs) * ws);
    std::vector<int32_t> idbuf(static_cast<size_t>(hs) * ws);

    for (int f = 0; f < F; ++f) {
        const Intrinsics& K = spec.camera.intrinsics[static_cast<size_t>(f)];
        const Pose w2c = spec.camera.world_to_camera(f);
        const Pose c2w = w2c.inverse();
        const Vector3d cam_pos = c2w.translation;

        // ground + sky by per-sample ray casting
        for (int py = 0; py < hs; ++py) {
            for (int px = 0; px < ws; ++px) {
                const double u = (px + 0.5) / SS;
                const double v = (py + 0.5) / SS;
                const Vector3d dir_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
                const Vector3d dir = (c2w.rotation * dir_cam).normalized();
                Vector3d col;
                if (dir.z() >= -1e-9) {
                    col = sky_color(std::asin(std::clamp(dir.z(), -1.0, 1.0)));
                } else {
                    const double t = -cam_pos.z() / dir.z();
                    const Vector3d hit = cam_pos + t * dir;
                    col = ground.shade(hit.x(), hit.y());
                }
                buf[static_cast<size_t>(py) * ws + px] = col;
                idbuf[static_cast<size_t>(py) * ws + px] = -1;
            }
        }

        // agent cuboid faces, painter order far -> near
        std::vector<Face> faces;
        for (const BoxTrack& track : spec.agents) {
            if (!track.present_at(f)) continue;
            const Box7& box = track.boxes[static_cast<size_t>(f)];
            const auto corners = box.corners();
            // quads per cuboid face: indices into the corner bit pattern
            static const int quads[6][4] = {{1, 3, 7, 5}, {0, 4, 6, 2}, {2, 6, 7, 3},
                                            {0, 1, 5, 4}, {4, 5, 7, 6}, {0, 2, 3, 1}};
            const Vector3d base = agent_base_color(track.color_id);
            for (const auto& q : quads) {
                std::vector<Vector3d> world = {corners[static_cast<size_t>(q[0])], corners[static_cast<size_t>(q[1])],
                                               corners[static_cast<size_t>(q[2])], corners[static_cast<size_t>(q[3])]};
                Vector3d n = (world[1] - world[0]).cross(world[2] - world[0]);
                if (n.norm() < 1e-12) continue;
                n.normalize();
                const Vector3d centroid = 0.25 * (world[0] + world[1] + world[2] + world[3]);
                if (n.dot(centroid - box.center) < 0) n = -n;  // outward
                if (n.dot(cam_pos - centroid) <= 0) continue;  // back face
                std::vector<Vector3d> cam;
                cam.reserve(4);
                for (const auto& p : world) cam.push_back(w2c.apply(p));
                cam = clip_near(cam, z_near);
                if (cam.size() < 3) continue;
                Face face;
                face.cam = std::move(cam);
                double depth = 0.0;
                for (const auto& p : face.cam) depth = std::max(depth, p.z());
                face.depth = depth;
                const double shade = 0.52 + 0.48 * std::max(0.0, n.dot(light));
                face.color = base * shade;
                face.id = track.element_id;
                faces.push_back(std::move(face));
            }
        }
        std::sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) { return a.depth > b.depth; });

        for (const Face& face : faces) {
            std::vector<Vector2d> poly;
            poly.reserve(face.cam.size());
            for (const auto& p : face.cam)
                poly.emplace_back((K.fx * p.x() / p.z() + K.cx) * SS, (K.fy * p.y() / p.z() + K.cy) * SS);
            double area = 0.0;
            for (size_t i = 0; i < poly.size(); ++i) {
                const auto& a = poly[i];
                const auto& b = poly[(i + 1) % poly.size()];
                area += a.x() * b.y() - b.x() * a.y();
            }
            if (std::fabs(area) < 1e-9) continue;
            if (area < 0) std::reverse(poly.begin(), poly.end());
            double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
            for (const auto& p : poly) {
                minx = std::min(minx, p.x());
                maxx = std::max(maxx, p.x());
                miny = std::min(miny, p.y());
                maxy = std::max(maxy, p.y());
            }
            const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
            const int x1 = std::min(ws - 1, static_cast<int>(std::ceil(maxx)));
            const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
            const int y1 = std::min(hs - 1, static_cast<int>(std::ceil(maxy)));
            for (int py = y0; py <= y1; ++py)
                for (int px = x0; px <= x1; ++px) {
                    const Vector2d pt(px + 0.5, py + 0.5);
                    bool inside = true;
                    for (size_t i = 0; i < poly.size() && inside; ++i) {
                        const Vector2d& a = poly[i];
                        const Vector2d& b = poly[(i + 1) % poly.size()];
                        if ((b.x() - a.x()) * (pt.y() - a.y()) - (b.y() - a.y()) * (pt.x() - a.x()) < 0)
                            inside = false;
                    }
                    if (inside) {
                        buf[static_cast<size_t>(py) * ws + px] = face.color;
                        idbuf[static_cast<size_t>(py) * ws + px] = face.id;
                    }
                }
        }

        // box-filter downsample
        if (opts.id_buffer) out.ids[static_cast<size_t>(f)].assign(static_cast<size_t>(H) * W, -1);
        const double inv = 1.0 / (SS * SS);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                Vector3d acc = Vector3d::Zero();
                int best_id = -1, best_cnt = 0;
                std::array<std::pair<int32_t, int>, 17> counts{};
                size_t ncounts = 0;
                for (int sy = 0; sy < SS; ++sy)
                    for (int sx = 0; sx < SS; ++sx) {
                        const size_t o = static_cast<size_t>(y * SS + sy) * ws + (x * SS + sx);
                        acc += buf[o];
                        if (opts.id_buffer) {
                            const int32_t id = idbuf[o];
                            bool found = false;
                            for (size_t c = 0; c < ncounts; ++c)
                                if (counts[c].first == id) {
                                    counts[c].second++;
                                    found = true;
                                    break;
                                }
                            if (!found && ncounts < counts.size()) counts[ncounts++] = {id, 1};
                        }
                    }
                acc *= inv;
                for (int c = 0; c < 3; ++c)
                    out.frames.at({f, y, x, c}) = std::clamp(acc[c], 0.0, 1.0);
                if (opts.id_buffer) {
                    for (size_t c = 0; c < ncounts; ++c)
                        if (counts[c].second > best_cnt) {
                            best_cnt = counts[c].second;
                            best_id = counts[c].first;
                        }
                    out.ids[static_cast<size_t>(f)][static_cast<size_t>(y) * W + x] = best_id;
                }
            }
    }
    return out;
}

// ---- filters -------------------------------------------------------------------------------

namespace {

constexpr double kForwardSpeedThreshold = 1.0;  // m/s
constexpr double kLeadingHorizon = 40.0;        // m
constexpr double kAdjacentWindow = 25.0;        // m

bool ego_moving_forward(const SceneSpec& spec) {
    double mean = 0.0;
    for (double v : spec.ego_speed) mean += v;
    mean /= static_cast<double>(spec.ego_speed.size());
    return mean > kForwardSpeedThreshold;
}

bool has_leading_vehicle(const SceneSpec& spec) {
    double se, de;
    spec.road.road_coords(spec.ego_poses[0].translation.x(), spec.ego_poses[0].translation.y(), se, de);
    for (const BoxTrack& t : spec.agents) {
        if (t.category == "cone" || !t.present_at(0)) continue;
        double sa, da;
        spec.road.road_coords(t.boxes[0].center.x(), t.boxes[0].center.y(), sa, da);
        if (spec.road.lane_of(da) == spec.ego_lane && sa > se && sa - se < kLeadingHorizon) return true;
    }
    return false;
}

int adjacent_vehicle(const SceneSpec& spec) {
    double se, de;
    spec.road.road_coords(spec.ego_poses[0].translation.x(), spec.ego_poses[0].translation.y(), se, de);
    int best = -1;
    double best_gap = 1e18;
    for (const BoxTrack& t : spec.agents) {
        if (t.category == "cone" || !t.present_at(0)) continue;
        double sa, da;
        spec.road.road_coords(t.boxes[0].center.x(), t.boxes[0].center.y(), sa, da);
        const int lane = spec.road.lane_of(da);
        if (std::abs(lane - spec.ego_lane) == 1 && std::fabs(sa - se) < kAdjacentWindow && sa > se - 4.0) {
            const double gap = std::fabs(sa - se);
            if (gap < best_gap) {
                best_gap = gap;
                best = t.element_id;
            }
        }
    }
    return best;
}

}  // namespace

bool is_cut_in_candidate(const SceneSpec& spec, int* adjacent_agent_id) {
    if (!ego_moving_forward(spec)) return false;
    if (has_leading_vehicle(spec)) return false;
    const int adj = adjacent_vehicle(spec);
    if (adjacent_agent_id) *adjacent_agent_id = adj;
    return adj >= 0;
}

bool is_front_insert_candidate(const SceneSpec& spec) {
    return ego_moving_forward(spec) && !has_leading_vehicle(spec);
}

std::vector<size_t> filter_cut_in_candidates(const std::vector<SceneSpec>& dataset) {
    std::vector<size_t> out;
    for (size_t i = 0; i < dataset.size(); ++i)
        if (is_cut_in_candidate(dataset[i])) out.push_back(i);
    return out;
}

std::vector<size_t> filter_front_insert_candidates(const std::vector<SceneSpec>& dataset) {
    std::vector<size_t> out;
    for (size_t i = 0; i < dataset.size(); ++i)
        if (is_front_insert_candidate(dataset[i])) out.push_back(i);
    return out;
}

// ---- edits ------------------------------------------------------------------------------------

SceneSpec apply_structure_edit(const SceneSpec& spec, const EditSpec& edit) {
    COMPOSIA_CHECK(edit.kind == EditSpec::Kind::CutIn || edit.kind == EditSpec::Kind::FrontInsert,
                   << "apply_structure_edit handles cut_in and front_insert only");
    SceneSpec out = spec;
    if (edit.kind == EditSpec::Kind::CutIn) {
        int auto_target = -1;
        COMPOSIA_CHECK(is_cut_in_candidate(spec, &auto_target), << "scene is not a cut-in candidate");
        if (edit.amplitude == 0.0) return out;
        const int target = edit.target_element_id >= 0 ? edit.target_element_id : auto_target;
        BoxTrack* track = nullptr;
        for (BoxTrack& t : out.agents)
            if (t.element_id == target) track = &t;
        COMPOSIA_CHECK(track != nullptr, << "cut-in target element " << target << " not found");
        const int start = std::clamp(edit.start_frame, 0, spec.frames - 2);
        const int dur = std::clamp(edit.duration_frames, 1, spec.frames - 1 - start);
        double s0, d0;
        spec.road.road_coords(track->boxes[0].center.x(), track->boxes[0].center.y(), s0, d0);
        const double d_target = spec.road.lane_center(spec.ego_lane);
        std::vector<double> new_d(static_cast<size_t>(spec.frames), d0);
        for (int f = 0; f < spec.frames; ++f) {
            const double tau = std::clamp((f - start) / static_cast<double>(dur), 0.0, 1.0);
            new_d[static_cast<size_t>(f)] = d0 + edit.amplitude * (d_target - d0) * smoothstep_cos(tau);
        }
        for (int f = 0; f < spec.frames; ++f) {
            if (f < start) continue;  // untouched before the window
            double s, d_old;
            spec.road.road_coords(track->boxes[static_cast<size_t>(f)].center.x(),
                                  track->boxes[static_cast<size_t>(f)].center.y(), s, d_old);
            double heading = 0.0;
            if (f + 1 < spec.frames) {
                double s_next, d_unused;
                spec.road.road_coords(track->boxes[static_cast<size_t>(f + 1)].center.x(),
                                      track->boxes[static_cast<size_t>(f + 1)].center.y(), s_next, d_unused);
                const double ds = std::max(0.3, s_next - s);
                heading = std::atan2(new_d[static_cast<size_t>(f + 1)] - new_d[static_cast<size_t>(f)], ds);
            }
            const Vector3d size = track->boxes[static_cast<size_t>(f)].size;
            track->boxes[static_cast<size_t>(f)] =
                agent_box(spec.road, track->category, s, new_d[static_cast<size_t>(f)], heading, size);
        }
        return out;
    }

    // front insert
    COMPOSIA_CHECK(is_front_insert_candidate(spec), << "scene is not a front-insert candidate");
    double se, de;
    spec.road.road_coords(spec.ego_poses[0].translation.x(), spec.ego_poses[0].translation.y(), se, de);
    int max_id = 0, max_color = 0;
    for (const BoxTrack& t : spec.agents) {
        max_id = std::max(max_id, t.element_id);
        max_color = std::max(max_color, t.color_id);
    }
    BoxTrack track;
    track.element_id = max_id + 1;
    track.category = "car";
    track.color_id = (max_color + 1) % 8;
    const Vector3d size(4.5, 1.85, 1.5);
    const double d = spec.road.lane_center(spec.ego_lane);
    const double dt = 1.0 / spec.hz;
    for (int f = 0; f < spec.frames; ++f) {
        const double s = se + edit.insert_distance + edit.insert_speed * f * dt;
        track.boxes.push_back(agent_box(spec.road, track.category, s, d, 0.0, size));
        track.present.push_back(true);
    }
    out.agents.push_back(std::move(track));
    return out;
}

double bump_max_amplitude(double accel_bound, int duration_frames, double hz) {
    const double T = duration_frames / hz;
    // peak |second derivative| of amp * sin^4(pi t / T) is 4 pi^2 amp / T^2
    return accel_bound * T * T / (4.0 * M_PI * M_PI);
}

CameraPath perturb_action(const CameraPath& path, const BumpParams& bump) {
    const int F = path.frames();
    COMPOSIA_CHECK(F >= 3, << "path too short for a bump");
    COMPOSIA_CHECK(bump.start_frame >= 1 && bump.start_frame + bump.duration_frames <= F - 1,
                   << "bump window must lie strictly inside (0, F)");
    COMPOSIA_CHECK(bump.duration_frames >= 2, << "bump window too short");
    const double max_amp = bump_max_amplitude(bump.accel_bound, bump.duration_frames, bump.hz);
    COMPOSIA_CHECK(std::fabs(bump.amplitude) <= max_amp,
                   << "bump amplitude " << bump.amplitude << " violates the acceleration bound; max feasible amplitude is "
                   << max_amp);
    COMPOSIA_CHECK(std::fabs(bump.longitudinal_amplitude) <= max_amp,
                   << "longitudinal amplitude violates the acceleration bound; max feasible amplitude is " << max_amp);

    CameraPath out = path;
    if (bump.amplitude == 0.0 && bump.longitudinal_amplitude == 0.0) return out;
    const double T = bump.duration_frames / bump.hz;
    for (int f = bump.start_frame + 1; f < bump.start_frame + bump.duration_frames; ++f) {
        const double tau = (f - bump.start_frame) / static_cast<double>(bump.duration_frames);
        const double sp = std::sin(M_PI * tau);
        const double delta = bump.amplitude * sp * sp * sp * sp;
        const double ddelta_dt = bump.amplitude * 4.0 * M_PI / T * sp * sp * sp * std::cos(M_PI * tau);
        const double delta_lon = bump.longitudinal_amplitude * sp * sp * sp * sp;
        Pose& p = out.rig_poses[static_cast<size_t>(f)];
        const double yaw = path.rig_poses[static_cast<size_t>(f)].yaw();
        const Vector3d left(-std::sin(yaw), std::cos(yaw), 0.0);
        const Vector3d fwd(std::cos(yaw), std::sin(yaw), 0.0);
        p.translation += delta * left + delta_lon * fwd;
        // heading follows the displaced path when the rig is actually moving
        double v = 1.0;
        if (f + 1 < F) {
            v = (path.rig_poses[static_cast<size_t>(f + 1)].translation -
                 path.rig_poses[static_cast<size_t>(f)].translation)
                    .norm() *
                bump.hz;
        }
        if (v > 0.2) {
            const double dyaw = std::atan2(ddelta_dt, std::max(v, 1.0));
            p.rotation = Eigen::AngleAxisd(dyaw, Vector3d::UnitZ()).toRotationMatrix() * p.rotation;
        }
    }
    return out;
}

}  // namespace composia::microworld
