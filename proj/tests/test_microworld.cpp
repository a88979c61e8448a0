// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <set>

#include "composia/conditioning.hpp"
#include "composia/image.hpp"
#include "composia/microworld.hpp"
#include "composia/serialize.hpp"

using namespace composia;
using namespace composia::microworld;

namespace {

SceneParams quick_params() {
    SceneParams p;
    p.frames = 8;
    p.width = 64;
    p.height = 64;
    return p;
}

}  // namespace

TEST_CASE("scene generation is byte-deterministic per seed") {
    const SceneParams p = quick_params();
    const SceneSpec a = generate_scene(123, p);
    const SceneSpec b = generate_scene(123, p);
    CHECK(a.to_json_string() == b.to_json_string());
    const SceneSpec c = generate_scene(124, p);
    CHECK(a.to_json_string() != c.to_json_string());
    const SceneSpec rt = SceneSpec::from_json_string(a.to_json_string());
    CHECK(rt.to_json_string() == a.to_json_string());
}

TEST_CASE("zero-agent scenes contain only ego, road and fiducials") {
    SceneParams p = quick_params();
    p.min_agents = 0;
    p.max_agents = 0;
    const SceneSpec s = generate_scene(5, p);
    CHECK(s.agents.empty());
    CHECK(!s.fiducials.markers.empty());
    CHECK(s.ego_poses.size() == static_cast<size_t>(p.frames));
}

TEST_CASE("agents never interpenetrate across seeds") {
    SceneParams p = quick_params();
    p.frames = 6;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const SceneSpec s = generate_scene(seed, p);
        for (int f = 0; f < s.frames; ++f) {
            for (size_t i = 0; i < s.agents.size(); ++i)
                for (size_t j = i + 1; j < s.agents.size(); ++j) {
                    const auto ra = geometry::bev_rect(s.agents[i].boxes[static_cast<size_t>(f)]);
                    const auto rb = geometry::bev_rect(s.agents[j].boxes[static_cast<size_t>(f)]);
                    CHECK_FALSE(geometry::obb_overlap(ra, rb));
                }
        }
    }
}

TEST_CASE("capacity precondition is enforced") {
    SceneParams p = quick_params();
    p.min_agents = 1000;
    p.max_agents = 1000;
    CHECK_THROWS_AS(generate_scene(1, p), Error);
}

TEST_CASE("rendering determinism and static-scene stability") {
    SceneParams p = quick_params();
    p.frames = 3;
    SceneSpec s = generate_scene(77, p);
    for (int f = 1; f < s.frames; ++f) {
        s.ego_poses[static_cast<size_t>(f)] = s.ego_poses[0];
        s.camera.rig_poses[static_cast<size_t>(f)] = s.camera.rig_poses[0];
        for (auto& t : s.agents) t.boxes[static_cast<size_t>(f)] = t.boxes[0];
    }
    const RenderedClip a = render_clip(s);
    const RenderedClip b = render_clip(s);
    CHECK(nn::bit_equal(a.frames, b.frames));
    for (int f = 1; f < s.frames; ++f)
        for (int64_t i = 0; i < a.frames.dim(1) * a.frames.dim(2) * 3; ++i)
            CHECK(a.frames[f * a.frames.dim(1) * a.frames.dim(2) * 3 + i] == a.frames[i]);
}

TEST_CASE("rendered agent silhouettes match projected boxes") {
    SceneParams p = quick_params();
    p.frames = 4;
    p.min_agents = 2;
    p.max_agents = 4;
    int checked = 0;
    for (uint64_t seed = 0; seed < 16 && checked < 6; ++seed) {
        const SceneSpec s = generate_scene(seed, p);
        RenderOptions opts;
        opts.id_buffer = true;
        const RenderedClip clip = render_clip(s, opts);
        const int W = s.width, H = s.height;
        for (const auto& track : clip.tracks) {
            if (track.category == "cone") continue;
            const auto poly = geometry::project_box(track.boxes[0], clip.camera.intrinsics[0],
                                                    clip.camera.world_to_camera(0));
            const auto rect = conditioning::enclosing_rect(poly, W, H);
            if (rect[2] - rect[0] < 6 || rect[3] - rect[1] < 6) continue;
            int own = 0, inter = 0;
            const int rect_area = (rect[2] - rect[0]) * (rect[3] - rect[1]);
            bool occluded = false;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const int32_t id = clip.ids[0][static_cast<size_t>(y) * W + x];
                    const bool in_rect = x >= rect[0] && x < rect[2] && y >= rect[1] && y < rect[3];
                    if (id == track.element_id) {
                        ++own;
                        if (in_rect) ++inter;
                    } else if (id >= 0 && in_rect) {
                        occluded = true;
                    }
                }
            if (occluded || own == 0) continue;
            const double iou = static_cast<double>(inter) / (own + rect_area - inter);
            CHECK(iou > 0.5);
            ++checked;
        }
    }
    CHECK(checked >= 3);
}

TEST_CASE("cut-in and front-insert filters") {
    SceneParams p = quick_params();
    p.frames = 8;
    SUBCASE("constructed candidate scene") {
        SceneSpec s = generate_scene(42, p);
        s.agents.clear();
        s.ego_lane = 0;
        for (auto& v : s.ego_speed) v = 6.0;
        geometry::BoxTrack adj;
        adj.element_id = 1;
        adj.category = "car";
        for (int f = 0; f < s.frames; ++f) {
            const double sa = 8.0 + 6.0 * f * 0.1;
            const auto pose = s.road.pose_at(sa, s.road.lane_center(1));
            geometry::Box7 box;
            box.center = Eigen::Vector3d(pose.translation.x(), pose.translation.y(), 0.75);
            box.size = Eigen::Vector3d(4.5, 1.8, 1.5);
            box.yaw = s.road.pose_at(sa, 0).yaw();
            adj.boxes.push_back(box);
            adj.present.push_back(true);
        }
        s.agents.push_back(adj);
        int target = -1;
        CHECK(is_cut_in_candidate(s, &target));
        CHECK(target == 1);
        CHECK(is_front_insert_candidate(s));

        geometry::BoxTrack lead = adj;
        lead.element_id = 2;
        for (int f = 0; f < s.frames; ++f) {
            const double sa = 12.0 + 6.0 * f * 0.1;
            const auto pose = s.road.pose_at(sa, s.road.lane_center(0));
            lead.boxes[static_cast<size_t>(f)].center =
                Eigen::Vector3d(pose.translation.x(), pose.translation.y(), 0.75);
        }
        s.agents.push_back(lead);
        CHECK_FALSE(is_cut_in_candidate(s));
        CHECK_FALSE(is_front_insert_candidate(s));
    }
    SUBCASE("stopped ego and empty roads are excluded") {
        SceneSpec s = generate_scene(43, p);
        for (auto& v : s.ego_speed) v = 0.0;
        CHECK_FALSE(is_cut_in_candidate(s));
        CHECK_FALSE(is_front_insert_candidate(s));
        SceneSpec empty = generate_scene(44, p);
        empty.agents.clear();
        for (auto& v : empty.ego_speed) v = 6.0;
        CHECK_FALSE(is_cut_in_candidate(empty));
    }
    SUBCASE("every clear-lane cut-in candidate is also a front-insert candidate") {
        std::vector<SceneSpec> dataset;
        for (uint64_t seed = 100; seed < 140; ++seed) dataset.push_back(generate_scene(seed, p));
        const auto cut = filter_cut_in_candidates(dataset);
        const auto front = filter_front_insert_candidates(dataset);
        const std::set<size_t> front_set(front.begin(), front.end());
        for (size_t idx : cut) CHECK(front_set.count(idx) == 1);
    }
}

TEST_CASE("structure edits") {
    SceneParams p = quick_params();
    p.frames = 10;
    SceneSpec scene;
    bool found = false;
    for (uint64_t seed = 0; seed < 200 && !found; ++seed) {
        scene = generate_scene(seed, p);
        found = is_cut_in_candidate(scene);
    }
    REQUIRE(found);

    SUBCASE("zero-amplitude cut-in leaves the scene unchanged") {
        EditSpec e;
        e.kind = EditSpec::Kind::CutIn;
        e.amplitude = 0.0;
        const SceneSpec edited = apply_structure_edit(scene, e);
        CHECK(edited.to_json_string() == scene.to_json_string());
    }
    SUBCASE("cut-in ends inside the ego lane and touches only the target") {
        EditSpec e;
        e.kind = EditSpec::Kind::CutIn;
        e.start_frame = 2;
        e.duration_frames = 5;
        const SceneSpec edited = apply_structure_edit(scene, e);
        int target = -1;
        is_cut_in_candidate(scene, &target);
        const auto ja = io::json::parse(scene.to_json_string());
        const auto jb = io::json::parse(edited.to_json_string());
        for (size_t i = 0; i < scene.agents.size(); ++i) {
            if (scene.agents[i].element_id == target) {
                const auto& ed = edited.agents[i];
                double s_end, d_end;
                scene.road.road_coords(ed.boxes.back().center.x(), ed.boxes.back().center.y(), s_end, d_end);
                CHECK(scene.road.lane_of(d_end) == scene.ego_lane);
            } else {
                CHECK(ja["agents"][i].dump() == jb["agents"][i].dump());
            }
        }
        auto ja2 = ja;
        auto jb2 = jb;
        ja2.erase("agents");
        jb2.erase("agents");
        CHECK(ja2.dump() == jb2.dump());
    }
    SUBCASE("front insert adds exactly one agent at the requested distance") {
        EditSpec e;
        e.kind = EditSpec::Kind::FrontInsert;
        e.insert_distance = 25.0;
        const SceneSpec edited = apply_structure_edit(scene, e);
        REQUIRE(edited.agents.size() == scene.agents.size() + 1);
        const auto& added = edited.agents.back();
        double se, de, sa, da;
        scene.road.road_coords(scene.ego_poses[0].translation.x(), scene.ego_poses[0].translation.y(), se, de);
        scene.road.road_coords(added.boxes[0].center.x(), added.boxes[0].center.y(), sa, da);
        CHECK(sa - se == doctest::Approx(25.0).epsilon(1e-6));
        CHECK(scene.road.lane_of(da) == scene.ego_lane);
    }
    SUBCASE("edits on non-candidate scenes are rejected") {
        SceneSpec stopped = scene;
        for (auto& v : stopped.ego_speed) v = 0.0;
        EditSpec e;
        e.kind = EditSpec::Kind::CutIn;
        CHECK_THROWS_AS(apply_structure_edit(stopped, e), Error);
    }
}

TEST_CASE("action bump perturbation") {
    SceneParams p = quick_params();
    p.frames = 16;
    const SceneSpec s = generate_scene(11, p);
    const CameraPath& path = s.camera;

    SUBCASE("zero amplitude is the identity") {
        BumpParams b;
        b.amplitude = 0.0;
        b.longitudinal_amplitude = 0.0;
        b.start_frame = 4;
        b.duration_frames = 8;
        const CameraPath out = perturb_action(path, b);
        for (int f = 0; f < path.frames(); ++f)
            CHECK((out.rig_poses[static_cast<size_t>(f)].translation -
                   path.rig_poses[static_cast<size_t>(f)].translation)
                      .norm() == 0.0);
    }
    SUBCASE("endpoints are preserved exactly") {
        BumpParams b;
        b.start_frame = 4;
        b.duration_frames = 8;
        b.amplitude = 0.8 * bump_max_amplitude(b.accel_bound, b.duration_frames, b.hz);
        const CameraPath out = perturb_action(path, b);
        CHECK((out.rig_poses.front().translation - path.rig_poses.front().translation).norm() < 1e-12);
        CHECK((out.rig_poses.back().translation - path.rig_poses.back().translation).norm() < 1e-12);
        CHECK((out.rig_poses.front().rotation - path.rig_poses.front().rotation).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((out.rig_poses.back().rotation - path.rig_poses.back().rotation).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("finite-difference acceleration respects the bound near the feasibility limit") {
        BumpParams b;
        b.start_frame = 3;
        b.duration_frames = 10;
        b.accel_bound = 4.0;
        b.amplitude = 0.99 * bump_max_amplitude(b.accel_bound, b.duration_frames, b.hz);
        CameraPath straight;
        for (int f = 0; f < p.frames; ++f) {
            straight.intrinsics.push_back(path.intrinsics[0]);
            straight.rig_poses.push_back(geometry::Pose::from_xy_yaw(6.0 * f * 0.1, 0.0, 0.0, 1.4));
        }
        const CameraPath out = perturb_action(straight, b);
        const double dt = 1.0 / b.hz;
        for (int f = 1; f + 1 < p.frames; ++f) {
            const Eigen::Vector3d acc =
                (out.rig_poses[static_cast<size_t>(f + 1)].translation -
                 2.0 * out.rig_poses[static_cast<size_t>(f)].translation +
                 out.rig_poses[static_cast<size_t>(f - 1)].translation) /
                (dt * dt);
            CHECK(std::fabs(acc.y()) <= b.accel_bound + 1e-9);
        }
    }
    SUBCASE("infeasible amplitude reports the max feasible value") {
        BumpParams b;
        b.start_frame = 4;
        b.duration_frames = 6;
        b.accel_bound = 2.0;
        b.amplitude = 10.0;
        try {
            perturb_action(path, b);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("max feasible amplitude") != std::string::npos);
        }
    }
    SUBCASE("window must lie strictly inside the clip") {
        BumpParams b;
        b.start_frame = 0;
        b.duration_frames = 6;
        CHECK_THROWS_AS(perturb_action(path, b), Error);
        b.start_frame = 10;
        b.duration_frames = 6;  // reaches the final frame
        CHECK_THROWS_AS(perturb_action(path, b), Error);
    }
    SUBCASE("path length is monotone in bump amplitude") {
        CameraPath straight;
        for (int f = 0; f < 16; ++f) {
            straight.intrinsics.push_back(path.intrinsics[0]);
            straight.rig_poses.push_back(geometry::Pose::from_xy_yaw(5.0 * f * 0.1, 0.0, 0.0, 1.4));
        }
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            BumpParams b;
            b.start_frame = 1 + static_cast<int>(rng.uniform_index(4));
            b.duration_frames = 6 + static_cast<int>(rng.uniform_index(8));
            if (b.start_frame + b.duration_frames > 15) b.duration_frames = 15 - b.start_frame;
            const double amax = bump_max_amplitude(b.accel_bound, b.duration_frames, b.hz);
            const double a1 = rng.uniform(0.0, 0.5 * amax);
            const double a2 = rng.uniform(a1, amax);
            auto path_len = [&](double amp) {
                BumpParams bb = b;
                bb.amplitude = amp;
                const CameraPath o = perturb_action(straight, bb);
                double len = 0.0;
                for (size_t f = 1; f < o.rig_poses.size(); ++f)
                    len += (o.rig_poses[f].translation - o.rig_poses[f - 1].translation).norm();
                return len;
            };
            CHECK(path_len(a2) >= path_len(a1) - 1e-12);
        }
    }
}

TEST_CASE("edit spec json round trip") {
    EditSpec e;
    e.kind = EditSpec::Kind::IdentitySwap;
    e.target_element_id = 3;
    e.reference_image = "ref.png";
    e.box_size = Eigen::Vector3d(5, 2, 1.8);
    const EditSpec rt = EditSpec::from_json_string(e.to_json_string());
    CHECK(rt.kind == EditSpec::Kind::IdentitySwap);
    CHECK(rt.target_element_id == 3);
    CHECK(rt.reference_image == "ref.png");
    CHECK(rt.box_size.x() == doctest::Approx(5.0));
}

TEST_CASE("render smoke dump and png round trip") {
    SceneParams p = quick_params();
    p.frames = 2;
    const SceneSpec s = generate_scene(2024, p);
    const RenderedClip clip = render_clip(s);
    nn::Tensor frame({p.height, p.width, 3});
    for (int64_t i = 0; i < frame.numel(); ++i) frame[i] = clip.frames[i];
    const auto img = img::frame_to_u8(frame);
    img::write_png("microworld_frame.png", img);
    const auto back = img::read_png("microworld_frame.png");
    CHECK(back.width == p.width);
    CHECK(back.rgb == img.rgb);
}
