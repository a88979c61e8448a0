// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include <Eigen/Geometry>

#include "composia/geometry.hpp"
#include "composia/rng.hpp"

using namespace composia;
using namespace composia::geometry;

namespace {

Pose random_pose(Rng& rng, double t_scale = 5.0) {
    const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    Pose p;
    p.rotation = Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis).toRotationMatrix();
    p.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * t_scale;
    return p;
}

Intrinsics test_k() {
    Intrinsics k;
    k.fx = k.fy = 100.0;
    k.cx = 32.0;
    k.cy = 32.0;
    k.width = 64;
    k.height = 64;
    return k;
}

}  // namespace

TEST_CASE("pose validity and inverse round trip") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const Pose p = random_pose(rng);
        CHECK(p.valid());
        const Pose rt = p.compose(p.inverse());
        CHECK((rt.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(rt.translation.norm() < 1e-12);
    }
    Pose bad;
    bad.rotation(0, 0) = 2.0;
    CHECK_FALSE(bad.valid());
}

TEST_CASE("relative transform residuals") {
    const Pose t0 = Pose::from_xy_yaw(3.0, -2.0, 0.4);
    SUBCASE("identity case") {
        auto [delta, res] = relative_transform(t0, t0);
        CHECK(res.norm() < 1e-12);
        CHECK((delta.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("pure forward translation in the moving frame") {
        Pose t1 = t0;
        t1.translation += t0.rotation * Eigen::Vector3d(2.0, 0.0, 0.0);
        auto [delta, res] = relative_transform(t0, t1);
        (void)delta;
        CHECK(res.x() == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(std::fabs(res.y()) < 1e-12);
        CHECK(std::fabs(res.z()) < 1e-12);
    }
    SUBCASE("pure yaw against a matrix-log oracle") {
        Pose t1 = t0;
        t1.rotation = t0.rotation * Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitZ()).toRotationMatrix();
        auto [delta, res] = relative_transform(t0, t1);
        CHECK(std::fabs(res.x()) < 1e-12);
        CHECK(std::fabs(res.y()) < 1e-12);
        CHECK(res.z() == doctest::Approx(0.1).epsilon(1e-12));
        const Eigen::AngleAxisd aa(delta.rotation);
        CHECK(aa.angle() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(std::fabs(aa.axis().z()) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("box projection") {
    const Intrinsics k = test_k();
    const Pose eye = Pose::identity();  // world == optical camera frame

    SUBCASE("unit cube ten meters ahead on the optical axis") {
        Box7 box;
        box.center = Eigen::Vector3d(0, 0, 10);
        box.size = Eigen::Vector3d(1, 1, 1);
        box.yaw = 0.0;
        const Polyline2D poly = project_box(box, k, eye);
        CHECK_FALSE(poly.empty_or_hidden());
        double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
        for (const auto& s : poly.segments) {
            REQUIRE(s.visible);
            for (const auto& p : {s.a, s.b}) {
                minx = std::min(minx, p.x());
                maxx = std::max(maxx, p.x());
                miny = std::min(miny, p.y());
                maxy = std::max(maxy, p.y());
            }
        }
        // half extent f * 0.5 / z for the near face; the far face is smaller
        CHECK(maxx - k.cx == doctest::Approx(100.0 * 0.5 / 9.5).epsilon(1e-12));
        CHECK(k.cx - minx == doctest::Approx(100.0 * 0.5 / 9.5).epsilon(1e-12));
        CHECK(maxy - k.cy == doctest::Approx(100.0 * 0.5 / 9.5).epsilon(1e-12));
        CHECK(k.cy - miny == doctest::Approx(100.0 * 0.5 / 9.5).epsilon(1e-12));
    }
    SUBCASE("box behind the camera yields an empty polyline") {
        Box7 box;
        box.center = Eigen::Vector3d(0, 0, -5);
        box.size = Eigen::Vector3d(1, 1, 1);
        const Polyline2D poly = project_box(box, k, eye);
        CHECK(poly.segments.empty());
        CHECK(poly.empty_or_hidden());
    }
    SUBCASE("doubling depth halves the projected extent") {
        auto extent = [&](double z) {
            Box7 box;
            box.center = Eigen::Vector3d(0, 0, z);
            box.size = Eigen::Vector3d(1, 1, 1);
            const Polyline2D poly = project_box(box, k, eye);
            double minx = 1e9, maxx = -1e9;
            for (const auto& s : poly.segments)
                if (s.visible)
                    for (const auto& p : {s.a, s.b}) {
                        minx = std::min(minx, p.x());
                        maxx = std::max(maxx, p.x());
                    }
            return maxx - minx;
        };
        // measure the same face by using a flat box (depth extent 0)
        auto flat_extent = [&](double z) {
            Box7 box;
            box.center = Eigen::Vector3d(0, 0, z);
            box.size = Eigen::Vector3d(1, 1, 1e-9);
            (void)box;
            return 0.0;
        };
        (void)flat_extent;
        const double e1 = extent(10.0), e2 = extent(20.0);
        // similar triangles with the same near/far structure: ratio within 6%
        CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.06));
        // exact similar-triangles check on a single projected point
        const auto p1 = project_point(Eigen::Vector3d(0.5, 0.5, 10.0), k, eye);
        const auto p2 = project_point(Eigen::Vector3d(0.5, 0.5, 20.0), k, eye);
        REQUIRE(p1);
        REQUIRE(p2);
        CHECK((p1->x() - k.cx) == doctest::Approx(2.0 * (p2->x() - k.cx)).epsilon(1e-12));
    }
    SUBCASE("projection equivariance under a common rigid transform") {
        // planar transforms keep the yaw-parameterized box representable
        Rng rng(3);
        for (int trial = 0; trial < 30; ++trial) {
            Box7 box;
            box.center = Eigen::Vector3d(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(6, 20));
            box.size = Eigen::Vector3d(rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 3));
            box.yaw = rng.uniform(-M_PI, M_PI);
            const Pose g = Pose::from_xy_yaw(rng.uniform(-10, 10), rng.uniform(-10, 10),
                                             rng.uniform(-M_PI, M_PI), rng.uniform(-2, 2));
            Box7 moved = box;
            moved.center = g.apply(box.center);
            moved.yaw = wrap_angle(box.yaw + g.yaw());
            const Pose e2 = eye.compose(g.inverse());  // camera moved by the same transform
            const Polyline2D a = project_box(box, k, eye);
            const Polyline2D b = project_box(moved, k, e2);
            REQUIRE(a.segments.size() == b.segments.size());
            for (size_t i = 0; i < a.segments.size(); ++i) {
                CHECK(a.segments[i].visible == b.segments[i].visible);
                if (a.segments[i].visible) {
                    CHECK((a.segments[i].a - b.segments[i].a).norm() < 1e-9);
                    CHECK((a.segments[i].b - b.segments[i].b).norm() < 1e-9);
                }
            }
        }
    }
}

TEST_CASE("projective matrices") {
    const Intrinsics k = test_k();
    SUBCASE("identity intrinsics and extrinsics give identity blocks") {
        Intrinsics unit;
        unit.fx = unit.fy = 1.0;
        unit.cx = unit.cy = 0.0;
        unit.width = unit.height = 1;
        // cx/cy must satisfy the validity range; identity check is on the block
        const auto d = prope_matrices({unit}, {Pose::identity()}, 8);
        CHECK((d.block[0] - Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(d.blocks_per_frame() == 2);
    }
    SUBCASE("relative products are invariant to a global rigid transform") {
        Rng rng(4);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<Intrinsics> ks = {k, k, k};
            std::vector<Pose> es;
            for (int i = 0; i < 3; ++i) es.push_back(random_pose(rng));
            const auto d = prope_matrices(ks, es, 4);
            const Pose g = random_pose(rng);
            std::vector<Pose> es_g;
            for (const auto& e : es) es_g.push_back(e.compose(g.inverse()));
            const auto dg = prope_matrices(ks, es_g, 4);
            // D_i * D_j^-1 is the relative product the attention scores see
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    const Matrix4d rel = d.block[static_cast<size_t>(i)] * d.block[static_cast<size_t>(j)].inverse();
                    const Matrix4d rel_g =
                        dg.block[static_cast<size_t>(i)] * dg.block[static_cast<size_t>(j)].inverse();
                    CHECK((rel - rel_g).cwiseAbs().maxCoeff() < 1e-9);
                }
        }
    }
    SUBCASE("degenerate intrinsics are rejected") {
        Intrinsics bad = k;
        bad.fx = 0.0;
        CHECK_THROWS_AS(prope_matrices({bad}, {Pose::identity()}, 4), Error);
        CHECK_THROWS_AS(prope_matrices({k}, {Pose::identity()}, 6), Error);
    }
}

TEST_CASE("trajectory metrics") {
    SUBCASE("identical sequences score zero") {
        Rng rng(5);
        std::vector<Pose> seq;
        for (int i = 0; i < 8; ++i) seq.push_back(random_pose(rng));
        CHECK(rot_err(seq, seq) == doctest::Approx(0.0));
        CHECK(trans_err(seq, seq) == doctest::Approx(0.0));
    }
    SUBCASE("constant per-frame yaw offset sums linearly") {
        // frame 0 shared (alignment pivot), frames 1..10 offset by 0.05 rad
        std::vector<Pose> gt(11, Pose::identity()), gen(11, Pose::identity());
        for (int i = 1; i <= 10; ++i) gen[static_cast<size_t>(i)] = Pose::from_xy_yaw(0, 0, 0.05);
        CHECK(rot_err(gen, gt) == doctest::Approx(0.5).epsilon(1e-9));
    }
    SUBCASE("constant translation offset sums quadratically") {
        std::vector<Pose> gt(11, Pose::identity()), gen(11, Pose::identity());
        for (int i = 1; i <= 10; ++i) gen[static_cast<size_t>(i)].translation = Eigen::Vector3d(0.1, 0, 0);
        const double te = trans_err(gen, gt);
        CHECK(te == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(te * 1000.0 == doctest::Approx(100.0).epsilon(1e-12));
        // doubling the offset quadruples the metric
        for (int i = 1; i <= 10; ++i) gen[static_cast<size_t>(i)].translation = Eigen::Vector3d(0.2, 0, 0);
        CHECK(trans_err(gen, gt) == doctest::Approx(4.0 * te).epsilon(1e-12));
    }
    SUBCASE("arccos argument is clamped") {
        std::vector<Pose> a(2, Pose::identity()), b(2, Pose::identity());
        // a rotation matrix slightly off orthonormal can push the trace above 3
        a[1].rotation = Matrix3d::Identity() * (1.0 + 1e-12);
        const double v = rot_err(a, b);
        CHECK(std::isfinite(v));
    }
    SUBCASE("metrics are invariant to a global rigid transform of both paths") {
        Rng rng(6);
        std::vector<Pose> gen, gt;
        for (int i = 0; i < 9; ++i) {
            gt.push_back(random_pose(rng));
            gen.push_back(random_pose(rng));
        }
        const double r0 = rot_err(gen, gt);
        const double t0 = trans_err(gen, gt);
        const Pose g = random_pose(rng);
        std::vector<Pose> gen_g, gt_g;
        for (size_t i = 0; i < gen.size(); ++i) {
            gen_g.push_back(g.compose(gen[i]));
            gt_g.push_back(g.compose(gt[i]));
        }
        CHECK(rot_err(gen_g, gt_g) == doctest::Approx(r0).epsilon(1e-9));
        CHECK(trans_err(gen_g, gt_g) == doctest::Approx(t0).epsilon(1e-9));
    }
    SUBCASE("length mismatch is rejected") {
        std::vector<Pose> a(3), b(4);
        CHECK_THROWS_AS(rot_err(a, b), Error);
        CHECK_THROWS_AS(trans_err(a, b), Error);
    }
}

TEST_CASE("oriented rectangle overlap") {
    auto rect = [](double cx, double cy, double hl, double hw, double yaw) {
        ObbRect r;
        r.center = Eigen::Vector2d(cx, cy);
        r.half_length = hl;
        r.half_width = hw;
        r.yaw = yaw;
        return r;
    };
    SUBCASE("identical rectangles overlap") {
        CHECK(obb_overlap(rect(1, 2, 2, 1, 0.3), rect(1, 2, 2, 1, 0.3)));
    }
    SUBCASE("distant rectangles do not overlap") {
        CHECK_FALSE(obb_overlap(rect(0, 0, 1, 1, 0.0), rect(10, 0, 1, 1, 0.7)));
    }
    SUBCASE("rotated unit squares against a Monte-Carlo containment oracle") {
        // two unit squares (half extent 0.5), one rotated 45 deg, centers 1.2 apart
        const ObbRect a = rect(0, 0, 0.5, 0.5, 0.0);
        const ObbRect b = rect(1.2, 0, 0.5, 0.5, M_PI / 4.0);
        const bool sat = obb_overlap(a, b);
        // point-sampling oracle: sample inside b, test containment in a
        Rng rng(7);
        bool mc = false;
        for (int i = 0; i < 1000000 && !mc; ++i) {
            const double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-0.5, 0.5);
            const double c = std::cos(b.yaw), s = std::sin(b.yaw);
            const double x = b.center.x() + c * u - s * v;
            const double y = b.center.y() + s * u + c * v;
            if (std::fabs(x) <= 0.5 && std::fabs(y) <= 0.5) mc = true;
        }
        CHECK(sat == mc);
        // and a case just out of reach: centers beyond the diagonal sum
        CHECK_FALSE(obb_overlap(rect(0, 0, 0.5, 0.5, 0), rect(1.46, 0, 0.5, 0.5, M_PI / 4)));
    }
    SUBCASE("overlap is symmetric over random pairs") {
        Rng rng(8);
        for (int i = 0; i < 1000; ++i) {
            const ObbRect a = rect(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.2, 2),
                                   rng.uniform(0.2, 2), rng.uniform(-M_PI, M_PI));
            const ObbRect b = rect(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.2, 2),
                                   rng.uniform(0.2, 2), rng.uniform(-M_PI, M_PI));
            CHECK(obb_overlap(a, b) == obb_overlap(b, a));
        }
    }
    SUBCASE("degenerate extents are rejected") {
        CHECK_THROWS_AS(obb_overlap(rect(0, 0, 0, 1, 0), rect(0, 0, 1, 1, 0)), Error);
    }
}
