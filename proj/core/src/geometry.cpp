// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace composia::geometry {

double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

Pose Pose::from_xy_yaw(double x, double y, double yaw, double z) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(yaw, Vector3d::UnitZ()).toRotationMatrix();
    p.translation = Vector3d(x, y, z);
    return p;
}

Pose Pose::from_matrix(const Matrix4d& m) {
    Pose p;
    p.rotation = m.block<3, 3>(0, 0);
    p.translation = m.block<3, 1>(0, 3);
    return p;
}

Matrix4d Pose::matrix() const {
    Matrix4d m = Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
}

Pose Pose::inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(rotation.transpose() * translation);
    return p;
}

Pose Pose::compose(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
}

bool Pose::valid(double tol) const {
    const Matrix3d should_be_i = rotation * rotation.transpose() - Matrix3d::Identity();
    if (should_be_i.cwiseAbs().maxCoeff() > tol) return false;
    return std::fabs(rotation.determinant() - 1.0) <= tol;
}

Matrix3d Intrinsics::matrix() const {
    Matrix3d k = Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
}

std::array<Vector3d, 8> Box7::corners() const {
    const Matrix3d r = Eigen::AngleAxisd(yaw, Vector3d::UnitZ()).toRotationMatrix();
    std::array<Vector3d, 8> out;
    for (int i = 0; i < 8; ++i) {
        const double sx = (i & 1) ? 0.5 : -0.5;
        const double sy = (i & 2) ? 0.5 : -0.5;
        const double sz = (i & 4) ? 0.5 : -0.5;
        out[static_cast<size_t>(i)] =
            center + r * Vector3d(sx * size.x(), sy * size.y(), sz * size.z());
    }
    return out;
}

std::pair<Pose, Eigen::Vector3d> relative_transform(const Pose& t_i, const Pose& t_next) {
    const Pose delta = t_i.inverse().compose(t_next);
    return {delta, Eigen::Vector3d(delta.translation.x(), delta.translation.y(), delta.yaw())};
}

std::optional<Vector2d> project_point(const Vector3d& p_world, const Intrinsics& K,
                                      const Pose& world_to_camera, double z_near) {
    const Vector3d pc = world_to_camera.apply(p_world);
    if (pc.z() <= z_near) return std::nullopt;
    return Vector2d(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
}

namespace {

// Box edges as corner-index pairs (4 bottom, 4 top, 4 vertical)
constexpr int kEdges[12][2] = {{0, 1}, {1, 3}, {3, 2}, {2, 0}, {4, 5}, {5, 7},
                               {7, 6}, {6, 4}, {0, 4}, {1, 5}, {3, 7}, {2, 6}};

}  // namespace

Polyline2D project_box(const Box7& box, const Intrinsics& K, const Pose& world_to_camera,
                       double z_near) {
    COMPOSIA_CHECK(box.valid(), << "invalid box");
    Polyline2D out;
    const auto corners = box.corners();
    std::array<Vector3d, 8> cam;
    bool any_front = false;
    for (int i = 0; i < 8; ++i) {
        cam[static_cast<size_t>(i)] = world_to_camera.apply(corners[static_cast<size_t>(i)]);
        any_front = any_front || cam[static_cast<size_t>(i)].z() > z_near;
    }
    if (!any_front) return out;  // fully behind the camera

    auto to_px = [&](const Vector3d& pc) {
        return Vector2d(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    };
    for (const auto& e : kEdges) {
        Vector3d a = cam[static_cast<size_t>(e[0])];
        Vector3d b = cam[static_cast<size_t>(e[1])];
        Polyline2D::Segment seg;
        if (a.z() <= z_near && b.z() <= z_near) {
            seg.visible = false;
            out.segments.push_back(seg);
            continue;
        }
        if (a.z() <= z_near || b.z() <= z_near) {
            // clip against z = z_near
            const double t = (z_near - a.z()) / (b.z() - a.z());
            const Vector3d hit = a + t * (b - a);
            if (a.z() <= z_near)
                a = hit;
            else
                b = hit;
        }
        seg.a = to_px(a);
        seg.b = to_px(b);
        seg.visible = true;
        out.segments.push_back(seg);
    }
    return out;
}

Matrix4d homogeneous_projection(const Intrinsics& K, const Pose& world_to_camera) {
    Matrix4d k_hat = Matrix4d::Identity();
    k_hat.block<3, 3>(0, 0) = K.matrix();
    return k_hat * world_to_camera.matrix();
}

PropeMatrices prope_matrices(const std::vector<Intrinsics>& k_seq,
                             const std::vector<Pose>& world_to_camera_seq, int reduced_channels) {
    COMPOSIA_CHECK(reduced_channels > 0 && reduced_channels % 4 == 0,
                   << "reduced channel count must be a positive multiple of 4");
    COMPOSIA_CHECK(k_seq.size() == world_to_camera_seq.size());
    PropeMatrices out;
    out.channels = reduced_channels;
    out.block.reserve(k_seq.size());
    for (size_t i = 0; i < k_seq.size(); ++i) {
        COMPOSIA_CHECK(k_seq[i].fx != 0.0 && k_seq[i].fy != 0.0,
                       << "degenerate intrinsics at frame " << i);
        const Matrix4d d = homogeneous_projection(k_seq[i], world_to_camera_seq[i]);
        COMPOSIA_CHECK(std::fabs(d.determinant()) > 1e-12, << "singular projection at frame " << i);
        out.block.push_back(d);
    }
    return out;
}

namespace {

std::vector<Pose> align_to_first(const std::vector<Pose>& seq) {
    std::vector<Pose> out;
    out.reserve(seq.size());
    const Pose inv0 = seq.front().inverse();
    for (const Pose& p : seq) out.push_back(inv0.compose(p));
    return out;
}

}  // namespace

double rot_err(const std::vector<Pose>& gen, const std::vector<Pose>& gt) {
    COMPOSIA_CHECK(gen.size() == gt.size() && !gen.empty(), << "trajectory length mismatch");
    const auto a = align_to_first(gen);
    const auto b = align_to_first(gt);
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double tr = (a[i].rotation * b[i].rotation.transpose()).trace();
        const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
        sum += std::acos(c);
    }
    return sum;
}

double trans_err(const std::vector<Pose>& gen, const std::vector<Pose>& gt) {
    COMPOSIA_CHECK(gen.size() == gt.size() && !gen.empty(), << "trajectory length mismatch");
    const auto a = align_to_first(gen);
    const auto b = align_to_first(gt);
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) sum += (b[i].translation - a[i].translation).squaredNorm();
    return sum;
}

ObbRect bev_rect(const Box7& box) {
    ObbRect r;
    r.center = Vector2d(box.center.x(), box.center.y());
    r.half_length = 0.5 * box.size.x();
    r.half_width = 0.5 * box.size.y();
    r.yaw = box.yaw;
    return r;
}

bool obb_overlap(const ObbRect& a, const ObbRect& b) {
    COMPOSIA_CHECK(a.half_length > 0 && a.half_width > 0 && b.half_length > 0 && b.half_width > 0,
                   << "rectangle extents must be positive");
    const auto axes_of = [](const ObbRect& r) {
        const double c = std::cos(r.yaw), s = std::sin(r.yaw);
        return std::array<Vector2d, 2>{Vector2d(c, s), Vector2d(-s, c)};
    };
    const auto axes_a = axes_of(a);
    const auto axes_b = axes_of(b);
    const std::array<Vector2d, 4> axes = {axes_a[0], axes_a[1], axes_b[0], axes_b[1]};
    const Vector2d d = b.center - a.center;
    for (const Vector2d& axis : axes) {
        const double proj_d = std::fabs(d.dot(axis));
        const double ra = a.half_length * std::fabs(axes_a[0].dot(axis)) +
                          a.half_width * std::fabs(axes_a[1].dot(axis));
        const double rb = b.half_length * std::fabs(axes_b[0].dot(axis)) +
                          b.half_width * std::fabs(axes_b[1].dot(axis));
        if (proj_d > ra + rb) return false;
    }
    return true;
}

}  // namespace composia::geometry
