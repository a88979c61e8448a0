// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "composia/image.hpp"
#include "composia/serialize.hpp"

namespace composia::evalkit {

using geometry::Intrinsics;
using geometry::Pose;
using geometry::Vector2d;
using geometry::Vector3d;
using microworld::Fiducial;
using microworld::FiducialMap;
using nn::Tensor;

// ---- corner detection --------------------------------------------------------------

namespace {

struct Corner {
    double x = 0, y = 0;
    double response = 0;
    int radius = 1;
    int color_index = -1;
};

double luma_at(const Tensor& frame, int x, int y) {
    return (frame.at({y, x, 0}) + frame.at({y, x, 1}) + frame.at({y, x, 2})) / 3.0;
}

// quadrant means around (x,y) at box radius r
bool quadrant_means(const std::vector<double>& L, int W, int H, int x, int y, int r, double q[4]) {
    if (x - r < 0 || y - r < 0 || x + r >= W || y + r >= H) return false;
    double acc[4] = {0, 0, 0, 0};
    for (int dy = 1; dy <= r; ++dy)
        for (int dx = 1; dx <= r; ++dx) {
            acc[0] += L[static_cast<size_t>(y - dy) * W + (x - dx)];  // up-left
            acc[1] += L[static_cast<size_t>(y - dy) * W + (x + dx)];  // up-right
            acc[2] += L[static_cast<size_t>(y + dy) * W + (x - dx)];  // down-left
            acc[3] += L[static_cast<size_t>(y + dy) * W + (x + dx)];  // down-right
        }
    const double n = static_cast<double>(r) * r;
    for (int i = 0; i < 4; ++i) q[i] = acc[i] / n;
    return true;
}

double checker_response(const std::vector<double>& L, int W, int H, int x, int y, int r) {
    double q[4];
    if (!quadrant_means(L, W, H, x, y, r, q)) return 0.0;
    const double d = q[0] + q[3] - q[1] - q[2];
    const double e1 = q[0] + q[1] - q[2] - q[3];
    const double e2 = q[0] + q[2] - q[1] - q[3];
    return std::fabs(d) - 0.5 * (std::fabs(e1) + std::fabs(e2));
}

double subpixel_offset(double rm, double r0, double rp) {
    const double denom = rm - 2.0 * r0 + rp;
    if (std::fabs(denom) < 1e-12) return 0.0;
    return std::clamp(0.5 * (rm - rp) / denom, -0.6, 0.6);
}

int classify_palette(const Vector3d& c) {
    const auto pal = FiducialMap::palette();
    // hue-ish nearest neighbor on normalized chroma
    const double m = std::max(1e-6, c.maxCoeff());
    const Vector3d cn = c / m;
    int best = -1;
    double best_d = 1e18;
    for (size_t i = 0; i < pal.size(); ++i) {
        const Vector3d pn = pal[i] / pal[i].maxCoeff();
        const double d = (cn - pn).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

Vector3d mean_color_box(const Tensor& frame, int cx, int cy, int r, int qx, int qy) {
    // mean over the quadrant (qx,qy in {-1,+1}) box of radius r
    const int W = static_cast<int>(frame.dim(1)), H = static_cast<int>(frame.dim(0));
    Vector3d acc = Vector3d::Zero();
    int count = 0;
    for (int dy = 1; dy <= r; ++dy)
        for (int dx = 1; dx <= r; ++dx) {
            const int x = cx + qx * dx, y = cy + qy * dy;
            if (x < 0 || y < 0 || x >= W || y >= H) continue;
            acc += Vector3d(frame.at({y, x, 0}), frame.at({y, x, 1}), frame.at({y, x, 2}));
            ++count;
        }
    return count > 0 ? Vector3d(acc / count) : Vector3d::Zero();
}

double saturation(const Vector3d& c) { return c.maxCoeff() - c.minCoeff(); }

struct Cluster {
    std::vector<Corner> corners;
    int color_index = -1;
    double size = 0.0;  // max pairwise distance
};

// homography mapping ground (x,y,1) -> pixel, from >= 4 correspondences
bool fit_homography(const std::vector<Vector2d>& world, const std::vector<Vector2d>& pix,
                    Eigen::Matrix3d& H) {
    const size_t n = world.size();
    if (n < 4) return false;
    Eigen::MatrixXd A(2 * n, 9);
    for (size_t i = 0; i < n; ++i) {
        const double X = world[i].x(), Y = world[i].y();
        const double u = pix[i].x(), v = pix[i].y();
        A.row(2 * i) << X, Y, 1, 0, 0, 0, -u * X, -u * Y, -u;
        A.row(2 * i + 1) << 0, 0, 0, X, Y, 1, -v * X, -v * Y, -v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    if (std::fabs(H(2, 2)) < 1e-15) return false;
    H /= H(2, 2);
    return true;
}

Vector2d apply_h(const Eigen::Matrix3d& H, const Vector2d& w) {
    const Eigen::Vector3d p = H * Eigen::Vector3d(w.x(), w.y(), 1.0);
    return Vector2d(p.x() / p.z(), p.y() / p.z());
}

std::array<Vector2d, 4> ordered_image_corners(const Cluster& c) {
    std::array<Vector2d, 4> pts;
    std::vector<Vector2d> v;
    for (const auto& corner : c.corners) v.emplace_back(corner.x, corner.y);
    // near pair = larger image v; within a pair, right = larger u
    std::sort(v.begin(), v.end(), [](const Vector2d& a, const Vector2d& b) { return a.y() > b.y(); });
    Vector2d near_a = v[0], near_b = v[1], far_a = v[2], far_b = v[3];
    if (near_a.x() < near_b.x()) std::swap(near_a, near_b);
    if (far_a.x() < far_b.x()) std::swap(far_a, far_b);
    pts[0] = near_a;  // near-right
    pts[1] = near_b;  // near-left
    pts[2] = far_a;   // far-right
    pts[3] = far_b;   // far-left
    return pts;
}

std::array<Vector2d, 4> world_corners_2d(const Fiducial& m) {
    const auto w = FiducialMap::corners_world(m);
    // corners_world order: (du-,dv-),(du-,dv+),(du+,dv-),(du+,dv+)
    // = near-right, near-left, far-right, far-left for a forward camera
    return {Vector2d(w[0].x(), w[0].y()), Vector2d(w[1].x(), w[1].y()), Vector2d(w[2].x(), w[2].y()),
            Vector2d(w[3].x(), w[3].y())};
}

}  // namespace

std::vector<DetectedMarker> detect_fiducials(const Tensor& frame, const FiducialMap& map) {
    COMPOSIA_CHECK(frame.rank() == 3 && frame.dim(2) == 3, << "frame must be H,W,3");
    const int H = static_cast<int>(frame.dim(0)), W = static_cast<int>(frame.dim(1));
    std::vector<double> L(static_cast<size_t>(W) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) L[static_cast<size_t>(y) * W + x] = luma_at(frame, x, y);

    // multi-radius checkerboard-crossing response
    constexpr int kRadii[3] = {1, 2, 3};
    constexpr double kThreshold = 0.08;
    std::vector<double> resp(static_cast<size_t>(W) * H, 0.0);
    std::vector<int> best_r(static_cast<size_t>(W) * H, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double best = 0.0;
            int br = 1;
            for (int r : kRadii) {
                const double v = checker_response(L, W, H, x, y, r);
                if (v > best) {
                    best = v;
                    br = r;
                }
            }
            resp[static_cast<size_t>(y) * W + x] = best;
            best_r[static_cast<size_t>(y) * W + x] = br;
        }

    // non-max suppression + sub-pixel quadratic fit + color classification
    std::vector<Corner> corners;
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
            const double r0 = resp[static_cast<size_t>(y) * W + x];
            if (r0 < kThreshold) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const double rn = resp[static_cast<size_t>(y + dy) * W + (x + dx)];
                    if (rn > r0 || (rn == r0 && (dy < 0 || (dy == 0 && dx < 0)))) {
                        is_max = false;
                        break;
                    }
                }
            if (!is_max) continue;
            Corner c;
            c.radius = best_r[static_cast<size_t>(y) * W + x];
            c.response = r0;
            c.x = x + subpixel_offset(resp[static_cast<size_t>(y) * W + (x - 1)], r0,
                                      resp[static_cast<size_t>(y) * W + (x + 1)]);
            c.y = y + subpixel_offset(resp[static_cast<size_t>(y - 1) * W + x], r0,
                                      resp[static_cast<size_t>(y + 1) * W + x]);
            // the two saturated diagonal quadrants carry the marker color
            Vector3d best_color = Vector3d::Zero();
            double best_sat = 0.0;
            for (const auto& [qx, qy] : std::vector<std::pair<int, int>>{{-1, -1}, {1, -1}, {-1, 1}, {1, 1}}) {
                const Vector3d col = mean_color_box(frame, x, y, c.radius, qx, qy);
                if (saturation(col) > best_sat) {
                    best_sat = saturation(col);
                    best_color = col;
                }
            }
            if (best_sat < 0.12) continue;  // not a coded marker crossing
            c.color_index = classify_palette(best_color);
            corners.push_back(c);
        }

    // greedy clustering by color and proximity
    std::vector<int> owner(corners.size(), -1);
    std::vector<Cluster> clusters;
    for (size_t i = 0; i < corners.size(); ++i) {
        if (owner[i] >= 0) continue;
        Cluster cl;
        cl.color_index = corners[i].color_index;
        cl.corners.push_back(corners[i]);
        owner[i] = static_cast<int>(clusters.size());
        for (size_t j = i + 1; j < corners.size(); ++j) {
            if (owner[j] >= 0 || corners[j].color_index != cl.color_index) continue;
            bool close = false;
            for (const Corner& c : cl.corners) {
                const double dmax = 3.0 * (c.radius + corners[j].radius) + 6.0;
                const double dx = c.x - corners[j].x, dy = c.y - corners[j].y;
                if (dx * dx + dy * dy < dmax * dmax) {
                    close = true;
                    break;
                }
            }
            if (close) {
                cl.corners.push_back(corners[j]);
                owner[j] = static_cast<int>(clusters.size());
            }
        }
        clusters.push_back(std::move(cl));
    }
    std::vector<Cluster> quads;
    for (auto& cl : clusters) {
        if (cl.corners.size() != 4) continue;
        double size = 0.0;
        for (size_t a = 0; a < 4; ++a)
            for (size_t b = a + 1; b < 4; ++b) {
                const double dx = cl.corners[a].x - cl.corners[b].x;
                const double dy = cl.corners[a].y - cl.corners[b].y;
                size = std::max(size, std::hypot(dx, dy));
            }
        cl.size = size;
        quads.push_back(cl);
    }
    if (quads.size() < 2) return {};
    std::sort(quads.begin(), quads.end(), [](const Cluster& a, const Cluster& b) { return a.size > b.size; });

    // hypothesis search over world identities of the two most prominent quads,
    // verified by a ground-plane homography over every detected quad
    std::vector<const Fiducial*> by_color[8];
    for (const auto& m : map.markers)
        if (m.color_index >= 0 && m.color_index < 8) by_color[m.color_index].push_back(&m);

    const auto img0 = ordered_image_corners(quads[0]);
    const auto img1 = ordered_image_corners(quads[1]);
    double best_score = -1.0;
    std::vector<std::pair<int, const Fiducial*>> best_assign;  // quad index -> marker
    for (const Fiducial* c0 : by_color[quads[0].color_index]) {
        for (const Fiducial* c1 : by_color[quads[1].color_index]) {
            if (c0 == c1) continue;
            std::vector<Vector2d> world, pix;
            const auto w0 = world_corners_2d(*c0);
            const auto w1 = world_corners_2d(*c1);
            for (int i = 0; i < 4; ++i) {
                world.push_back(w0[static_cast<size_t>(i)]);
                pix.push_back(img0[static_cast<size_t>(i)]);
                world.push_back(w1[static_cast<size_t>(i)]);
                pix.push_back(img1[static_cast<size_t>(i)]);
            }
            Eigen::Matrix3d Hm;
            if (!fit_homography(world, pix, Hm)) continue;
            // self-consistency of the seed pair
            double seed_err = 0.0;
            for (size_t i = 0; i < world.size(); ++i) seed_err += (apply_h(Hm, world[i]) - pix[i]).norm();
            seed_err /= static_cast<double>(world.size());
            if (seed_err > 1.5) continue;
            // verify every quad against candidate markers of its color
            int matched = 0;
            double total_err = 0.0;
            std::vector<std::pair<int, const Fiducial*>> assign;
            for (size_t qi = 0; qi < quads.size(); ++qi) {
                const auto img = ordered_image_corners(quads[qi]);
                const Fiducial* best_m = nullptr;
                double best_e = 2.0;  // px gate
                for (const Fiducial* cand : by_color[quads[qi].color_index]) {
                    const auto wc = world_corners_2d(*cand);
                    double e = 0.0;
                    for (int i = 0; i < 4; ++i) e += (apply_h(Hm, wc[static_cast<size_t>(i)]) - img[static_cast<size_t>(i)]).norm();
                    e /= 4.0;
                    if (e < best_e) {
                        best_e = e;
                        best_m = cand;
                    }
                }
                if (best_m != nullptr) {
                    ++matched;
                    total_err += best_e;
                    assign.emplace_back(static_cast<int>(qi), best_m);
                }
            }
            const double score = matched - 0.1 * total_err;
            if (matched >= 2 && score > best_score) {
                best_score = score;
                best_assign = std::move(assign);
            }
        }
    }
    std::vector<DetectedMarker> out;
    for (const auto& [qi, marker] : best_assign) {
        DetectedMarker dm;
        dm.id = marker->id;
        dm.color_index = marker->color_index;
        dm.corners = ordered_image_corners(quads[static_cast<size_t>(qi)]);
        out.push_back(dm);
    }
    std::sort(out.begin(), out.end(), [](const DetectedMarker& a, const DetectedMarker& b) { return a.id < b.id; });
    return out;
}

// ---- pose recovery ---------------------------------------------------------------------

namespace {

// world->optical-camera pose from a ground-plane homography H ~ K [r1 r2 t]
bool pose_from_homography(const Eigen::Matrix3d& H, const Intrinsics& K, Pose& world_to_cam) {
    const Eigen::Matrix3d M = K.matrix().inverse() * H;
    const double l1 = M.col(0).norm(), l2 = M.col(1).norm();
    if (l1 < 1e-12 || l2 < 1e-12) return false;
    double lambda = 2.0 / (l1 + l2);
    Eigen::Vector3d t = lambda * M.col(2);
    if (t.z() < 0) {
        lambda = -lambda;
        t = -t;
    }
    Eigen::Matrix3d R;
    R.col(0) = lambda * M.col(0);
    R.col(1) = lambda * M.col(1);
    R.col(2) = R.col(0).cross(R.col(1));
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0) {
        Eigen::Matrix3d V = svd.matrixV();
        V.col(2) *= -1;
        R = svd.matrixU() * V.transpose();
    }
    world_to_cam.rotation = R;
    world_to_cam.translation = t;
    return true;
}

double refine_pose_gn(Pose& w2c, const Intrinsics& K, const std::vector<Vector3d>& world,
                      const std::vector<Vector2d>& pix, int iterations = 12) {
    const size_t n = world.size();
    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix<double, 6, 6> JtJ = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> Jtr = Eigen::Matrix<double, 6, 1>::Zero();
        for (size_t i = 0; i < n; ++i) {
            const Vector3d pc = w2c.apply(world[i]);
            if (pc.z() < 1e-6) continue;
            const double X = pc.x(), Y = pc.y(), Z = pc.z();
            const Vector2d proj(K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy);
            const Vector2d r = proj - pix[i];
            Eigen::Matrix<double, 2, 3> Jp;
            Jp << K.fx / Z, 0, -K.fx * X / (Z * Z), 0, K.fy / Z, -K.fy * Y / (Z * Z);
            Eigen::Matrix<double, 3, 6> Jx;
            Jx.block<3, 3>(0, 0) = -geometry::Matrix3d{{0, -pc.z(), pc.y()}, {pc.z(), 0, -pc.x()}, {-pc.y(), pc.x(), 0}};
            Jx.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
            const Eigen::Matrix<double, 2, 6> J = Jp * Jx;
            JtJ += J.transpose() * J;
            Jtr += J.transpose() * r;
        }
        JtJ += 1e-9 * Eigen::Matrix<double, 6, 6>::Identity();
        const Eigen::Matrix<double, 6, 1> delta = JtJ.ldlt().solve(-Jtr);
        const Eigen::Vector3d omega = delta.head<3>();
        const double angle = omega.norm();
        Eigen::Matrix3d dR = Eigen::Matrix3d::Identity();
        if (angle > 1e-15) dR = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
        w2c.rotation = dR * w2c.rotation;
        w2c.translation += delta.tail<3>();
        if (delta.norm() < 1e-12) break;
    }
    double err = 0.0;
    int count = 0;
    for (size_t i = 0; i < n; ++i) {
        const Vector3d pc = w2c.apply(world[i]);
        if (pc.z() < 1e-6) continue;
        const Vector2d proj(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
        err += (proj - pix[i]).norm();
        ++count;
    }
    return count > 0 ? err / count : 1e9;
}

}  // namespace

double RecoveredTrajectory::valid_fraction() const {
    if (valid.empty()) return 0.0;
    int n = 0;
    for (bool v : valid) n += v ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(valid.size());
}

RecoveredTrajectory recover_trajectory(const Tensor& clip, const FiducialMap& map, const Intrinsics& K,
                                       double validity_residual_px) {
    COMPOSIA_CHECK(clip.rank() == 4 && clip.dim(3) == 3, << "clip must be F,H,W,3");
    const int F = static_cast<int>(clip.dim(0));
    const int64_t H = clip.dim(1), W = clip.dim(2);
    RecoveredTrajectory out;
    out.rig_poses.assign(static_cast<size_t>(F), Pose::identity());
    out.reproj_residual_px.assign(static_cast<size_t>(F), 1e9);
    out.valid.assign(static_cast<size_t>(F), false);

    const geometry::Matrix3d rig_to_opt = microworld::CameraPath::rig_to_optical();
    for (int f = 0; f < F; ++f) {
        Tensor frame({H, W, 3});
        for (int64_t i = 0; i < H * W * 3; ++i) frame[i] = clip[f * H * W * 3 + i];
        const auto detections = detect_fiducials(frame, map);
        std::vector<Vector3d> world;
        std::vector<Vector2d> pix;
        for (const auto& dm : detections) {
            const Fiducial* marker = nullptr;
            for (const auto& m : map.markers)
                if (m.id == dm.id) marker = &m;
            if (marker == nullptr) continue;
            const auto wc = FiducialMap::corners_world(*marker);
            for (int i = 0; i < 4; ++i) {
                world.push_back(wc[static_cast<size_t>(i)]);
                pix.push_back(dm.corners[static_cast<size_t>(i)]);
            }
        }
        if (world.size() < 4) continue;  // frame flagged invalid

        std::vector<Vector2d> world2d;
        for (const auto& w : world) world2d.emplace_back(w.x(), w.y());
        Eigen::Matrix3d Hm;
        if (!fit_homography(world2d, pix, Hm)) continue;
        Pose w2c;
        if (!pose_from_homography(Hm, K, w2c)) continue;
        double residual = refine_pose_gn(w2c, K, world, pix);
        // one outlier-rejection pass (partially occluded markers)
        if (residual > 0.5 && world.size() > 6) {
            std::vector<Vector3d> w_in;
            std::vector<Vector2d> p_in;
            for (size_t i = 0; i < world.size(); ++i) {
                const Vector3d pc = w2c.apply(world[i]);
                if (pc.z() < 1e-6) continue;
                const Vector2d proj(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
                if ((proj - pix[i]).norm() < 3.0 * residual) {
                    w_in.push_back(world[i]);
                    p_in.push_back(pix[i]);
                }
            }
            if (w_in.size() >= 4) residual = refine_pose_gn(w2c, K, w_in, p_in);
        }
        out.reproj_residual_px[static_cast<size_t>(f)] = residual;
        if (residual >= validity_residual_px) continue;
        const Pose cam_to_world = w2c.inverse();
        Pose rig;
        rig.rotation = cam_to_world.rotation * rig_to_opt;
        rig.translation = cam_to_world.translation;
        out.rig_poses[static_cast<size_t>(f)] = rig;
        out.valid[static_cast<size_t>(f)] = true;
    }
    return out;
}

ActionMetrics evaluate_action(const Tensor& gen_clip, const std::vector<Pose>& gt_rig,
                              const FiducialMap& map, const Intrinsics& K, double min_valid_fraction) {
    COMPOSIA_CHECK(static_cast<int64_t>(gt_rig.size()) == gen_clip.dim(0),
                   << "ground-truth path must cover the clip");
    const RecoveredTrajectory rec = recover_trajectory(gen_clip, map, K);
    COMPOSIA_CHECK(rec.valid_fraction() >= min_valid_fraction,
                   << "recovery valid on only " << rec.valid_fraction() * 100.0 << "% of frames");
    std::vector<Pose> gen, gt;
    for (size_t f = 0; f < rec.valid.size(); ++f) {
        if (!rec.valid[f]) continue;
        gen.push_back(rec.rig_poses[f]);
        gt.push_back(gt_rig[f]);
    }
    ActionMetrics m;
    m.frames_evaluated = static_cast<int>(gen.size());
    m.rot_err = geometry::rot_err(gen, gt);
    m.trans_err_scaled = geometry::trans_err(gen, gt) * 1000.0;
    return m;
}

// ---- planner -------------------------------------------------------------------------------

PlanRollout rollout_planner(const std::vector<Pose>& history, double hz, double horizon_s) {
    COMPOSIA_CHECK(history.size() >= 2, << "planner needs at least two history frames");
    const double dt = 1.0 / hz;
    const int window = std::max<int>(2, static_cast<int>(std::lround(0.5 * hz)) + 1);
    const int start = std::max<int>(0, static_cast<int>(history.size()) - window);
    double v = 0.0, omega = 0.0;
    int n = 0;
    for (size_t i = static_cast<size_t>(start) + 1; i < history.size(); ++i) {
        v += (history[i].translation - history[i - 1].translation).norm() / dt;
        omega += geometry::wrap_angle(history[i].yaw() - history[i - 1].yaw()) / dt;
        ++n;
    }
    v /= n;
    omega /= n;

    PlanRollout out;
    out.hz = hz;
    const int steps = static_cast<int>(std::lround(horizon_s * hz));
    double x = history.back().translation.x();
    double y = history.back().translation.y();
    double yaw = history.back().yaw();
    for (int k = 0; k < steps; ++k) {
        if (std::fabs(omega) > 1e-9) {
            const double r = v / omega;
            x += r * (std::sin(yaw + omega * dt) - std::sin(yaw));
            y += r * (-std::cos(yaw + omega * dt) + std::cos(yaw));
        } else {
            x += v * dt * std::cos(yaw);
            y += v * dt * std::sin(yaw);
        }
        yaw = geometry::wrap_angle(yaw + omega * dt);
        out.poses.push_back(Pose::from_xy_yaw(x, y, yaw));
    }
    return out;
}

std::array<bool, 3> collision_horizons(const PlanRollout& rollout,
                                       const std::vector<geometry::BoxTrack>& agents, int history_frames,
                                       const geometry::Box7& ego_footprint) {
    std::array<bool, 3> out = {false, false, false};
    const int steps_per_s = static_cast<int>(std::lround(rollout.hz));
    for (size_t k = 0; k < rollout.poses.size(); ++k) {
        const int agent_frame = history_frames + static_cast<int>(k);
        geometry::ObbRect ego = geometry::bev_rect(ego_footprint);
        ego.center = Vector2d(rollout.poses[k].translation.x(), rollout.poses[k].translation.y());
        ego.yaw = rollout.poses[k].yaw();
        bool hit = false;
        for (const auto& t : agents) {
            if (!t.present_at(agent_frame)) continue;
            if (geometry::obb_overlap(ego, geometry::bev_rect(t.boxes[static_cast<size_t>(agent_frame)]))) {
                hit = true;
                break;
            }
        }
        if (hit) {
            for (int h = 0; h < 3; ++h)
                if (static_cast<int>(k) < (h + 1) * steps_per_s) out[static_cast<size_t>(h)] = true;
        }
    }
    return out;
}

std::array<double, 3> l2_error(const PlanRollout& rollout, const std::vector<Pose>& gt_future) {
    std::array<double, 3> out = {0, 0, 0};
    const int steps_per_s = static_cast<int>(std::lround(rollout.hz));
    for (int h = 0; h < 3; ++h) {
        const size_t k = static_cast<size_t>((h + 1) * steps_per_s) - 1;
        COMPOSIA_CHECK(k < rollout.poses.size() && k < gt_future.size(),
                       << "horizon " << (h + 1) << "s not covered by rollout or ground truth");
        out[static_cast<size_t>(h)] =
            (rollout.poses[k].translation - gt_future[k].translation).norm();
    }
    return out;
}

// ---- report --------------------------------------------------------------------------------

namespace {
double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}
}  // namespace

double MetricsReport::mean_rot_err() const {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.rot_err) v.push_back(*r.rot_err);
    return mean_of(v);
}

double MetricsReport::mean_trans_err_scaled() const {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.trans_err_scaled) v.push_back(*r.trans_err_scaled);
    return mean_of(v);
}

std::array<double, 3> MetricsReport::collision_rates() const {
    std::array<double, 3> out = {0, 0, 0};
    int n = 0;
    for (const auto& r : rows)
        if (r.collisions) {
            ++n;
            for (int h = 0; h < 3; ++h) out[static_cast<size_t>(h)] += (*r.collisions)[static_cast<size_t>(h)] ? 1.0 : 0.0;
        }
    if (n > 0)
        for (auto& v : out) v /= n;
    return out;
}

std::array<double, 3> MetricsReport::mean_l2() const {
    std::array<double, 3> out = {0, 0, 0};
    int n = 0;
    for (const auto& r : rows)
        if (r.l2) {
            ++n;
            for (int h = 0; h < 3; ++h) out[static_cast<size_t>(h)] += (*r.l2)[static_cast<size_t>(h)];
        }
    if (n > 0)
        for (auto& v : out) v /= n;
    return out;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
    std::ostringstream oss;
    oss.precision(12);
    oss << "scene_id,rot_err,trans_err_x1000,collision_1s,collision_2s,collision_3s,l2_1s,l2_2s,l2_3s\n";
    for (const auto& r : rows) {
        oss << r.scene_id << ",";
        if (r.rot_err) oss << *r.rot_err;
        oss << ",";
        if (r.trans_err_scaled) oss << *r.trans_err_scaled;
        for (int h = 0; h < 3; ++h) {
            oss << ",";
            if (r.collisions) oss << ((*r.collisions)[static_cast<size_t>(h)] ? 1 : 0);
        }
        for (int h = 0; h < 3; ++h) {
            oss << ",";
            if (r.l2) oss << (*r.l2)[static_cast<size_t>(h)];
        }
        oss << "\n";
    }
    io::write_text_file(path, oss.str());
}

void MetricsReport::write_json(const std::filesystem::path& path, const std::string& config_echo) const {
    io::json j;
    j["scenes"] = rows.size();
    j["mean_rot_err"] = mean_rot_err();
    j["mean_trans_err_x1000"] = mean_trans_err_scaled();
    const auto cr = collision_rates();
    j["collision_rate"] = {{"1s", cr[0]}, {"2s", cr[1]}, {"3s", cr[2]}};
    const auto l2 = mean_l2();
    j["mean_l2"] = {{"1s", l2[0]}, {"2s", l2[1]}, {"3s", l2[2]}};
    if (!config_echo.empty()) j["config"] = io::json::parse(config_echo);
    io::write_json_file(path, j);
}

void MetricsReport::write_plots(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
        img::Series s;
        s.label = "ROTERR";
        for (const auto& r : rows)
            if (r.rot_err) s.values.push_back(*r.rot_err);
        if (!s.values.empty()) img::write_line_chart(dir / "rot_err.png", "ROTERR PER SCENE", {s});
    }
    {
        img::Series s;
        s.label = "TRANSERR X1000";
        for (const auto& r : rows)
            if (r.trans_err_scaled) s.values.push_back(*r.trans_err_scaled);
        if (!s.values.empty()) img::write_line_chart(dir / "trans_err.png", "TRANSERR X1000 PER SCENE", {s});
    }
    {
        const auto cr = collision_rates();
        img::write_bar_chart(dir / "collision_rate.png", "COLLISION RATE",
                             {"1S", "2S", "3S"}, {cr[0], cr[1], cr[2]});
    }
    {
        const auto l2 = mean_l2();
        img::write_bar_chart(dir / "l2.png", "MEAN L2 (M)", {"1S", "2S", "3S"}, {l2[0], l2[1], l2[2]});
    }
}

MetricsReport MetricsReport::from_csv(const std::filesystem::path& path) {
    MetricsReport report;
    std::istringstream is(io::read_text_file(path));
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(9);
        SceneMetrics r;
        r.scene_id = cells[0];
        if (!cells[1].empty()) r.rot_err = std::stod(cells[1]);
        if (!cells[2].empty()) r.trans_err_scaled = std::stod(cells[2]);
        if (!cells[3].empty())
            r.collisions = std::array<bool, 3>{cells[3] == "1", cells[4] == "1", cells[5] == "1"};
        if (!cells[6].empty())
            r.l2 = std::array<double, 3>{std::stod(cells[6]), std::stod(cells[7]), std::stod(cells[8])};
        report.rows.push_back(std::move(r));
    }
    return report;
}

}  // namespace composia::evalkit
