// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/conditioning.hpp"

#include <algorithm>
#include <cmath>

namespace composia::conditioning {

using geometry::Box7;
using geometry::BoxTrack;
using geometry::Pose;
using geometry::Vector3d;
using nn::Tensor;

ConditionBundle ConditionBundle::make(std::optional<StructureCondition> structure,
                                      std::optional<IdentityCondition> identity,
                                      std::optional<ActionCondition> action,
                                      std::optional<FirstFrameAnchor> anchor) {
    COMPOSIA_CHECK(!(structure.has_value() && !action.has_value()),
                   << "structure cue must always be paired with an action condition");
    ConditionBundle b;
    b.structure_ = std::move(structure);
    b.identity_ = std::move(identity);
    b.action_ = std::move(action);
    b.anchor_ = std::move(anchor);
    return b;
}

ConditionBundle ConditionBundle::without_anchor() const {
    ConditionBundle b = *this;
    b.anchor_.reset();
    return b;
}

ConditionBundle ConditionBundle::with_anchor(FirstFrameAnchor a) const {
    ConditionBundle b = *this;
    b.anchor_ = std::move(a);
    return b;
}

// ---- raster ---------------------------------------------------------------------

Eigen::Vector3d raster_color(const std::string& category, int element_id) {
    Vector3d hue(0.6, 0.6, 0.6);
    if (category == "car") hue = Vector3d(0.95, 0.30, 0.25);
    else if (category == "truck") hue = Vector3d(0.25, 0.45, 0.95);
    else if (category == "cone") hue = Vector3d(0.95, 0.65, 0.15);
    const double phi = 0.6180339887498949;
    const double brightness = 0.55 + 0.45 * std::fmod(element_id * phi, 1.0);
    return hue * brightness;
}

namespace {

void stamp(Tensor& frames, int f, double x, double y, const Vector3d& color) {
    const int H = static_cast<int>(frames.dim(1)), W = static_cast<int>(frames.dim(2));
    const int xi = static_cast<int>(std::floor(x));
    const int yi = static_cast<int>(std::floor(y));
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
            const int px = xi + dx, py = yi + dy;
            if (px < 0 || py < 0 || px >= W || py >= H) continue;
            for (int c = 0; c < 3; ++c) frames.at({f, py, px, c}) = color[c];
        }
}

void draw_segment(Tensor& frames, int f, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                  const Vector3d& color) {
    const double len = (b - a).norm();
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const Eigen::Vector2d p = a + t * (b - a);
        stamp(frames, f, p.x(), p.y(), color);
    }
}

}  // namespace

StructureRaster build_structure_raster(const std::vector<BoxTrack>& tracks,
                                       const microworld::CameraPath& camera) {
    const int F = camera.frames();
    for (const BoxTrack& t : tracks)
        COMPOSIA_CHECK(t.frames() == F, << "track length must equal the clip frame count");
    const int H = camera.intrinsics[0].height, W = camera.intrinsics[0].width;
    StructureRaster out;
    out.frames = Tensor({F, H, W, 3});
    for (int f = 0; f < F; ++f) {
        const Pose w2c = camera.world_to_camera(f);
        const auto& K = camera.intrinsics[static_cast<size_t>(f)];
        struct Item {
            const BoxTrack* track;
            double depth;
            geometry::Polyline2D poly;
        };
        std::vector<Item> items;
        for (const BoxTrack& t : tracks) {
            if (!t.present_at(f)) continue;
            const Box7& box = t.boxes[static_cast<size_t>(f)];
            geometry::Polyline2D poly = geometry::project_box(box, K, w2c);
            if (poly.empty_or_hidden()) continue;
            items.push_back({&t, w2c.apply(box.center).z(), std::move(poly)});
        }
        std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.depth > b.depth; });
        for (const Item& it : items) {
            const Vector3d color = raster_color(it.track->category, it.track->element_id);
            for (const auto& seg : it.poly.segments)
                if (seg.visible) draw_segment(out.frames, f, seg.a, seg.b, color);
        }
    }
    return out;
}

// ---- identity cues ------------------------------------------------------------------

std::array<int, 4> enclosing_rect(const geometry::Polyline2D& poly, int width, int height) {
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    bool any = false;
    for (const auto& s : poly.segments) {
        if (!s.visible) continue;
        any = true;
        for (const auto& p : {s.a, s.b}) {
            minx = std::min(minx, p.x());
            maxx = std::max(maxx, p.x());
            miny = std::min(miny, p.y());
            maxy = std::max(maxy, p.y());
        }
    }
    if (!any) return {0, 0, 0, 0};
    const int x0 = std::clamp(static_cast<int>(std::floor(minx)), 0, width);
    const int x1 = std::clamp(static_cast<int>(std::ceil(maxx)) + 1, 0, width);
    const int y0 = std::clamp(static_cast<int>(std::floor(miny)), 0, height);
    const int y1 = std::clamp(static_cast<int>(std::ceil(maxy)) + 1, 0, height);
    if (x1 <= x0 || y1 <= y0) return {0, 0, 0, 0};
    return {x0, y0, x1, y1};
}

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
    COMPOSIA_CHECK(src.rank() == 3, << "resize expects H,W,C");
    const int64_t H = src.dim(0), W = src.dim(1), C = src.dim(2);
    if (H == out_h && W == out_w) return src;
    Tensor out({out_h, out_w, C});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(fy));
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const int64_t x0 = static_cast<int64_t>(std::floor(fx));
            const int64_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int64_t c = 0; c < C; ++c) {
                const double v00 = src[(y0 * W + x0) * C + c];
                const double v01 = src[(y0 * W + x1) * C + c];
                const double v10 = src[(y1 * W + x0) * C + c];
                const double v11 = src[(y1 * W + x1) * C + c];
                out[(static_cast<int64_t>(y) * out_w + x) * C + c] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

namespace {

Tensor crop(const Tensor& clip, int f, const std::array<int, 4>& r) {
    const int64_t W = clip.dim(2);
    Tensor out({r[3] - r[1], r[2] - r[0], 3});
    for (int y = r[1]; y < r[3]; ++y)
        for (int x = r[0]; x < r[2]; ++x)
            for (int c = 0; c < 3; ++c)
                out[((static_cast<int64_t>(y) - r[1]) * (r[2] - r[0]) + (x - r[0])) * 3 + c] =
                    clip[((static_cast<int64_t>(f) * clip.dim(1) + y) * W + x) * 3 + c];
    return out;
}

void paste(Tensor& frames, Tensor& mask, int f, const std::array<int, 4>& r, const Tensor& patch) {
    const int64_t W = frames.dim(2);
    for (int y = r[1]; y < r[3]; ++y)
        for (int x = r[0]; x < r[2]; ++x) {
            for (int c = 0; c < 3; ++c)
                frames[((static_cast<int64_t>(f) * frames.dim(1) + y) * W + x) * 3 + c] =
                    patch[((static_cast<int64_t>(y) - r[1]) * (r[2] - r[0]) + (x - r[0])) * 3 + c];
            mask[(static_cast<int64_t>(f) * frames.dim(1) + y) * W + x] = 1.0;
        }
}

void mark(Tensor& mask, int f, const std::array<int, 4>& r, double v) {
    const int64_t W = mask.dim(2);
    for (int y = r[1]; y < r[3]; ++y)
        for (int x = r[0]; x < r[2]; ++x) mask[(static_cast<int64_t>(f) * mask.dim(1) + y) * W + x] = v;
}

}  // namespace

IdentityCue build_identity_cue(const Tensor& clip, const BoxTrack& track, int selected_frame,
                               const microworld::CameraPath& camera) {
    const int F = static_cast<int>(clip.dim(0));
    const int H = static_cast<int>(clip.dim(1)), W = static_cast<int>(clip.dim(2));
    COMPOSIA_CHECK(track.frames() == F && camera.frames() == F);
    COMPOSIA_CHECK(selected_frame >= 0 && selected_frame < F);

    IdentityCue cue;
    cue.pasted = clip;
    cue.mask_full = Tensor({F, H, W});
    cue.mask_inject = Tensor({F, H, W});
    cue.source_element_id = track.element_id;
    cue.selected_frame = selected_frame;
    cue.rects.assign(static_cast<size_t>(F), {0, 0, 0, 0});

    // per-frame enclosing rectangles of the projected box
    std::vector<std::array<int, 4>> rects(static_cast<size_t>(F), {0, 0, 0, 0});
    bool ever_visible = false;
    for (int f = 0; f < F; ++f) {
        if (!track.present_at(f)) continue;
        const auto poly = geometry::project_box(track.boxes[static_cast<size_t>(f)],
                                                camera.intrinsics[static_cast<size_t>(f)],
                                                camera.world_to_camera(f));
        rects[static_cast<size_t>(f)] = enclosing_rect(poly, W, H);
        if (rects[static_cast<size_t>(f)][2] > rects[static_cast<size_t>(f)][0]) ever_visible = true;
    }
    COMPOSIA_CHECK(ever_visible, << "element " << track.element_id << " is never visible");
    const auto& src_rect = rects[static_cast<size_t>(selected_frame)];
    COMPOSIA_CHECK(src_rect[2] > src_rect[0] && src_rect[3] > src_rect[1],
                   << "element not visible in the selected frame");
    const Tensor reference = crop(clip, selected_frame, src_rect);

    for (int f = 0; f < F; ++f) {
        const auto& r = rects[static_cast<size_t>(f)];
        if (r[2] <= r[0] || r[3] <= r[1]) continue;
        cue.rects[static_cast<size_t>(f)] = r;
        const Tensor patch = resize_bilinear(reference, r[3] - r[1], r[2] - r[0]);
        paste(cue.pasted, cue.mask_full, f, r, patch);
        mark(cue.mask_inject, f, r, 1.0);
    }
    return cue;
}

IdentityCue build_external_identity_cue(const Tensor& clip, const Tensor& reference_image,
                                        const Eigen::Vector3d& box_size_lwh, const BoxTrack& placement,
                                        const microworld::CameraPath& camera, double reference_scale) {
    COMPOSIA_CHECK(reference_image.numel() > 0 && reference_image.rank() == 3,
                   << "reference image must be a nonempty H,W,3 tensor");
    COMPOSIA_CHECK(reference_scale > 0.0 && reference_scale <= 1.0);
    const int F = static_cast<int>(clip.dim(0));
    const int H = static_cast<int>(clip.dim(1)), W = static_cast<int>(clip.dim(2));

    BoxTrack track = placement;
    for (Box7& b : track.boxes) {
        b.size = Vector3d(box_size_lwh.x(), box_size_lwh.y(), box_size_lwh.z());
        b.center.z() = 0.5 * box_size_lwh.z();
    }

    IdentityCue cue;
    cue.pasted = clip;
    cue.mask_full = Tensor({F, H, W});
    cue.mask_inject = Tensor({F, H, W});
    cue.source_element_id = track.element_id;
    cue.selected_frame = -1;
    cue.rects.assign(static_cast<size_t>(F), {0, 0, 0, 0});

    bool ever_visible = false;
    for (int f = 0; f < F; ++f) {
        if (!track.present_at(f)) continue;
        const auto poly = geometry::project_box(track.boxes[static_cast<size_t>(f)],
                                                camera.intrinsics[static_cast<size_t>(f)],
                                                camera.world_to_camera(f));
        const auto r = enclosing_rect(poly, W, H);
        if (r[2] <= r[0] || r[3] <= r[1]) continue;
        ever_visible = true;
        cue.rects[static_cast<size_t>(f)] = r;
        mark(cue.mask_full, f, r, 1.0);
        // centered sub-rectangle occupied by the (scaled) reference
        const int rw = r[2] - r[0], rh = r[3] - r[1];
        const int pw = std::max(1, static_cast<int>(std::lround(rw * reference_scale)));
        const int ph = std::max(1, static_cast<int>(std::lround(rh * reference_scale)));
        std::array<int, 4> pr = {r[0] + (rw - pw) / 2, r[1] + (rh - ph) / 2, 0, 0};
        pr[2] = pr[0] + pw;
        pr[3] = pr[1] + ph;
        const Tensor patch = resize_bilinear(reference_image, ph, pw);
        paste(cue.pasted, cue.mask_inject, f, pr, patch);
    }
    COMPOSIA_CHECK(ever_visible, << "placement box is off-screen in every frame");
    return cue;
}

LatentMask downsample_mask(const Tensor& mask_fhw) {
    COMPOSIA_CHECK(mask_fhw.rank() == 3, << "mask must be F,H,W");
    const int64_t F = mask_fhw.dim(0), H = mask_fhw.dim(1), W = mask_fhw.dim(2);
    COMPOSIA_CHECK(H % 8 == 0 && W % 8 == 0, << "mask dims must be divisible by 8");
    LatentMask out;
    out.m = Tensor({F, H / 8, W / 8});
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < H / 8; ++y)
            for (int64_t x = 0; x < W / 8; ++x) {
                double any = 0.0;
                for (int64_t dy = 0; dy < 8 && any == 0.0; ++dy)
                    for (int64_t dx = 0; dx < 8; ++dx)
                        if (mask_fhw[(f * H + y * 8 + dy) * W + x * 8 + dx] != 0.0) {
                            any = 1.0;
                            break;
                        }
                out.m[(f * (H / 8) + y) * (W / 8) + x] = any;
            }
    return out;
}

// ---- action -----------------------------------------------------------------------------

std::pair<ActionResiduals, PropeMatrices> build_action_condition(const microworld::CameraPath& path,
                                                                 int reduced_channels) {
    const int F = path.frames();
    COMPOSIA_CHECK(F >= 2, << "action condition needs at least two frames");
    ActionResiduals res;
    res.a.reserve(static_cast<size_t>(F));
    for (int f = 0; f + 1 < F; ++f) {
        auto [delta, triple] = geometry::relative_transform(path.rig_poses[static_cast<size_t>(f)],
                                                            path.rig_poses[static_cast<size_t>(f + 1)]);
        (void)delta;
        res.a.push_back(triple);
    }
    res.a.push_back(res.a.back());  // final residual duplicates the previous one

    // normalized intrinsics + scaled translations keep D entries O(1)
    constexpr double kTranslationScale = 0.1;
    std::vector<geometry::Intrinsics> ks;
    std::vector<Pose> es;
    for (int f = 0; f < F; ++f) {
        geometry::Intrinsics k = path.intrinsics[static_cast<size_t>(f)];
        const double w = k.width, h = k.height;
        k.fx /= w;
        k.fy /= h;
        k.cx /= w;
        k.cy /= h;
        k.width = 1;
        k.height = 1;
        Pose e = path.world_to_camera(f);
        e.translation *= kTranslationScale;
        ks.push_back(k);
        es.push_back(e);
    }
    PropeMatrices prope = geometry::prope_matrices(ks, es, reduced_channels);
    return {std::move(res), std::move(prope)};
}

Modality sample_training_modality(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.6) return Modality::ActionOnly;
    if (u < 0.9) return Modality::StructureIdentityAction;
    return Modality::Unconditional;
}

FirstFrameAnchor prepare_first_frame_anchor(const Tensor& clip, const codec::Codec& codec,
                                            const IdentityCondition* identity, Rng* perturb_rng,
                                            const AnchorParams& params) {
    const int64_t H = clip.dim(1), W = clip.dim(2);
    // frame-0 clean latent
    Tensor frame0({1, H, W, 3});
    for (int64_t i = 0; i < H * W * 3; ++i) frame0[i] = clip[i];
    const Tensor z = codec.encode(frame0);  // (c,1,h,w)
    const int64_t c = z.dim(0), h = z.dim(2), w = z.dim(3);
    FirstFrameAnchor anchor;
    anchor.clean_latent = Tensor({c, h, w});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h * w; ++i) anchor.clean_latent[ch * h * w + i] = z[ch * h * w + i];
    anchor.inpaint_mask = Tensor({h, w});

    if (identity != nullptr) {
        // the edit footprint of frame 0 keeps following the global timestep
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                anchor.inpaint_mask[y * w + x] = identity->full_mask.m[y * w + x];
    }

    if (perturb_rng != nullptr && params.perturb_strength > 0.0) {
        // localized training perturbation: uniform noise on a random sub-rectangle
        const double area = perturb_rng->uniform(params.perturb_area_min, params.perturb_area_max);
        const double aspect = perturb_rng->uniform(0.5, 2.0);
        int64_t rh = std::clamp<int64_t>(static_cast<int64_t>(std::lround(std::sqrt(area * aspect) * h)), 1, h);
        int64_t rw = std::clamp<int64_t>(static_cast<int64_t>(std::lround(std::sqrt(area / aspect) * w)), 1, w);
        const int64_t y0 = static_cast<int64_t>(perturb_rng->uniform_index(static_cast<uint64_t>(h - rh + 1)));
        const int64_t x0 = static_cast<int64_t>(perturb_rng->uniform_index(static_cast<uint64_t>(w - rw + 1)));
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = y0; y < y0 + rh; ++y)
                for (int64_t x = x0; x < x0 + rw; ++x)
                    anchor.clean_latent[(ch * h + y) * w + x] +=
                        params.perturb_strength * (2.0 * perturb_rng->uniform() - 1.0);
    }
    return anchor;
}

}  // namespace composia::conditioning
