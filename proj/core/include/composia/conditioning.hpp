// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "composia/codec.hpp"
#include "composia/geometry.hpp"
#include "composia/microworld.hpp"
#include "composia/rng.hpp"

namespace composia::conditioning {

using geometry::ActionResiduals;
using geometry::PropeMatrices;

/// Rasterized projected-box outlines, spatiotemporally aligned with the clip;
/// background pixels are exactly zero.
struct StructureRaster {
    nn::Tensor frames;  // F,H,W,3
};

/// Reference crop pasted along the projected track. mask_full marks the whole
/// enclosing-rectangle union; mask_inject marks where reference pixels
/// actually sit (the inpaint ring is their difference, nonempty only for
/// undersized external references).
struct IdentityCue {
    nn::Tensor pasted;       // F,H,W,3
    nn::Tensor mask_full;    // F,H,W in {0,1}
    nn::Tensor mask_inject;  // F,H,W in {0,1}
    int source_element_id = -1;
    int selected_frame = -1;  // -1 for external references
    std::vector<std::array<int, 4>> rects;  // per frame x0,y0,x1,y1 (exclusive); zeros when absent
};

struct LatentMask {
    nn::Tensor m;  // f,h,w in {0,1}
};

enum class Modality { ActionOnly, StructureIdentityAction, Unconditional };

/// First-frame scene anchoring: the frame-0 latent pinned clean during
/// denoising, with an inpaint mask for cells that keep following the global
/// timestep (edit region and ring).
struct FirstFrameAnchor {
    nn::Tensor clean_latent;  // (c, h, w), standardized
    nn::Tensor inpaint_mask;  // (h, w) in {0,1}; 1 = keeps denoising
};

struct StructureCondition {
    StructureRaster raster;
    nn::Tensor latent;  // (c,f,h,w) encoded raster
};

struct IdentityCondition {
    IdentityCue cue;
    nn::Tensor latent;        // z of the pasted sequence, (c,f,h,w)
    LatentMask inject_mask;   // downsampled mask_inject
    LatentMask full_mask;     // downsampled mask_full
};

struct ActionCondition {
    ActionResiduals residuals;
    PropeMatrices prope;
};

/// Aggregated condition signals. Construction enforces the pairing rule:
/// a structure cue is never present without an action condition.
class ConditionBundle {
public:
    static ConditionBundle make(std::optional<StructureCondition> structure,
                                std::optional<IdentityCondition> identity,
                                std::optional<ActionCondition> action,
                                std::optional<FirstFrameAnchor> anchor);
    static ConditionBundle empty() { return make(std::nullopt, std::nullopt, std::nullopt, std::nullopt); }

    bool has_structure() const { return structure_.has_value(); }
    bool has_identity() const { return identity_.has_value(); }
    bool has_action() const { return action_.has_value(); }
    bool has_anchor() const { return anchor_.has_value(); }

    const StructureCondition& structure() const { return *structure_; }
    const IdentityCondition& identity() const { return *identity_; }
    const ActionCondition& action() const { return *action_; }
    const FirstFrameAnchor& anchor() const { return *anchor_; }

    ConditionBundle without_anchor() const;
    ConditionBundle with_anchor(FirstFrameAnchor a) const;

private:
    ConditionBundle() = default;
    std::optional<StructureCondition> structure_;
    std::optional<IdentityCondition> identity_;
    std::optional<ActionCondition> action_;
    std::optional<FirstFrameAnchor> anchor_;
};

// ---- operations -------------------------------------------------------------------

/// Category hue scaled by an instance-id brightness; stable across frames.
Eigen::Vector3d raster_color(const std::string& category, int element_id);

/// Projected box outlines drawn as 2-px lines, far boxes first.
StructureRaster build_structure_raster(const std::vector<geometry::BoxTrack>& tracks,
                                       const microworld::CameraPath& camera);

/// Select-and-repaint: crop the element at selected_frame, paste it along its
/// projected track (bilinear resize per frame).
IdentityCue build_identity_cue(const nn::Tensor& clip, const geometry::BoxTrack& track,
                               int selected_frame, const microworld::CameraPath& camera);

/// External-reference variant: user-supplied crop (H_r x W_r x 3) and box size,
/// pasted along placement. reference_scale < 1 leaves an inpaint ring.
IdentityCue build_external_identity_cue(const nn::Tensor& clip, const nn::Tensor& reference_image,
                                        const Eigen::Vector3d& box_size_lwh,
                                        const geometry::BoxTrack& placement,
                                        const microworld::CameraPath& camera,
                                        double reference_scale = 1.0);

/// Max-pool 8x8 spatially, temporal identity: a latent cell is masked iff any
/// pixel in its receptive tile is masked.
LatentMask downsample_mask(const nn::Tensor& mask_fhw);

/// Residuals (last entry duplicated) and block-diagonal projective matrices
/// from a camera path. Intrinsics are normalized by image size and
/// translations scaled to keep matrix entries O(1).
std::pair<ActionResiduals, PropeMatrices> build_action_condition(const microworld::CameraPath& path,
                                                                 int reduced_channels);

/// Training modality draw: 0.6 action-only, 0.3 structure+identity+action,
/// 0.1 unconditional. Structure never appears without action.
Modality sample_training_modality(Rng& rng);

struct AnchorParams {
    double perturb_strength = 0.2;
    double perturb_area_min = 0.10;
    double perturb_area_max = 0.40;
};

/// First-frame anchor: encode frame 0 clean; mask the identity-edit region
/// (and ring) as inpaint; optionally apply the localized training perturbation.
FirstFrameAnchor prepare_first_frame_anchor(const nn::Tensor& clip, const codec::Codec& codec,
                                            const IdentityCondition* identity, Rng* perturb_rng,
                                            const AnchorParams& params = {});

/// Bilinear resize of an H x W x C image tensor (exact copy when sizes match).
nn::Tensor resize_bilinear(const nn::Tensor& src, int out_h, int out_w);

/// Enclosing pixel rectangle (x0,y0,x1,y1 exclusive) of a projected polyline,
/// clamped to the image; all-zero when nothing is visible.
std::array<int, 4> enclosing_rect(const geometry::Polyline2D& poly, int width, int height);

}  // namespace composia::conditioning
