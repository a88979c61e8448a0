// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/sampler.hpp"

#include <cmath>

namespace composia::sampler {

using conditioning::ConditionBundle;
using nn::Shape;
using nn::Tensor;

namespace {

void pin_anchor(Tensor& z, const conditioning::FirstFrameAnchor& anchor) {
    const int64_t c = z.dim(0), f = z.dim(1), h = z.dim(2), w = z.dim(3);
    (void)f;
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < h * w; ++i)
            if (anchor.inpaint_mask[i] == 0.0)
                z[(ci * z.dim(1) + 0) * h * w + i] = anchor.clean_latent[ci * h * w + i];
}

void inject_identity_sampling(Tensor& z, const conditioning::IdentityCondition& id, const Tensor& eps_seed,
                              double sigma_next) {
    const int64_t c = z.dim(0), f = z.dim(1), h = z.dim(2), w = z.dim(3);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t i = 0; i < h * w; ++i)
                if (id.inject_mask.m[fi * h * w + i] != 0.0) {
                    const int64_t o = (ci * f + fi) * h * w + i;
                    z[o] = sigma_next * id.latent[o] + (1.0 - sigma_next) * eps_seed[o];
                }
}

}  // namespace

GenerationResult integrate(const VelocityFn& velocity, const Shape& latent_shape,
                           const ConditionBundle& bundle, const SampleConfig& cfg) {
    COMPOSIA_CHECK(cfg.steps >= 1, << "need at least one integration step");
    COMPOSIA_CHECK(cfg.t_id >= 0.0 && cfg.t_id <= 1.0);
    COMPOSIA_CHECK(latent_shape.size() == 4, << "latent shape must be (c,f,h,w)");
    const int64_t f = latent_shape[1];
    const flowmatch::NoiseSchedule sched;
    const int K = cfg.steps;

    std::vector<double> grid(static_cast<size_t>(K) + 1);
    for (int k = 0; k <= K; ++k) grid[static_cast<size_t>(k)] = 1.0 - static_cast<double>(k) / K;

    Rng rng(cfg.seed ^ 0x5a3b1e5ULL);
    Tensor eps_seed = Tensor::randn(latent_shape, rng);
    Tensor z = eps_seed;
    if (bundle.has_anchor()) pin_anchor(z, bundle.anchor());

    GenerationResult out;
    out.steps.reserve(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) {
        const double t_k = grid[static_cast<size_t>(k)];
        const double t_next = grid[static_cast<size_t>(k) + 1];
        std::vector<double> t_frames(static_cast<size_t>(f), t_k);
        if (bundle.has_anchor()) t_frames[0] = 0.0;
        const Tensor v = velocity(z, t_frames);
        COMPOSIA_CHECK(v.same_shape(z), << "velocity shape mismatch");
        z.add_inplace(v, t_k - t_next);
        StepDiagnostics diag;
        diag.t_from = t_k;
        diag.t_to = t_next;
        diag.dt = t_k - t_next;
        diag.injection_active = bundle.has_identity() && t_k > cfg.t_id;
        if (diag.injection_active)
            inject_identity_sampling(z, bundle.identity(), eps_seed, sched.sigma(t_next));
        if (bundle.has_anchor()) pin_anchor(z, bundle.anchor());
        out.steps.push_back(diag);
    }
    out.latent = std::move(z);
    return out;
}

GenerationResult sample(const backbone::Backbone& model, const codec::Codec& codec,
                        const ConditionBundle& bundle, const Shape& latent_shape, const SampleConfig& cfg) {
    auto velocity = [&](const Tensor& z, const std::vector<double>& t_frames) {
        return model.forward(z, t_frames, bundle);
    };
    GenerationResult out = integrate(velocity, latent_shape, bundle, cfg);
    out.clip = codec.decode(out.latent);
    return out;
}

// ---- bundle builders -----------------------------------------------------------------------

ConditionBundle action_following_bundle(const microworld::RenderedClip& clip, const codec::Codec& codec,
                                        int reduced_channels, bool with_structure) {
    auto [residuals, prope] = conditioning::build_action_condition(clip.camera, reduced_channels);
    conditioning::ActionCondition action;
    action.residuals = std::move(residuals);
    action.prope = std::move(prope);
    std::optional<conditioning::StructureCondition> structure;
    if (with_structure) {
        conditioning::StructureCondition sc;
        sc.raster = conditioning::build_structure_raster(clip.tracks, clip.camera);
        sc.latent = codec.encode(sc.raster.frames);
        structure = std::move(sc);
    }
    auto anchor = conditioning::prepare_first_frame_anchor(clip.frames, codec, nullptr, nullptr);
    return ConditionBundle::make(std::move(structure), std::nullopt, std::move(action), std::move(anchor));
}

ConditionBundle unconditional_bundle(const microworld::RenderedClip& clip, const codec::Codec& codec) {
    auto anchor = conditioning::prepare_first_frame_anchor(clip.frames, codec, nullptr, nullptr);
    return ConditionBundle::make(std::nullopt, std::nullopt, std::nullopt, std::move(anchor));
}

// ---- edits ------------------------------------------------------------------------------------

namespace {

nn::Shape latent_shape_for(const codec::Codec& codec, const microworld::SceneSpec& scene) {
    return {codec.config().latent_channels, scene.frames, scene.height / 8, scene.width / 8};
}

}  // namespace

EditOutcome edit_identity(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                          const microworld::EditSpec& edit, const Tensor& reference_image,
                          const backbone::Backbone& model, const codec::Codec& codec,
                          const SampleConfig& cfg, double reference_scale) {
    COMPOSIA_CHECK(edit.kind == microworld::EditSpec::Kind::IdentitySwap);
    const geometry::BoxTrack* target = nullptr;
    for (const auto& t : clip.tracks)
        if (t.element_id == edit.target_element_id) target = &t;
    COMPOSIA_CHECK(target != nullptr, << "identity edit target " << edit.target_element_id << " not found");

    conditioning::IdentityCondition identity;
    identity.cue = conditioning::build_external_identity_cue(clip.frames, reference_image, edit.box_size,
                                                             *target, clip.camera, reference_scale);
    identity.latent = codec.encode(identity.cue.pasted);
    identity.inject_mask = conditioning::downsample_mask(identity.cue.mask_inject);
    identity.full_mask = conditioning::downsample_mask(identity.cue.mask_full);

    conditioning::StructureCondition structure;
    structure.raster = conditioning::build_structure_raster(clip.tracks, clip.camera);
    structure.latent = codec.encode(structure.raster.frames);

    auto [residuals, prope] = conditioning::build_action_condition(clip.camera, static_cast<int>(model.config().d_s));
    conditioning::ActionCondition action;
    action.residuals = std::move(residuals);
    action.prope = std::move(prope);

    auto anchor = conditioning::prepare_first_frame_anchor(clip.frames, codec, &identity, nullptr);

    EditOutcome out;
    out.scene = scene;
    out.bundle = ConditionBundle::make(std::move(structure), std::move(identity), std::move(action),
                                       std::move(anchor));
    out.result = sample(model, codec, out.bundle, latent_shape_for(codec, scene), cfg);
    return out;
}

EditOutcome edit_action(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                        const microworld::CameraPath& new_path, const backbone::Backbone& model,
                        const codec::Codec& codec, const SampleConfig& cfg) {
    COMPOSIA_CHECK(new_path.frames() == scene.frames, << "new camera path must cover the clip");
    // world tracks unchanged; structure re-projected through the NEW path
    conditioning::StructureCondition structure;
    structure.raster = conditioning::build_structure_raster(clip.tracks, new_path);
    structure.latent = codec.encode(structure.raster.frames);

    auto [residuals, prope] = conditioning::build_action_condition(new_path, static_cast<int>(model.config().d_s));
    conditioning::ActionCondition action;
    action.residuals = std::move(residuals);
    action.prope = std::move(prope);

    auto anchor = conditioning::prepare_first_frame_anchor(clip.frames, codec, nullptr, nullptr);

    EditOutcome out;
    out.scene = scene;
    out.bundle = ConditionBundle::make(std::move(structure), std::nullopt, std::move(action), std::move(anchor));
    out.result = sample(model, codec, out.bundle, latent_shape_for(codec, scene), cfg);
    return out;
}

EditOutcome edit_structure(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                           const microworld::EditSpec& edit, const backbone::Backbone& model,
                           const codec::Codec& codec, const SampleConfig& cfg) {
    const microworld::SceneSpec edited = microworld::apply_structure_edit(scene, edit);
    conditioning::StructureCondition structure;
    structure.raster = conditioning::build_structure_raster(edited.agents, clip.camera);
    structure.latent = codec.encode(structure.raster.frames);

    // ego action condition unchanged
    auto [residuals, prope] = conditioning::build_action_condition(clip.camera, static_cast<int>(model.config().d_s));
    conditioning::ActionCondition action;
    action.residuals = std::move(residuals);
    action.prope = std::move(prope);

    auto anchor = conditioning::prepare_first_frame_anchor(clip.frames, codec, nullptr, nullptr);

    EditOutcome out;
    out.scene = edited;
    out.bundle = ConditionBundle::make(std::move(structure), std::nullopt, std::move(action), std::move(anchor));
    out.result = sample(model, codec, out.bundle, latent_shape_for(codec, scene), cfg);
    return out;
}

}  // namespace composia::sampler
