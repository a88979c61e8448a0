// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "composia/backbone.hpp"
#include "composia/codec.hpp"
#include "composia/flowmatch.hpp"
#include "composia/microworld.hpp"

namespace composia::sampler {

struct SampleConfig {
    int steps = 50;
    double t_id = 0.4;  // identity injection runs while t > t_id
    uint64_t seed = 0;
};

struct StepDiagnostics {
    double t_from = 0.0;
    double t_to = 0.0;
    double dt = 0.0;
    bool injection_active = false;
};

struct GenerationResult {
    nn::Tensor clip;    // decoded F,H,W,3 in [0,1]
    nn::Tensor latent;  // final latent (c,f,h,w)
    std::vector<StepDiagnostics> steps;
};

using VelocityFn =
    std::function<nn::Tensor(const nn::Tensor& z, const std::vector<double>& t_frames)>;

/// Euler integration over the uniform decreasing grid t_k = 1 - (k-1)/K.
/// The bundle drives identity injection (while t_k > t_id, masked cells are
/// reset onto the reference interpolation path built from the initial prior
/// sample) and first-frame anchoring (frame-0 cells outside the inpaint mask
/// pinned to the clean latent at every step).
GenerationResult integrate(const VelocityFn& velocity, const nn::Shape& latent_shape,
                           const conditioning::ConditionBundle& bundle, const SampleConfig& cfg);

/// Full generation: model velocity field + codec decode.
GenerationResult sample(const backbone::Backbone& model, const codec::Codec& codec,
                        const conditioning::ConditionBundle& bundle, const nn::Shape& latent_shape,
                        const SampleConfig& cfg);

/// Condition-building entry points for the editing modalities. Each returns
/// the bundle it sampled with so callers can echo it into diagnostics.
struct EditOutcome {
    GenerationResult result;
    conditioning::ConditionBundle bundle = conditioning::ConditionBundle::empty();
    microworld::SceneSpec scene;  // post-edit scene (structure edits)
};

/// Identity replacement of an existing element from a single reference image.
EditOutcome edit_identity(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                          const microworld::EditSpec& edit, const nn::Tensor& reference_image,
                          const backbone::Backbone& model, const codec::Codec& codec,
                          const SampleConfig& cfg, double reference_scale = 1.0);

/// Action edit: keep world tracks, re-project conditions through a new
/// camera path, rebuild residuals and projective matrices.
EditOutcome edit_action(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                        const microworld::CameraPath& new_path, const backbone::Backbone& model,
                        const codec::Codec& codec, const SampleConfig& cfg);

/// Structure edit (cut_in / front_insert): edited scene -> fresh bundle -> sample.
EditOutcome edit_structure(const microworld::SceneSpec& scene, const microworld::RenderedClip& clip,
                           const microworld::EditSpec& edit, const backbone::Backbone& model,
                           const codec::Codec& codec, const SampleConfig& cfg);

/// Action-following bundle for an unedited scene (used by sample/eval paths).
conditioning::ConditionBundle action_following_bundle(const microworld::RenderedClip& clip,
                                                      const codec::Codec& codec, int reduced_channels,
                                                      bool with_structure = false);

/// Unconditional (anchor-only) bundle.
conditioning::ConditionBundle unconditional_bundle(const microworld::RenderedClip& clip,
                                                   const codec::Codec& codec);

}  // namespace composia::sampler
