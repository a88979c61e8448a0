// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "composia/backbone.hpp"
#include "composia/codec.hpp"
#include "composia/conditioning.hpp"
#include "composia/microworld.hpp"

namespace composia::flowmatch {

/// Linear interpolation schedule sigma(t) = 1 - t with a 1000-level training
/// grid over (0, 1]. Endpoints are exact: sigma(0) = 1, sigma(1) = 0.
struct NoiseSchedule {
    int levels = 1000;
    double sigma(double t) const { return 1.0 - t; }
    double level_t(int i) const { return static_cast<double>(i + 1) / levels; }
    double sample_t(Rng& rng) const { return level_t(static_cast<int>(rng.uniform_index(static_cast<uint64_t>(levels)))); }
};

struct TrainConfig {
    double lr_backbone = 1e-5;
    double lr_action_branch = 2e-4;
    double weight_decay = 5e-2;
    double adam_eps = 1e-10;
    double grad_clip_norm = 0.05;
    int64_t warmup_steps = 500;
    double identity_threshold = 0.2;  // training-time injection active for t > threshold
    int batch = 2;
    int64_t steps = 5000;
    uint64_t seed = 1;
    int64_t log_every = 25;
    int64_t checkpoint_every = 0;  // 0 = only at the end
    conditioning::AnchorParams anchor;
};

nn::AdamWConfig optimizer_config(const TrainConfig& cfg);

/// z_t = sigma(t) z0 + (1 - sigma(t)) eps.
nn::Tensor interpolate(const nn::Tensor& z0, const nn::Tensor& eps, double t, const NoiseSchedule& sched);

/// Per-frame variant: t_frames[f] applies to every cell of frame f; latent is (c,f,h,w).
nn::Tensor interpolate_per_frame(const nn::Tensor& z0, const nn::Tensor& eps,
                                 const std::vector<double>& t_frames, const NoiseSchedule& sched);

/// Mean squared error between pred and the velocity target (z0 - eps).
double cfm_loss_value(const nn::Tensor& pred, const nn::Tensor& z0, const nn::Tensor& eps);

/// Training-time identity injection. For t > threshold, cells inside the mask
/// are replaced with the noised reference (same eps as the main path); outside
/// cells and the t <= threshold case are returned bit-identical.
nn::Tensor inject_identity_train(const nn::Tensor& z_t, const nn::Tensor& z_ref0, const nn::Tensor& eps,
                                 const conditioning::LatentMask& mask, double t, double threshold,
                                 const NoiseSchedule& sched);

/// Everything the trainer precomputes once per scene.
struct SceneCache {
    nn::Tensor z0;                 // encoded clip (c,f,h,w), standardized
    nn::Tensor struct_latent;      // encoded structure raster
    geometry::ActionResiduals residuals;
    geometry::PropeMatrices prope;
    bool has_identity = false;
    nn::Tensor identity_latent;    // encoded pasted sequence
    conditioning::LatentMask identity_inject_mask;
    conditioning::LatentMask identity_full_mask;
    nn::Tensor anchor_clean;       // (c,h,w) clean frame-0 latent
};

SceneCache build_scene_cache(const microworld::SceneSpec& spec, const microworld::RenderedClip& clip,
                             const codec::Codec& codec, int reduced_channels, uint64_t cue_seed);

/// One resolved training sample: all randomness drawn, inputs composed. Pure
/// function of (scene, rng state), so finite-difference probes can re-evaluate
/// the loss for perturbed parameters.
struct StepSample {
    const SceneCache* scene = nullptr;
    double t = 1.0;
    conditioning::Modality modality = conditioning::Modality::Unconditional;
    nn::Tensor eps;
    nn::Tensor z_input;              // z_t after injection + first-frame anchoring
    std::vector<double> t_frames;    // frame-0 override applied
    conditioning::ConditionBundle bundle = conditioning::ConditionBundle::empty();
};

StepSample make_step_sample(const SceneCache& scene, const NoiseSchedule& sched, const TrainConfig& cfg,
                            Rng& rng);

/// Loss graph for one sample (Eq.-style v-target MSE).
nn::Var step_loss_graph(nn::Graph& g, const backbone::Backbone& model, const StepSample& sample);

struct TrainResult {
    std::vector<std::pair<int64_t, double>> loss_log;
    int64_t steps_run = 0;
};

/// Deterministic single-thread training loop with the published optimizer
/// settings. Aborts on non-finite loss. Supports bitwise resume via the
/// checkpoint's optimizer state and rng snapshot.
class Trainer {
public:
    Trainer(backbone::Backbone& model, TrainConfig cfg);

    /// One optimizer step over cfg.batch samples; returns the mean loss.
    double train_step(const std::vector<const SceneCache*>& scenes);

    TrainResult run(const std::vector<SceneCache>& scenes,
                    const std::function<void(int64_t, double)>& on_step = {});

    int64_t step_index() const { return step_; }
    Rng& rng() { return rng_; }

    void save_state(const std::filesystem::path& dir) const;
    void load_state(const std::filesystem::path& dir);

private:
    backbone::Backbone& model_;
    TrainConfig cfg_;
    nn::AdamW opt_;
    Rng rng_;
    int64_t step_ = 0;
};

/// Loss-curve CSV: "step,loss" rows.
void write_loss_csv(const std::filesystem::path& path, const std::vector<std::pair<int64_t, double>>& log);

}  // namespace composia::flowmatch
