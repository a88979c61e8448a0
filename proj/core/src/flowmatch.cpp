// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/flowmatch.hpp"

#include <cmath>
#include <sstream>

#include "composia/serialize.hpp"

namespace composia::flowmatch {

using conditioning::ConditionBundle;
using conditioning::Modality;
using nn::Graph;
using nn::Tensor;
using nn::Var;

nn::AdamWConfig optimizer_config(const TrainConfig& cfg) {
    nn::AdamWConfig oc;
    oc.lr_base = cfg.lr_backbone;
    oc.lr_action = cfg.lr_action_branch;
    oc.weight_decay = cfg.weight_decay;
    oc.eps = cfg.adam_eps;
    oc.grad_clip_norm = cfg.grad_clip_norm;
    oc.warmup_steps = cfg.warmup_steps;
    return oc;
}

Tensor interpolate(const Tensor& z0, const Tensor& eps, double t, const NoiseSchedule& sched) {
    COMPOSIA_CHECK(z0.same_shape(eps), << "interpolate shape mismatch");
    COMPOSIA_CHECK(t >= 0.0 && t <= 1.0, << "t must lie in [0,1]");
    const double s = sched.sigma(t);
    Tensor out(z0.shape());
    for (int64_t i = 0; i < z0.numel(); ++i) out[i] = s * z0[i] + (1.0 - s) * eps[i];
    return out;
}

Tensor interpolate_per_frame(const Tensor& z0, const Tensor& eps, const std::vector<double>& t_frames,
                             const NoiseSchedule& sched) {
    COMPOSIA_CHECK(z0.same_shape(eps) && z0.rank() == 4, << "latent must be (c,f,h,w)");
    const int64_t c = z0.dim(0), f = z0.dim(1), hw = z0.dim(2) * z0.dim(3);
    COMPOSIA_CHECK(static_cast<int64_t>(t_frames.size()) == f);
    Tensor out(z0.shape());
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t fi = 0; fi < f; ++fi) {
            const double s = sched.sigma(t_frames[static_cast<size_t>(fi)]);
            const int64_t base = (ci * f + fi) * hw;
            for (int64_t i = 0; i < hw; ++i) out[base + i] = s * z0[base + i] + (1.0 - s) * eps[base + i];
        }
    return out;
}

double cfm_loss_value(const Tensor& pred, const Tensor& z0, const Tensor& eps) {
    COMPOSIA_CHECK(pred.same_shape(z0) && pred.same_shape(eps));
    double acc = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - (z0[i] - eps[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

Tensor inject_identity_train(const Tensor& z_t, const Tensor& z_ref0, const Tensor& eps,
                             const conditioning::LatentMask& mask, double t, double threshold,
                             const NoiseSchedule& sched) {
    COMPOSIA_CHECK(z_t.same_shape(z_ref0) && z_t.same_shape(eps), << "latent shape mismatch");
    COMPOSIA_CHECK(z_t.rank() == 4, << "latent must be (c,f,h,w)");
    const int64_t c = z_t.dim(0), f = z_t.dim(1), h = z_t.dim(2), w = z_t.dim(3);
    COMPOSIA_CHECK(mask.m.rank() == 3 && mask.m.dim(0) == f && mask.m.dim(1) == h && mask.m.dim(2) == w,
                   << "mask shape mismatch: " << nn::shape_str(mask.m.shape()) << " vs latent "
                   << nn::shape_str(z_t.shape()));
    if (t <= threshold) return z_t;  // injection active only at high-noise stages
    Tensor out = z_t;
    const double s = sched.sigma(t);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t i = 0; i < h * w; ++i)
                if (mask.m[fi * h * w + i] != 0.0) {
                    const int64_t o = (ci * f + fi) * h * w + i;
                    out[o] = s * z_ref0[o] + (1.0 - s) * eps[o];
                }
    return out;
}

// ---- scene cache --------------------------------------------------------------------

SceneCache build_scene_cache(const microworld::SceneSpec& spec, const microworld::RenderedClip& clip,
                             const codec::Codec& codec, int reduced_channels, uint64_t cue_seed) {
    SceneCache cache;
    cache.z0 = codec.encode(clip.frames);
    const auto raster = conditioning::build_structure_raster(clip.tracks, clip.camera);
    cache.struct_latent = codec.encode(raster.frames);
    auto [residuals, prope] = conditioning::build_action_condition(clip.camera, reduced_channels);
    cache.residuals = std::move(residuals);
    cache.prope = std::move(prope);

    // one deterministic select-and-repaint cue per scene (the visible agent
    // and source frame are a stable function of the scene seed)
    Rng rng(cue_seed ^ 0x1dc0ffeeULL);
    std::vector<const geometry::BoxTrack*> candidates;
    for (const auto& t : clip.tracks)
        if (t.category != "cone") candidates.push_back(&t);
    for (int attempt = 0; attempt < 8 && !candidates.empty() && !cache.has_identity; ++attempt) {
        const auto* track = candidates[rng.uniform_index(candidates.size())];
        const int f = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(spec.frames)));
        try {
            auto cue = conditioning::build_identity_cue(clip.frames, *track, f, clip.camera);
            cache.identity_latent = codec.encode(cue.pasted);
            cache.identity_inject_mask = conditioning::downsample_mask(cue.mask_inject);
            cache.identity_full_mask = conditioning::downsample_mask(cue.mask_full);
            cache.has_identity = true;
        } catch (const Error&) {
            // element hidden in the drawn frame; try another draw
        }
    }

    // clean frame-0 latent for anchoring
    const int64_t c = cache.z0.dim(0), h = cache.z0.dim(2), w = cache.z0.dim(3);
    cache.anchor_clean = Tensor({c, h, w});
    const int64_t f_count = cache.z0.dim(1);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < h * w; ++i)
            cache.anchor_clean[ci * h * w + i] = cache.z0[(ci * f_count + 0) * h * w + i];
    return cache;
}

// ---- step sample ---------------------------------------------------------------------

StepSample make_step_sample(const SceneCache& scene, const NoiseSchedule& sched, const TrainConfig& cfg,
                            Rng& rng) {
    StepSample sample;
    sample.scene = &scene;
    sample.t = sched.sample_t(rng);
    Modality m = conditioning::sample_training_modality(rng);
    if (m == Modality::StructureIdentityAction && !scene.has_identity) m = Modality::ActionOnly;
    sample.modality = m;
    sample.eps = Tensor::randn(scene.z0.shape(), rng);

    Tensor z_t = interpolate(scene.z0, sample.eps, sample.t, sched);
    if (m == Modality::StructureIdentityAction) {
        z_t = inject_identity_train(z_t, scene.identity_latent, sample.eps, scene.identity_inject_mask,
                                    sample.t, cfg.identity_threshold, sched);
    }

    // first-frame anchor: background pinned clean (optionally perturbed); with
    // an identity pair the frame-0 cue footprint keeps the global noise
    const int64_t c = z_t.dim(0), f = z_t.dim(1), h = z_t.dim(2), w = z_t.dim(3);
    Tensor anchor = scene.anchor_clean;
    if (cfg.anchor.perturb_strength > 0.0) {
        const double area = rng.uniform(cfg.anchor.perturb_area_min, cfg.anchor.perturb_area_max);
        const double aspect = rng.uniform(0.5, 2.0);
        const int64_t rh = std::clamp<int64_t>(static_cast<int64_t>(std::lround(std::sqrt(area * aspect) * h)), 1, h);
        const int64_t rw = std::clamp<int64_t>(static_cast<int64_t>(std::lround(std::sqrt(area / aspect) * w)), 1, w);
        const int64_t y0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(h - rh + 1)));
        const int64_t x0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(w - rw + 1)));
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t y = y0; y < y0 + rh; ++y)
                for (int64_t x = x0; x < x0 + rw; ++x)
                    anchor[(ci * h + y) * w + x] += cfg.anchor.perturb_strength * (2.0 * rng.uniform() - 1.0);
    }
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < h * w; ++i) {
            const bool keep_noise = m == Modality::StructureIdentityAction &&
                                    scene.identity_full_mask.m[i] != 0.0;
            if (!keep_noise) z_t[(ci * f + 0) * h * w + i] = anchor[ci * h * w + i];
        }
    sample.z_input = std::move(z_t);
    sample.t_frames.assign(static_cast<size_t>(f), sample.t);
    sample.t_frames[0] = 0.0;

    std::optional<conditioning::ActionCondition> action;
    std::optional<conditioning::StructureCondition> structure;
    std::optional<conditioning::IdentityCondition> identity;
    if (m != Modality::Unconditional) {
        conditioning::ActionCondition ac;
        ac.residuals = scene.residuals;
        ac.prope = scene.prope;
        action = std::move(ac);
    }
    if (m == Modality::StructureIdentityAction) {
        conditioning::StructureCondition sc;
        sc.latent = scene.struct_latent;
        structure = std::move(sc);
        conditioning::IdentityCondition ic;
        ic.latent = scene.identity_latent;
        ic.inject_mask = scene.identity_inject_mask;
        ic.full_mask = scene.identity_full_mask;
        identity = std::move(ic);
    }
    sample.bundle = ConditionBundle::make(std::move(structure), std::move(identity), std::move(action),
                                          std::nullopt);
    return sample;
}

Var step_loss_graph(Graph& g, const backbone::Backbone& model, const StepSample& sample) {
    Var pred = model.forward_graph(g, sample.z_input, sample.t_frames, sample.bundle);
    Tensor target(sample.scene->z0.shape());
    for (int64_t i = 0; i < target.numel(); ++i) target[i] = sample.scene->z0[i] - sample.eps[i];
    return mse_loss(pred, g.constant(target));
}

// ---- trainer --------------------------------------------------------------------------------

Trainer::Trainer(backbone::Backbone& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), opt_(optimizer_config(cfg)), rng_(cfg.seed ^ 0xf10a7ULL) {}

double Trainer::train_step(const std::vector<const SceneCache*>& scenes) {
    COMPOSIA_CHECK(!scenes.empty());
    const NoiseSchedule sched;
    model_.params().zero_grads();
    double loss_acc = 0.0;
    for (const SceneCache* scene : scenes) {
        const StepSample sample = make_step_sample(*scene, sched, cfg_, rng_);
        Graph g;
        Var loss = step_loss_graph(g, model_, sample);
        const double lv = loss.val()[0];
        if (!std::isfinite(lv)) {
            std::ostringstream oss;
            oss << "training aborted: non-finite loss at step " << (step_ + 1) << " (t=" << sample.t
                << ", modality=" << static_cast<int>(sample.modality) << ")";
            throw Error(oss.str());
        }
        loss_acc += lv;
        g.backward(loss);
        collect_param_grads(g, model_.params());
    }
    const double inv = 1.0 / static_cast<double>(scenes.size());
    auto params = model_.params().all();
    for (auto* p : params) p->grad.scale_inplace(inv);
    ++step_;
    opt_.step(params, step_);
    return loss_acc * inv;
}

TrainResult Trainer::run(const std::vector<SceneCache>& scenes,
                         const std::function<void(int64_t, double)>& on_step) {
    COMPOSIA_CHECK(!scenes.empty(), << "training needs at least one cached scene");
    TrainResult result;
    while (step_ < cfg_.steps) {
        std::vector<const SceneCache*> batch;
        for (int b = 0; b < cfg_.batch; ++b)
            batch.push_back(&scenes[rng_.uniform_index(scenes.size())]);
        const double loss = train_step(batch);
        if (step_ == 1 || step_ % cfg_.log_every == 0 || step_ == cfg_.steps)
            result.loss_log.emplace_back(step_, loss);
        if (on_step) on_step(step_, loss);
    }
    result.steps_run = step_;
    return result;
}

void Trainer::save_state(const std::filesystem::path& dir) const {
    std::vector<io::NamedTensor> tensors;
    for (const auto& p : model_.params().entries()) {
        tensors.push_back({"param." + p->name, "f64", &p->value});
        tensors.push_back({"adam_m." + p->name, "f64", &p->adam_m});
        tensors.push_back({"adam_v." + p->name, "f64", &p->adam_v});
    }
    io::json meta;
    meta["kind"] = "trainer_state";
    meta["step"] = step_;
    const auto st = rng_.state();
    meta["rng_state"] = std::vector<std::string>{std::to_string(st[0]), std::to_string(st[1]),
                                                 std::to_string(st[2]), std::to_string(st[3])};
    meta["rng_gauss_cached"] = rng_.gauss_cached();
    meta["rng_gauss_value"] = rng_.gauss_value();
    io::save_checkpoint(dir, tensors, meta);
}

void Trainer::load_state(const std::filesystem::path& dir) {
    io::LoadedCheckpoint ck = io::load_checkpoint(dir);
    COMPOSIA_CHECK(ck.metadata.value("kind", std::string()) == "trainer_state",
                   << "not a trainer state checkpoint: " << dir);
    for (const auto& p : model_.params().entries()) {
        p->value = ck.tensors.at("param." + p->name);
        p->adam_m = ck.tensors.at("adam_m." + p->name);
        p->adam_v = ck.tensors.at("adam_v." + p->name);
    }
    step_ = ck.metadata.at("step");
    const auto sv = ck.metadata.at("rng_state").get<std::vector<std::string>>();
    std::array<uint64_t, 4> st{};
    for (int i = 0; i < 4; ++i) st[static_cast<size_t>(i)] = std::stoull(sv[static_cast<size_t>(i)]);
    rng_.set_state(st, ck.metadata.value("rng_gauss_cached", false), ck.metadata.value("rng_gauss_value", 0.0));
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<std::pair<int64_t, double>>& log) {
    std::ostringstream oss;
    oss << "step,loss\n";
    oss.precision(17);
    for (const auto& [s, l] : log) oss << s << "," << l << "\n";
    io::write_text_file(path, oss.str());
}

}  // namespace composia::flowmatch
