// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/codec.hpp"

#include <cmath>

#include "composia/serialize.hpp"

namespace composia::codec {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

Codec::Codec(CodecConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed ^ 0xc0dec0deULL);
    const int64_t b = cfg.base_channels;
    const int64_t c = cfg.latent_channels;
    enc1_ = nn::Conv2d(store_, "enc1", 3, b, 3, 2, 1, rng);
    enc2_ = nn::Conv2d(store_, "enc2", b, 2 * b, 3, 2, 1, rng);
    enc3_ = nn::Conv2d(store_, "enc3", 2 * b, 3 * b, 3, 2, 1, rng);
    enc4_ = nn::Conv2d(store_, "enc4", 3 * b, c, 3, 1, 1, rng);
    dec1_ = nn::Conv2d(store_, "dec1", c, 3 * b, 3, 1, 1, rng);
    dec2_ = nn::ConvTranspose2d(store_, "dec2", 3 * b, 2 * b, 4, 2, 1, rng);
    dec3_ = nn::ConvTranspose2d(store_, "dec3", 2 * b, b, 4, 2, 1, rng);
    dec4_ = nn::ConvTranspose2d(store_, "dec4", b, b, 4, 2, 1, rng);
    dec5_ = nn::Conv2d(store_, "dec5", b, 3, 3, 1, 1, rng);
    mean_.assign(static_cast<size_t>(c), 0.0);
    std_.assign(static_cast<size_t>(c), 1.0);
}

Var Codec::encode_frames(Graph& g, Var x) const {
    Var h = silu(enc1_.forward(g, x));
    h = silu(enc2_.forward(g, h));
    h = silu(enc3_.forward(g, h));
    return enc4_.forward(g, h);
}

Var Codec::decode_frames(Graph& g, Var z) const {
    Var h = silu(dec1_.forward(g, z));
    h = silu(dec2_.forward(g, h));
    h = silu(dec3_.forward(g, h));
    h = silu(dec4_.forward(g, h));
    return dec5_.forward(g, h);
}

Tensor fhwc_to_nchw(const Tensor& clip) {
    COMPOSIA_CHECK(clip.rank() == 4, << "clip must be F,H,W,C");
    const int64_t F = clip.dim(0), H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
    Tensor out({F, C, H, W});
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < C; ++c)
                    out[((f * C + c) * H + y) * W + x] = clip[((f * H + y) * W + x) * C + c];
    return out;
}

Tensor nchw_to_fhwc(const Tensor& frames) {
    const int64_t F = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    Tensor out({F, H, W, C});
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    out[((f * H + y) * W + x) * C + c] = frames[((f * C + c) * H + y) * W + x];
    return out;
}

Tensor cfhw_from_nchw(const Tensor& frames) {
    const int64_t F = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    Tensor out({C, F, H, W});
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < H * W; ++i)
                out[(c * F + f) * H * W + i] = frames[(f * C + c) * H * W + i];
    return out;
}

Tensor nchw_from_cfhw(const Tensor& latent) {
    const int64_t C = latent.dim(0), F = latent.dim(1), H = latent.dim(2), W = latent.dim(3);
    Tensor out({F, C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t f = 0; f < F; ++f)
            for (int64_t i = 0; i < H * W; ++i)
                out[(f * C + c) * H * W + i] = latent[(c * F + f) * H * W + i];
    return out;
}

Tensor Codec::encode(const Tensor& clip) const {
    COMPOSIA_CHECK(clip.rank() == 4 && clip.dim(3) == 3, << "encode expects F,H,W,3");
    COMPOSIA_CHECK(clip.dim(1) % 8 == 0 && clip.dim(2) % 8 == 0,
                   << "clip spatial dims must be divisible by 8, got " << clip.dim(1) << "x" << clip.dim(2));
    Graph g;
    Var x = g.constant(fhwc_to_nchw(clip));
    Var z = encode_frames(const_cast<Graph&>(g), x);
    Tensor latent = cfhw_from_nchw(z.val());  // (c, f, h, w)
    const int64_t c = latent.dim(0), rest = latent.numel() / latent.dim(0);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < rest; ++i) {
            double& v = latent[ch * rest + i];
            v = (v - mean_[static_cast<size_t>(ch)]) / std_[static_cast<size_t>(ch)];
        }
    return latent;
}

Tensor Codec::decode(const Tensor& latent) const {
    COMPOSIA_CHECK(latent.rank() == 4, << "decode expects (c,f,h,w)");
    Tensor raw = latent;
    const int64_t c = raw.dim(0), rest = raw.numel() / raw.dim(0);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < rest; ++i) {
            double& v = raw[ch * rest + i];
            v = v * std_[static_cast<size_t>(ch)] + mean_[static_cast<size_t>(ch)];
        }
    Graph g;
    Var z = g.constant(nchw_from_cfhw(raw));
    Var x = decode_frames(const_cast<Graph&>(g), z);
    Tensor clip = nchw_to_fhwc(x.val());
    clip.clamp_inplace(0.0, 1.0);
    return clip;
}

void Codec::set_latent_stats(std::vector<double> mean, std::vector<double> stddev) {
    COMPOSIA_CHECK(static_cast<int64_t>(mean.size()) == cfg_.latent_channels &&
                   static_cast<int64_t>(stddev.size()) == cfg_.latent_channels);
    for (double s : stddev) COMPOSIA_CHECK(s > 0.0, << "latent std must be positive");
    mean_ = std::move(mean);
    std_ = std::move(stddev);
}

void Codec::save(const std::filesystem::path& dir, const std::map<std::string, double>& extra) const {
    std::vector<io::NamedTensor> tensors;
    for (const auto& p : store_.entries()) {
        tensors.push_back({p->name, "f64", &p->value});
    }
    io::json meta;
    meta["kind"] = "codec";
    meta["latent_channels"] = cfg_.latent_channels;
    meta["base_channels"] = cfg_.base_channels;
    meta["grad_loss_weight"] = cfg_.grad_loss_weight;
    meta["latent_mean"] = mean_;
    meta["latent_std"] = std_;
    for (const auto& [k, v] : extra) meta[k] = v;
    io::save_checkpoint(dir, tensors, meta);
}

Codec Codec::load(const std::filesystem::path& dir) {
    io::LoadedCheckpoint ck = io::load_checkpoint(dir);
    CodecConfig cfg;
    cfg.latent_channels = ck.metadata.at("latent_channels");
    cfg.base_channels = ck.metadata.at("base_channels");
    cfg.grad_loss_weight = ck.metadata.value("grad_loss_weight", 0.1);
    Codec codec(cfg, 0);
    for (const auto& p : codec.store_.entries()) {
        auto it = ck.tensors.find(p->name);
        COMPOSIA_CHECK(it != ck.tensors.end(), << "checkpoint missing tensor " << p->name);
        COMPOSIA_CHECK(it->second.shape() == p->value.shape(), << "shape mismatch for " << p->name);
        p->value = it->second;
    }
    codec.mean_ = ck.metadata.at("latent_mean").get<std::vector<double>>();
    codec.std_ = ck.metadata.at("latent_std").get<std::vector<double>>();
    return codec;
}

// ---- training -----------------------------------------------------------------------

namespace {

Var spatial_grad_loss(Graph& g, Var pred, Var target) {
    // first differences along H and W
    const auto& s = pred.shape();
    Var dpx = sub(slice(pred, 3, 1, s[3] - 1), slice(pred, 3, 0, s[3] - 1));
    Var dtx = sub(slice(target, 3, 1, s[3] - 1), slice(target, 3, 0, s[3] - 1));
    Var dpy = sub(slice(pred, 2, 1, s[2] - 1), slice(pred, 2, 0, s[2] - 1));
    Var dty = sub(slice(target, 2, 1, s[2] - 1), slice(target, 2, 0, s[2] - 1));
    return add(mse_loss(dpx, dtx), mse_loss(dpy, dty));
}

}  // namespace

CodecTrainResult train_codec(Codec& codec, const std::vector<const Tensor*>& clips,
                             const CodecTrainConfig& cfg,
                             const std::function<void(int64_t, double)>& on_step) {
    COMPOSIA_CHECK(!clips.empty(), << "codec training needs at least one clip");
    Rng rng(cfg.seed ^ 0x7a17c0deULL);
    nn::AdamWConfig oc;
    oc.lr_base = cfg.lr;
    oc.lr_action = cfg.lr;
    oc.weight_decay = 0.0;
    oc.eps = 1e-8;
    oc.grad_clip_norm = 0.0;
    oc.warmup_steps = 0;
    nn::AdamW opt(oc);
    auto params = codec.params().all();

    CodecTrainResult result;
    const int64_t H = clips[0]->dim(1), W = clips[0]->dim(2);
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        // batch of random frames
        Tensor batch({cfg.batch_frames, 3, H, W});
        for (int bi = 0; bi < cfg.batch_frames; ++bi) {
            const Tensor& clip = *clips[rng.uniform_index(clips.size())];
            const int64_t f = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(clip.dim(0))));
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    for (int64_t c = 0; c < 3; ++c)
                        batch[((bi * 3 + c) * H + y) * W + x] = clip[((f * H + y) * W + x) * 3 + c];
        }
        Graph g;
        Var x = g.constant(batch);
        Var z = codec.encode_frames(g, x);
        Var recon = codec.decode_frames(g, z);
        Var loss = mse_loss(recon, x);
        if (codec.config().grad_loss_weight > 0.0)
            loss = add(loss, scale(spatial_grad_loss(g, recon, x), codec.config().grad_loss_weight));
        const double loss_v = loss.val()[0];
        if (!std::isfinite(loss_v))
            COMPOSIA_THROW("codec training aborted: non-finite loss at step " << step);
        codec.params().zero_grads();
        g.backward(loss);
        collect_param_grads(g, codec.params());
        opt.step(params, step);
        if (step == 1) result.first_loss = loss_v;
        result.last_loss = loss_v;
        if (step == 1 || step % cfg.log_every == 0 || step == cfg.steps)
            result.loss_log.emplace_back(step, loss_v);
        if (on_step) on_step(step, loss_v);
    }

    // latent standardization stats from the training clips
    if (cfg.steps > 0) {
        const int64_t c = codec.config().latent_channels;
        std::vector<double> sum(static_cast<size_t>(c), 0.0), sq(static_cast<size_t>(c), 0.0);
        int64_t count = 0;
        for (const Tensor* clip : clips) {
            Graph g;
            Var x = g.constant(fhwc_to_nchw(*clip));
            Var z = codec.encode_frames(g, x);
            const Tensor& lat = z.val();  // [F, c, h, w]
            const int64_t F = lat.dim(0), hw = lat.dim(2) * lat.dim(3);
            for (int64_t f = 0; f < F; ++f)
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t i = 0; i < hw; ++i) {
                        const double v = lat[(f * c + ch) * hw + i];
                        sum[static_cast<size_t>(ch)] += v;
                        sq[static_cast<size_t>(ch)] += v * v;
                    }
            count += F * hw;
        }
        std::vector<double> mean(static_cast<size_t>(c)), stddev(static_cast<size_t>(c));
        for (int64_t ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = sum[static_cast<size_t>(ch)] / static_cast<double>(count);
            const double var = sq[static_cast<size_t>(ch)] / static_cast<double>(count) -
                               mean[static_cast<size_t>(ch)] * mean[static_cast<size_t>(ch)];
            stddev[static_cast<size_t>(ch)] = std::sqrt(std::max(var, 1e-8));
        }
        codec.set_latent_stats(std::move(mean), std::move(stddev));
    }
    return result;
}

double psnr_db(const Tensor& a, const Tensor& b) {
    COMPOSIA_CHECK(a.same_shape(b));
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return 1e9;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace composia::codec
