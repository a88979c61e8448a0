// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <functional>
#include <vector>

#include "composia/nn.hpp"

namespace composia::codec {

/// Per-frame convolutional autoencoder: 8x spatial compression, no temporal
/// mixing, so latent frame count always equals pixel frame count.
struct CodecConfig {
    int latent_channels = 8;
    int base_channels = 16;
    double grad_loss_weight = 0.1;
};

class Codec {
public:
    Codec(CodecConfig cfg, uint64_t init_seed);

    const CodecConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }

    /// Pixel clip F x H x W x 3 -> standardized latent (c, f, h, w); h = H/8, w = W/8.
    nn::Tensor encode(const nn::Tensor& clip) const;

    /// Standardized latent (c, f, h, w) -> pixel clip F x H x W x 3 clamped to [0,1].
    nn::Tensor decode(const nn::Tensor& latent) const;

    /// Raw (unstandardized) per-frame paths used by the trainer.
    nn::Var encode_frames(nn::Graph& g, nn::Var frames_nchw) const;  // [N,3,H,W] -> [N,c,H/8,W/8]
    nn::Var decode_frames(nn::Graph& g, nn::Var latent_nchw) const;  // inverse, unclamped

    void set_latent_stats(std::vector<double> mean, std::vector<double> stddev);
    const std::vector<double>& latent_mean() const { return mean_; }
    const std::vector<double>& latent_std() const { return std_; }

    void save(const std::filesystem::path& dir, const std::map<std::string, double>& extra_metadata = {}) const;
    static Codec load(const std::filesystem::path& dir);

private:
    CodecConfig cfg_;
    nn::ParamStore store_;
    nn::Conv2d enc1_, enc2_, enc3_, enc4_;
    nn::ConvTranspose2d dec2_, dec3_, dec4_;
    nn::Conv2d dec1_, dec5_;
    std::vector<double> mean_, std_;
};

struct CodecTrainConfig {
    int64_t steps = 3000;
    double lr = 1e-3;
    int batch_frames = 8;
    uint64_t seed = 7;
    int64_t log_every = 50;
};

struct CodecTrainResult {
    std::vector<std::pair<int64_t, double>> loss_log;  // (step, loss)
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Train on pixel clips (each F x H x W x 3). Aborts with a diagnostic on a
/// non-finite loss. Computes and stores latent standardization stats when done.
CodecTrainResult train_codec(Codec& codec, const std::vector<const nn::Tensor*>& clips,
                             const CodecTrainConfig& cfg,
                             const std::function<void(int64_t, double)>& on_step = {});

/// Peak signal-to-noise ratio in dB between clips in [0,1].
double psnr_db(const nn::Tensor& a, const nn::Tensor& b);

// layout helpers shared with the conditioning/backbone stack
nn::Tensor fhwc_to_nchw(const nn::Tensor& clip);               // F,H,W,3 -> F,3,H,W
nn::Tensor nchw_to_fhwc(const nn::Tensor& frames);             // F,C,H,W -> F,H,W,C
nn::Tensor cfhw_from_nchw(const nn::Tensor& frames);           // F,C,h,w -> C,F,h,w
nn::Tensor nchw_from_cfhw(const nn::Tensor& latent);           // C,F,h,w -> F,C,h,w

}  // namespace composia::codec
