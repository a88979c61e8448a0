// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "composia/conditioning.hpp"
#include "composia/nn.hpp"

namespace composia::backbone {

struct BackboneConfig {
    int64_t d = 96;            // token width
    int layers = 4;
    int heads = 4;
    int patch = 2;             // spatial patch size P
    int64_t d_s = 12;          // reduced PRoPE width (default d/8), divisible by 4
    int64_t t_emb_dim = 96;    // timestep sinusoid width
    int64_t action_emb_per_component = 32;
    int64_t adapter_channels = 16;
    int64_t latent_channels = 8;
    bool residual_modulation = true;  // local AdaLN action branch
    bool prope_attention = true;      // global PRoPE branch
};

/// Pure-reshape tokenization: (c,f,h,w) -> (f, s, c*P*P) with row-major
/// spatial order; unpatchify is its exact inverse.
nn::Tensor patchify(const nn::Tensor& z, int P);
nn::Tensor unpatchify(const nn::Tensor& tokens, int64_t c, int64_t h, int64_t w, int P);
nn::Var patchify(nn::Graph& g, nn::Var z, int P);
nn::Var unpatchify(nn::Graph& g, nn::Var tokens, int64_t c, int64_t h, int64_t w, int P);

/// Rotary attention over (frame,row,col)-indexed tokens. q/k/v are [N, hd]
/// for one head; positions index the token grid.
struct TokenPositions {
    std::vector<int> frame, row, col;
};
TokenPositions token_positions(int64_t f, int64_t grid_h, int64_t grid_w);

nn::Var rope_attention(nn::Graph& g, nn::Var q, nn::Var k, nn::Var v, const TokenPositions& pos);

/// Sinusoidal embedding of per-frame scalars (shared by timestep and action paths).
nn::Tensor sinusoidal_embedding(const std::vector<double>& values, int64_t dim, double scale);

/// Reduced-width camera-projective attention branch; the up-projection is
/// zero-initialized so the residual vanishes at initialization.
struct PropeBranch {
    nn::Linear qs, ks, vs, up;
    int64_t d_s = 0;
    PropeBranch() = default;
    PropeBranch(nn::ParamStore& store, const std::string& name, int64_t d, int64_t d_s, Rng& rng,
                const std::string& group);
    /// tokens [f,s,d] -> residual [f,s,d]
    nn::Var forward(nn::Graph& g, nn::Var tokens, const geometry::PropeMatrices& prope) const;
};

class Backbone {
public:
    Backbone(BackboneConfig cfg, uint64_t init_seed);

    const BackboneConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    /// Velocity prediction: noisy latent (c,f,h,w), per-frame timesteps, and
    /// the condition bundle (pairing invariant re-checked).
    nn::Tensor forward(const nn::Tensor& z_t, const std::vector<double>& t_frames,
                       const conditioning::ConditionBundle& bundle) const;

    /// Graph-building forward for training and gradient checks.
    nn::Var forward_graph(nn::Graph& g, const nn::Tensor& z_t, const std::vector<double>& t_frames,
                          const conditioning::ConditionBundle& bundle) const;

    /// Local action branch: residuals -> per-frame (shift,scale,gate) pairs,
    /// exactly zero at initialization. Returned shape (f, 6, d).
    nn::Var action_modulation(nn::Graph& g, const geometry::ActionResiduals& a) const;
    nn::Tensor action_embedding(const geometry::ActionResiduals& a) const;  // phi(a), (f, 3*k)

    using MetadataMap = std::map<std::string, double>;
    void save(const std::filesystem::path& dir, const MetadataMap& extra = {}) const;
    static Backbone load(const std::filesystem::path& dir);

private:
    struct Block {
        nn::Linear t_mod;  // d -> 6d, zero-init
        nn::Linear wq, wk, wv, wo;
        nn::Linear fc1, fc2;
        PropeBranch prope;
    };

    nn::Var block_forward(nn::Graph& g, int layer, nn::Var x, nn::Var mod,
                          const geometry::PropeMatrices* prope, const TokenPositions& pos) const;

    BackboneConfig cfg_;
    nn::ParamStore store_;
    nn::Linear embed_;
    nn::Linear t_mlp1_, t_mlp2_;
    nn::Conv2d adapter1_, adapter2_;
    nn::Linear struct_zero_;   // zero-init structure injector
    nn::Linear action_zero_;   // zero-init action modulation projector (shared)
    std::vector<Block> blocks_;
    nn::Linear final_;         // zero-init
};

}  // namespace composia::backbone
