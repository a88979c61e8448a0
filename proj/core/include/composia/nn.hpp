// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "composia/autograd.hpp"
#include "composia/rng.hpp"

namespace composia::nn {

/// Learnable tensor plus its gradient and Adam moments. Stable address once
/// registered (ParamStore owns them behind unique_ptr).
struct Param {
    std::string name;
    std::string group;  // optimizer group tag, e.g. "base" or "action"
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
};

class ParamStore {
public:
    Param& add(const std::string& name, Tensor init, const std::string& group = "base");
    Param* find(const std::string& name);
    const std::vector<std::unique_ptr<Param>>& entries() const { return params_; }
    std::vector<Param*> all();
    int64_t total_count() const;
    void zero_grads();

private:
    std::vector<std::unique_ptr<Param>> params_;
};

/// Bind a parameter into the graph (cached: one leaf per param per graph).
Var use(Graph& g, Param& p);

/// Copy node gradients back into every parameter bound via use().
void collect_param_grads(Graph& g, ParamStore& store);

// ---- layers ------------------------------------------------------------------

enum class Init { Default, Zero };

struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
           Init init = Init::Default, const std::string& group = "base");
    Var forward(Graph& g, Var x) const;
};

struct Conv2d {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1;
    int pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k,
           int stride, int pad, Rng& rng, Init init = Init::Default, const std::string& group = "base");
    Var forward(Graph& g, Var x) const;
};

struct ConvTranspose2d {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1;
    int pad = 0;
    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch,
                    int64_t k, int stride, int pad, Rng& rng, const std::string& group = "base");
    Var forward(Graph& g, Var x) const;
};

// ---- optimizer -----------------------------------------------------------------

/// Decoupled-weight-decay Adam over named parameter groups with linear warmup.
struct AdamWConfig {
    double lr_base = 1e-5;
    double lr_action = 2e-4;
    double weight_decay = 5e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-10;
    double grad_clip_norm = 0.05;  // <= 0 disables clipping
    int64_t warmup_steps = 500;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    /// Global L2 norm over all parameter gradients.
    static double grad_norm(const std::vector<Param*>& params);

    /// Scale all gradients so the global norm is at most max_norm.
    static void clip_gradients(const std::vector<Param*>& params, double max_norm);

    /// Warmup multiplier at a given step (1-based step counting).
    double lr_scale(int64_t step) const;

    double group_lr(const std::string& group) const;

    /// One update; `step` is the 1-based optimizer step (drives warmup and
    /// bias correction). Clips first when configured.
    void step(std::vector<Param*>& params, int64_t step);

    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
};

/// Numerical gradient of loss_fn w.r.t. one parameter element (central difference).
double finite_diff(Param& p, int64_t index, const std::function<double()>& loss_fn, double h);

}  // namespace composia::nn
