// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/nn.hpp"

#include <cmath>

namespace composia::nn {

Param& ParamStore::add(const std::string& name, Tensor init, const std::string& group) {
    COMPOSIA_CHECK(find(name) == nullptr, << "duplicate parameter " << name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->group = group;
    p->value = std::move(init);
    p->grad = Tensor::zeros(p->value.shape());
    p->adam_m = Tensor::zeros(p->value.shape());
    p->adam_v = Tensor::zeros(p->value.shape());
    params_.push_back(std::move(p));
    return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

int64_t ParamStore::total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p->grad.fill(0.0);
}

Var use(Graph& g, Param& p) { return g.cached_leaf(&p, p.value, true); }

void collect_param_grads(Graph& g, ParamStore& store) {
    for (auto& p : store.entries()) {
        Tensor gr = g.grad_for_key(p.get());
        if (!gr.empty()) p->grad.add_inplace(gr);
    }
}

// ---- layers -----------------------------------------------------------------

namespace {
Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}
}  // namespace

Linear::Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
               Init init, const std::string& group) {
    Tensor wt = init == Init::Zero ? Tensor::zeros({out, in}) : fan_in_uniform({out, in}, in, rng);
    Tensor bt = init == Init::Zero ? Tensor::zeros({out}) : fan_in_uniform({out}, in, rng);
    w = &store.add(name + ".w", std::move(wt), group);
    b = &store.add(name + ".b", std::move(bt), group);
}

Var Linear::forward(Graph& g, Var x) const { return linear(x, use(g, *w), use(g, *b)); }

Conv2d::Conv2d(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k,
               int stride_, int pad_, Rng& rng, Init init, const std::string& group)
    : stride(stride_), pad(pad_) {
    const int64_t fan_in = in_ch * k * k;
    Tensor wt = init == Init::Zero ? Tensor::zeros({out_ch, in_ch, k, k})
                                   : fan_in_uniform({out_ch, in_ch, k, k}, fan_in, rng);
    Tensor bt = init == Init::Zero ? Tensor::zeros({out_ch}) : fan_in_uniform({out_ch}, fan_in, rng);
    w = &store.add(name + ".w", std::move(wt), group);
    b = &store.add(name + ".b", std::move(bt), group);
}

Var Conv2d::forward(Graph& g, Var x) const { return conv2d(x, use(g, *w), use(g, *b), stride, pad); }

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& name, int64_t in_ch,
                                 int64_t out_ch, int64_t k, int stride_, int pad_, Rng& rng,
                                 const std::string& group)
    : stride(stride_), pad(pad_) {
    const int64_t fan_in = in_ch * k * k;
    w = &store.add(name + ".w", fan_in_uniform({in_ch, out_ch, k, k}, fan_in, rng), group);
    b = &store.add(name + ".b", fan_in_uniform({out_ch}, fan_in, rng), group);
}

Var ConvTranspose2d::forward(Graph& g, Var x) const {
    return conv_transpose2d(x, use(g, *w), use(g, *b), stride, pad);
}

// ---- optimizer ---------------------------------------------------------------

double AdamW::grad_norm(const std::vector<Param*>& params) {
    double sq = 0.0;
    for (const Param* p : params)
        for (int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
    return std::sqrt(sq);
}

void AdamW::clip_gradients(const std::vector<Param*>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (Param* p : params) p->grad.scale_inplace(s);
}

double AdamW::lr_scale(int64_t step) const {
    if (cfg_.warmup_steps <= 0) return 1.0;
    if (step >= cfg_.warmup_steps) return 1.0;
    return static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
}

double AdamW::group_lr(const std::string& group) const {
    return group == "action" ? cfg_.lr_action : cfg_.lr_base;
}

void AdamW::step(std::vector<Param*>& params, int64_t step_index) {
    if (cfg_.grad_clip_norm > 0.0) clip_gradients(params, cfg_.grad_clip_norm);
    const double warm = lr_scale(step_index);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_index));
    for (Param* p : params) {
        const double lr = group_lr(p->group) * warm;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            p->adam_m[i] = cfg_.beta1 * p->adam_m[i] + (1.0 - cfg_.beta1) * g;
            p->adam_v[i] = cfg_.beta2 * p->adam_v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = p->adam_m[i] / bc1;
            const double vhat = p->adam_v[i] / bc2;
            p->value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->value[i]);
        }
    }
}

double finite_diff(Param& p, int64_t index, const std::function<double()>& loss_fn, double h) {
    const double saved = p.value[index];
    p.value[index] = saved + h;
    const double lp = loss_fn();
    p.value[index] = saved - h;
    const double lm = loss_fn();
    p.value[index] = saved;
    return (lp - lm) / (2.0 * h);
}

}  // namespace composia::nn
