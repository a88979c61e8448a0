// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/backbone.hpp"

#include <cmath>

#include "composia/serialize.hpp"

namespace composia::backbone {

using geometry::PropeMatrices;
using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

// ---- tokenization -----------------------------------------------------------------

Tensor patchify(const Tensor& z, int P) {
    COMPOSIA_CHECK(z.rank() == 4, << "patchify expects (c,f,h,w)");
    const int64_t c = z.dim(0), f = z.dim(1), h = z.dim(2), w = z.dim(3);
    COMPOSIA_CHECK(h % P == 0 && w % P == 0, << "latent dims must be divisible by the patch size");
    const int64_t gh = h / P, gw = w / P;
    Tensor out({f, gh * gw, c * P * P});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t s = (y / P) * gw + (x / P);
                    const int64_t e = (ci * P + (y % P)) * P + (x % P);
                    out[(fi * gh * gw + s) * (c * P * P) + e] = z[((ci * f + fi) * h + y) * w + x];
                }
    return out;
}

Tensor unpatchify(const Tensor& tokens, int64_t c, int64_t h, int64_t w, int P) {
    COMPOSIA_CHECK(tokens.rank() == 3);
    const int64_t f = tokens.dim(0);
    const int64_t gh = h / P, gw = w / P;
    COMPOSIA_CHECK(tokens.dim(1) == gh * gw && tokens.dim(2) == c * P * P, << "token shape mismatch");
    Tensor out({c, f, h, w});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t s = (y / P) * gw + (x / P);
                    const int64_t e = (ci * P + (y % P)) * P + (x % P);
                    out[((ci * f + fi) * h + y) * w + x] = tokens[(fi * gh * gw + s) * (c * P * P) + e];
                }
    return out;
}

Var patchify(Graph& g, Var z, int P) {
    const auto& s = z.shape();
    const int64_t c = s[0], f = s[1], h = s[2], w = s[3];
    Var r = reshape(z, {c, f, h / P, P, w / P, P});
    Var p = permute(r, {1, 2, 4, 0, 3, 5});  // f, h/P, w/P, c, P, P
    return reshape(p, {f, (h / P) * (w / P), c * P * P});
}

Var unpatchify(Graph& g, Var tokens, int64_t c, int64_t h, int64_t w, int P) {
    (void)g;
    const int64_t f = tokens.shape()[0];
    Var r = reshape(tokens, {f, h / P, w / P, c, P, P});
    Var p = permute(r, {3, 0, 1, 4, 2, 5});  // c, f, h/P, P, w/P, P
    return reshape(p, {c, f, h, w});
}

TokenPositions token_positions(int64_t f, int64_t grid_h, int64_t grid_w) {
    TokenPositions pos;
    const int64_t n = f * grid_h * grid_w;
    pos.frame.reserve(static_cast<size_t>(n));
    pos.row.reserve(static_cast<size_t>(n));
    pos.col.reserve(static_cast<size_t>(n));
    for (int64_t fi = 0; fi < f; ++fi)
        for (int64_t y = 0; y < grid_h; ++y)
            for (int64_t x = 0; x < grid_w; ++x) {
                pos.frame.push_back(static_cast<int>(fi));
                pos.row.push_back(static_cast<int>(y));
                pos.col.push_back(static_cast<int>(x));
            }
    return pos;
}

namespace {

// rotary tables: pairs split across (frame,row,col); angles pos * base^(-j/len)
void rope_tables(const TokenPositions& pos, int64_t head_dim, Tensor& cs, Tensor& sn) {
    const int64_t n = static_cast<int64_t>(pos.frame.size());
    const int64_t pairs = head_dim / 2;
    const int64_t row_pairs = pairs / 3;
    const int64_t col_pairs = pairs / 3;
    const int64_t frame_pairs = pairs - row_pairs - col_pairs;
    cs = Tensor({n, pairs});
    sn = Tensor({n, pairs});
    constexpr double kBase = 128.0;
    for (int64_t i = 0; i < n; ++i) {
        int64_t j = 0;
        auto fill = [&](double p, int64_t count) {
            for (int64_t k = 0; k < count; ++k, ++j) {
                const double omega = std::pow(kBase, -static_cast<double>(k) / std::max<int64_t>(1, count));
                cs[i * pairs + j] = std::cos(p * omega);
                sn[i * pairs + j] = std::sin(p * omega);
            }
        };
        fill(pos.frame[static_cast<size_t>(i)], frame_pairs);
        fill(pos.row[static_cast<size_t>(i)], row_pairs);
        fill(pos.col[static_cast<size_t>(i)], col_pairs);
    }
}

Var attention_core(Graph& g, Var q, Var k, Var v) {
    const int64_t hd = q.shape().back();
    Var scores = matmul(q, permute(k, {1, 0}));
    scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(hd)));
    Var attn = softmax_lastdim(scores);
    return matmul(attn, v);
}

}  // namespace

Var rope_attention(Graph& g, Var q, Var k, Var v, const TokenPositions& pos) {
    const int64_t hd = q.shape().back();
    COMPOSIA_CHECK(hd % 2 == 0, << "head dim must be even for rotary encoding");
    Tensor cs, sn;
    rope_tables(pos, hd, cs, sn);
    Var qr = rope_rotate(q, cs, sn);
    Var kr = rope_rotate(k, cs, sn);
    return attention_core(g, qr, kr, v);
}

Tensor sinusoidal_embedding(const std::vector<double>& values, int64_t dim, double scale) {
    COMPOSIA_CHECK(dim % 2 == 0);
    const int64_t n = static_cast<int64_t>(values.size());
    const int64_t half = dim / 2;
    Tensor out({n, dim});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) /
                                         std::max<int64_t>(1, half - 1));
            const double a = values[static_cast<size_t>(i)] * scale * freq;
            out[i * dim + j] = std::cos(a);
            out[i * dim + half + j] = std::sin(a);
        }
    return out;
}

// ---- PRoPE branch ---------------------------------------------------------------------

PropeBranch::PropeBranch(nn::ParamStore& store, const std::string& name, int64_t d, int64_t d_s_,
                         Rng& rng, const std::string& group)
    : qs(store, name + ".qs", d, d_s_, rng, nn::Init::Default, group),
      ks(store, name + ".ks", d, d_s_, rng, nn::Init::Default, group),
      vs(store, name + ".vs", d, d_s_, rng, nn::Init::Default, group),
      up(store, name + ".up", d_s_, d, rng, nn::Init::Zero, group),
      d_s(d_s_) {}

Var PropeBranch::forward(Graph& g, Var tokens, const PropeMatrices& prope) const {
    const auto& sh = tokens.shape();
    const int64_t f = sh[0], s = sh[1];
    COMPOSIA_CHECK(prope.channels == d_s,
                   << "projective matrices built for " << prope.channels << " channels, branch expects " << d_s);
    COMPOSIA_CHECK(prope.frames() == f, << "one projective block per frame required");
    std::vector<Eigen::Matrix4d> d_t(prope.block.size()), d_inv(prope.block.size());
    for (size_t i = 0; i < prope.block.size(); ++i) {
        d_t[i] = prope.block[i].transpose();
        d_inv[i] = prope.block[i].inverse();
    }
    Var q = quad_block_apply(qs.forward(g, tokens), d_t);
    Var k = quad_block_apply(ks.forward(g, tokens), d_inv);
    Var v = quad_block_apply(vs.forward(g, tokens), d_inv);
    Var attn = attention_core(g, reshape(q, {f * s, d_s}), reshape(k, {f * s, d_s}),
                              reshape(v, {f * s, d_s}));
    Var out = quad_block_apply(reshape(attn, {f, s, d_s}), prope.block);
    return up.forward(g, out);
}

// ---- backbone --------------------------------------------------------------------------

Backbone::Backbone(BackboneConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    COMPOSIA_CHECK(cfg.d % cfg.heads == 0, << "width must divide across heads");
    COMPOSIA_CHECK((cfg.d / cfg.heads) % 2 == 0, << "head dim must be even");
    COMPOSIA_CHECK(cfg.d_s % 4 == 0 && cfg.d_s > 0, << "reduced width must be a positive multiple of 4");
    Rng rng(init_seed ^ 0xd17b04eULL);
    const int64_t d = cfg.d;
    const int64_t in_dim = cfg.latent_channels * cfg.patch * cfg.patch;
    embed_ = nn::Linear(store_, "embed", in_dim, d, rng);
    t_mlp1_ = nn::Linear(store_, "t_mlp1", cfg.t_emb_dim, d, rng);
    t_mlp2_ = nn::Linear(store_, "t_mlp2", d, d, rng);
    adapter1_ = nn::Conv2d(store_, "adapter1", cfg.latent_channels, cfg.adapter_channels, 3, 1, 1, rng);
    adapter2_ = nn::Conv2d(store_, "adapter2", cfg.adapter_channels, cfg.adapter_channels, 3, 1, 1, rng);
    struct_zero_ = nn::Linear(store_, "struct_zero", cfg.adapter_channels * cfg.patch * cfg.patch, d,
                              rng, nn::Init::Zero);
    action_zero_ = nn::Linear(store_, "action_zero", 3 * cfg.action_emb_per_component, 6 * d, rng,
                              nn::Init::Zero, "action");
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "block" + std::to_string(l);
        Block b;
        b.t_mod = nn::Linear(store_, p + ".t_mod", d, 6 * d, rng, nn::Init::Zero);
        b.wq = nn::Linear(store_, p + ".wq", d, d, rng);
        b.wk = nn::Linear(store_, p + ".wk", d, d, rng);
        b.wv = nn::Linear(store_, p + ".wv", d, d, rng);
        b.wo = nn::Linear(store_, p + ".wo", d, d, rng);
        b.fc1 = nn::Linear(store_, p + ".fc1", d, 4 * d, rng);
        b.fc2 = nn::Linear(store_, p + ".fc2", 4 * d, d, rng);
        b.prope = PropeBranch(store_, p + ".prope", d, cfg.d_s, rng, "action");
        blocks_.push_back(std::move(b));
    }
    final_ = nn::Linear(store_, "final", d, in_dim, rng, nn::Init::Zero);
}

Tensor Backbone::action_embedding(const geometry::ActionResiduals& a) const {
    const int64_t f = a.frames();
    const int64_t k = cfg_.action_emb_per_component;
    std::vector<double> dx(static_cast<size_t>(f)), dy(static_cast<size_t>(f)), dyaw(static_cast<size_t>(f));
    for (int64_t i = 0; i < f; ++i) {
        dx[static_cast<size_t>(i)] = a.a[static_cast<size_t>(i)].x();
        dy[static_cast<size_t>(i)] = a.a[static_cast<size_t>(i)].y();
        dyaw[static_cast<size_t>(i)] = a.a[static_cast<size_t>(i)].z();
    }
    // scales chosen so per-frame residuals land in the sinusoids' sensitive range
    const Tensor ex = sinusoidal_embedding(dx, k, 8.0);
    const Tensor ey = sinusoidal_embedding(dy, k, 8.0);
    const Tensor eyaw = sinusoidal_embedding(dyaw, k, 40.0);
    Tensor out({f, 3 * k});
    for (int64_t i = 0; i < f; ++i)
        for (int64_t j = 0; j < k; ++j) {
            out[i * 3 * k + j] = ex[i * k + j];
            out[i * 3 * k + k + j] = ey[i * k + j];
            out[i * 3 * k + 2 * k + j] = eyaw[i * k + j];
        }
    return out;
}

Var Backbone::action_modulation(Graph& g, const geometry::ActionResiduals& a) const {
    Var phi = g.constant(action_embedding(a));
    Var mod = action_zero_.forward(g, phi);  // (f, 6d)
    return reshape(mod, {static_cast<int64_t>(a.frames()), 6, cfg_.d});
}

Var Backbone::block_forward(Graph& g, int layer, Var x, Var mod, const PropeMatrices* prope,
                            const TokenPositions& pos) const {
    const Block& b = blocks_[static_cast<size_t>(layer)];
    const auto& sh = x.shape();
    const int64_t f = sh[0], s = sh[1], d = sh[2];
    auto part = [&](Var m, int64_t idx) { return reshape(slice(m, 1, idx, 1), {f, 1, d}); };
    Var shift_a = part(mod, 0), scale_a = part(mod, 1), gate_a = part(mod, 2);
    Var shift_m = part(mod, 3), scale_m = part(mod, 4), gate_m = part(mod, 5);

    // attention sublayer
    Var h = layer_norm_lastdim(x);
    h = add(mul(h, add_scalar(scale_a, 1.0)), shift_a);
    Var flat = reshape(h, {f * s, d});
    Var q = b.wq.forward(g, flat);
    Var k = b.wk.forward(g, flat);
    Var v = b.wv.forward(g, flat);
    const int64_t hd = d / cfg_.heads;
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(cfg_.heads));
    for (int hI = 0; hI < cfg_.heads; ++hI) {
        Var qh = slice(q, 1, hI * hd, hd);
        Var kh = slice(k, 1, hI * hd, hd);
        Var vh = slice(v, 1, hI * hd, hd);
        heads.push_back(rope_attention(g, qh, kh, vh, pos));
    }
    Var attn = b.wo.forward(g, concat(heads, 1));
    Var attn_tokens = reshape(attn, {f, s, d});
    if (prope != nullptr && cfg_.prope_attention) {
        attn_tokens = add(attn_tokens, b.prope.forward(g, h, *prope));
    }
    x = add(x, mul(attn_tokens, add_scalar(gate_a, 1.0)));

    // feed-forward sublayer
    Var h2 = layer_norm_lastdim(x);
    h2 = add(mul(h2, add_scalar(scale_m, 1.0)), shift_m);
    Var m1 = silu(b.fc1.forward(g, reshape(h2, {f * s, d})));
    Var m2 = b.fc2.forward(g, m1);
    return add(x, mul(reshape(m2, {f, s, d}), add_scalar(gate_m, 1.0)));
}

Var Backbone::forward_graph(Graph& g, const Tensor& z_t, const std::vector<double>& t_frames,
                            const conditioning::ConditionBundle& bundle) const {
    COMPOSIA_CHECK(z_t.rank() == 4, << "latent must be (c,f,h,w)");
    COMPOSIA_CHECK(!(bundle.has_structure() && !bundle.has_action()),
                   << "bundle violates the structure-action pairing rule");
    const int64_t c = z_t.dim(0), f = z_t.dim(1), h = z_t.dim(2), w = z_t.dim(3);
    COMPOSIA_CHECK(c == cfg_.latent_channels, << "latent channels mismatch");
    COMPOSIA_CHECK(static_cast<int64_t>(t_frames.size()) == f, << "one timestep per frame required");
    const int P = cfg_.patch;
    const int64_t gh = h / P, gw = w / P, s = gh * gw, d = cfg_.d;
    const TokenPositions pos = token_positions(f, gh, gw);

    Var tokens = embed_.forward(g, patchify(g, g.constant(z_t), P));

    if (bundle.has_structure()) {
        const Tensor frames_nchw = codec::nchw_from_cfhw(bundle.structure().latent);
        Var a = silu(adapter1_.forward(g, g.constant(frames_nchw)));
        a = silu(adapter2_.forward(g, a));
        // back to (c_a, f, h, w) layout, then tokenize with the same patch order
        Var a_cfhw = permute(a, {1, 0, 2, 3});
        Var layout_tokens = struct_zero_.forward(g, patchify(g, a_cfhw, P));
        tokens = add(tokens, layout_tokens);
    }

    // per-frame timestep features
    Var t_feat = silu(t_mlp1_.forward(g, g.constant(sinusoidal_embedding(t_frames, cfg_.t_emb_dim, 1000.0))));
    t_feat = t_mlp2_.forward(g, t_feat);  // (f, d)

    const PropeMatrices* prope = nullptr;
    if (bundle.has_action() && cfg_.prope_attention) prope = &bundle.action().prope;

    Var action_mod;
    const bool use_action_mod = bundle.has_action() && cfg_.residual_modulation;
    if (use_action_mod) action_mod = action_modulation(g, bundle.action().residuals);

    Var x = reshape(tokens, {f, s, d});
    for (int l = 0; l < cfg_.layers; ++l) {
        Var mod = reshape(blocks_[static_cast<size_t>(l)].t_mod.forward(g, silu(t_feat)), {f, 6, d});
        if (use_action_mod) mod = add(mod, action_mod);
        x = block_forward(g, l, x, mod, prope, pos);
    }
    Var out = final_.forward(g, layer_norm_lastdim(x));
    return unpatchify(g, out, c, h, w, P);
}

Tensor Backbone::forward(const Tensor& z_t, const std::vector<double>& t_frames,
                         const conditioning::ConditionBundle& bundle) const {
    Graph g;
    Var v = const_cast<Backbone*>(this)->forward_graph(g, z_t, t_frames, bundle);
    return v.val();
}

void Backbone::save(const std::filesystem::path& dir, const MetadataMap& extra) const {
    std::vector<io::NamedTensor> tensors;
    for (const auto& p : store_.entries()) tensors.push_back({p->name, "f64", &p->value});
    io::json meta;
    meta["kind"] = "backbone";
    meta["d"] = cfg_.d;
    meta["layers"] = cfg_.layers;
    meta["heads"] = cfg_.heads;
    meta["patch"] = cfg_.patch;
    meta["d_s"] = cfg_.d_s;
    meta["t_emb_dim"] = cfg_.t_emb_dim;
    meta["action_emb_per_component"] = cfg_.action_emb_per_component;
    meta["adapter_channels"] = cfg_.adapter_channels;
    meta["latent_channels"] = cfg_.latent_channels;
    meta["residual_modulation"] = cfg_.residual_modulation;
    meta["prope_attention"] = cfg_.prope_attention;
    meta["zero_init_branches"] = "struct_zero,action_zero,block*.prope.up,block*.t_mod,final";
    for (const auto& [k, v] : extra) meta[k] = v;
    io::save_checkpoint(dir, tensors, meta);
}

Backbone Backbone::load(const std::filesystem::path& dir) {
    io::LoadedCheckpoint ck = io::load_checkpoint(dir);
    BackboneConfig cfg;
    cfg.d = ck.metadata.at("d");
    cfg.layers = ck.metadata.at("layers");
    cfg.heads = ck.metadata.at("heads");
    cfg.patch = ck.metadata.at("patch");
    cfg.d_s = ck.metadata.at("d_s");
    cfg.t_emb_dim = ck.metadata.at("t_emb_dim");
    cfg.action_emb_per_component = ck.metadata.at("action_emb_per_component");
    cfg.adapter_channels = ck.metadata.at("adapter_channels");
    cfg.latent_channels = ck.metadata.at("latent_channels");
    cfg.residual_modulation = ck.metadata.at("residual_modulation");
    cfg.prope_attention = ck.metadata.at("prope_attention");
    Backbone net(cfg, 0);
    for (const auto& p : net.store_.entries()) {
        auto it = ck.tensors.find(p->name);
        COMPOSIA_CHECK(it != ck.tensors.end(), << "checkpoint missing tensor " << p->name);
        COMPOSIA_CHECK(it->second.shape() == p->value.shape(), << "shape mismatch for " << p->name);
        p->value = it->second;
    }
    return net;
}

}  // namespace composia::backbone
