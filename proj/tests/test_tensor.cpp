// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "composia/autograd.hpp"
#include "composia/nn.hpp"

using namespace composia;
using namespace composia::nn;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

// central-difference check of d(loss)/d(x) for an arbitrary graph builder
void gradcheck(const Shape& x_shape, const std::function<Var(Graph&, Var)>& build, uint64_t seed,
               double tol = 1e-7, double h = 1e-5) {
    Rng rng(seed);
    Tensor x = Tensor::randn(x_shape, rng);
    Graph g;
    Var xv = g.leaf(x, true);
    Var loss = build(g, xv);
    REQUIRE(loss.val().numel() == 1);
    g.backward(loss);
    const Tensor analytic = g.grad_of(xv);

    Rng probe_rng(seed ^ 0x9999);
    const int64_t probes = std::min<int64_t>(x.numel(), 24);
    for (int64_t p = 0; p < probes; ++p) {
        const int64_t i = static_cast<int64_t>(probe_rng.uniform_index(static_cast<uint64_t>(x.numel())));
        auto eval = [&](double v) {
            Tensor xx = x;
            xx[i] = v;
            Graph gg;
            Var xv2 = gg.leaf(xx, false);
            return build(gg, xv2).val()[0];
        };
        const double fd = (eval(x[i] + h) - eval(x[i] - h)) / (2 * h);
        const double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic[i])});
        CHECK(std::fabs(fd - analytic[i]) / scale < tol);
    }
}

}  // namespace

TEST_CASE("broadcast add/mul values and gradients") {
    gradcheck({3, 4}, [](Graph& g, Var x) {
        Rng r(5);
        Var b = g.constant(Tensor::randn({4}, r));
        return sum_all(mul(add(x, b), x));
    }, 11);
    gradcheck({2, 3, 4}, [](Graph& g, Var x) {
        Rng r(6);
        Var b = g.constant(Tensor::randn({2, 1, 4}, r));
        return mean_all(mul(x, b));
    }, 12);
}

TEST_CASE("broadcast shape rules") {
    CHECK(nn::broadcast_shape({2, 3}, {3}) == Shape{2, 3});
    CHECK(nn::broadcast_shape({2, 1, 4}, {2, 5, 1}) == Shape{2, 5, 4});
    CHECK_THROWS_AS(nn::broadcast_shape({2, 3}, {4}), Error);
}

TEST_CASE("matmul and linear gradients") {
    gradcheck({5, 3}, [](Graph& g, Var x) {
        Rng r(7);
        Var w = g.constant(Tensor::randn({3, 4}, r));
        return sum_all(matmul(x, w));
    }, 13);
    gradcheck({4, 6}, [](Graph& g, Var x) {
        Rng r(8);
        Var w = g.leaf(Tensor::randn({5, 6}, r), false);
        Var b = g.leaf(Tensor::randn({5}, r), false);
        Var y = linear(x, w, b);
        return mse_loss(y, g.constant(Tensor::zeros({4, 5})));
    }, 14);
}

TEST_CASE("layernorm, softmax and silu gradients") {
    gradcheck({3, 7}, [](Graph& g, Var x) { return sum_all(mul(layer_norm_lastdim(x), x)); }, 15, 1e-6);
    gradcheck({4, 5}, [](Graph& g, Var x) {
        Rng r(9);
        Var w = g.constant(Tensor::randn({4, 5}, r));
        return sum_all(mul(softmax_lastdim(x), w));
    }, 16, 1e-6);
    gradcheck({2, 9}, [](Graph& g, Var x) { return sum_all(silu(x)); }, 17);
}

TEST_CASE("slice/concat/permute/reshape gradients") {
    gradcheck({3, 8}, [](Graph& g, Var x) {
        Var a = slice(x, 1, 0, 4);
        Var b = slice(x, 1, 4, 4);
        return sum_all(mul(concat({b, a}, 1), x));
    }, 18);
    gradcheck({2, 3, 4}, [](Graph& g, Var x) {
        Var p = permute(x, {2, 0, 1});
        return mean_all(mul(p, p));
    }, 19);
    gradcheck({2, 6}, [](Graph& g, Var x) {
        Var r = reshape(x, {3, 4});
        return sum_all(mul(r, r));
    }, 20);
}

TEST_CASE("rope rotation is norm preserving with correct gradient") {
    Rng r(21);
    const int64_t n = 6, dpairs = 4;
    Tensor cs({n, dpairs}), sn({n, dpairs});
    for (int64_t i = 0; i < n * dpairs; ++i) {
        const double a = r.uniform(-3, 3);
        cs[i] = std::cos(a);
        sn[i] = std::sin(a);
    }
    {
        Graph g;
        Tensor x = Tensor::randn({n, 2 * dpairs}, r);
        Var xv = g.leaf(x, false);
        Var y = rope_rotate(xv, cs, sn);
        double nx = 0, ny = 0;
        for (int64_t i = 0; i < x.numel(); ++i) {
            nx += x[i] * x[i];
            ny += y.val()[i] * y.val()[i];
        }
        CHECK(std::fabs(nx - ny) < 1e-9);
    }
    gradcheck({n, 2 * dpairs}, [&](Graph& g, Var x) {
        Var y = rope_rotate(x, cs, sn);
        return sum_all(mul(y, y));
    }, 22);
}

TEST_CASE("quad block apply matches per-frame matrix products") {
    Rng r(23);
    std::vector<Eigen::Matrix4d> mats;
    for (int i = 0; i < 2; ++i) {
        Eigen::Matrix4d m = Eigen::Matrix4d::Random();
        m += 4.0 * Eigen::Matrix4d::Identity();
        mats.push_back(m);
    }
    Tensor x = Tensor::randn({2, 3, 8}, r);
    Graph g;
    Var y = quad_block_apply(g.leaf(x, false), mats);
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t s = 0; s < 3; ++s)
            for (int64_t q = 0; q < 2; ++q) {
                Eigen::Vector4d vin, vout;
                for (int i = 0; i < 4; ++i) {
                    vin[i] = x[(f * 3 + s) * 8 + 4 * q + i];
                    vout[i] = y.val()[(f * 3 + s) * 8 + 4 * q + i];
                }
                CHECK((mats[static_cast<size_t>(f)] * vin - vout).norm() < 1e-12);
            }
    gradcheck({2, 3, 8}, [&](Graph& g2, Var xv) {
        Var out = quad_block_apply(xv, mats);
        return sum_all(mul(out, out));
    }, 24);
}

TEST_CASE("conv2d forward matches direct convolution and gradients check out") {
    Rng r(25);
    Tensor x = Tensor::randn({1, 2, 5, 5}, r);
    Tensor w = Tensor::randn({3, 2, 3, 3}, r);
    Tensor b = Tensor::randn({3}, r);
    Graph g;
    Var y = conv2d(g.leaf(x, false), g.leaf(w, false), g.leaf(b, false), 2, 1);
    CHECK(y.shape() == Shape{1, 3, 3, 3});
    // direct reference at one output position
    for (int64_t o = 0; o < 3; ++o) {
        double acc = b[o];
        const int64_t oh = 1, ow = 2;
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t u = 0; u < 3; ++u)
                for (int64_t v = 0; v < 3; ++v) {
                    const int64_t ih = oh * 2 - 1 + u, iw = ow * 2 - 1 + v;
                    if (ih < 0 || iw < 0 || ih >= 5 || iw >= 5) continue;
                    acc += x[(c * 5 + ih) * 5 + iw] * w[((o * 2 + c) * 3 + u) * 3 + v];
                }
        CHECK(std::fabs(y.val()[(o * 3 + oh) * 3 + ow] - acc) < 1e-12);
    }
    gradcheck({2, 2, 6, 6}, [](Graph& gg, Var xv) {
        Rng rr(26);
        Var w2 = gg.leaf(Tensor::randn({3, 2, 3, 3}, rr), false);
        Var b2 = gg.leaf(Tensor::randn({3}, rr), false);
        Var out = conv2d(xv, w2, b2, 2, 1);
        return sum_all(mul(out, out));
    }, 27, 1e-6);
    // weight gradient
    Rng rr(28);
    Tensor x2 = Tensor::randn({1, 2, 4, 4}, rr);
    Tensor w2 = Tensor::randn({2, 2, 3, 3}, rr);
    Tensor b2 = Tensor::randn({2}, rr);
    Graph g2;
    Var wv = g2.leaf(w2, true);
    Var bv = g2.leaf(b2, true);
    Var loss = sum_all(mul(conv2d(g2.leaf(x2, false), wv, bv, 1, 1), g2.constant(Tensor::full({1, 2, 4, 4}, 0.7))));
    g2.backward(loss);
    const Tensor gw = g2.grad_of(wv);
    auto eval_w = [&](int64_t i, double v) {
        Tensor wt = w2;
        wt[i] = v;
        Graph gg;
        return sum_all(mul(conv2d(gg.leaf(x2, false), gg.leaf(wt, false), gg.leaf(b2, false), 1, 1),
                           gg.constant(Tensor::full({1, 2, 4, 4}, 0.7))))
            .val()[0];
    };
    for (int64_t i : {0L, 7L, 17L, 35L}) {
        const double fd = (eval_w(i, w2[i] + 1e-5) - eval_w(i, w2[i] - 1e-5)) / 2e-5;
        CHECK(std::fabs(fd - gw[i]) < 1e-6 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("conv_transpose2d inverts conv2d geometry and gradients check out") {
    Rng r(29);
    Graph g;
    Var x = g.leaf(Tensor::randn({1, 2, 4, 4}, r), false);
    Var w = g.leaf(Tensor::randn({2, 3, 4, 4}, r), false);
    Var b = g.leaf(Tensor::zeros({3}), false);
    Var y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y.shape() == Shape{1, 3, 8, 8});
    gradcheck({1, 2, 4, 4}, [](Graph& gg, Var xv) {
        Rng rr(30);
        Var w2 = gg.leaf(Tensor::randn({2, 3, 4, 4}, rr), false);
        Var b2 = gg.leaf(Tensor::randn({3}, rr), false);
        Var out = conv_transpose2d(xv, w2, b2, 2, 1);
        return sum_all(mul(out, out));
    }, 31, 1e-6);
}

TEST_CASE("adamw warmup, clipping and group learning rates") {
    nn::AdamWConfig cfg;
    cfg.warmup_steps = 500;
    nn::AdamW opt(cfg);
    CHECK(opt.lr_scale(250) == doctest::Approx(0.5));
    CHECK(opt.lr_scale(500) == doctest::Approx(1.0));
    CHECK(opt.lr_scale(5000) == doctest::Approx(1.0));
    CHECK(opt.group_lr("action") == doctest::Approx(2e-4));
    CHECK(opt.group_lr("base") == doctest::Approx(1e-5));

    nn::ParamStore store;
    auto& p1 = store.add("a", Tensor::zeros({3}));
    auto& p2 = store.add("b", Tensor::zeros({4}), "action");
    p1.grad = Tensor::full({3}, 0.2);
    p2.grad = Tensor::full({4}, 0.2);
    auto params = store.all();
    const double raw = nn::AdamW::grad_norm(params);
    CHECK(raw == doctest::Approx(0.2 * std::sqrt(7.0)));
    nn::AdamW::clip_gradients(params, 0.05);
    CHECK(nn::AdamW::grad_norm(params) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("rng determinism and fork independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    c.next_u64();
    CHECK(c.next_u64() != Rng(42).next_u64());
    // state round-trip
    Rng d(7);
    d.normal();
    const auto st = d.state();
    const bool gc = d.gauss_cached();
    const double gv = d.gauss_value();
    const double next = d.normal();
    Rng e(0);
    e.set_state(st, gc, gv);
    CHECK(e.normal() == next);
}

TEST_CASE("tensor reshape and reductions") {
    Tensor t({2, 3});
    for (int64_t i = 0; i < 6; ++i) t[i] = static_cast<double>(i);
    CHECK(t.sum() == doctest::Approx(15.0));
    CHECK(t.reshaped({3, 2}).at({2, 1}) == doctest::Approx(5.0));
    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
    CHECK(nn::max_abs_diff(t, t) == 0.0);
}
