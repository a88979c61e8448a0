// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace composia::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace

const Tensor& Var::val() const { return g->node(id).value; }

Var Graph::leaf(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::cached_leaf(const void* key, const Tensor& value, bool needs_grad) {
    auto it = leaf_cache_.find(key);
    if (it != leaf_cache_.end()) return Var{this, it->second};
    Var v = leaf(value, needs_grad);
    leaf_cache_[key] = v.id;
    return v;
}

Var Graph::make(Tensor value, const std::vector<Var>& parents, std::function<void(Graph&, int)> backward) {
    bool needs = false;
    for (const Var& p : parents) {
        COMPOSIA_CHECK(p.g == this, << "op mixes nodes from different graphs");
        needs = needs || node(p.id).needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accum_grad(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.grad_seeded) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_seeded = true;
    }
    n.grad.add_inplace(g);
}

void Graph::backward(Var root) {
    COMPOSIA_CHECK(root.g == this && root.id >= 0);
    COMPOSIA_CHECK(node(root.id).value.numel() == 1, << "backward root must be scalar");
    accum_grad(root.id, Tensor::full({1}, 1.0));
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad_seeded && n.backward) n.backward(*this, i);
    }
}

Tensor Graph::grad_of(Var v) const {
    const Node& n = node(v.id);
    if (n.grad_seeded) return n.grad;
    return Tensor::zeros(n.value.shape());
}

Tensor Graph::grad_for_key(const void* key) const {
    auto it = leaf_cache_.find(key);
    if (it == leaf_cache_.end()) return Tensor();
    return grad_of(Var{const_cast<Graph*>(this), it->second});
}

// ---- broadcasting -----------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        COMPOSIA_CHECK(da == db || da == 1 || db == 1,
                       << "incompatible broadcast " << shape_str(a) << " vs " << shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

namespace {

// Iterate the broadcast result shape; fa/fb map result linear index -> operand index.
template <typename F>
void broadcast_loop(const Shape& out_shape, const Shape& a, const Shape& b, F&& f) {
    const size_t r = out_shape.size();
    std::vector<int64_t> sa(r, 0), sb(r, 0);
    const auto ost = row_strides(out_shape);
    {
        const auto ast = row_strides(a);
        const auto bst = row_strides(b);
        for (size_t i = 0; i < r; ++i) {
            const size_t ia = i + a.size() - r, ib = i + b.size() - r;
            if (i >= r - a.size() && a[ia] != 1) sa[i] = ast[ia];
            if (i >= r - b.size() && b[ib] != 1) sb[i] = bst[ib];
        }
    }
    const int64_t n = shape_numel(out_shape);
    std::vector<int64_t> idx(r, 0);
    int64_t offa = 0, offb = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        f(lin, offa, offb);
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)]++;
            offa += sa[static_cast<size_t>(i)];
            offb += sb[static_cast<size_t>(i)];
            if (idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            offa -= sa[static_cast<size_t>(i)] * out_shape[static_cast<size_t>(i)];
            offb -= sb[static_cast<size_t>(i)] * out_shape[static_cast<size_t>(i)];
            idx[static_cast<size_t>(i)] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul };

Var binary_broadcast(Var a, Var b, BinOp op) {
    Graph& g = *a.g;
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    const Shape os = broadcast_shape(ta.shape(), tb.shape());
    Tensor out(os);
    broadcast_loop(os, ta.shape(), tb.shape(), [&](int64_t lin, int64_t ia, int64_t ib) {
        switch (op) {
            case BinOp::Add: out[lin] = ta[ia] + tb[ib]; break;
            case BinOp::Sub: out[lin] = ta[ia] - tb[ib]; break;
            case BinOp::Mul: out[lin] = ta[ia] * tb[ib]; break;
        }
    });
    const int aid = a.id, bid = b.id;
    return g.make(std::move(out), {a, b}, [aid, bid, op](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& va = gg.node(aid).value;
        const Tensor& vb = gg.node(bid).value;
        if (gg.node(aid).needs_grad) {
            Tensor ga(gg.node(self).value.shape());
            broadcast_loop(ga.shape(), va.shape(), vb.shape(), [&](int64_t lin, int64_t, int64_t ib) {
                ga[lin] = op == BinOp::Mul ? gr[lin] * vb[ib] : gr[lin];
            });
            gg.accum_grad(aid, t_reduce_to_shape(ga, va.shape()));
        }
        if (gg.node(bid).needs_grad) {
            Tensor gb(gg.node(self).value.shape());
            broadcast_loop(gb.shape(), va.shape(), vb.shape(), [&](int64_t lin, int64_t ia, int64_t) {
                if (op == BinOp::Mul)
                    gb[lin] = gr[lin] * va[ia];
                else
                    gb[lin] = op == BinOp::Sub ? -gr[lin] : gr[lin];
            });
            gg.accum_grad(bid, t_reduce_to_shape(gb, vb.shape()));
        }
    });
}

}  // namespace

Tensor t_reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out(target);
    broadcast_loop(g.shape(), target, target, [&](int64_t lin, int64_t it, int64_t) { out[it] += g[lin]; });
    return out;
}

Var add(Var a, Var b) { return binary_broadcast(a, b, BinOp::Add); }
Var sub(Var a, Var b) { return binary_broadcast(a, b, BinOp::Sub); }
Var mul(Var a, Var b) { return binary_broadcast(a, b, BinOp::Mul); }

Var scale(Var a, double s) {
    Graph& g = *a.g;
    Tensor out = a.val();
    out.scale_inplace(s);
    const int aid = a.id;
    return g.make(std::move(out), {a}, [aid, s](Graph& gg, int self) {
        Tensor gr = gg.node(self).grad;
        gr.scale_inplace(s);
        gg.accum_grad(aid, gr);
    });
}

Var add_scalar(Var a, double s) {
    Graph& g = *a.g;
    Tensor out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    const int aid = a.id;
    return g.make(std::move(out), {a},
                  [aid](Graph& gg, int self) { gg.accum_grad(aid, gg.node(self).grad); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var silu(Var a) {
    Graph& g = *a.g;
    const Tensor& x = a.val();
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
    const int aid = a.id;
    return g.make(std::move(out), {a}, [aid](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& x = gg.node(aid).value;
        Tensor gx(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            gx[i] = gr[i] * (s * (1.0 + x[i] * (1.0 - s)));
        }
        gg.accum_grad(aid, gx);
    });
}

// ---- shape ops ----------------------------------------------------------------

Var reshape(Var a, Shape shape) {
    Graph& g = *a.g;
    Tensor out = a.val().reshaped(shape);
    const int aid = a.id;
    return g.make(std::move(out), {a}, [aid](Graph& gg, int self) {
        gg.accum_grad(aid, gg.node(self).grad.reshaped(gg.node(aid).value.shape()));
    });
}

namespace {

Tensor t_permute(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    COMPOSIA_CHECK(static_cast<int>(perm.size()) == r);
    Shape os(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    Tensor out(os);
    const auto xst = row_strides(x.shape());
    const auto ost = row_strides(os);
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t lin = 0; lin < out.numel(); ++lin) {
        int64_t src = 0;
        for (int i = 0; i < r; ++i) src += idx[static_cast<size_t>(i)] * xst[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        out[lin] = x[src];
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    (void)ost;
    return out;
}

std::vector<int> inverse_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

}  // namespace

Var permute(Var a, const std::vector<int>& perm) {
    Graph& g = *a.g;
    Tensor out = t_permute(a.val(), perm);
    const int aid = a.id;
    const std::vector<int> inv = inverse_perm(perm);
    return g.make(std::move(out), {a}, [aid, inv](Graph& gg, int self) {
        gg.accum_grad(aid, t_permute(gg.node(self).grad, inv));
    });
}

Var slice(Var a, int axis, int64_t start, int64_t len) {
    Graph& g = *a.g;
    const Tensor& x = a.val();
    COMPOSIA_CHECK(axis >= 0 && axis < x.rank());
    COMPOSIA_CHECK(start >= 0 && start + len <= x.dim(axis));
    Shape os = x.shape();
    os[static_cast<size_t>(axis)] = len;
    Tensor out(os);
    const auto xst = row_strides(x.shape());
    int64_t outer = 1, inner = xst[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    const int64_t xaxis = x.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len; ++j)
            for (int64_t k = 0; k < inner; ++k)
                out[(o * len + j) * inner + k] = x[(o * xaxis + start + j) * inner + k];
    const int aid = a.id;
    return g.make(std::move(out), {a}, [aid, axis, start, len](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& x = gg.node(aid).value;
        Tensor gx = Tensor::zeros(x.shape());
        const auto xst = row_strides(x.shape());
        int64_t outer = 1, inner = xst[static_cast<size_t>(axis)];
        for (int i = 0; i < axis; ++i) outer *= x.dim(i);
        const int64_t xaxis = x.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < len; ++j)
                for (int64_t k = 0; k < inner; ++k)
                    gx[(o * xaxis + start + j) * inner + k] = gr[(o * len + j) * inner + k];
        gg.accum_grad(aid, gx);
    });
}

Var concat(const std::vector<Var>& vs, int axis) {
    COMPOSIA_CHECK(!vs.empty());
    Graph& g = *vs[0].g;
    const int r = vs[0].val().rank();
    Shape os = vs[0].val().shape();
    int64_t total = 0;
    for (const Var& v : vs) {
        COMPOSIA_CHECK(v.val().rank() == r);
        total += v.val().dim(axis);
    }
    os[static_cast<size_t>(axis)] = total;
    Tensor out(os);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
    int64_t cursor = 0;
    for (const Var& v : vs) {
        const Tensor& x = v.val();
        const int64_t ax = x.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < ax; ++j)
                for (int64_t k = 0; k < inner; ++k)
                    out[(o * total + cursor + j) * inner + k] = x[(o * ax + j) * inner + k];
        cursor += ax;
    }
    std::vector<int> ids;
    for (const Var& v : vs) ids.push_back(v.id);
    return g.make(std::move(out), vs, [ids, axis](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Shape& os = gg.node(self).value.shape();
        const int r = static_cast<int>(os.size());
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
        for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
        const int64_t total = os[static_cast<size_t>(axis)];
        int64_t cursor = 0;
        for (int id : ids) {
            const Tensor& x = gg.node(id).value;
            const int64_t ax = x.dim(axis);
            if (gg.node(id).needs_grad) {
                Tensor gx(x.shape());
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t j = 0; j < ax; ++j)
                        for (int64_t k = 0; k < inner; ++k)
                            gx[(o * ax + j) * inner + k] = gr[(o * total + cursor + j) * inner + k];
                gg.accum_grad(id, gx);
            }
            cursor += ax;
        }
    });
}

// ---- linear algebra --------------------------------------------------------------

Tensor t_matmul(const Tensor& a, const Tensor& b) {
    COMPOSIA_CHECK(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                   << "matmul shapes " << shape_str(a.shape()) << " x " << shape_str(b.shape()));
    Tensor out({a.dim(0), b.dim(1)});
    CMapMat ma(a.data(), a.dim(0), a.dim(1));
    CMapMat mb(b.data(), b.dim(0), b.dim(1));
    MapMat mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma * mb;
    return out;
}

namespace {

Tensor t_matmul_tn(const Tensor& a, const Tensor& b) {  // a^T * b
    Tensor out({a.dim(1), b.dim(1)});
    CMapMat ma(a.data(), a.dim(0), a.dim(1));
    CMapMat mb(b.data(), b.dim(0), b.dim(1));
    MapMat mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma.transpose() * mb;
    return out;
}

Tensor t_matmul_nt(const Tensor& a, const Tensor& b) {  // a * b^T
    Tensor out({a.dim(0), b.dim(0)});
    CMapMat ma(a.data(), a.dim(0), a.dim(1));
    CMapMat mb(b.data(), b.dim(0), b.dim(1));
    MapMat mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma * mb.transpose();
    return out;
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = *a.g;
    Tensor out = t_matmul(a.val(), b.val());
    const int aid = a.id, bid = b.id;
    return g.make(std::move(out), {a, b}, [aid, bid](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        if (gg.node(aid).needs_grad) gg.accum_grad(aid, t_matmul_nt(gr, gg.node(bid).value));
        if (gg.node(bid).needs_grad) gg.accum_grad(bid, t_matmul_tn(gg.node(aid).value, gr));
    });
}

Var linear_nobias(Var x, Var w) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const Tensor& tw = w.val();
    COMPOSIA_CHECK(tw.rank() == 2);
    const int64_t in = tw.dim(1), out_dim = tw.dim(0);
    COMPOSIA_CHECK(tx.dim(tx.rank() - 1) == in,
                   << "linear input " << shape_str(tx.shape()) << " vs weight " << shape_str(tw.shape()));
    const int64_t rows = tx.numel() / in;
    Tensor out_t({rows, out_dim});
    CMapMat mx(tx.data(), rows, in);
    CMapMat mw(tw.data(), out_dim, in);
    MapMat mo(out_t.data(), rows, out_dim);
    mo.noalias() = mx * mw.transpose();
    Shape os = tx.shape();
    os.back() = out_dim;
    out_t = out_t.reshaped(os);
    const int xid = x.id, wid = w.id;
    return g.make(std::move(out_t), {x, w}, [xid, wid, rows, in, out_dim](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        CMapMat mg(gr.data(), rows, out_dim);
        if (gg.node(xid).needs_grad) {
            Tensor gx(gg.node(xid).value.shape());
            CMapMat mw(gg.node(wid).value.data(), out_dim, in);
            MapMat mgx(gx.data(), rows, in);
            mgx.noalias() = mg * mw;
            gg.accum_grad(xid, gx);
        }
        if (gg.node(wid).needs_grad) {
            Tensor gw({out_dim, in});
            CMapMat mx(gg.node(xid).value.data(), rows, in);
            MapMat mgw(gw.data(), out_dim, in);
            mgw.noalias() = mg.transpose() * mx;
            gg.accum_grad(wid, gw);
        }
    });
}

Var linear(Var x, Var w, Var b) {
    Var y = linear_nobias(x, w);
    return add(y, b);
}

// ---- reductions --------------------------------------------------------------------

Var sum_all(Var a) {
    Graph& g = *a.g;
    Tensor out = Tensor::scalar(a.val().sum());
    const int aid = a.id;
    return g.make(std::move(out), {a}, [aid](Graph& gg, int self) {
        const double gv = gg.node(self).grad[0];
        gg.accum_grad(aid, Tensor::full(gg.node(aid).value.shape(), gv));
    });
}

Var mean_all(Var a) {
    const double n = static_cast<double>(a.val().numel());
    return scale(sum_all(a), 1.0 / n);
}

Var mse_loss(Var pred, Var target) {
    Var d = sub(pred, target);
    return mean_all(mul(d, d));
}

// ---- normalization / attention ---------------------------------------------------------

Var layer_norm_lastdim(Var x, double eps) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const int64_t d = tx.dim(tx.rank() - 1);
    const int64_t rows = tx.numel() / d;
    Tensor out(tx.shape());
    Tensor inv_std({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* px = tx.data() + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += px[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        double* po = out.data() + r * d;
        for (int64_t i = 0; i < d; ++i) po[i] = (px[i] - mu) * is;
    }
    const int xid = x.id;
    return g.make(std::move(out), {x}, [xid, d, rows, inv_std](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& y = gg.node(self).value;
        Tensor gx(gg.node(xid).value.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* pg = gr.data() + r * d;
            const double* py = y.data() + r * d;
            double mg = 0.0, mgy = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                mg += pg[i];
                mgy += pg[i] * py[i];
            }
            mg /= static_cast<double>(d);
            mgy /= static_cast<double>(d);
            double* pgx = gx.data() + r * d;
            for (int64_t i = 0; i < d; ++i) pgx[i] = inv_std[r] * (pg[i] - mg - py[i] * mgy);
        }
        gg.accum_grad(xid, gx);
    });
}

Var softmax_lastdim(Var x) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const int64_t d = tx.dim(tx.rank() - 1);
    const int64_t rows = tx.numel() / d;
    Tensor out(tx.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* px = tx.data() + r * d;
        double* po = out.data() + r * d;
        double mx = px[0];
        for (int64_t i = 1; i < d; ++i) mx = std::max(mx, px[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            po[i] = std::exp(px[i] - mx);
            sum += po[i];
        }
        for (int64_t i = 0; i < d; ++i) po[i] /= sum;
    }
    const int xid = x.id;
    return g.make(std::move(out), {x}, [xid, d, rows](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& y = gg.node(self).value;
        Tensor gx(gg.node(xid).value.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* pg = gr.data() + r * d;
            const double* py = y.data() + r * d;
            double dot = 0.0;
            for (int64_t i = 0; i < d; ++i) dot += pg[i] * py[i];
            double* pgx = gx.data() + r * d;
            for (int64_t i = 0; i < d; ++i) pgx[i] = py[i] * (pg[i] - dot);
        }
        gg.accum_grad(xid, gx);
    });
}

Var rope_rotate(Var x, const Tensor& cs, const Tensor& sn) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const int64_t d = tx.dim(tx.rank() - 1);
    const int64_t rows = tx.numel() / d;
    COMPOSIA_CHECK(d % 2 == 0, << "rope requires even feature dim");
    COMPOSIA_CHECK(cs.numel() == rows * (d / 2) && sn.numel() == rows * (d / 2),
                   << "rope cos/sin size mismatch");
    Tensor out(tx.shape());
    const int64_t half = d / 2;
    for (int64_t r = 0; r < rows; ++r) {
        const double* px = tx.data() + r * d;
        const double* pc = cs.data() + r * half;
        const double* ps = sn.data() + r * half;
        double* po = out.data() + r * d;
        for (int64_t j = 0; j < half; ++j) {
            po[2 * j] = px[2 * j] * pc[j] - px[2 * j + 1] * ps[j];
            po[2 * j + 1] = px[2 * j] * ps[j] + px[2 * j + 1] * pc[j];
        }
    }
    const int xid = x.id;
    return g.make(std::move(out), {x}, [xid, cs, sn, d, rows](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        Tensor gx(gg.node(xid).value.shape());
        const int64_t half = d / 2;
        for (int64_t r = 0; r < rows; ++r) {
            const double* pg = gr.data() + r * d;
            const double* pc = cs.data() + r * half;
            const double* ps = sn.data() + r * half;
            double* pgx = gx.data() + r * d;
            for (int64_t j = 0; j < half; ++j) {
                pgx[2 * j] = pg[2 * j] * pc[j] + pg[2 * j + 1] * ps[j];
                pgx[2 * j + 1] = -pg[2 * j] * ps[j] + pg[2 * j + 1] * pc[j];
            }
        }
        gg.accum_grad(xid, gx);
    });
}

Var quad_block_apply(Var x, const std::vector<Eigen::Matrix4d>& per_frame) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    COMPOSIA_CHECK(tx.rank() == 3, << "quad_block_apply expects [f,s,c]");
    const int64_t f = tx.dim(0), s = tx.dim(1), c = tx.dim(2);
    COMPOSIA_CHECK(c % 4 == 0, << "channel count must be divisible by 4");
    COMPOSIA_CHECK(static_cast<int64_t>(per_frame.size()) == f, << "one matrix per frame required");
    Tensor out(tx.shape());
    for (int64_t i = 0; i < f; ++i) {
        const Eigen::Matrix4d& m = per_frame[static_cast<size_t>(i)];
        for (int64_t t = 0; t < s; ++t) {
            const double* px = tx.data() + (i * s + t) * c;
            double* po = out.data() + (i * s + t) * c;
            for (int64_t q = 0; q < c / 4; ++q) {
                Eigen::Map<const Eigen::Vector4d> vin(px + 4 * q);
                Eigen::Map<Eigen::Vector4d> vout(po + 4 * q);
                vout = m * vin;
            }
        }
    }
    const int xid = x.id;
    return g.make(std::move(out), {x}, [xid, per_frame, f, s, c](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        Tensor gx(gg.node(xid).value.shape());
        for (int64_t i = 0; i < f; ++i) {
            const Eigen::Matrix4d mt = per_frame[static_cast<size_t>(i)].transpose();
            for (int64_t t = 0; t < s; ++t) {
                const double* pg = gr.data() + (i * s + t) * c;
                double* pgx = gx.data() + (i * s + t) * c;
                for (int64_t q = 0; q < c / 4; ++q) {
                    Eigen::Map<const Eigen::Vector4d> vg(pg + 4 * q);
                    Eigen::Map<Eigen::Vector4d> vgx(pgx + 4 * q);
                    vgx = mt * vg;
                }
            }
        }
        gg.accum_grad(xid, gx);
    });
}

// ---- convolution -------------------------------------------------------------------------

namespace {

struct ConvDims {
    int64_t N, C, H, W, O, kh, kw, OH, OW;
};

// col[(c,kh,kw), (oh,ow)] = x[c, oh*s-p+kh, ow*s-p+kw]
void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int stride,
            int pad, int64_t OH, int64_t OW, double* col) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                double* prow = col + ((c * kh + u) * kw + v) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride - pad + u;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride - pad + v;
                        prow[oh * OW + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                                 ? x[(c * H + ih) * W + iw]
                                                 : 0.0;
                    }
                }
            }
}

// scatter-add transpose of im2col
void col2im(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int stride,
            int pad, int64_t OH, int64_t OW, double* x) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                const double* prow = col + ((c * kh + u) * kw + v) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride - pad + u;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t iw = ow * stride - pad + v;
                        if (iw < 0 || iw >= W) continue;
                        x[(c * H + ih) * W + iw] += prow[oh * OW + ow];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const Tensor& tw = w.val();
    const Tensor& tb = b.val();
    COMPOSIA_CHECK(tx.rank() == 4 && tw.rank() == 4, << "conv2d expects x[N,C,H,W], w[O,C,kh,kw]");
    ConvDims dd{tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), tw.dim(0), tw.dim(2), tw.dim(3), 0, 0};
    COMPOSIA_CHECK(tw.dim(1) == dd.C, << "conv2d channel mismatch");
    COMPOSIA_CHECK(tb.numel() == dd.O);
    dd.OH = (dd.H + 2 * pad - dd.kh) / stride + 1;
    dd.OW = (dd.W + 2 * pad - dd.kw) / stride + 1;
    COMPOSIA_CHECK(dd.OH > 0 && dd.OW > 0, << "conv2d output would be empty");
    const int64_t K = dd.C * dd.kh * dd.kw;
    const int64_t P = dd.OH * dd.OW;
    Tensor out({dd.N, dd.O, dd.OH, dd.OW});
    std::vector<double> col(static_cast<size_t>(K * P));
    CMapMat mw(tw.data(), dd.O, K);
    for (int64_t n = 0; n < dd.N; ++n) {
        im2col(tx.data() + n * dd.C * dd.H * dd.W, dd.C, dd.H, dd.W, dd.kh, dd.kw, stride, pad, dd.OH,
               dd.OW, col.data());
        CMapMat mcol(col.data(), K, P);
        MapMat mo(out.data() + n * dd.O * P, dd.O, P);
        mo.noalias() = mw * mcol;
        for (int64_t o = 0; o < dd.O; ++o) mo.row(o).array() += tb[o];
    }
    const int xid = x.id, wid = w.id, bid = b.id;
    return g.make(std::move(out), {x, w, b}, [xid, wid, bid, dd, stride, pad](Graph& gg, int self) {
        const Tensor& gr = gg.node(self).grad;
        const Tensor& tx = gg.node(xid).value;
        const Tensor& tw = gg.node(wid).value;
        const int64_t K = dd.C * dd.kh * dd.kw;
        const int64_t P = dd.OH * dd.OW;
        std::vector<double> col(static_cast<size_t>(K * P));
        Tensor gx = Tensor::zeros(tx.shape());
        Tensor gw = Tensor::zeros(tw.shape());
        Tensor gb = Tensor::zeros({dd.O});
        CMapMat mw(tw.data(), dd.O, K);
        MapMat mgw(gw.data(), dd.O, K);
        for (int64_t n = 0; n < dd.N; ++n) {
            CMapMat mg(gr.data() + n * dd.O * P, dd.O, P);
            if (gg.node(wid).needs_grad) {
                im2col(tx.data() + n * dd.C * dd.H * dd.W, dd.C, dd.H, dd.W, dd.kh, dd.kw, stride,
                       pad, dd.OH, dd.OW, col.data());
                CMapMat mcol(col.data(), K, P);
                mgw.noalias() += mg * mcol.transpose();
            }
            if (gg.node(xid).needs_grad) {
                MapMat mcol(col.data(), K, P);
                mcol.noalias() = mw.transpose() * mg;
                col2im(col.data(), dd.C, dd.H, dd.W, dd.kh, dd.kw, stride, pad, dd.OH, dd.OW,
                       gx.data() + n * dd.C * dd.H * dd.W);
            }
            for (int64_t o = 0; o < dd.O; ++o) gb[o] += mg.row(o).sum();
        }
        if (gg.node(xid).needs_grad) gg.accum_grad(xid, gx);
        if (gg.node(wid).needs_grad) gg.accum_grad(wid, gw);
        if (gg.node(bid).needs_grad) gg.accum_grad(bid, gb);
    });
}

Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
    Graph& g = *x.g;
    const Tensor& tx = x.val();
    const Tensor& tw = w.val();
    const Tensor& tb = b.val();
    COMPOSIA_CHECK(tx.rank() == 4 && tw.rank() == 4, << "conv_transpose2d expects x[N,C,H,W], w[C,O,kh,kw]");
    const int64_t N = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
    COMPOSIA_CHECK(tw.dim(0) == C, << "conv_transpose2d channel mismatch");
    const int64_t O = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
    const int64_t OH = (H - 1) * stride - 2 * pad + kh;
    const int64_t OW = (W - 1) * stride - 2 * pad + kw;
    COMPOSIA_CHECK(OH > 0 && OW > 0 && tb.numel() == O);
    const int64_t M = O * kh * kw;
    Tensor out({N, O, OH, OW});
    std::vector<double> col(static_cast<size_t>(M * H * W));
    CMapMat mw(tw.data(), C, M);
    for (int64_t n = 0; n < N; ++n) {
        CMapMat mx(tx.data() + n * C * H * W, C, H * W);
        MapMat mcol(col.data(), M, H * W);
        mcol.noalias() = mw.transpose() * mx;
        double* po = out.data() + n * O * OH * OW;
        // col rows are (o,kh,kw); scatter with the conv geometry inverted
        col2im(col.data(), O, OH, OW, kh, kw, stride, pad, H, W, po);
        for (int64_t o = 0; o < O; ++o)
            for (int64_t i = 0; i < OH * OW; ++i) po[o * OH * OW + i] += tb[o];
    }
    const int xid = x.id, wid = w.id, bid = b.id;
    return g.make(std::move(out), {x, w, b},
                  [xid, wid, bid, N, C, H, W, O, kh, kw, OH, OW, stride, pad](Graph& gg, int self) {
                      const Tensor& gr = gg.node(self).grad;
                      const Tensor& tx = gg.node(xid).value;
                      const Tensor& tw = gg.node(wid).value;
                      const int64_t M = O * kh * kw;
                      std::vector<double> gcol(static_cast<size_t>(M * H * W));
                      Tensor gx = Tensor::zeros(tx.shape());
                      Tensor gw = Tensor::zeros(tw.shape());
                      Tensor gb = Tensor::zeros({O});
                      CMapMat mw(tw.data(), C, M);
                      MapMat mgw(gw.data(), C, M);
                      for (int64_t n = 0; n < N; ++n) {
                          // gather the output-grad back onto the input lattice
                          im2col(gr.data() + n * O * OH * OW, O, OH, OW, kh, kw, stride, pad, H, W,
                                 gcol.data());
                          CMapMat mgc(gcol.data(), M, H * W);
                          if (gg.node(xid).needs_grad) {
                              MapMat mgx(gx.data() + n * C * H * W, C, H * W);
                              mgx.noalias() = mw * mgc;
                          }
                          if (gg.node(wid).needs_grad) {
                              CMapMat mx(tx.data() + n * C * H * W, C, H * W);
                              mgw.noalias() += mx * mgc.transpose();
                          }
                          const double* pg = gr.data() + n * O * OH * OW;
                          for (int64_t o = 0; o < O; ++o)
                              for (int64_t i = 0; i < OH * OW; ++i) gb[o] += pg[o * OH * OW + i];
                      }
                      if (gg.node(xid).needs_grad) gg.accum_grad(xid, gx);
                      if (gg.node(wid).needs_grad) gg.accum_grad(wid, gw);
                      if (gg.node(bid).needs_grad) gg.accum_grad(bid, gb);
                  });
}

}  // namespace composia::nn
