// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "composia/tensor.hpp"

#include <Eigen/Core>

namespace composia::nn {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor& val() const;
    const Shape& shape() const { return val().shape(); }
};

/// Reverse-mode tape. One Graph per forward/backward pass; nodes own their
/// values and (lazily allocated) gradients.
class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_seeded = false;
        bool needs_grad = false;
        std::function<void(Graph&, int)> backward;  // reads node(id).grad, accumulates parents
    };

    Var leaf(Tensor value, bool needs_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Leaf with identity caching: repeated calls with the same key return the
    /// same node (used to bind parameters once per graph).
    Var cached_leaf(const void* key, const Tensor& value, bool needs_grad);

    Var make(Tensor value, const std::vector<Var>& parents, std::function<void(Graph&, int)> backward);

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    /// Accumulate g into node id's gradient.
    void accum_grad(int id, const Tensor& g);

    /// Run the tape backward from a scalar root.
    void backward(Var root);

    /// Gradient of a node (zeros if it never received one).
    Tensor grad_of(Var v) const;

    /// Gradient of the cached leaf registered under key (empty Tensor if absent).
    Tensor grad_for_key(const void* key) const;

private:
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_cache_;
};

// ---- elementwise / broadcast ------------------------------------------------

/// Right-aligned broadcast shapes (dims equal or 1). Throws on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var silu(Var a);

// ---- shape ------------------------------------------------------------------

Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<int>& perm);
Var slice(Var a, int axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& vs, int axis);

// ---- linear algebra ----------------------------------------------------------

Var matmul(Var a, Var b);                       // [m,k] x [k,n]
Var linear(Var x, Var w, Var b);                // x[...,in], w[out,in], b[out]
Var linear_nobias(Var x, Var w);

// ---- reductions / losses ------------------------------------------------------

Var sum_all(Var a);
Var mean_all(Var a);
Var mse_loss(Var pred, Var target);

// ---- normalization / attention -------------------------------------------------

Var layer_norm_lastdim(Var x, double eps = 1e-6);
Var softmax_lastdim(Var x);

/// Rotate channel pairs of x[N,D] by per-position angles given as cos/sin[N,D/2].
/// cos/sin are constants (no gradient path).
Var rope_rotate(Var x, const Tensor& cs, const Tensor& sn);

/// Per-frame 4x4 block-diagonal matrix applied to channel quadruples of
/// x[f,s,c] (c % 4 == 0): y[i,:,4j+a] = sum_b M_i(a,b) x[i,:,4j+b].
/// Matrices are constants (derived from camera geometry, not learned).
Var quad_block_apply(Var x, const std::vector<Eigen::Matrix4d>& per_frame);

// ---- convolution ----------------------------------------------------------------

/// x[N,C,H,W], w[O,C,kh,kw], b[O]; zero padding `pad`, square stride.
Var conv2d(Var x, Var w, Var b, int stride, int pad);

/// Transposed convolution: x[N,C,H,W], w[C,O,kh,kw], b[O];
/// out spatial = (in-1)*stride - 2*pad + k.
Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad);

// ---- plain-tensor helpers (shared by forward paths and tests) --------------------

Tensor t_matmul(const Tensor& a, const Tensor& b);
Tensor t_reduce_to_shape(const Tensor& g, const Shape& target);

}  // namespace composia::nn
