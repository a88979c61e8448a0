// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "composia/common.hpp"
#include "composia/rng.hpp"

namespace composia::nn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major double tensor with value semantics.
///
/// All model math runs in double so that analytic gradients can be checked
/// against central finite differences at tight tolerances; file payloads
/// convert to f32 at the I/O boundary where the format asks for it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v) { return full({1}, v); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int64_t> idx) const { return data_[static_cast<size_t>(offset(idx))]; }
    int64_t offset(std::initializer_list<int64_t> idx) const;

    /// Same storage reinterpreted under a new shape (copies; sizes must match).
    Tensor reshaped(Shape new_shape) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    double min() const;
    double max() const;
    double sum() const;
    double mean() const { return numel() > 0 ? sum() / static_cast<double>(numel()) : 0.0; }
    double abs_max() const;

    void fill(double v);
    void add_inplace(const Tensor& o, double scale = 1.0);
    void scale_inplace(double s);
    void clamp_inplace(double lo, double hi);

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Max |a - b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// True when every element matches bit-for-bit.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace composia::nn
