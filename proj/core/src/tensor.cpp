// Copyright (C) 2026 composia authors
// SPDX-License-Identifier: Apache-2.0
#include "composia/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace composia {

int worker_thread_count() {
    if (const char* env = std::getenv("COMPOSIA_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace composia

namespace composia::nn {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        COMPOSIA_CHECK(d >= 0, << "negative dimension in shape " << shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    out += ")";
    return out;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    COMPOSIA_CHECK(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
                   << "data size " << data_.size() << " does not match shape " << shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

int64_t Tensor::offset(std::initializer_list<int64_t> idx) const {
    COMPOSIA_CHECK(idx.size() == shape_.size(), << "index rank mismatch for shape " << shape_str(shape_));
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        off = off * shape_[k] + i;
        ++k;
    }
    return off;
}

Tensor Tensor::reshaped(Shape new_shape) const {
    COMPOSIA_CHECK(shape_numel(new_shape) == numel(),
                   << "cannot reshape " << shape_str(shape_) << " to " << shape_str(new_shape));
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min() const {
    COMPOSIA_CHECK(!data_.empty());
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    COMPOSIA_CHECK(!data_.empty());
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_inplace(const Tensor& o, double scale) {
    COMPOSIA_CHECK(same_shape(o), << "add_inplace shape mismatch " << shape_str(shape_) << " vs "
                                  << shape_str(o.shape_));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o.data_[i];
}

void Tensor::scale_inplace(double s) {
    for (double& v : data_) v *= s;
}

void Tensor::clamp_inplace(double lo, double hi) {
    for (double& v : data_) v = std::clamp(v, lo, hi);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    COMPOSIA_CHECK(a.same_shape(b), << "max_abs_diff shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace composia::nn
