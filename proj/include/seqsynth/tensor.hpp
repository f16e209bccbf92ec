/*
 * seqsynth: MRI sequence synthesis library
 *
 * Copyright 2026 The seqsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seqsynth/errors.hpp"
#include "seqsynth/rng.hpp"

namespace seqsynth {

// Dense row-major double tensor with value semantics. Double precision keeps
// gradient checks and cross-run determinism honest; this is a correctness-first
// training stack, not a throughput-first one.
class Tensor {
 public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        std::int64_t n = 1;
        for (std::int64_t d : shape_) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
            n *= d;
        }
        data_.assign(static_cast<std::size_t>(n), 0.0);
    }

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from_vector(std::vector<std::int64_t> shape, std::vector<double> values) {
        Tensor t(std::move(shape));
        if (t.data_.size() != values.size())
            throw ShapeError("value count does not match shape " + shape_str(t.shape_));
        t.data_ = std::move(values);
        return t;
    }

    static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = rng.normal(mean, stddev);
        return t;
    }

    static Tensor rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = rng.range(lo, hi);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-d (N, C, H, W) indexing used throughout the network code.
    double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    double& at3(std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }
    double at3(std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }

    double& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<std::int64_t> shape) const {
        Tensor t = *this;
        std::int64_t n = 1;
        for (std::int64_t d : shape) n *= d;
        if (n != numel()) throw ShapeError("reshape to " + shape_str(shape) + " changes element count");
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

    double abs_max() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::fabs(x));
        return m;
    }

    static std::string shape_str(const std::vector<std::int64_t>& s) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ")";
        return os.str();
    }

 private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace seqsynth
