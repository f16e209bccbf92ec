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
#include <functional>
#include <vector>

#include "seqsynth/autodiff.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"
#include "seqsynth/volume.hpp"

// Shared oracles for the test suite: a central finite-difference gradient
// checker, a direct sliding-window SSIM-loss evaluation, and a long-run
// power-method estimate of the largest singular value.

namespace testutil {

using seqsynth::Rng;
using seqsynth::Tensor;
using seqsynth::Volume;
namespace ad = seqsynth::ad;

// Maximum relative error between analytic gradients of `f` (a scalar
// function of the given inputs) and central finite differences, over every
// entry of every input. Near-zero gradient pairs fall back to a 1e-6
// denominator floor so interpolation noise does not fake a mismatch.
inline double gradcheck_max_rel_err(const std::function<ad::Var(const std::vector<ad::Var>&)>& f,
                                    std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t, true));
    ad::Var out = f(leaves);
    out.backward();

    auto eval = [&](const std::vector<Tensor>& pert) {
        std::vector<ad::Var> vars;
        vars.reserve(pert.size());
        for (const Tensor& t : pert) vars.push_back(ad::leaf(t, false));
        return f(vars).value()[0];
    };

    double max_rel = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
            const double orig = inputs[i][j];
            inputs[i].data()[j] = orig + h;
            const double fp = eval(inputs);
            inputs[i].data()[j] = orig - h;
            const double fm = eval(inputs);
            inputs[i].data()[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = leaves[i].grad()[j];
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
            max_rel = std::max(max_rel, std::fabs(numeric - analytic) / denom);
        }
    }
    return max_rel;
}

// Direct (non-separable) evaluation of the windowed SSIM loss on one (N, 1,
// H, W) pair: Gaussian-weighted moments per valid window position, mean of
// |1 - SSIM| over positions and batch.
inline double naive_ssim_loss(const Tensor& yhat, const Tensor& y, std::int64_t k, double sigma) {
    const std::int64_t n = yhat.dim(0), h = yhat.dim(2), w = yhat.dim(3);
    std::vector<double> g(static_cast<std::size_t>(k));
    const double c = (static_cast<double>(k) - 1.0) / 2.0;
    double gsum = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
        const double d = static_cast<double>(i) - c;
        g[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        gsum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= gsum;

    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t r = 0; r + k <= h; ++r)
            for (std::int64_t q = 0; q + k <= w; ++q) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (std::int64_t i = 0; i < k; ++i)
                    for (std::int64_t j = 0; j < k; ++j) {
                        const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
                        const double a = yhat.at4(b, 0, r + i, q + j);
                        const double t = y.at4(b, 0, r + i, q + j);
                        mx += wt * a;
                        my += wt * t;
                        mxx += wt * a * a;
                        myy += wt * t * t;
                        mxy += wt * a * t;
                    }
                const double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
                const double ssim =
                    ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                acc += std::fabs(1.0 - ssim);
                ++count;
            }
    return acc / static_cast<double>(count);
}

// Largest singular value of a (out_channels, rest) view of a conv weight,
// by long-run power iteration.
inline double power_method_sigma(const Tensor& w, int iters = 500) {
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.numel() / rows;
    Rng rng(12345);
    std::vector<double> u(static_cast<std::size_t>(rows)), v(static_cast<std::size_t>(cols));
    for (auto& x : u) x = rng.normal();
    for (int it = 0; it < iters; ++it) {
        for (std::int64_t j = 0; j < cols; ++j) {
            double s = 0;
            for (std::int64_t i = 0; i < rows; ++i) s += w[i * cols + j] * u[static_cast<std::size_t>(i)];
            v[static_cast<std::size_t>(j)] = s;
        }
        double nv = 0;
        for (double x : v) nv += x * x;
        nv = std::sqrt(nv);
        for (auto& x : v) x /= nv;
        for (std::int64_t i = 0; i < rows; ++i) {
            double s = 0;
            for (std::int64_t j = 0; j < cols; ++j) s += w[i * cols + j] * v[static_cast<std::size_t>(j)];
            u[static_cast<std::size_t>(i)] = s;
        }
        double nu = 0;
        for (double x : u) nu += x * x;
        nu = std::sqrt(nu);
        for (auto& x : u) x /= nu;
    }
    // sigma = u^T W v
    double sigma = 0;
    for (std::int64_t i = 0; i < rows; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < cols; ++j) s += w[i * cols + j] * v[static_cast<std::size_t>(j)];
        sigma += u[static_cast<std::size_t>(i)] * s;
    }
    return sigma;
}

// Smooth radially symmetric blob, handy for interpolation-tolerance checks.
inline Volume smooth_blob_volume(std::int64_t side, double falloff = 0.015) {
    Volume v;
    v.shape = {side, side, side};
    v.data.assign(static_cast<std::size_t>(side * side * side), 0.0f);
    const double c = (static_cast<double>(side) - 1.0) / 2.0;
    for (std::int64_t k = 0; k < side; ++k)
        for (std::int64_t j = 0; j < side; ++j)
            for (std::int64_t i = 0; i < side; ++i) {
                const double dx = static_cast<double>(i) - c, dy = static_cast<double>(j) - c,
                             dz = static_cast<double>(k) - c;
                v.at(i, j, k) = static_cast<float>(std::exp(-falloff * (dx * dx + dy * dy + dz * dz)));
            }
    return v;
}

}  // namespace testutil
