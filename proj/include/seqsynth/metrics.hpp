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
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqsynth/errors.hpp"
#include "seqsynth/volume.hpp"

// Region-restricted volume metrics. Both volumes are expected in [0, 1]
// (evaluate_case normalizes by the reference range first). SSIM uses an 11^3
// Gaussian window (sigma 1.5) with symmetric-reflect boundary handling, so
// the local map covers the full volume and a masked average is just a
// weighted mean over the region.

namespace seqsynth {

using RegionMask = std::vector<std::uint8_t>;

namespace metric_detail {

inline std::vector<double> gaussian_kernel_1d(std::int64_t size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::int64_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    // Symmetric reflection: -1 -> 0, n -> n-1.
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// Separable Gaussian blur along one axis of a (d0, d1, d2) field.
inline void blur_axis(std::vector<double>& f, const std::array<std::int64_t, 3>& sh, int axis,
                      const std::vector<double>& k) {
    const std::int64_t half = static_cast<std::int64_t>(k.size()) / 2;
    std::vector<double> out(f.size());
    const std::int64_t d0 = sh[0], d1 = sh[1], d2 = sh[2];
    auto idx = [&](std::int64_t i, std::int64_t j, std::int64_t l) { return i + d0 * (j + d1 * l); };
    for (std::int64_t l = 0; l < d2; ++l)
        for (std::int64_t j = 0; j < d1; ++j)
            for (std::int64_t i = 0; i < d0; ++i) {
                double acc = 0.0;
                for (std::int64_t t = -half; t <= half; ++t) {
                    std::int64_t ii = i, jj = j, ll = l;
                    if (axis == 0) ii = reflect_index(i + t, d0);
                    if (axis == 1) jj = reflect_index(j + t, d1);
                    if (axis == 2) ll = reflect_index(l + t, d2);
                    acc += k[static_cast<std::size_t>(t + half)] * f[static_cast<std::size_t>(idx(ii, jj, ll))];
                }
                out[static_cast<std::size_t>(idx(i, j, l))] = acc;
            }
    f = std::move(out);
}

inline std::vector<double> blur3(const Volume& v, const std::vector<double>& k) {
    std::vector<double> f(v.data.begin(), v.data.end());
    for (int axis = 0; axis < 3; ++axis) blur_axis(f, v.shape, axis, k);
    return f;
}

inline std::vector<double> blur3_product(const Volume& a, const Volume& b, const std::vector<double>& k,
                                         const std::array<std::int64_t, 3>& sh) {
    std::vector<double> f(a.data.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
    for (int axis = 0; axis < 3; ++axis) blur_axis(f, sh, axis, k);
    return f;
}

}  // namespace metric_detail

// Full-size local SSIM map between two [0, 1] volumes.
inline std::vector<double> ssim_map_3d(const Volume& a, const Volume& b, std::int64_t kernel = 11,
                                       double sigma = 1.5) {
    if (a.shape != b.shape) throw ShapeError("ssim_map_3d: volume shapes differ");
    if (kernel < 3 || kernel % 2 == 0) throw ArgumentError("ssim kernel must be odd and >= 3");
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const auto k = metric_detail::gaussian_kernel_1d(kernel, sigma);

    auto mu_a = metric_detail::blur3(a, k);
    auto mu_b = metric_detail::blur3(b, k);
    auto aa = metric_detail::blur3_product(a, a, k, a.shape);
    auto bb = metric_detail::blur3_product(b, b, k, a.shape);
    auto ab = metric_detail::blur3_product(a, b, k, a.shape);

    std::vector<double> map(mu_a.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = aa[i] - ma * ma;
        const double vb = bb[i] - mb * mb;
        const double cov = ab[i] - ma * mb;
        map[i] = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return map;
}

inline double masked_ssim(const Volume& pred, const Volume& ref, const RegionMask& mask, std::int64_t kernel = 11,
                          double sigma = 1.5) {
    if (static_cast<std::int64_t>(mask.size()) != ref.numel()) throw ShapeError("masked_ssim: mask size mismatch");
    const auto map = ssim_map_3d(pred, ref, kernel, sigma);
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (mask[i]) {
            acc += map[i];
            ++n;
        }
    if (n == 0) throw EmptyRegionError("masked_ssim: empty region");
    return acc / static_cast<double>(n);
}

// 10 * log10(1 / MSE) over the region, +inf when the region matches exactly.
inline double masked_psnr(const Volume& pred, const Volume& ref, const RegionMask& mask) {
    if (pred.shape != ref.shape) throw ShapeError("masked_psnr: volume shapes differ");
    if (static_cast<std::int64_t>(mask.size()) != ref.numel()) throw ShapeError("masked_psnr: mask size mismatch");
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            const double d = static_cast<double>(pred.data[i]) - static_cast<double>(ref.data[i]);
            acc += d * d;
            ++n;
        }
    if (n == 0) throw EmptyRegionError("masked_psnr: empty region");
    const double mse = acc / static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// ---- region construction and per-case evaluation ----

inline RegionMask brain_mask(const Volume& ref) {
    RegionMask m(static_cast<std::size_t>(ref.numel()), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = ref.data[i] > 0.0f ? 1 : 0;
    return m;
}

struct MetricRow {
    std::string case_id;
    std::optional<double> ssim_h, ssim_t, psnr_h, psnr_t;
};

// Normalizes both volumes by the reference intensity range (prediction
// clamped into it), splits the brain into tumor and healthy regions from the
// segmentation, and reports masked SSIM and PSNR per region. With no usable
// segmentation the whole brain is scored as "healthy" and tumor fields stay
// unset.
inline MetricRow evaluate_case(const std::string& case_id, const Volume& pred, const Volume& ref,
                               const LabelVolume* seg) {
    if (pred.shape != ref.shape) throw ShapeError("evaluate_case: prediction and reference shapes differ");
    if (seg && seg->shape != ref.shape) throw ShapeError("evaluate_case: segmentation shape differs");

    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (float v : ref.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) throw DegenerateInputError("evaluate_case: reference volume is constant");
    const double inv_range = 1.0 / (static_cast<double>(hi) - static_cast<double>(lo));
    Volume ref_n = ref, pred_n = pred;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        ref_n.data[i] = static_cast<float>((static_cast<double>(ref.data[i]) - lo) * inv_range);
        double p = (static_cast<double>(pred.data[i]) - lo) * inv_range;
        pred_n.data[i] = static_cast<float>(std::clamp(p, 0.0, 1.0));
    }

    RegionMask brain = brain_mask(ref);
    RegionMask tumor(brain.size(), 0), healthy(brain.size(), 0);
    bool any_tumor = false;
    for (std::size_t i = 0; i < brain.size(); ++i) {
        const bool t = seg && seg->labels[i] > 0 && brain[i];
        tumor[i] = t ? 1 : 0;
        healthy[i] = (brain[i] && !t) ? 1 : 0;
        any_tumor = any_tumor || t;
    }

    MetricRow row;
    row.case_id = case_id;
    row.ssim_h = masked_ssim(pred_n, ref_n, healthy);
    row.psnr_h = masked_psnr(pred_n, ref_n, healthy);
    if (any_tumor) {
        row.ssim_t = masked_ssim(pred_n, ref_n, tumor);
        row.psnr_t = masked_psnr(pred_n, ref_n, tumor);
    }
    return row;
}

// ---- table output ----

namespace metric_detail {

inline std::string format_metric(const std::optional<double>& v) {
    if (!v) return "na";
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << *v;
    return os.str();
}

}  // namespace metric_detail

// Column-wise mean over the rows; absent values are skipped, infinities
// propagate.
inline MetricRow mean_metric_row(const std::vector<MetricRow>& rows) {
    MetricRow mean;
    mean.case_id = "mean";
    auto fold = [&](auto member) {
        double acc = 0.0;
        std::int64_t n = 0;
        for (const auto& r : rows)
            if (r.*member) {
                acc += *(r.*member);
                ++n;
            }
        return n > 0 ? std::optional<double>(acc / static_cast<double>(n)) : std::nullopt;
    };
    mean.ssim_h = fold(&MetricRow::ssim_h);
    mean.ssim_t = fold(&MetricRow::ssim_t);
    mean.psnr_h = fold(&MetricRow::psnr_h);
    mean.psnr_t = fold(&MetricRow::psnr_t);
    return mean;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows,
                              bool append_mean = true) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics table " + path.string());
    out << "case_id,ssim_h,ssim_t,psnr_h,psnr_t\n";
    auto emit = [&](const MetricRow& r) {
        out << r.case_id << "," << metric_detail::format_metric(r.ssim_h) << ","
            << metric_detail::format_metric(r.ssim_t) << "," << metric_detail::format_metric(r.psnr_h) << ","
            << metric_detail::format_metric(r.psnr_t) << "\n";
    };
    for (const auto& r : rows) emit(r);
    if (append_mean && !rows.empty()) emit(mean_metric_row(rows));
    if (!out) throw IoError("short write on metrics table " + path.string());
}

}  // namespace seqsynth
