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

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "seqsynth/dataset.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/tensor.hpp"
#include "seqsynth/volume.hpp"

// Multi-axis inference: slice-wise prediction repeated under nine volume
// orientations (three slicing planes, each untilted and tilted +45 degrees
// about the two other principal axes), re-aligned and averaged per voxel.

namespace seqsynth {

// Maps a (9, rows, cols) input stack to a (1, rows, cols) prediction.
// Generator::predict adapts to this via generator_synth in networks.hpp
// users; tests plug in stubs.
using SliceSynth = std::function<Tensor(const Tensor&)>;

enum class FusionMode { three = 3, nine = 9 };

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "nine" || s == "9") return FusionMode::nine;
    if (s == "three" || s == "3") return FusionMode::three;
    throw ArgumentError("unknown fusion mode '" + s + "' (expected nine|three)");
}

inline const char* fusion_mode_name(FusionMode m) { return m == FusionMode::nine ? "nine" : "three"; }

// tilt_axis: -1 for the untilted pass, otherwise the principal axis the
// volume set is rotated +45 degrees about before slicing along base_plane.
struct Orientation {
    Plane base_plane;
    int tilt_axis;
};

inline std::vector<Orientation> fusion_orientations(FusionMode mode) {
    std::vector<Orientation> out;
    for (int p = 0; p < 3; ++p) {
        out.push_back({static_cast<Plane>(p), -1});
        if (mode == FusionMode::nine)
            for (int axis = 0; axis < 3; ++axis)
                if (axis != p) out.push_back({static_cast<Plane>(p), axis});
    }
    return out;
}

namespace fusion_detail {

inline std::int64_t round_up(std::int64_t n, std::int64_t multiple) {
    return ((n + multiple - 1) / multiple) * multiple;
}

// Canvas large enough that a rotation about `axis` never clips: the two
// in-plane extents grow to the rectangle diagonal, the axis extent is kept.
inline std::array<std::int64_t, 3> rotation_canvas(const std::array<std::int64_t, 3>& shape, int axis) {
    int u = -1, v = -1;
    for (int d = 0; d < 3; ++d)
        if (d != axis) (u < 0 ? u : v) = d;
    const double diag = std::hypot(static_cast<double>(shape[u]), static_cast<double>(shape[v]));
    auto out = shape;
    out[u] = out[v] = static_cast<std::int64_t>(std::ceil(diag));
    return out;
}

inline Volume embed_centered(const Volume& v, const std::array<std::int64_t, 3>& canvas) {
    std::array<std::int64_t, 3> off{};
    for (int d = 0; d < 3; ++d) {
        if (canvas[d] < v.shape[d]) throw ShapeError("embed_centered: canvas smaller than volume");
        off[d] = (canvas[d] - v.shape[d]) / 2;
    }
    Volume out;
    out.shape = canvas;
    out.spacing = v.spacing;
    out.orientation_tag = v.orientation_tag;
    out.data.assign(static_cast<std::size_t>(out.numel()), 0.0f);
    for (std::int64_t k = 0; k < v.shape[2]; ++k)
        for (std::int64_t j = 0; j < v.shape[1]; ++j)
            for (std::int64_t i = 0; i < v.shape[0]; ++i)
                out.at(i + off[0], j + off[1], k + off[2]) = v.at(i, j, k);
    return out;
}

inline Volume crop_centered(const Volume& v, const std::array<std::int64_t, 3>& target) {
    std::array<std::int64_t, 3> off{};
    for (int d = 0; d < 3; ++d) {
        if (target[d] > v.shape[d]) throw ShapeError("crop_centered: target larger than volume");
        off[d] = (v.shape[d] - target[d]) / 2;
    }
    Volume out;
    out.shape = target;
    out.spacing = v.spacing;
    out.orientation_tag = v.orientation_tag;
    out.data.assign(static_cast<std::size_t>(out.numel()), 0.0f);
    for (std::int64_t k = 0; k < target[2]; ++k)
        for (std::int64_t j = 0; j < target[1]; ++j)
            for (std::int64_t i = 0; i < target[0]; ++i)
                out.at(i, j, k) = v.at(i + off[0], j + off[1], k + off[2]);
    return out;
}

// Resamples `v` rotated by `degrees` about a principal axis, zero fill
// outside. The rotation-axis coordinate stays integral, so trilinear
// sampling reduces to an in-plane bilinear lerp; the lerp form a + t*(b-a)
// reproduces constant fields exactly.
inline Volume rotate_about_axis(const Volume& v, int axis, double degrees) {
    if (axis < 0 || axis > 2) throw ArgumentError("rotate_about_axis: axis out of range");
    int u = -1, w = -1;
    for (int d = 0; d < 3; ++d)
        if (d != axis) (u < 0 ? u : w) = d;
    const double th = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cu = static_cast<double>(v.shape[u] - 1) * 0.5;
    const double cw = static_cast<double>(v.shape[w] - 1) * 0.5;

    Volume out;
    out.shape = v.shape;
    out.spacing = v.spacing;
    out.orientation_tag = v.orientation_tag;
    out.data.assign(static_cast<std::size_t>(out.numel()), 0.0f);

    std::array<std::int64_t, 3> c{};
    auto sample = [&](std::int64_t iu, std::int64_t iw, std::array<std::int64_t, 3> at) -> double {
        if (iu < 0 || iu >= v.shape[u] || iw < 0 || iw >= v.shape[w]) return 0.0;
        at[u] = iu;
        at[w] = iw;
        return static_cast<double>(v.at(at[0], at[1], at[2]));
    };
    for (c[2] = 0; c[2] < v.shape[2]; ++c[2])
        for (c[1] = 0; c[1] < v.shape[1]; ++c[1])
            for (c[0] = 0; c[0] < v.shape[0]; ++c[0]) {
                const double du = static_cast<double>(c[u]) - cu;
                const double dw = static_cast<double>(c[w]) - cw;
                const double su = cs * du + sn * dw + cu;
                const double sw = -sn * du + cs * dw + cw;
                const double fu = std::floor(su), fw = std::floor(sw);
                const std::int64_t u0 = static_cast<std::int64_t>(fu);
                const std::int64_t w0 = static_cast<std::int64_t>(fw);
                const double tu = su - fu, tw = sw - fw;
                const double s00 = sample(u0, w0, c), s01 = sample(u0, w0 + 1, c);
                const double s10 = sample(u0 + 1, w0, c), s11 = sample(u0 + 1, w0 + 1, c);
                const double top = s00 + tw * (s01 - s00);
                const double bot = s10 + tw * (s11 - s10);
                out.at(c[0], c[1], c[2]) = static_cast<float>(top + tu * (bot - top));
            }
    return out;
}

inline Tensor pad_center_2d(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h < h || out_w < w) throw ShapeError("pad_center_2d: target smaller than input");
    Tensor out = Tensor::zeros({ch, out_h, out_w});
    const std::int64_t r0 = (out_h - h) / 2, c0 = (out_w - w) / 2;
    for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q) out.at3(c, r0 + r, c0 + q) = x.at3(c, r, q);
    return out;
}

}  // namespace fusion_detail

// Slice-wise prediction along one plane. Each slice stack is zero-padded
// (centered) so its sides are multiples of `size_multiple`, predicted, and
// cropped back; the output volume has the input grid.
inline Volume predict_volume(const SliceSynth& synth, const std::array<const Volume*, 3>& inputs, Plane plane,
                             std::int64_t size_multiple) {
    if (size_multiple < 1) throw ArgumentError("predict_volume: size_multiple must be >= 1");
    for (const Volume* v : inputs)
        if (!v) throw MissingInputError("predict_volume: null input volume");
    for (int i = 1; i < 3; ++i)
        if (inputs[i]->shape != inputs[0]->shape) throw ConsistencyError("predict_volume: input grids differ");

    const Volume& ref = *inputs[0];
    Volume out;
    out.shape = ref.shape;
    out.spacing = ref.spacing;
    out.orientation_tag = ref.orientation_tag;
    out.data.assign(static_cast<std::size_t>(out.numel()), 0.0f);

    const auto [rows, cols] = slice_dims(ref.shape, plane);
    const std::int64_t pr = fusion_detail::round_up(rows, size_multiple);
    const std::int64_t pc = fusion_detail::round_up(cols, size_multiple);
    const std::int64_t r0 = (pr - rows) / 2, c0 = (pc - cols) / 2;

    for (std::int64_t z = 0; z < plane_extent(ref.shape, plane); ++z) {
        Tensor stack = make_input_stack(inputs, plane, z);
        if (pr != rows || pc != cols) stack = fusion_detail::pad_center_2d(stack, pr, pc);
        Tensor pred = synth(stack);
        if (pred.rank() != 3 || pred.dim(0) != 1 || pred.dim(1) != pr || pred.dim(2) != pc)
            throw ShapeError("predict_volume: synthesis returned " + Tensor::shape_str(pred.shape()) +
                             ", expected (1, " + std::to_string(pr) + ", " + std::to_string(pc) + ")");
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c)
                slice_store(out, plane, z, r, c, static_cast<float>(pred.at3(0, r0 + r, c0 + c)));
    }
    return out;
}

struct FusedVolume {
    Volume value;  // per-voxel mean over contributing orientations (0 where none)
    Volume count;  // number of contributing orientations per voxel
};

// Runs predict_volume under each orientation. Tilted passes embed the input
// set in an enlarged canvas (padded to the in-plane diagonal), rotate +45
// about the tilt axis, predict, rotate back -45, and crop; a voxel
// contributes only where a ones-volume survives the same round trip above
// 0.999 (full interpolation support). Accumulation order is fixed, sums are
// double precision.
inline FusedVolume fuse(const SliceSynth& synth, const std::array<const Volume*, 3>& inputs, FusionMode mode,
                        std::int64_t size_multiple) {
    for (const Volume* v : inputs)
        if (!v) throw MissingInputError("fuse: null input volume");
    for (int i = 1; i < 3; ++i)
        if (inputs[i]->shape != inputs[0]->shape) throw ConsistencyError("fuse: input grids differ");
    const Volume& ref = *inputs[0];
    const auto n = static_cast<std::size_t>(ref.numel());

    std::vector<double> sum(n, 0.0);
    std::vector<double> cnt(n, 0.0);

    for (const Orientation& o : fusion_orientations(mode)) {
        if (o.tilt_axis < 0) {
            Volume pred = predict_volume(synth, inputs, o.base_plane, size_multiple);
            for (std::size_t i = 0; i < n; ++i) {
                sum[i] += static_cast<double>(pred.data[i]);
                cnt[i] += 1.0;
            }
            continue;
        }

        const auto canvas = fusion_detail::rotation_canvas(ref.shape, o.tilt_axis);
        std::array<Volume, 3> rotated;
        for (int i = 0; i < 3; ++i)
            rotated[static_cast<std::size_t>(i)] = fusion_detail::rotate_about_axis(
                fusion_detail::embed_centered(*inputs[static_cast<std::size_t>(i)], canvas), o.tilt_axis, 45.0);
        const std::array<const Volume*, 3> rptr{&rotated[0], &rotated[1], &rotated[2]};
        Volume pred = predict_volume(synth, rptr, o.base_plane, size_multiple);
        Volume aligned = fusion_detail::crop_centered(
            fusion_detail::rotate_about_axis(pred, o.tilt_axis, -45.0), ref.shape);

        Volume ones;
        ones.shape = ref.shape;
        ones.spacing = ref.spacing;
        ones.data.assign(n, 1.0f);
        Volume support = fusion_detail::crop_centered(
            fusion_detail::rotate_about_axis(
                fusion_detail::rotate_about_axis(fusion_detail::embed_centered(ones, canvas), o.tilt_axis, 45.0),
                o.tilt_axis, -45.0),
            ref.shape);

        for (std::size_t i = 0; i < n; ++i)
            if (support.data[i] >= 0.999f) {
                sum[i] += static_cast<double>(aligned.data[i]);
                cnt[i] += 1.0;
            }
    }

    FusedVolume out;
    out.value.shape = ref.shape;
    out.value.spacing = ref.spacing;
    out.value.orientation_tag = ref.orientation_tag;
    out.value.data.assign(n, 0.0f);
    out.count = out.value;
    for (std::size_t i = 0; i < n; ++i) {
        out.count.data[i] = static_cast<float>(cnt[i]);
        if (cnt[i] > 0.0) out.value.data[i] = static_cast<float>(sum[i] / cnt[i]);
    }
    return out;
}

}  // namespace seqsynth
