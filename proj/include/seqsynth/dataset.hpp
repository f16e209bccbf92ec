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
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqsynth/errors.hpp"
#include "seqsynth/preprocess.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"
#include "seqsynth/volume.hpp"

// 2.5-d training samples: for each of the three available sequences the slice
// below, at, and above the sampled position (9 input channels), the matching
// target slice, and a binary tumor mask. Slices past the volume edge are
// zero; channel groups follow the alphabetical sequence order.

namespace seqsynth {

struct Stack25D {
    Tensor input;       // (9, rows, cols)
    Tensor target;      // (1, rows, cols), empty at inference
    Tensor tumor_mask;  // (1, rows, cols) binary, empty at inference
    Plane plane = Plane::axial;
    std::int64_t slice_index = 0;
};

// A case after the full normalization chain, ready for slicing. `inputs`
// holds the three non-target sequences in canonical order.
struct NormalizedCase {
    std::string case_id;
    Sequence target_sequence = Sequence::t1c;
    std::array<Sequence, 3> input_names{};
    std::array<Volume, 3> inputs;
    Volume target;                    // empty when the case lacks the target
    std::optional<LabelVolume> seg;
    MinMaxScale input_scale;          // joint over the three inputs
    MinMaxScale target_scale;
};

// Standardizes every available sequence with its landmark scale, then min-max
// scales the three inputs jointly and the target (when present) on its own.
inline NormalizedCase normalize_case(const SequenceSet& raw, Sequence target, const LandmarkMap& landmarks) {
    NormalizedCase out;
    out.case_id = raw.case_id;
    out.target_sequence = target;
    out.input_names = input_sequences_for(target);

    std::array<Volume, 3> standardized;
    for (int i = 0; i < 3; ++i) {
        const Sequence s = out.input_names[i];
        auto it = landmarks.find(s);
        if (it == landmarks.end())
            throw MissingInputError("no landmark scale for sequence " + std::string(sequence_name(s)));
        standardized[i] = standardize(raw.get(s), it->second);
    }
    out.input_scale = fit_minmax({&standardized[0], &standardized[1], &standardized[2]});
    for (int i = 0; i < 3; ++i) out.inputs[i] = minmax_apply(standardized[i], out.input_scale);

    if (raw.has(target)) {
        auto it = landmarks.find(target);
        if (it == landmarks.end())
            throw MissingInputError("no landmark scale for sequence " + std::string(sequence_name(target)));
        Volume st = standardize(raw.get(target), it->second);
        out.target_scale = fit_minmax({&st});
        out.target = minmax_apply(st, out.target_scale);
    }
    out.seg = raw.seg;
    return out;
}

// 9-channel input stack at (plane, z) from three volumes on a shared grid.
inline Tensor make_input_stack(const std::array<const Volume*, 3>& vols, Plane plane, std::int64_t z) {
    const Volume& ref = *vols[0];
    for (const Volume* v : vols)
        if (v->shape != ref.shape) throw ConsistencyError("input volumes disagree in shape");
    const std::int64_t depth = plane_extent(ref.shape, plane);
    if (z < 0 || z >= depth) throw ArgumentError("slice index out of range");
    auto [rows, cols] = slice_dims(ref.shape, plane);
    Tensor input({9, rows, cols});
    for (int s = 0; s < 3; ++s)
        for (int dz = -1; dz <= 1; ++dz) {
            const std::int64_t zz = z + dz;
            const std::int64_t ch = 3 * s + (dz + 1);
            if (zz < 0 || zz >= depth) continue;  // edge neighbours stay zero
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c)
                    input.at3(ch, r, c) = slice_sample(*vols[s], plane, zz, r, c);
        }
    return input;
}

inline Stack25D extract_stack(const NormalizedCase& nc, Plane plane, std::int64_t z) {
    if (nc.target.numel() == 0) throw MissingInputError("case " + nc.case_id + " has no target volume");
    if (!nc.seg) throw MissingInputError("case " + nc.case_id + " has no segmentation");
    Stack25D s;
    s.plane = plane;
    s.slice_index = z;
    s.input = make_input_stack({&nc.inputs[0], &nc.inputs[1], &nc.inputs[2]}, plane, z);
    auto [rows, cols] = slice_dims(nc.target.shape, plane);
    s.target = Tensor({1, rows, cols});
    s.tumor_mask = Tensor({1, rows, cols});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) {
            s.target.at3(0, r, c) = slice_sample(nc.target, plane, z, r, c);
            std::uint16_t lab;
            switch (plane) {
                case Plane::sagittal: lab = nc.seg->at(z, r, c); break;
                case Plane::coronal: lab = nc.seg->at(r, z, c); break;
                default: lab = nc.seg->at(r, c, z); break;
            }
            s.tumor_mask.at3(0, r, c) = (lab > 0) ? 1.0 : 0.0;
        }
    return s;
}

// Trainable slice positions: every index along each requested plane whose
// target slice is not entirely zero.
struct SliceRef {
    Plane plane;
    std::int64_t index;
};

inline std::vector<SliceRef> enumerate_slices(const Volume& target, const std::vector<Plane>& planes) {
    if (planes.empty()) throw ArgumentError("enumerate_slices needs at least one plane");
    std::vector<SliceRef> out;
    for (Plane p : planes) {
        const std::int64_t depth = plane_extent(target.shape, p);
        auto [rows, cols] = slice_dims(target.shape, p);
        for (std::int64_t z = 0; z < depth; ++z) {
            bool nonzero = false;
            for (std::int64_t r = 0; r < rows && !nonzero; ++r)
                for (std::int64_t c = 0; c < cols; ++c)
                    if (slice_sample(target, p, z, r, c) != 0.0f) {
                        nonzero = true;
                        break;
                    }
            if (nonzero) out.push_back({p, z});
        }
    }
    return out;
}

// ---- augmentation ----

struct AugmentConfig {
    std::array<std::int64_t, 2> pad_to{288, 288};
    std::array<std::int64_t, 2> crop_to{256, 256};
    double hflip_p = 0.5;
    double rot_p = 0.5;
    double rot_range_deg = 15.0;

    void validate() const {
        if (crop_to[0] > pad_to[0] || crop_to[1] > pad_to[1])
            throw ArgumentError("crop size exceeds padded size");
        if (crop_to[0] <= 0 || crop_to[1] <= 0) throw ArgumentError("crop size must be positive");
        if (hflip_p < 0.0 || hflip_p > 1.0 || rot_p < 0.0 || rot_p > 1.0)
            throw ArgumentError("augmentation probabilities must lie in [0, 1]");
        if (rot_range_deg < 0.0) throw ArgumentError("rotation range must be non-negative");
    }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = nlohmann::json{{"pad_to", c.pad_to},
                       {"crop_to", c.crop_to},
                       {"hflip_p", c.hflip_p},
                       {"rot_p", c.rot_p},
                       {"rot_range_deg", c.rot_range_deg}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
    if (j.contains("pad_to")) c.pad_to = j.at("pad_to").get<std::array<std::int64_t, 2>>();
    if (j.contains("crop_to")) c.crop_to = j.at("crop_to").get<std::array<std::int64_t, 2>>();
    c.hflip_p = j.value("hflip_p", c.hflip_p);
    c.rot_p = j.value("rot_p", c.rot_p);
    c.rot_range_deg = j.value("rot_range_deg", c.rot_range_deg);
}

// One shared geometric transform, drawn once and applied to every channel.
struct AugmentParams {
    std::int64_t crop_r = 0;  // crop origin inside the padded frame
    std::int64_t crop_c = 0;
    bool hflip = false;
    double rot_deg = 0.0;
};

inline AugmentParams draw_augment_params(const AugmentConfig& cfg, Rng& rng,
                                         const std::array<std::int64_t, 2>& /*input_hw*/) {
    AugmentParams p;
    p.crop_r = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.pad_to[0] - cfg.crop_to[0] + 1)));
    p.crop_c = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.pad_to[1] - cfg.crop_to[1] + 1)));
    p.hflip = rng.bernoulli(cfg.hflip_p);
    if (rng.bernoulli(cfg.rot_p)) p.rot_deg = rng.range(-cfg.rot_range_deg, cfg.rot_range_deg);
    return p;
}

namespace aug_detail {

// Centered zero-pad of (C, h, w) to (C, H, W).
inline Tensor pad_center(const Tensor& x, std::int64_t H, std::int64_t W) {
    const std::int64_t C = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t r0 = (H - h) / 2, c0 = (W - w) / 2;
    Tensor out({C, H, W});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q) out.at3(c, r0 + r, c0 + q) = x.at3(c, r, q);
    return out;
}

inline Tensor crop(const Tensor& x, std::int64_t r0, std::int64_t c0, std::int64_t H, std::int64_t W) {
    const std::int64_t C = x.dim(0);
    Tensor out({C, H, W});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t r = 0; r < H; ++r)
            for (std::int64_t q = 0; q < W; ++q) out.at3(c, r, q) = x.at3(c, r0 + r, c0 + q);
    return out;
}

inline void hflip_inplace(Tensor& x) {
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t r = 0; r < H; ++r)
            for (std::int64_t q = 0; q < W / 2; ++q) std::swap(x.at3(c, r, q), x.at3(c, r, W - 1 - q));
}

// Rotation about the image center, inverse-mapped. Bilinear for images,
// nearest for masks; out-of-frame samples are zero.
inline Tensor rotate(const Tensor& x, double deg, bool nearest) {
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cr = (static_cast<double>(H) - 1.0) / 2.0;
    const double cc = (static_cast<double>(W) - 1.0) / 2.0;
    Tensor out({C, H, W});
    for (std::int64_t r = 0; r < H; ++r)
        for (std::int64_t q = 0; q < W; ++q) {
            const double dr = static_cast<double>(r) - cr;
            const double dq = static_cast<double>(q) - cc;
            const double sr = cs * dr + sn * dq + cr;
            const double sc = -sn * dr + cs * dq + cc;
            if (nearest) {
                const auto rr = static_cast<std::int64_t>(std::lround(sr));
                const auto qq = static_cast<std::int64_t>(std::lround(sc));
                if (rr < 0 || rr >= H || qq < 0 || qq >= W) continue;
                for (std::int64_t c = 0; c < C; ++c) out.at3(c, r, q) = x.at3(c, rr, qq);
            } else {
                const double fr = std::floor(sr), fc = std::floor(sc);
                const auto r0 = static_cast<std::int64_t>(fr);
                const auto c0 = static_cast<std::int64_t>(fc);
                const double tr = sr - fr, tc = sc - fc;
                auto sample = [&](std::int64_t rr, std::int64_t qq, std::int64_t ch) -> double {
                    if (rr < 0 || rr >= H || qq < 0 || qq >= W) return 0.0;
                    return x.at3(ch, rr, qq);
                };
                for (std::int64_t c = 0; c < C; ++c) {
                    const double top = sample(r0, c0, c) + tc * (sample(r0, c0 + 1, c) - sample(r0, c0, c));
                    const double bot = sample(r0 + 1, c0, c) + tc * (sample(r0 + 1, c0 + 1, c) - sample(r0 + 1, c0, c));
                    out.at3(c, r, q) = top + tr * (bot - top);
                }
            }
        }
    return out;
}

inline Tensor transform_one(const Tensor& x, const AugmentConfig& cfg, const AugmentParams& p, bool nearest,
                            bool clamp01) {
    Tensor t = pad_center(x, cfg.pad_to[0], cfg.pad_to[1]);
    t = crop(t, p.crop_r, p.crop_c, cfg.crop_to[0], cfg.crop_to[1]);
    if (p.hflip) hflip_inplace(t);
    if (p.rot_deg != 0.0) t = rotate(t, p.rot_deg, nearest);
    if (clamp01)
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], 0.0, 1.0);
    return t;
}

}  // namespace aug_detail

inline Stack25D augment_with_params(const Stack25D& s, const AugmentConfig& cfg, const AugmentParams& p) {
    cfg.validate();
    if (s.input.dim(1) > cfg.pad_to[0] || s.input.dim(2) > cfg.pad_to[1])
        throw ShapeError("slice larger than the padded frame");
    Stack25D out;
    out.plane = s.plane;
    out.slice_index = s.slice_index;
    out.input = aug_detail::transform_one(s.input, cfg, p, false, true);
    if (s.target.numel() > 0) out.target = aug_detail::transform_one(s.target, cfg, p, false, true);
    if (s.tumor_mask.numel() > 0) out.tumor_mask = aug_detail::transform_one(s.tumor_mask, cfg, p, true, false);
    return out;
}

inline Stack25D augment(const Stack25D& s, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const AugmentParams p = draw_augment_params(cfg, rng, {s.input.dim(1), s.input.dim(2)});
    return augment_with_params(s, cfg, p);
}

// ---- epoch sampling ----

// Fixed-size epoch of sample indices drawn with replacement; fully determined
// by (seed, epoch).
inline std::vector<std::size_t> epoch_sample_indices(std::size_t n_samples, std::size_t epoch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
    if (n_samples == 0) throw EmptyRegionError("cannot sample from an empty slice pool");
    Rng rng = Rng::derive(seed, {0x5a535031ULL, epoch});
    std::vector<std::size_t> out(epoch_size);
    for (auto& i : out) i = static_cast<std::size_t>(rng.below(n_samples));
    return out;
}

}  // namespace seqsynth
