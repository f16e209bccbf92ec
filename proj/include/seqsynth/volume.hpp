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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqsynth/errors.hpp"
#include "seqsynth/tensor.hpp"

namespace seqsynth {

// Canonical in-memory axis order is (sagittal, coronal, axial); file axes are
// taken as-is in that order. Voxel (i,j,k) lives at i + D1*(j + D2*k), the
// same fastest-first layout the files use.
enum class Plane : int { sagittal = 0, coronal = 1, axial = 2 };

inline const char* plane_name(Plane p) {
    switch (p) {
        case Plane::sagittal: return "sagittal";
        case Plane::coronal: return "coronal";
        case Plane::axial: return "axial";
    }
    return "?";
}

inline Plane plane_from_string(const std::string& s) {
    if (s == "sagittal") return Plane::sagittal;
    if (s == "coronal") return Plane::coronal;
    if (s == "axial") return Plane::axial;
    throw ArgumentError("unknown plane '" + s + "'");
}

struct Volume {
    std::array<std::int64_t, 3> shape{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string orientation_tag = "SCA";
    std::vector<float> data;

    Volume() = default;
    Volume(std::array<std::int64_t, 3> sh, float fill_value = 0.0f)
        : shape(sh), data(static_cast<std::size_t>(sh[0] * sh[1] * sh[2]), fill_value) {
        for (auto d : shape)
            if (d <= 0) throw ShapeError("volume dims must be positive");
    }

    std::int64_t numel() const { return shape[0] * shape[1] * shape[2]; }

    float& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[static_cast<std::size_t>(i + shape[0] * (j + shape[1] * k))];
    }
    float at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>(i + shape[0] * (j + shape[1] * k))];
    }

    bool same_grid(const Volume& o) const {
        if (shape != o.shape) return false;
        for (int a = 0; a < 3; ++a)
            if (std::fabs(spacing[a] - o.spacing[a]) > 1e-5) return false;
        return true;
    }
};

struct LabelVolume {
    std::array<std::int64_t, 3> shape{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::uint16_t> labels;

    LabelVolume() = default;
    explicit LabelVolume(std::array<std::int64_t, 3> sh)
        : shape(sh), labels(static_cast<std::size_t>(sh[0] * sh[1] * sh[2]), 0) {}

    std::int64_t numel() const { return shape[0] * shape[1] * shape[2]; }

    std::uint16_t& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return labels[static_cast<std::size_t>(i + shape[0] * (j + shape[1] * k))];
    }
    std::uint16_t at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return labels[static_cast<std::size_t>(i + shape[0] * (j + shape[1] * k))];
    }
};

// The four sequence identifiers, kept in alphabetical order; channel order
// everywhere derives from this enum order.
enum class Sequence : int { t1c = 0, t1n = 1, t2f = 2, t2w = 3 };

inline constexpr std::array<Sequence, 4> kAllSequences{Sequence::t1c, Sequence::t1n, Sequence::t2f, Sequence::t2w};

inline const char* sequence_name(Sequence s) {
    switch (s) {
        case Sequence::t1c: return "t1c";
        case Sequence::t1n: return "t1n";
        case Sequence::t2f: return "t2f";
        case Sequence::t2w: return "t2w";
    }
    return "?";
}

inline Sequence sequence_from_string(const std::string& s) {
    for (Sequence q : kAllSequences)
        if (s == sequence_name(q)) return q;
    throw ArgumentError("unknown sequence '" + s + "' (expected t1c|t1n|t2f|t2w)");
}

// Input channel groups for a given target: the remaining three sequences in
// enum (alphabetical) order.
inline std::array<Sequence, 3> input_sequences_for(Sequence target) {
    std::array<Sequence, 3> out{};
    std::size_t n = 0;
    for (Sequence q : kAllSequences)
        if (q != target) out[n++] = q;
    return out;
}

struct SequenceSet {
    std::string case_id;
    std::map<Sequence, Volume> sequences;
    std::optional<LabelVolume> seg;

    const Volume& get(Sequence s) const {
        auto it = sequences.find(s);
        if (it == sequences.end())
            throw MissingInputError("case " + case_id + " lacks sequence " + sequence_name(s));
        return it->second;
    }
    bool has(Sequence s) const { return sequences.count(s) > 0; }
};

// 2-d slice geometry: fixing the plane axis leaves the remaining axes in
// ascending order as (rows, cols).
inline std::pair<std::int64_t, std::int64_t> slice_dims(const std::array<std::int64_t, 3>& shape, Plane p) {
    switch (p) {
        case Plane::sagittal: return {shape[1], shape[2]};
        case Plane::coronal: return {shape[0], shape[2]};
        case Plane::axial: return {shape[0], shape[1]};
    }
    return {0, 0};
}

inline std::int64_t plane_extent(const std::array<std::int64_t, 3>& shape, Plane p) {
    return shape[static_cast<int>(p)];
}

inline float slice_sample(const Volume& v, Plane p, std::int64_t z, std::int64_t r, std::int64_t c) {
    switch (p) {
        case Plane::sagittal: return v.at(z, r, c);
        case Plane::coronal: return v.at(r, z, c);
        case Plane::axial: return v.at(r, c, z);
    }
    return 0.0f;
}

inline void slice_store(Volume& v, Plane p, std::int64_t z, std::int64_t r, std::int64_t c, float val) {
    switch (p) {
        case Plane::sagittal: v.at(z, r, c) = val; break;
        case Plane::coronal: v.at(r, z, c) = val; break;
        case Plane::axial: v.at(r, c, z) = val; break;
    }
}

// Extracts one slice as a (rows, cols) tensor.
inline Tensor volume_slice(const Volume& v, Plane p, std::int64_t z) {
    if (z < 0 || z >= plane_extent(v.shape, p)) throw ArgumentError("slice index out of range");
    auto [rows, cols] = slice_dims(v.shape, p);
    Tensor t({rows, cols});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) t.at2(r, c) = slice_sample(v, p, z, r, c);
    return t;
}

}  // namespace seqsynth
