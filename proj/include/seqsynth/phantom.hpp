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

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "seqsynth/errors.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/volume.hpp"

// Synthetic multi-sequence head phantoms: a brain ellipsoid of concentric
// tissue shells, a tumor blob inside it, and four sequences derived from one
// shared tissue map by distinct monotone transforms. Small enough to train on
// at a desk, structured enough to exercise the full pipeline.

namespace seqsynth {

struct PhantomSpec {
    std::array<std::int64_t, 3> shape{32, 32, 32};
    std::uint64_t seed = 0;
    std::array<double, 2> tumor_radius_range{3.0, 5.0};
    int n_shells = 4;
    double noise_sigma = 1.0;

    void validate() const {
        for (auto d : shape)
            if (d < 16) throw ArgumentError("phantom shape must be at least 16 per axis");
        if (n_shells < 1) throw ArgumentError("phantom needs at least one shell");
        if (noise_sigma < 0.0) throw ArgumentError("noise sigma must be non-negative");
        if (tumor_radius_range[0] <= 0.0 || tumor_radius_range[1] < tumor_radius_range[0])
            throw ArgumentError("bad tumor radius range");
        const double min_half = 0.42 * static_cast<double>(*std::min_element(shape.begin(), shape.end()));
        if (tumor_radius_range[1] > 0.45 * min_half)
            throw ArgumentError("tumor radius too large for this phantom shape");
    }
};

namespace phantom_detail {

// Per-sequence monotone transforms of the shared tissue value u in (0, 1],
// plus a flat tumor intensity per sequence.
inline double sequence_intensity(Sequence s, double u) {
    switch (s) {
        case Sequence::t1c: return 25.0 + 55.0 * u;
        case Sequence::t1n: return 30.0 + 50.0 * u;
        case Sequence::t2f: return 15.0 + 65.0 * u * u;
        case Sequence::t2w: return 85.0 - 55.0 * u;
    }
    return 0.0;
}

inline double tumor_intensity(Sequence s) {
    switch (s) {
        case Sequence::t1c: return 95.0;  // enhancing: bright
        case Sequence::t1n: return 18.0;  // hypo-intense
        case Sequence::t2f: return 88.0;
        case Sequence::t2w: return 92.0;
    }
    return 0.0;
}

}  // namespace phantom_detail

inline SequenceSet generate_phantom_case(const PhantomSpec& spec, const std::string& case_id) {
    spec.validate();
    Rng rng(spec.seed);
    const auto& sh = spec.shape;
    const std::array<double, 3> center{(static_cast<double>(sh[0]) - 1.0) / 2.0,
                                       (static_cast<double>(sh[1]) - 1.0) / 2.0,
                                       (static_cast<double>(sh[2]) - 1.0) / 2.0};
    const std::array<double, 3> semi{0.42 * static_cast<double>(sh[0]), 0.42 * static_cast<double>(sh[1]),
                                     0.42 * static_cast<double>(sh[2])};

    // Tumor blob: an axis-aligned ellipsoid with radii drawn from the
    // configured range, centered well inside the brain (rho < 0.5).
    std::array<double, 3> t_radius{};
    for (auto& r : t_radius) r = rng.range(spec.tumor_radius_range[0], spec.tumor_radius_range[1]);
    std::array<double, 3> t_center{};
    for (int a = 0; a < 3; ++a) t_center[a] = center[a] + rng.range(-0.35, 0.35) * semi[a];

    SequenceSet set;
    set.case_id = case_id;
    for (Sequence s : kAllSequences) set.sequences.emplace(s, Volume(sh));
    LabelVolume seg(sh);
    seg.spacing = {1.0, 1.0, 1.0};

    for (std::int64_t k = 0; k < sh[2]; ++k)
        for (std::int64_t j = 0; j < sh[1]; ++j)
            for (std::int64_t i = 0; i < sh[0]; ++i) {
                const double di = (static_cast<double>(i) - center[0]) / semi[0];
                const double dj = (static_cast<double>(j) - center[1]) / semi[1];
                const double dk = (static_cast<double>(k) - center[2]) / semi[2];
                const double rho2 = di * di + dj * dj + dk * dk;
                if (rho2 > 1.0) continue;  // background stays exactly zero
                const double rho = std::sqrt(rho2);
                int shell = static_cast<int>(rho * static_cast<double>(spec.n_shells));
                shell = std::min(shell, spec.n_shells - 1);
                const double u = static_cast<double>(spec.n_shells - shell) / static_cast<double>(spec.n_shells + 1);

                const double ti = (static_cast<double>(i) - t_center[0]) / t_radius[0];
                const double tj = (static_cast<double>(j) - t_center[1]) / t_radius[1];
                const double tk = (static_cast<double>(k) - t_center[2]) / t_radius[2];
                const double trho2 = ti * ti + tj * tj + tk * tk;
                const bool in_tumor = trho2 <= 1.0;
                if (in_tumor) seg.at(i, j, k) = (trho2 <= 0.36) ? 1 : 2;  // core vs rim sub-labels

                for (Sequence s : kAllSequences) {
                    double v = in_tumor ? phantom_detail::tumor_intensity(s)
                                        : phantom_detail::sequence_intensity(s, u);
                    if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
                    set.sequences.at(s).at(i, j, k) = static_cast<float>(std::max(v, 1e-3));
                }
            }

    set.seg = std::move(seg);
    return set;
}

}  // namespace seqsynth
