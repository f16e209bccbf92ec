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
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqsynth/errors.hpp"
#include "seqsynth/volume.hpp"

namespace seqsynth {

// Default percentile grid for landmark fitting: {1, 10, 20, ..., 90, 99}.
inline std::vector<double> default_percentiles() {
    std::vector<double> p{1.0};
    for (int k = 10; k <= 90; k += 10) p.push_back(static_cast<double>(k));
    p.push_back(99.0);
    return p;
}

// Linear-interpolation percentile of already-sorted values: rank p/100*(n-1).
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw EmptyRegionError("percentile of an empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double t = rank - static_cast<double>(lo);
    return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

// Foreground (value > 0) percentiles of one volume.
inline std::vector<double> foreground_percentiles(const Volume& v, const std::vector<double>& percentiles) {
    std::vector<double> fg;
    fg.reserve(v.data.size() / 2);
    for (float x : v.data)
        if (x > 0.0f) fg.push_back(static_cast<double>(x));
    if (fg.size() < 2) throw DegenerateInputError("volume has fewer than 2 foreground voxels");
    std::sort(fg.begin(), fg.end());
    if (fg.front() == fg.back()) throw DegenerateInputError("foreground intensities are constant");
    std::vector<double> q;
    q.reserve(percentiles.size());
    for (double p : percentiles) q.push_back(percentile_sorted(fg, p));
    return q;
}

// Piecewise-linear intensity standardization: percentile knots of each volume
// are mapped onto a fixed landmark scale learned from a training cohort.
struct StandardScale {
    std::vector<double> percentiles;  // probe points, strictly increasing in (0, 100)
    std::vector<double> landmarks;    // target positions, strictly increasing, spanning [0, 100]

    void validate() const {
        if (percentiles.size() != landmarks.size() || percentiles.size() < 2)
            throw ArgumentError("standard scale needs >= 2 matching percentile/landmark pairs");
        for (std::size_t i = 1; i < percentiles.size(); ++i) {
            if (percentiles[i] <= percentiles[i - 1]) throw ArgumentError("percentiles must be strictly increasing");
            if (landmarks[i] <= landmarks[i - 1]) throw ArgumentError("landmarks must be strictly increasing");
        }
        if (percentiles.front() <= 0.0 || percentiles.back() >= 100.0)
            throw ArgumentError("percentiles must lie strictly inside (0, 100)");
    }
};

// Fits one landmark scale from per-volume foreground percentiles: the mean
// percentile vector, affinely remapped so the landmarks span [0, 100].
inline StandardScale fit_landmarks(const std::vector<const Volume*>& volumes,
                                   const std::vector<double>& percentiles = default_percentiles()) {
    if (volumes.empty()) throw ArgumentError("fit_landmarks needs at least one volume");
    std::vector<double> mean(percentiles.size(), 0.0);
    for (const Volume* v : volumes) {
        auto q = foreground_percentiles(*v, percentiles);
        for (std::size_t i = 0; i < q.size(); ++i) mean[i] += q[i];
    }
    for (double& m : mean) m /= static_cast<double>(volumes.size());
    const double span = mean.back() - mean.front();
    if (!(span > 0.0)) throw DegenerateInputError("mean percentile span is not positive");
    StandardScale s;
    s.percentiles = percentiles;
    s.landmarks.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) s.landmarks[i] = (mean[i] - mean.front()) / span * 100.0;
    // Monotonicity can collapse only through floating-point ties; separate
    // them minimally.
    for (std::size_t i = 1; i < s.landmarks.size(); ++i)
        if (s.landmarks[i] <= s.landmarks[i - 1]) s.landmarks[i] = s.landmarks[i - 1] + 1e-9;
    s.validate();
    return s;
}

// Maps a volume onto the landmark scale: its own foreground percentiles become
// the source knots, linear between knots and linearly extrapolated outside,
// then clamped to [0, 1.5 * last landmark].
inline Volume standardize(const Volume& v, const StandardScale& scale) {
    scale.validate();
    std::vector<double> knots = foreground_percentiles(v, scale.percentiles);
    for (std::size_t i = 1; i < knots.size(); ++i)
        if (knots[i] <= knots[i - 1]) knots[i] = knots[i - 1] + 1e-9;
    const std::size_t m = knots.size();
    const double hi_clamp = 1.5 * scale.landmarks.back();

    Volume out = v;
    for (float& fx : out.data) {
        const double x = static_cast<double>(fx);
        std::size_t seg;
        if (x <= knots.front())
            seg = 0;
        else if (x >= knots.back())
            seg = m - 2;
        else
            seg = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
        const double t = (x - knots[seg]) / (knots[seg + 1] - knots[seg]);
        double y = scale.landmarks[seg] + t * (scale.landmarks[seg + 1] - scale.landmarks[seg]);
        y = std::clamp(y, 0.0, hi_clamp);
        fx = static_cast<float>(y);
    }
    return out;
}

// Joint affine rescale to [0, 1]. Fit over one or several volumes; inversion
// clamps at zero since intensities cannot be negative.
struct MinMaxScale {
    double lo = 0.0;
    double hi = 1.0;

    void validate() const {
        if (!(hi > lo)) throw DegenerateInputError("min-max scale has an empty intensity range");
    }
};

inline MinMaxScale fit_minmax(const std::vector<const Volume*>& volumes) {
    if (volumes.empty()) throw ArgumentError("fit_minmax needs at least one volume");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Volume* v : volumes)
        for (float x : v->data) {
            lo = std::min(lo, static_cast<double>(x));
            hi = std::max(hi, static_cast<double>(x));
        }
    MinMaxScale s{lo, hi};
    s.validate();
    return s;
}

inline Volume minmax_apply(const Volume& v, const MinMaxScale& s) {
    s.validate();
    Volume out = v;
    const double inv_range = 1.0 / (s.hi - s.lo);
    for (float& x : out.data) x = static_cast<float>((static_cast<double>(x) - s.lo) * inv_range);
    return out;
}

inline Volume minmax_invert(const Volume& v, const MinMaxScale& s) {
    s.validate();
    Volume out = v;
    for (float& x : out.data) {
        double y = static_cast<double>(x) * (s.hi - s.lo) + s.lo;
        x = static_cast<float>(std::max(y, 0.0));
    }
    return out;
}

// ---- landmark file I/O (one scale per sequence) ----

using LandmarkMap = std::map<Sequence, StandardScale>;

inline void save_landmarks(const std::filesystem::path& path, const LandmarkMap& map) {
    nlohmann::json j;
    for (const auto& [seq, scale] : map) {
        nlohmann::json entry;
        entry["sequence"] = sequence_name(seq);
        entry["percentiles"] = scale.percentiles;
        entry["landmarks"] = scale.landmarks;
        j.push_back(entry);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write landmarks file " + path.string());
    out << j.dump(2) << "\n";
}

inline LandmarkMap load_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open landmarks file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("landmarks file " + path.string() + ": " + e.what());
    }
    LandmarkMap map;
    try {
        for (const auto& entry : j) {
            StandardScale s;
            s.percentiles = entry.at("percentiles").get<std::vector<double>>();
            s.landmarks = entry.at("landmarks").get<std::vector<double>>();
            s.validate();
            map[sequence_from_string(entry.at("sequence").get<std::string>())] = std::move(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("landmarks file " + path.string() + ": " + e.what());
    }
    if (map.empty()) throw FormatError("landmarks file " + path.string() + " holds no scales");
    return map;
}

}  // namespace seqsynth
