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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqsynth/nifti.hpp"
#include "seqsynth/volume.hpp"

// Case directories follow the BraTS-style layout: one directory per case
// holding <case>-{t1c,t1n,t2f,t2w,seg}.nii.gz (plain .nii also accepted).

namespace seqsynth {

namespace fs = std::filesystem;

inline std::optional<fs::path> find_case_file(const fs::path& case_dir, const std::string& case_id,
                                              const std::string& suffix) {
    for (const char* ext : {".nii.gz", ".nii"}) {
        fs::path p = case_dir / (case_id + "-" + suffix + ext);
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

// Loads the sequences present in a case directory plus the segmentation if
// there is one. `required` lists sequences that must exist. Raw intensities
// must be non-negative; grids must agree across all files of the case.
inline SequenceSet load_case(const fs::path& case_dir, const std::vector<Sequence>& required) {
    if (!fs::is_directory(case_dir)) throw IoError("case directory not found: " + case_dir.string());
    SequenceSet set;
    set.case_id = case_dir.filename().string();
    for (Sequence s : kAllSequences) {
        auto p = find_case_file(case_dir, set.case_id, sequence_name(s));
        if (!p) continue;
        Volume v = load_volume(*p);
        for (float x : v.data)
            if (x < 0.0f) throw FormatError(p->string() + ": negative intensity in a raw MRI volume");
        set.sequences.emplace(s, std::move(v));
    }
    for (Sequence s : required)
        if (!set.has(s))
            throw MissingInputError("case " + set.case_id + " is missing required sequence " +
                                    sequence_name(s));
    if (auto p = find_case_file(case_dir, set.case_id, "seg")) set.seg = load_label_volume(*p);

    const Volume* first = nullptr;
    for (const auto& [s, v] : set.sequences) {
        if (!first) {
            first = &v;
            continue;
        }
        if (!first->same_grid(v))
            throw ConsistencyError("case " + set.case_id + ": sequence grids disagree");
    }
    if (set.seg && first) {
        if (set.seg->shape != first->shape)
            throw ConsistencyError("case " + set.case_id + ": segmentation grid disagrees with sequences");
    }
    return set;
}

inline void save_case(const fs::path& root, const SequenceSet& set) {
    const fs::path dir = root / set.case_id;
    fs::create_directories(dir);
    for (const auto& [s, v] : set.sequences)
        save_volume(dir / (set.case_id + "-" + std::string(sequence_name(s)) + ".nii.gz"), v);
    if (set.seg) save_label_volume(dir / (set.case_id + "-seg.nii.gz"), *set.seg);
}

// All case directories under a data root, sorted by case id for stable order.
inline std::vector<fs::path> list_case_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("data root not found: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return dirs;
}

// Deterministic train/dev split: sorted by case id, first floor(0.9 n) cases
// train, the rest dev.
inline std::pair<std::vector<fs::path>, std::vector<fs::path>> split_train_dev(std::vector<fs::path> dirs,
                                                                               double dev_fraction) {
    if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw ArgumentError("dev_fraction must be in [0, 1)");
    std::sort(dirs.begin(), dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    const auto n = static_cast<std::size_t>(dirs.size());
    const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * (1.0 - dev_fraction));
    std::vector<fs::path> train(dirs.begin(), dirs.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<fs::path> dev(dirs.begin() + static_cast<std::ptrdiff_t>(n_train), dirs.end());
    return {std::move(train), std::move(dev)};
}

}  // namespace seqsynth
