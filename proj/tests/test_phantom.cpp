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

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "seqsynth/phantom.hpp"

using seqsynth::PhantomSpec;
using seqsynth::Sequence;
using seqsynth::SequenceSet;

TEST_CASE("phantom generation is deterministic in the seed") {
    PhantomSpec spec;
    spec.seed = 11;
    const SequenceSet a = seqsynth::generate_phantom_case(spec, "c");
    const SequenceSet b = seqsynth::generate_phantom_case(spec, "c");
    REQUIRE(a.get(Sequence::t1c).data == b.get(Sequence::t1c).data);
    REQUIRE(a.get(Sequence::t2w).data == b.get(Sequence::t2w).data);
    REQUIRE(a.seg->labels == b.seg->labels);

    spec.seed = 12;
    const SequenceSet c = seqsynth::generate_phantom_case(spec, "c");
    REQUIRE(a.get(Sequence::t1c).data != c.get(Sequence::t1c).data);
}

TEST_CASE("phantom cases carry four aligned sequences and a segmentation") {
    PhantomSpec spec;
    spec.seed = 5;
    const SequenceSet set = seqsynth::generate_phantom_case(spec, "case_0001");
    REQUIRE(set.case_id == "case_0001");
    REQUIRE(set.sequences.size() == 4);
    REQUIRE(set.seg.has_value());
    const auto& ref = set.get(Sequence::t1c);
    for (Sequence s : seqsynth::kAllSequences) {
        REQUIRE(set.get(s).shape == spec.shape);
        REQUIRE(set.get(s).same_grid(ref));
    }
    REQUIRE(set.seg->shape == spec.shape);

    SECTION("background is exactly zero, brain is positive") {
        for (Sequence s : seqsynth::kAllSequences) {
            const auto& v = set.get(s);
            REQUIRE(v.at(0, 0, 0) == 0.0f);
            REQUIRE(v.at(31, 31, 31) == 0.0f);
            REQUIRE(v.at(16, 16, 16) > 0.0f);
        }
        REQUIRE(set.seg->at(0, 0, 0) == 0);
    }
    SECTION("labels are background, core, or rim, and a tumor exists") {
        std::set<std::uint16_t> seen(set.seg->labels.begin(), set.seg->labels.end());
        for (auto l : seen) REQUIRE(l <= 2);
        REQUIRE(seen.count(1) == 1);
        REQUIRE(seen.count(2) == 1);
    }
}

TEST_CASE("noise-free single-shell phantoms are piecewise constant") {
    PhantomSpec spec;
    spec.seed = 2;
    spec.n_shells = 1;
    spec.noise_sigma = 0.0;
    const SequenceSet set = seqsynth::generate_phantom_case(spec, "c");
    for (Sequence s : seqsynth::kAllSequences) {
        std::set<float> distinct(set.get(s).data.begin(), set.get(s).data.end());
        REQUIRE(distinct.size() <= 3);  // background, tissue, tumor
    }
    // every tumor voxel holds the flat tumor intensity
    const auto& t1c = set.get(Sequence::t1c);
    const auto& seg = *set.seg;
    bool any_tumor = false;
    for (std::size_t i = 0; i < seg.labels.size(); ++i)
        if (seg.labels[i] > 0) {
            any_tumor = true;
            REQUIRE(t1c.data[i] == 95.0f);
        }
    REQUIRE(any_tumor);
}

TEST_CASE("phantom spec validation rejects bad parameters") {
    PhantomSpec spec;
    SECTION("tiny shape") {
        spec.shape = {8, 32, 32};
        REQUIRE_THROWS_AS(seqsynth::generate_phantom_case(spec, "c"), seqsynth::ArgumentError);
    }
    SECTION("no shells") {
        spec.n_shells = 0;
        REQUIRE_THROWS_AS(seqsynth::generate_phantom_case(spec, "c"), seqsynth::ArgumentError);
    }
    SECTION("negative noise") {
        spec.noise_sigma = -0.5;
        REQUIRE_THROWS_AS(seqsynth::generate_phantom_case(spec, "c"), seqsynth::ArgumentError);
    }
    SECTION("inverted radius range") {
        spec.tumor_radius_range = {5.0, 3.0};
        REQUIRE_THROWS_AS(seqsynth::generate_phantom_case(spec, "c"), seqsynth::ArgumentError);
    }
    SECTION("tumor too large for the head") {
        spec.tumor_radius_range = {3.0, 7.0};
        REQUIRE_THROWS_AS(seqsynth::generate_phantom_case(spec, "c"), seqsynth::ArgumentError);
    }
}
