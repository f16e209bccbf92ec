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

#include <cmath>
#include <set>

#include "seqsynth/fusion.hpp"
#include "test_util.hpp"

using seqsynth::FusionMode;
using seqsynth::Plane;
using seqsynth::Tensor;
using seqsynth::Volume;
namespace fd = seqsynth::fusion_detail;

namespace {

// Stands in for a trained network: returns the center slice of the first
// input sequence, i.e. channel 1 of the 9-channel stack.
Tensor identity_stub(const Tensor& stack) {
    Tensor out({1, stack.dim(1), stack.dim(2)});
    for (std::int64_t r = 0; r < stack.dim(1); ++r)
        for (std::int64_t c = 0; c < stack.dim(2); ++c) out.at3(0, r, c) = stack.at3(1, r, c);
    return out;
}

Tensor constant_stub(const Tensor& stack) {
    return Tensor::full({1, stack.dim(1), stack.dim(2)}, 0.5);
}

Volume filled(const std::array<std::int64_t, 3>& sh, float v) {
    Volume out(sh);
    out.data.assign(out.data.size(), v);
    return out;
}

}  // namespace

TEST_CASE("fusion orientation sets") {
    const auto nine = seqsynth::fusion_orientations(FusionMode::nine);
    REQUIRE(nine.size() == 9);
    std::set<std::pair<int, int>> seen;
    for (const auto& o : nine) {
        seen.insert({static_cast<int>(o.base_plane), o.tilt_axis});
        REQUIRE(o.tilt_axis >= -1);
        REQUIRE(o.tilt_axis <= 2);
        REQUIRE(o.tilt_axis != static_cast<int>(o.base_plane));
    }
    REQUIRE(seen.size() == 9);  // all distinct
    // each plane appears once untilted and twice tilted
    for (int p = 0; p < 3; ++p) {
        int untilted = 0, tilted = 0;
        for (const auto& o : nine)
            if (static_cast<int>(o.base_plane) == p) ((o.tilt_axis < 0) ? untilted : tilted)++;
        REQUIRE(untilted == 1);
        REQUIRE(tilted == 2);
    }

    const auto three = seqsynth::fusion_orientations(FusionMode::three);
    REQUIRE(three.size() == 3);
    for (const auto& o : three) REQUIRE(o.tilt_axis == -1);

    SECTION("mode names parse both ways") {
        REQUIRE(seqsynth::fusion_mode_from_string("nine") == FusionMode::nine);
        REQUIRE(seqsynth::fusion_mode_from_string("9") == FusionMode::nine);
        REQUIRE(seqsynth::fusion_mode_from_string("three") == FusionMode::three);
        REQUIRE(seqsynth::fusion_mode_from_string("3") == FusionMode::three);
        REQUIRE_THROWS_AS(seqsynth::fusion_mode_from_string("five"), seqsynth::ArgumentError);
        REQUIRE(std::string(seqsynth::fusion_mode_name(FusionMode::nine)) == "nine");
        REQUIRE(std::string(seqsynth::fusion_mode_name(FusionMode::three)) == "three");
    }
}

TEST_CASE("rotation canvas covers the in-plane diagonal") {
    const std::array<std::int64_t, 3> sh{30, 20, 10};
    const auto c0 = fd::rotation_canvas(sh, 0);
    REQUIRE(c0[0] == 30);
    REQUIRE(c0[1] == 23);  // ceil(hypot(20, 10))
    REQUIRE(c0[2] == 23);
    const auto c2 = fd::rotation_canvas(sh, 2);
    REQUIRE(c2[0] == 37);  // ceil(hypot(30, 20))
    REQUIRE(c2[1] == 37);
    REQUIRE(c2[2] == 10);
}

TEST_CASE("embed and crop are centered inverses") {
    Volume v = testutil::smooth_blob_volume(12);
    const Volume big = fd::embed_centered(v, {19, 16, 13});
    REQUIRE(big.shape == std::array<std::int64_t, 3>{19, 16, 13});
    const Volume back = fd::crop_centered(big, v.shape);
    REQUIRE(back.data == v.data);
    // embedding pads with exact zeros
    REQUIRE(big.at(0, 0, 0) == 0.0f);

    REQUIRE_THROWS_AS(fd::embed_centered(v, {10, 16, 13}), seqsynth::ShapeError);
    REQUIRE_THROWS_AS(fd::crop_centered(v, {13, 12, 12}), seqsynth::ShapeError);
}

TEST_CASE("principal-axis rotation fixes constants and inverts smoothly") {
    SECTION("zero degrees is the identity") {
        const Volume v = testutil::smooth_blob_volume(10);
        for (int axis = 0; axis < 3; ++axis) {
            const Volume r = fd::rotate_about_axis(v, axis, 0.0);
            REQUIRE(r.data == v.data);
        }
    }
    SECTION("constant volumes stay exactly constant away from the frame edge") {
        const Volume v = filled({16, 16, 16}, 0.5f);
        for (int axis = 0; axis < 3; ++axis) {
            const Volume r = fd::rotate_about_axis(v, axis, 45.0);
            // center voxels sample strictly inside the frame
            for (std::int64_t d = 6; d <= 9; ++d) REQUIRE(r.at(d, d, d) == 0.5f);
        }
    }
    SECTION("rotating there and back is close to the identity inside") {
        const Volume v = testutil::smooth_blob_volume(24);
        for (int axis = 0; axis < 3; ++axis) {
            const Volume rr = fd::rotate_about_axis(fd::rotate_about_axis(v, axis, 45.0), axis, -45.0);
            double mae = 0.0;
            std::int64_t n = 0;
            for (std::int64_t i = 6; i < 18; ++i)
                for (std::int64_t j = 6; j < 18; ++j)
                    for (std::int64_t k = 6; k < 18; ++k) {
                        mae += std::fabs(static_cast<double>(rr.at(i, j, k)) - static_cast<double>(v.at(i, j, k)));
                        ++n;
                    }
            mae /= static_cast<double>(n);
            INFO("axis " << axis);
            REQUIRE(mae < 1e-2);
        }
    }
    SECTION("bad axis") {
        const Volume v = filled({16, 16, 16}, 1.0f);
        REQUIRE_THROWS_AS(fd::rotate_about_axis(v, 3, 45.0), seqsynth::ArgumentError);
    }
}

TEST_CASE("slice-wise prediction pads to the network multiple and crops back") {
    const std::array<std::int64_t, 3> sh{20, 20, 20};
    Volume v0 = testutil::smooth_blob_volume(20);
    const Volume v1 = filled(sh, 0.25f);
    const Volume v2 = filled(sh, 0.75f);
    const std::array<const Volume*, 3> inputs{&v0, &v1, &v2};

    for (Plane p : {Plane::sagittal, Plane::coronal, Plane::axial}) {
        // multiple 8 forces 20 -> 24 padding; the stub then sees padded stacks
        const Volume pred = seqsynth::predict_volume(identity_stub, inputs, p, 8);
        REQUIRE(pred.shape == sh);
        REQUIRE(pred.data == v0.data);
    }
    // multiple 1: no padding path
    const Volume pred1 = seqsynth::predict_volume(identity_stub, inputs, Plane::axial, 1);
    REQUIRE(pred1.data == v0.data);

    SECTION("synthesis output shape is checked") {
        auto bad_stub = [](const Tensor& stack) { return Tensor::zeros({1, stack.dim(1), stack.dim(2) + 1}); };
        REQUIRE_THROWS_AS(seqsynth::predict_volume(bad_stub, inputs, Plane::axial, 8), seqsynth::ShapeError);
    }
    SECTION("input validation") {
        REQUIRE_THROWS_AS(seqsynth::predict_volume(identity_stub, {&v0, nullptr, &v2}, Plane::axial, 8),
                          seqsynth::MissingInputError);
        const Volume small = filled({8, 8, 8}, 0.1f);
        REQUIRE_THROWS_AS(seqsynth::predict_volume(identity_stub, {&v0, &small, &v2}, Plane::axial, 8),
                          seqsynth::ConsistencyError);
        REQUIRE_THROWS_AS(seqsynth::predict_volume(identity_stub, inputs, Plane::axial, 0), seqsynth::ArgumentError);
    }
}

TEST_CASE("fusing a constant synthesizer reproduces the constant exactly") {
    const std::array<std::int64_t, 3> sh{20, 20, 20};
    const Volume v0 = filled(sh, 0.3f), v1 = filled(sh, 0.6f), v2 = filled(sh, 0.9f);
    const std::array<const Volume*, 3> inputs{&v0, &v1, &v2};

    SECTION("three orientations cover every voxel") {
        const seqsynth::FusedVolume f = seqsynth::fuse(constant_stub, inputs, FusionMode::three, 8);
        for (std::size_t i = 0; i < f.count.data.size(); ++i) {
            REQUIRE(f.count.data[i] == 3.0f);
            REQUIRE(f.value.data[i] == 0.5f);
        }
    }
    SECTION("nine orientations agree exactly where all contribute") {
        const seqsynth::FusedVolume f = seqsynth::fuse(constant_stub, inputs, FusionMode::nine, 8);
        bool any_nine = false;
        for (std::int64_t i = 0; i < 20; ++i)
            for (std::int64_t j = 0; j < 20; ++j)
                for (std::int64_t k = 0; k < 20; ++k) {
                    const float cnt = f.count.at(i, j, k);
                    REQUIRE(cnt >= 3.0f);  // untilted passes always land
                    REQUIRE(cnt <= 9.0f);
                    // the mean of any number of exact 0.5 contributions is 0.5
                    REQUIRE(f.value.at(i, j, k) == 0.5f);
                    if (cnt == 9.0f) any_nine = true;
                }
        REQUIRE(any_nine);
        // deep interior voxels keep full interpolation support under tilts
        for (std::int64_t d = 8; d <= 11; ++d) REQUIRE(f.count.at(d, d, d) == 9.0f);
    }
}

TEST_CASE("fused identity synthesis stays close to the source volume") {
    Volume v0 = testutil::smooth_blob_volume(24);
    const Volume v1 = filled(v0.shape, 0.25f);
    const Volume v2 = filled(v0.shape, 0.5f);
    const std::array<const Volume*, 3> inputs{&v0, &v1, &v2};

    const seqsynth::FusedVolume f = seqsynth::fuse(identity_stub, inputs, FusionMode::nine, 8);
    double mae = 0.0, ref_mean = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 5; i < 19; ++i)
        for (std::int64_t j = 5; j < 19; ++j)
            for (std::int64_t k = 5; k < 19; ++k) {
                mae += std::fabs(static_cast<double>(f.value.at(i, j, k)) - static_cast<double>(v0.at(i, j, k)));
                ref_mean += static_cast<double>(v0.at(i, j, k));
                ++n;
            }
    mae /= static_cast<double>(n);
    ref_mean /= static_cast<double>(n);
    REQUIRE(ref_mean > 0.1);          // the probe region actually holds signal
    REQUIRE(mae / ref_mean < 2e-2);   // interpolation blur only

    SECTION("a zero synthesizer fuses to zero with full counts") {
        auto zero_stub = [](const Tensor& s) { return Tensor::zeros({1, s.dim(1), s.dim(2)}); };
        const seqsynth::FusedVolume z = seqsynth::fuse(zero_stub, inputs, FusionMode::nine, 8);
        for (float x : z.value.data) REQUIRE(x == 0.0f);
        REQUIRE(z.count.at(12, 12, 12) == 9.0f);
    }
    SECTION("grid disagreement is rejected") {
        const Volume small = filled({8, 8, 8}, 0.1f);
        REQUIRE_THROWS_AS(seqsynth::fuse(identity_stub, {&v0, &small, &v2}, FusionMode::three, 8),
                          seqsynth::ConsistencyError);
    }
}
