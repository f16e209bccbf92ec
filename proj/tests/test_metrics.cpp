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
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "seqsynth/metrics.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/volume.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace seqsynth;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Volume constant_volume(std::array<std::int64_t, 3> sh, float v) {
    Volume out(sh);
    std::fill(out.data.begin(), out.data.end(), v);
    return out;
}

RegionMask full_mask(const Volume& v) { return RegionMask(static_cast<std::size_t>(v.numel()), 1); }

std::size_t lin(const Volume& v, std::int64_t i, std::int64_t j, std::int64_t k) {
    return static_cast<std::size_t>(i + v.shape[0] * (j + v.shape[1] * k));
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("gaussian window is normalized and symmetric") {
    const auto k = metric_detail::gaussian_kernel_1d(11, 1.5);
    REQUIRE(k.size() == 11);
    double sum = 0.0;
    for (double v : k) sum += v;
    REQUIRE_THAT(sum, WithinAbs(1.0, 1e-12));
    for (std::size_t i = 0; i < k.size(); ++i) REQUIRE(k[i] == k[k.size() - 1 - i]);
    REQUIRE(k[5] > k[0]);
}

TEST_CASE("ssim map matches the closed form on constant volumes") {
    const std::array<std::int64_t, 3> sh{14, 14, 14};
    const Volume a = constant_volume(sh, 0.5f);
    const Volume b = constant_volume(sh, 0.25f);
    const auto map = ssim_map_3d(a, b);
    REQUIRE(static_cast<std::int64_t>(map.size()) == a.numel());
    // Constant fields: means 0.5 and 0.25, zero variances and covariance.
    const double c1 = 1e-4, c2 = 9e-4;
    const double expected = ((2.0 * 0.5 * 0.25 + c1) * c2) / ((0.5 * 0.5 + 0.25 * 0.25 + c1) * c2);
    for (double v : map) REQUIRE_THAT(v, WithinAbs(expected, 1e-9));
}

TEST_CASE("ssim map input validation") {
    const Volume a = constant_volume({8, 8, 8}, 0.5f);
    const Volume b = constant_volume({8, 8, 9}, 0.5f);
    REQUIRE_THROWS_AS(ssim_map_3d(a, b), ShapeError);
    const Volume c = constant_volume({8, 8, 8}, 0.5f);
    REQUIRE_THROWS_AS(ssim_map_3d(a, c, 4), ArgumentError);
    REQUIRE_THROWS_AS(ssim_map_3d(a, c, 1), ArgumentError);
}

TEST_CASE("ssim of a volume with itself is exactly one") {
    const Volume blob = testutil::smooth_blob_volume(20);
    const auto map = ssim_map_3d(blob, blob);
    for (double v : map) REQUIRE(v == 1.0);
    REQUIRE(masked_ssim(blob, blob, full_mask(blob)) == 1.0);
}

TEST_CASE("masked ssim is symmetric in its arguments") {
    const Volume a = testutil::smooth_blob_volume(16);
    Volume b = a;
    Rng rng(404);
    for (auto& v : b.data) v += static_cast<float>(rng.uniform() * 0.05);
    const RegionMask mask = full_mask(a);
    const double ab = masked_ssim(a, b, mask);
    const double ba = masked_ssim(b, a, mask);
    REQUIRE(ab == ba);
    REQUIRE(ab < 1.0);
    REQUIRE(ab > 0.0);
}

TEST_CASE("masked ssim region handling") {
    const Volume a = testutil::smooth_blob_volume(12);
    REQUIRE_THROWS_AS(masked_ssim(a, a, RegionMask(a.data.size(), 0)), EmptyRegionError);
    REQUIRE_THROWS_AS(masked_ssim(a, a, RegionMask(7, 1)), ShapeError);
}

TEST_CASE("masked psnr matches hand-computed uniform-error values") {
    const std::array<std::int64_t, 3> sh{8, 8, 8};
    const Volume ref = constant_volume(sh, 0.5f);
    const RegionMask mask = full_mask(ref);

    SECTION("identical volumes give +inf") {
        REQUIRE(masked_psnr(ref, ref, mask) == std::numeric_limits<double>::infinity());
    }

    SECTION("uniform offset gives 10*log10(1/d^2)") {
        Volume pred = ref;
        for (auto& v : pred.data) v += 0.25f;
        REQUIRE_THAT(masked_psnr(pred, ref, mask), WithinRel(10.0 * std::log10(16.0), 1e-12));
    }

    SECTION("halving the error adds 20*log10(2) dB") {
        auto offset_psnr = [&](float d) {
            Volume pred = ref;
            for (auto& v : pred.data) v += d;
            return masked_psnr(pred, ref, mask);
        };
        const double p50 = offset_psnr(0.5f);
        const double p25 = offset_psnr(0.25f);
        const double p125 = offset_psnr(0.125f);
        REQUIRE(p125 > p25);
        REQUIRE(p25 > p50);
        REQUIRE_THAT(p25 - p50, WithinAbs(20.0 * std::log10(2.0), 1e-9));
        REQUIRE_THAT(p125 - p25, WithinAbs(20.0 * std::log10(2.0), 1e-9));
    }

    SECTION("validation") {
        REQUIRE_THROWS_AS(masked_psnr(ref, ref, RegionMask(ref.data.size(), 0)), EmptyRegionError);
        REQUIRE_THROWS_AS(masked_psnr(ref, ref, RegionMask(3, 1)), ShapeError);
        const Volume other = constant_volume({8, 8, 9}, 0.5f);
        REQUIRE_THROWS_AS(masked_psnr(other, ref, mask), ShapeError);
    }
}

TEST_CASE("brain mask keeps strictly positive reference voxels") {
    Volume ref = constant_volume({4, 4, 4}, 1.0f);
    ref.data[0] = 0.0f;
    ref.data[5] = -0.5f;
    const RegionMask m = brain_mask(ref);
    REQUIRE(m.size() == ref.data.size());
    REQUIRE(m[0] == 0);
    REQUIRE(m[5] == 0);
    std::int64_t count = 0;
    for (auto b : m) count += b;
    REQUIRE(count == ref.numel() - 2);
}

TEST_CASE("evaluate_case scores a perfect prediction as exact") {
    const Volume blob = testutil::smooth_blob_volume(20);
    LabelVolume seg(blob.shape);
    for (std::int64_t k = 8; k < 12; ++k)
        for (std::int64_t j = 8; j < 12; ++j)
            for (std::int64_t i = 8; i < 12; ++i) seg.labels[lin(blob, i, j, k)] = 1;

    const MetricRow row = evaluate_case("case_x", blob, blob, &seg);
    REQUIRE(row.case_id == "case_x");
    REQUIRE(row.ssim_h.has_value());
    REQUIRE(*row.ssim_h == 1.0);
    REQUIRE(*row.psnr_h == std::numeric_limits<double>::infinity());
    REQUIRE(row.ssim_t.has_value());
    REQUIRE(*row.ssim_t == 1.0);
    REQUIRE(*row.psnr_t == std::numeric_limits<double>::infinity());
}

TEST_CASE("evaluate_case leaves tumor columns unset without usable segmentation") {
    const Volume blob = testutil::smooth_blob_volume(16);
    SECTION("no segmentation") {
        const MetricRow row = evaluate_case("c", blob, blob, nullptr);
        REQUIRE(row.ssim_h.has_value());
        REQUIRE_FALSE(row.ssim_t.has_value());
        REQUIRE_FALSE(row.psnr_t.has_value());
    }
    SECTION("all-zero segmentation") {
        const LabelVolume seg(blob.shape);
        const MetricRow row = evaluate_case("c", blob, blob, &seg);
        REQUIRE_FALSE(row.ssim_t.has_value());
        REQUIRE_FALSE(row.psnr_t.has_value());
    }
}

TEST_CASE("evaluate_case matches direct masked metrics when no rescaling is needed") {
    // Reference already spans [0, 1] with a zero background corner, so the
    // internal range normalization is an exact identity and the row must
    // reproduce direct masked metrics over manually built regions.
    const std::array<std::int64_t, 3> sh{12, 12, 12};
    Volume ref(sh);
    Rng rng(77);
    for (auto& v : ref.data) v = 0.1f + 0.8f * static_cast<float>(rng.uniform());
    ref.data[lin(ref, 0, 0, 0)] = 0.0f;
    ref.data[lin(ref, 1, 0, 0)] = 1.0f;

    Volume pred = ref;
    for (auto& v : pred.data) {
        v += 0.03f;
        if (v > 1.0f) v = 1.0f;
    }

    LabelVolume seg(sh);
    for (std::int64_t k = 4; k < 8; ++k)
        for (std::int64_t j = 4; j < 8; ++j)
            for (std::int64_t i = 4; i < 8; ++i) seg.labels[lin(ref, i, j, k)] = 2;

    RegionMask healthy(ref.data.size(), 0), tumor(ref.data.size(), 0);
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        const bool brain = ref.data[i] > 0.0f;
        const bool t = brain && seg.labels[i] > 0;
        tumor[i] = t ? 1 : 0;
        healthy[i] = (brain && !t) ? 1 : 0;
        REQUIRE(tumor[i] + healthy[i] <= 1);
    }

    const MetricRow row = evaluate_case("c", pred, ref, &seg);
    REQUIRE(*row.ssim_h == masked_ssim(pred, ref, healthy));
    REQUIRE(*row.ssim_t == masked_ssim(pred, ref, tumor));
    REQUIRE(*row.psnr_h == masked_psnr(pred, ref, healthy));
    REQUIRE(*row.psnr_t == masked_psnr(pred, ref, tumor));
}

TEST_CASE("evaluate_case rescales by the reference range and clamps the prediction") {
    // Reference takes values 10 and 20 (half each); a zero prediction clamps
    // to the bottom of the range, so the squared error over the brain is
    // exactly 0.5 after normalization.
    const std::array<std::int64_t, 3> sh{4, 4, 4};
    Volume ref(sh);
    for (std::size_t i = 0; i < ref.data.size(); ++i) ref.data[i] = (i % 2 == 0) ? 10.0f : 20.0f;
    const Volume pred = constant_volume(sh, 0.0f);
    const MetricRow row = evaluate_case("c", pred, ref, nullptr);
    REQUIRE_THAT(*row.psnr_h, WithinRel(10.0 * std::log10(2.0), 1e-12));
}

TEST_CASE("evaluate_case input validation") {
    const Volume blob = testutil::smooth_blob_volume(12);
    const Volume small = testutil::smooth_blob_volume(10);
    REQUIRE_THROWS_AS(evaluate_case("c", small, blob, nullptr), ShapeError);
    const LabelVolume bad_seg({10, 10, 10});
    REQUIRE_THROWS_AS(evaluate_case("c", blob, blob, &bad_seg), ShapeError);
    const Volume flat = constant_volume({12, 12, 12}, 3.0f);
    REQUIRE_THROWS_AS(evaluate_case("c", flat, flat, nullptr), DegenerateInputError);

    // A segmentation covering the whole brain leaves no healthy voxels.
    const Volume bright = testutil::smooth_blob_volume(12);
    LabelVolume all_tumor(bright.shape);
    std::fill(all_tumor.labels.begin(), all_tumor.labels.end(), std::uint16_t{1});
    REQUIRE_THROWS_AS(evaluate_case("c", bright, bright, &all_tumor), EmptyRegionError);
}

TEST_CASE("mean metric row skips absent values and propagates infinities") {
    MetricRow a;
    a.case_id = "a";
    a.ssim_h = 0.8;
    a.psnr_h = 20.0;
    MetricRow b;
    b.case_id = "b";
    b.ssim_h = 0.6;
    b.ssim_t = 0.5;
    b.psnr_h = std::numeric_limits<double>::infinity();
    const MetricRow mean = mean_metric_row({a, b});
    REQUIRE(mean.case_id == "mean");
    REQUIRE_THAT(*mean.ssim_h, WithinAbs(0.7, 1e-15));
    REQUIRE_THAT(*mean.ssim_t, WithinAbs(0.5, 1e-15));
    REQUIRE(*mean.psnr_h == std::numeric_limits<double>::infinity());
    REQUIRE_FALSE(mean.psnr_t.has_value());

    const MetricRow empty_mean = mean_metric_row({});
    REQUIRE_FALSE(empty_mean.ssim_h.has_value());
}

TEST_CASE("metrics table format") {
    const fs::path dir = fs::temp_directory_path() / "seqsynth_metrics_test";
    fs::create_directories(dir);

    MetricRow a;
    a.case_id = "case_a";
    a.ssim_h = 0.9123456789;
    a.psnr_h = std::numeric_limits<double>::infinity();
    a.psnr_t = 25.0;
    MetricRow b;
    b.case_id = "case_b";
    b.ssim_h = 0.25;
    b.ssim_t = 0.5;
    b.psnr_h = 10.0;
    b.psnr_t = 35.0;

    SECTION("header, fixed precision, na/inf markers, trailing mean") {
        const fs::path p = dir / "metrics.csv";
        write_metrics_csv(p, {a, b});
        const auto lines = read_lines(p);
        REQUIRE(lines.size() == 4);
        REQUIRE(lines[0] == "case_id,ssim_h,ssim_t,psnr_h,psnr_t");
        REQUIRE(lines[1] == "case_a,0.912346,na,inf,25.000000");
        REQUIRE(lines[2] == "case_b,0.250000,0.500000,10.000000,35.000000");
        REQUIRE(lines[3] == "mean,0.581173,0.500000,inf,30.000000");
    }

    SECTION("mean row can be suppressed") {
        const fs::path p = dir / "metrics_nomean.csv";
        write_metrics_csv(p, {a, b}, false);
        const auto lines = read_lines(p);
        REQUIRE(lines.size() == 3);
        REQUIRE(lines.back().rfind("case_b,", 0) == 0);
    }

    SECTION("no rows writes the header only") {
        const fs::path p = dir / "metrics_empty.csv";
        write_metrics_csv(p, {});
        const auto lines = read_lines(p);
        REQUIRE(lines.size() == 1);
        REQUIRE(lines[0] == "case_id,ssim_h,ssim_t,psnr_h,psnr_t");
    }

    SECTION("unwritable destination") {
        REQUIRE_THROWS_AS(write_metrics_csv(dir / "missing_dir" / "metrics.csv", {a}), IoError);
    }

    fs::remove_all(dir);
}
