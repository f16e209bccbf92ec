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

#include "seqsynth/autodiff.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"
#include "test_util.hpp"

using seqsynth::Rng;
using seqsynth::Tensor;
namespace ad = seqsynth::ad;
using testutil::gradcheck_max_rel_err;

namespace {

// Uniform magnitudes in [lo_mag, hi_mag] with random signs: keeps values away
// from the kinks of abs/relu-style ops.
Tensor signed_away_from_zero(std::vector<std::int64_t> shape, Rng& rng, double lo_mag, double hi_mag) {
    Tensor t = Tensor::rand_uniform(std::move(shape), rng, lo_mag, hi_mag);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (rng.bernoulli(0.5)) t.data()[i] = -t.data()[i];
    return t;
}

}  // namespace

TEST_CASE("arithmetic composite gradient matches finite differences") {
    Rng rng(11);
    Tensor a = Tensor::rand_uniform({2, 3}, rng, 0.3, 1.5);
    Tensor b = Tensor::rand_uniform({2, 3}, rng, 0.4, 1.6);
    auto f = [](const std::vector<ad::Var>& v) {
        ad::Var num = ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1]));
        ad::Var den = ad::add_scalar(ad::square(v[1]), 0.5);
        return ad::sum_all(ad::div(num, den));
    };
    REQUIRE(gradcheck_max_rel_err(f, {a, b}) < 1e-4);
}

TEST_CASE("abs, inv, scale_by, mul_scalar gradients") {
    Rng rng(12);
    Tensor a = signed_away_from_zero({3, 4}, rng, 0.3, 1.2);
    Tensor s = Tensor::full({1}, 0.7);
    auto f = [](const std::vector<ad::Var>& v) {
        return ad::sum_all(ad::scale_by(ad::abs_v(ad::inv(v[0])), v[1]));
    };
    REQUIRE(gradcheck_max_rel_err(f, {a, s}) < 1e-4);

    auto g = [](const std::vector<ad::Var>& v) { return ad::mean_all(ad::mul_scalar(v[0], -2.5)); };
    REQUIRE(gradcheck_max_rel_err(g, {a}) < 1e-4);
}

TEST_CASE("mean_all gradient is exactly 1/n times upstream") {
    Tensor a = Tensor::full({4, 5}, 2.0);
    ad::Var x = ad::leaf(a, true);
    ad::mean_all(x).backward();
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(x.grad()[i] == 1.0 * (1.0 / 20.0));
}

TEST_CASE("activation gradients: relu, leaky_relu, mish, celu") {
    Rng rng(13);
    Tensor a = signed_away_from_zero({2, 6}, rng, 0.2, 2.0);
    auto relu_f = [](const std::vector<ad::Var>& v) { return ad::sum_all(ad::relu(v[0])); };
    auto leaky_f = [](const std::vector<ad::Var>& v) { return ad::sum_all(ad::square(ad::leaky_relu(v[0], 0.2))); };
    auto mish_f = [](const std::vector<ad::Var>& v) { return ad::sum_all(ad::mish(v[0])); };
    auto celu_f = [](const std::vector<ad::Var>& v) { return ad::sum_all(ad::square(ad::celu(v[0], 1.0))); };
    REQUIRE(gradcheck_max_rel_err(relu_f, {a}) < 1e-4);
    REQUIRE(gradcheck_max_rel_err(leaky_f, {a}) < 1e-4);
    REQUIRE(gradcheck_max_rel_err(mish_f, {a}) < 1e-4);
    REQUIRE(gradcheck_max_rel_err(celu_f, {a}) < 1e-4);
}

TEST_CASE("mish matches its closed form at reference points") {
    // mish(x) = x * tanh(softplus(x))
    for (double x : {-3.0, -0.5, 0.0, 0.5, 4.0}) {
        ad::Var v = ad::leaf(Tensor::full({1}, x), false);
        const double expected = x * std::tanh(std::log1p(std::exp(x)));
        REQUIRE_THAT(ad::mish(v).value()[0], Catch::Matchers::WithinAbs(expected, 1e-12));
    }
}

TEST_CASE("concat_ch gradient splits by channel") {
    Rng rng(14);
    Tensor a = Tensor::rand_uniform({2, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor b = Tensor::rand_uniform({2, 1, 3, 3}, rng, -1.0, 1.0);
    auto f = [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::square(ad::concat_ch(v[0], v[1])));
    };
    REQUIRE(gradcheck_max_rel_err(f, {a, b}) < 1e-4);
}

TEST_CASE("upsample_nearest2 gradient and values") {
    Rng rng(15);
    Tensor a = Tensor::rand_uniform({1, 2, 3, 2}, rng, -1.0, 1.0);
    ad::Var x = ad::leaf(a, false);
    Tensor up = ad::upsample_nearest2(x).value();
    REQUIRE(up.dim(2) == 6);
    REQUIRE(up.dim(3) == 4);
    REQUIRE(up.at4(0, 1, 5, 3) == a.at4(0, 1, 2, 1));
    REQUIRE(up.at4(0, 0, 0, 1) == a.at4(0, 0, 0, 0));

    auto f = [](const std::vector<ad::Var>& v) { return ad::mean_all(ad::square(ad::upsample_nearest2(v[0]))); };
    REQUIRE(gradcheck_max_rel_err(f, {a}) < 1e-4);
}

TEST_CASE("maxpool2 gradient with clipped edge windows") {
    Rng rng(16);
    Tensor a = Tensor::rand_uniform({1, 2, 5, 5}, rng, 0.0, 1.0);  // 5x5 -> ceil mode -> 3x3
    ad::Var x = ad::leaf(a, false);
    Tensor pooled = ad::maxpool2(x).value();
    REQUIRE(pooled.dim(2) == 3);
    REQUIRE(pooled.dim(3) == 3);
    REQUIRE(pooled.at4(0, 0, 2, 2) == a.at4(0, 0, 4, 4));  // last window is the single corner cell

    auto f = [](const std::vector<ad::Var>& v) { return ad::sum_all(ad::square(ad::maxpool2(v[0]))); };
    REQUIRE(gradcheck_max_rel_err(f, {a}) < 1e-4);
}

TEST_CASE("conv2d output matches a hand-evaluated cross-correlation") {
    // 1x1x3x3 input, single 2x2 kernel, stride 1, no padding
    Tensor x = Tensor::from_vector({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 0, -1});
    Tensor b = Tensor::from_vector({1}, {0.5});
    ad::Var out = ad::conv2d(ad::leaf(x, false), ad::leaf(w, false), ad::leaf(b, false), 1, 0);
    REQUIRE(out.value().dim(2) == 2);
    // each output: x[r][c] - x[r+1][c+1] + 0.5
    REQUIRE(out.value().at4(0, 0, 0, 0) == 1.0 - 5.0 + 0.5);
    REQUIRE(out.value().at4(0, 0, 1, 1) == 5.0 - 9.0 + 0.5);
}

TEST_CASE("conv2d gradients for input, weight, and bias") {
    Rng rng(17);
    Tensor x = Tensor::rand_uniform({2, 3, 5, 6}, rng, -1.0, 1.0);
    Tensor w = Tensor::rand_uniform({4, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor b = Tensor::rand_uniform({4}, rng, -0.5, 0.5);

    SECTION("stride 2, pad 1") {
        auto f = [](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::square(ad::conv2d(v[0], v[1], v[2], 2, 1)));
        };
        REQUIRE(gradcheck_max_rel_err(f, {x, w, b}) < 1e-4);
    }
    SECTION("stride 1, pad 0, no bias") {
        auto f = [](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::square(ad::conv2d(v[0], v[1], 1, 0)));
        };
        REQUIRE(gradcheck_max_rel_err(f, {x, w}) < 1e-4);
    }
    SECTION("stride 2, pad 2 (wide padding)") {
        auto f = [](const std::vector<ad::Var>& v) {
            return ad::mean_all(ad::square(ad::conv2d(v[0], v[1], v[2], 2, 2)));
        };
        REQUIRE(gradcheck_max_rel_err(f, {x, w, b}) < 1e-4);
    }
}

TEST_CASE("dft_magnitude values and gradient") {
    SECTION("constant image concentrates in the DC bin") {
        Tensor x = Tensor::full({1, 1, 4, 4}, 1.0);
        Tensor mag = ad::dft_magnitude(ad::leaf(x, false)).value();
        REQUIRE_THAT(mag.at4(0, 0, 0, 0), Catch::Matchers::WithinAbs(16.0, 1e-12));
        double rest = 0;
        for (std::int64_t i = 1; i < 16; ++i) rest += mag[i];
        REQUIRE_THAT(rest, Catch::Matchers::WithinAbs(0.0, 1e-9));
    }
    SECTION("gradient, power-of-two size") {
        Rng rng(18);
        Tensor x = Tensor::rand_uniform({2, 1, 4, 4}, rng, 0.5, 1.5);
        auto f = [](const std::vector<ad::Var>& v) { return ad::mean_all(ad::dft_magnitude(v[0])); };
        REQUIRE(gradcheck_max_rel_err(f, {x}) < 1e-4);
    }
    SECTION("gradient, non-power-of-two size") {
        Rng rng(19);
        Tensor x = Tensor::rand_uniform({1, 1, 3, 5}, rng, 0.5, 1.5);
        auto f = [](const std::vector<ad::Var>& v) { return ad::mean_all(ad::dft_magnitude(v[0])); };
        REQUIRE(gradcheck_max_rel_err(f, {x}) < 1e-4);
    }
}

TEST_CASE("a value used twice accumulates both gradient paths") {
    Tensor t = Tensor::from_vector({3}, {1.0, -2.0, 3.0});
    ad::Var x = ad::leaf(t, true);
    ad::sum_all(ad::mul(x, x)).backward();
    for (std::int64_t i = 0; i < 3; ++i) REQUIRE_THAT(x.grad()[i], Catch::Matchers::WithinAbs(2.0 * t[i], 1e-12));
}

TEST_CASE("detach blocks the gradient path") {
    Tensor t = Tensor::from_vector({2}, {2.0, 5.0});
    ad::Var x = ad::leaf(t, true);
    ad::Var d = ad::detach(x);
    REQUIRE_FALSE(d.requires_grad());
    ad::sum_all(ad::mul(x, d)).backward();
    // d treated as a constant: d(x*d)/dx = d, not 2x
    REQUIRE(x.grad()[0] == 2.0);
    REQUIRE(x.grad()[1] == 5.0);
}

TEST_CASE("backward demands a scalar root") {
    ad::Var x = ad::leaf(Tensor::full({2, 2}, 1.0), true);
    REQUIRE_THROWS_AS(ad::square(x).backward(), seqsynth::ArgumentError);
}

TEST_CASE("shape mismatches are rejected") {
    ad::Var a = ad::leaf(Tensor::full({2, 2}, 1.0), false);
    ad::Var b = ad::leaf(Tensor::full({2, 3}, 1.0), false);
    REQUIRE_THROWS_AS(ad::add(a, b), seqsynth::ShapeError);
    REQUIRE_THROWS_AS(ad::mul(a, b), seqsynth::ShapeError);
}
