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
#include <filesystem>
#include <string>
#include <vector>

#include "seqsynth/autodiff.hpp"
#include "seqsynth/networks.hpp"
#include "seqsynth/rng.hpp"

namespace seqsynth {

// VGG-19 convolutional trunk used as a perceptual feature extractor. Blocks
// of [2, 2, 4, 4, 4] 3x3 convolutions with ReLU and 2x2 max pooling between
// blocks; taps are addressed by the flat (conv/relu/pool) module index, so
// {2, 7, 14, 21, 28} picks conv outputs (pre-activation) up to block 5.
// Weights default to a seeded He initialization; a tensor archive with real
// weights can be loaded instead when available.
struct VggConfig {
    std::array<std::int64_t, 5> block_widths{64, 128, 256, 512, 512};
    std::array<double, 3> input_mean{0.485, 0.456, 0.406};
    std::array<double, 3> input_std{0.229, 0.224, 0.225};
};

class VggFeatureExtractor {
 public:
    VggFeatureExtractor() = default;

    static VggFeatureExtractor random_init(const VggConfig& cfg, std::uint64_t seed) {
        VggFeatureExtractor e;
        e.cfg_ = cfg;
        Rng rng = Rng::derive(seed, {0x7667675fULL});
        std::int64_t in = 3;
        int conv_id = 0;
        for (int b = 0; b < 5; ++b) {
            const std::int64_t out = cfg.block_widths[static_cast<std::size_t>(b)];
            for (int c = 0; c < kBlockConvs[b]; ++c, ++conv_id) {
                const double he_std = std::sqrt(2.0 / static_cast<double>(in * 9));
                e.params_.push_back({"conv" + std::to_string(conv_id) + ".weight",
                                     Tensor::randn({out, in, 3, 3}, rng, 0.0, he_std),
                                     {},
                                     {}});
                e.params_.push_back({"conv" + std::to_string(conv_id) + ".bias", Tensor::zeros({out}), {}, {}});
                in = out;
            }
        }
        return e;
    }

    // Loads weights from a checkpoint-style tensor archive (names
    // conv<i>.weight / conv<i>.bias, 16 conv layers).
    static VggFeatureExtractor load(const std::filesystem::path& path, const VggConfig& cfg = VggConfig{}) {
        VggFeatureExtractor e = random_init(cfg, 0);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DependencyError("cannot open feature extractor weights " + path.string());
        char magic[8];
        in.read(magic, sizeof(magic));
        if (!in || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
            throw FormatError(path.string() + ": not a tensor archive");
        std::uint32_t js_len = 0;
        in.read(reinterpret_cast<char*>(&js_len), sizeof(js_len));
        in.seekg(js_len, std::ios::cur);
        std::uint32_t n_tensors = 0;
        in.read(reinterpret_cast<char*>(&n_tensors), sizeof(n_tensors));
        if (!in) throw FormatError(path.string() + ": truncated tensor archive");
        for (std::uint32_t i = 0; i < n_tensors; ++i) {
            auto [name, t] = ckpt_detail::read_tensor(in);
            Parameter* p = e.find(name);
            if (!p || !p->value.same_shape(t))
                throw FormatError(path.string() + ": tensor " + name + " does not fit the extractor layout");
            p->value = std::move(t);
        }
        return e;
    }

    // Feature maps at the requested module indices for a single-channel
    // input (N, 1, H, W): channels are replicated to RGB and normalized with
    // the configured statistics first. The returned Vars share one graph with
    // the input, so gradients flow back through every tap.
    std::vector<ad::Var> features(const ad::Var& x, const std::vector<int>& taps) {
        if (taps.empty()) throw ArgumentError("feature extraction needs at least one tap index");
        const Tensor& xv = x.value();
        if (xv.rank() != 4 || xv.dim(1) != 1) throw ShapeError("feature extractor expects (N, 1, H, W) input");

        ad::Var cur = normalize_rgb(x);
        std::vector<ad::Var> out(taps.size());
        std::vector<bool> found(taps.size(), false);
        int max_tap = 0;
        for (int t : taps) max_tap = std::max(max_tap, t);

        int module = 0;
        int conv_id = 0;
        auto record = [&](const ad::Var& v) {
            for (std::size_t i = 0; i < taps.size(); ++i)
                if (taps[i] == module && !found[i]) {
                    out[i] = v;
                    found[i] = true;
                }
        };
        for (int b = 0; b < 5; ++b) {
            for (int c = 0; c < kBlockConvs[b]; ++c, ++conv_id) {
                Parameter* w = find("conv" + std::to_string(conv_id) + ".weight");
                Parameter* bia = find("conv" + std::to_string(conv_id) + ".bias");
                cur = ad::conv2d(cur, ad::leaf(w->value, false), ad::leaf(bia->value, false), 1, 1);
                record(cur);  // conv output, pre-activation
                ++module;
                if (module > max_tap) goto done;
                cur = ad::relu(cur);
                record(cur);
                ++module;
                if (module > max_tap) goto done;
            }
            if (b + 1 < 5) {
                cur = ad::maxpool2(cur);
                record(cur);
                ++module;
                if (module > max_tap) goto done;
            }
        }
    done:
        for (std::size_t i = 0; i < taps.size(); ++i)
            if (!found[i]) throw ArgumentError("tap index " + std::to_string(taps[i]) + " is out of range");
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    std::vector<Parameter>& params() { return params_; }

 private:
    ad::Var normalize_rgb(const ad::Var& x) {
        // Replicate the single channel to RGB and standardize per channel.
        ad::Var rgb = ad::concat_ch(ad::concat_ch(x, x), x);
        Tensor shift({1, 3, 1, 1});
        Tensor scale_t({1, 3, 1, 1});
        for (int c = 0; c < 3; ++c) {
            shift.at4(0, c, 0, 0) = cfg_.input_mean[static_cast<std::size_t>(c)];
            scale_t.at4(0, c, 0, 0) = 1.0 / cfg_.input_std[static_cast<std::size_t>(c)];
        }
        // Expand to full maps once; shapes stay small relative to the convs.
        const Tensor& v = rgb.value();
        Tensor mean_full(v.shape());
        Tensor invstd_full(v.shape());
        for (std::int64_t n = 0; n < v.dim(0); ++n)
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t h = 0; h < v.dim(2); ++h)
                    for (std::int64_t w = 0; w < v.dim(3); ++w) {
                        mean_full.at4(n, c, h, w) = shift.at4(0, c, 0, 0);
                        invstd_full.at4(n, c, h, w) = scale_t.at4(0, c, 0, 0);
                    }
        return ad::mul(ad::sub(rgb, ad::constant(mean_full)), ad::constant(invstd_full));
    }

    static constexpr int kBlockConvs[5] = {2, 2, 4, 4, 4};

    VggConfig cfg_;
    std::vector<Parameter> params_;
};

}  // namespace seqsynth
