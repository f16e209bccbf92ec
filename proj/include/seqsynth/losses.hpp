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

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqsynth/autodiff.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/vgg.hpp"

namespace seqsynth {

// ---- plain L1 ----

inline ad::Var l1_loss(const ad::Var& yhat, const ad::Var& y) {
    return ad::mean_all(ad::abs_v(ad::sub(y, yhat)));
}

// ---- region-weighted L1 ----

// Mean absolute error split into tumor and healthy regions, recombined as
// w * tumor + (1 - w) * healthy. If one region is empty its weight moves to
// the other, so an all-ones mask reduces exactly to plain L1 and a mask-less
// slice trains on the healthy term alone.
struct MaskedL1 {
    ad::Var total;
    double tumor = 0.0;
    double healthy = 0.0;
};

inline MaskedL1 masked_l1_loss(const ad::Var& yhat, const ad::Var& y, const Tensor& tumor_mask, double w) {
    ad::detail::check_same_shape(yhat.value(), y.value(), "masked_l1");
    if (!tumor_mask.same_shape(y.value())) throw ShapeError("masked_l1: mask shape mismatch");
    if (w < 0.0 || w > 1.0) throw ArgumentError("masked_l1: weight must lie in [0, 1]");
    double n_tumor = 0.0;
    for (std::int64_t i = 0; i < tumor_mask.numel(); ++i) {
        const double m = tumor_mask[i];
        if (m != 0.0 && m != 1.0) throw ArgumentError("masked_l1: mask must be binary");
        n_tumor += m;
    }
    const double n_total = static_cast<double>(tumor_mask.numel());
    const double n_healthy = n_total - n_tumor;

    ad::Var diff = ad::abs_v(ad::sub(y, yhat));
    MaskedL1 out;
    ad::Var tumor_term, healthy_term;
    if (n_tumor > 0.0) {
        tumor_term = ad::mul_scalar(ad::sum_all(ad::mul(diff, ad::constant(tumor_mask))), 1.0 / n_tumor);
        out.tumor = tumor_term.value()[0];
    }
    if (n_healthy > 0.0) {
        Tensor inv_mask = tumor_mask;
        for (std::int64_t i = 0; i < inv_mask.numel(); ++i) inv_mask[i] = 1.0 - inv_mask[i];
        healthy_term = ad::mul_scalar(ad::sum_all(ad::mul(diff, ad::constant(inv_mask))), 1.0 / n_healthy);
        out.healthy = healthy_term.value()[0];
    }
    if (n_tumor > 0.0 && n_healthy > 0.0)
        out.total = ad::add(ad::mul_scalar(tumor_term, w), ad::mul_scalar(healthy_term, 1.0 - w));
    else if (n_tumor > 0.0)
        out.total = tumor_term;
    else
        out.total = healthy_term;
    return out;
}

// ---- least-squares adversarial ----

inline ad::Var lsgan_d_loss(const ad::Var& d_real, const ad::Var& d_fake) {
    return ad::add(ad::mean_all(ad::square(ad::add_scalar(d_real, -1.0))), ad::mean_all(ad::square(d_fake)));
}

inline ad::Var lsgan_g_loss(const ad::Var& d_fake) {
    return ad::mean_all(ad::square(ad::add_scalar(d_fake, -1.0)));
}

// ---- structural similarity ----

namespace ssim_detail {

inline std::vector<double> gaussian_kernel(std::int64_t size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::int64_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-mode Gaussian filtering as two conv2d passes.
inline ad::Var gaussian_filter(const ad::Var& x, const std::vector<double>& k) {
    const auto size = static_cast<std::int64_t>(k.size());
    Tensor kr({1, 1, 1, size});
    Tensor kc({1, 1, size, 1});
    for (std::int64_t i = 0; i < size; ++i) {
        kr[i] = k[static_cast<std::size_t>(i)];
        kc[i] = k[static_cast<std::size_t>(i)];
    }
    return ad::conv2d(ad::conv2d(x, ad::constant(kr), 1, 0), ad::constant(kc), 1, 0);
}

}  // namespace ssim_detail

// Mean |1 - SSIM| over all valid windows, Gaussian window, data range 1
// (C1 = 0.01^2, C2 = 0.03^2). Inputs (N, 1, H, W) with H, W >= kernel.
inline ad::Var ssim_loss(const ad::Var& yhat, const ad::Var& y, std::int64_t kernel = 11, double sigma = 1.5) {
    ad::detail::check_same_shape(yhat.value(), y.value(), "ssim");
    if (kernel < 3 || kernel % 2 == 0) throw ArgumentError("ssim kernel must be odd and >= 3");
    const Tensor& v = y.value();
    if (v.rank() != 4) throw ShapeError("ssim expects (N, C, H, W) input");
    if (v.dim(2) < kernel || v.dim(3) < kernel)
        throw ShapeError("ssim: spatial extent smaller than the kernel");
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const auto k = ssim_detail::gaussian_kernel(kernel, sigma);
    using namespace ssim_detail;

    ad::Var mu_x = gaussian_filter(yhat, k);
    ad::Var mu_y = gaussian_filter(y, k);
    ad::Var xx = gaussian_filter(ad::mul(yhat, yhat), k);
    ad::Var yy = gaussian_filter(ad::mul(y, y), k);
    ad::Var xy = gaussian_filter(ad::mul(yhat, y), k);

    ad::Var mu_xy = ad::mul(mu_x, mu_y);
    ad::Var sig_x = ad::sub(xx, ad::mul(mu_x, mu_x));
    ad::Var sig_y = ad::sub(yy, ad::mul(mu_y, mu_y));
    ad::Var sig_xy = ad::sub(xy, mu_xy);

    ad::Var a1 = ad::add_scalar(ad::mul_scalar(mu_xy, 2.0), c1);
    ad::Var a2 = ad::add_scalar(ad::mul_scalar(sig_xy, 2.0), c2);
    ad::Var b1 = ad::add_scalar(ad::add(ad::mul(mu_x, mu_x), ad::mul(mu_y, mu_y)), c1);
    ad::Var b2 = ad::add_scalar(ad::add(sig_x, sig_y), c2);
    ad::Var ssim_map = ad::div(ad::mul(a1, a2), ad::mul(b1, b2));
    return ad::mean_all(ad::abs_v(ad::add_scalar(ad::mul_scalar(ssim_map, -1.0), 1.0)));
}

// ---- perceptual (feature-space) loss ----

// Sum over tap layers of |lambda_l * (phi_l(yhat) - phi_l(y))|^2, summed over
// feature elements and averaged over the batch.
inline ad::Var vgg_loss(const ad::Var& yhat, const ad::Var& y, VggFeatureExtractor& extractor,
                        const std::vector<int>& taps, const std::vector<double>& lambdas) {
    if (taps.size() != lambdas.size()) throw ArgumentError("vgg loss: taps and lambdas must align");
    ad::detail::check_same_shape(yhat.value(), y.value(), "vgg");
    const double inv_batch = 1.0 / static_cast<double>(y.value().dim(0));
    std::vector<ad::Var> f_hat = extractor.features(yhat, taps);
    std::vector<ad::Var> f_ref = extractor.features(ad::detach(y), taps);
    ad::Var total;
    for (std::size_t l = 0; l < taps.size(); ++l) {
        const double lam2 = lambdas[l] * lambdas[l];
        ad::Var term = ad::mul_scalar(ad::sum_all(ad::square(ad::sub(f_hat[l], f_ref[l]))), lam2 * inv_batch);
        total = total.valid() ? ad::add(total, term) : term;
    }
    return total;
}

// ---- frequency-domain loss ----

namespace freq_detail {

// Binary low-frequency disk: bins whose wrapped signed frequency lies within
// radius r of DC (equivalent to a centered disk after an fftshift).
inline Tensor lowpass_mask(std::int64_t H, std::int64_t W, std::int64_t r) {
    Tensor m({H, W});
    for (std::int64_t u = 0; u < H; ++u)
        for (std::int64_t v = 0; v < W; ++v) {
            const std::int64_t du = std::min(u, H - u);
            const std::int64_t dv = std::min(v, W - v);
            m.at2(u, v) = (du * du + dv * dv <= r * r) ? 1.0 : 0.0;
        }
    return m;
}

}  // namespace freq_detail

struct FreqLossResult {
    ad::Var total;
    double low = 0.0;
    double high = 0.0;
};

// Mean absolute difference of unnormalized DFT magnitudes, computed once over
// the low-frequency disk and once over its complement; both means run over
// all bins so the two terms add up to the unmasked spectrum difference.
inline FreqLossResult freq_loss(const ad::Var& yhat, const ad::Var& y, std::int64_t radius = 21) {
    ad::detail::check_same_shape(yhat.value(), y.value(), "freq");
    if (radius < 1) throw ArgumentError("freq loss radius must be >= 1");
    const Tensor& v = y.value();
    if (v.rank() < 2) throw ShapeError("freq loss expects at least 2-d input");
    const std::int64_t W = v.dim(v.rank() - 1);
    const std::int64_t H = v.dim(v.rank() - 2);
    const std::int64_t planes = v.numel() / (H * W);

    Tensor low = freq_detail::lowpass_mask(H, W, radius);
    Tensor low_full(v.shape());
    Tensor high_full(v.shape());
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < H * W; ++i) {
            low_full[p * H * W + i] = low[i];
            high_full[p * H * W + i] = 1.0 - low[i];
        }

    ad::Var mag_diff = ad::abs_v(ad::sub(ad::dft_magnitude(y), ad::dft_magnitude(yhat)));
    ad::Var low_term = ad::mean_all(ad::mul(mag_diff, ad::constant(low_full)));
    ad::Var high_term = ad::mean_all(ad::mul(mag_diff, ad::constant(high_full)));
    FreqLossResult out;
    out.total = ad::add(low_term, high_term);
    out.low = low_term.value()[0];
    out.high = high_term.value()[0];
    return out;
}

// ---- configuration and the combined objective ----

struct LossConfig {
    double w_l1 = 0.0;
    double w_l1_masked = 0.0;
    double w_adv = 0.0;
    double w_ssim = 0.0;
    double w_vgg = 0.0;
    double w_freq = 0.0;

    double masked_w = 0.5;       // tumor weight inside the region-weighted L1
    std::int64_t ssim_kernel = 11;
    double ssim_sigma = 1.5;
    std::int64_t freq_radius = 21;
    std::vector<int> vgg_taps{2, 7, 14, 21, 28};
    std::vector<double> vgg_lambdas{0.0002, 0.0001, 0.0001, 0.0002, 0.0005};
    std::uint64_t vgg_seed = 97;
    std::string vgg_weights_file;  // optional pretrained tensor archive

    void validate() const {
        for (double w : {w_l1, w_l1_masked, w_adv, w_ssim, w_vgg, w_freq})
            if (w < 0.0) throw ConfigError("loss weights must be non-negative");
        if (w_l1 + w_l1_masked + w_adv + w_ssim + w_vgg + w_freq <= 0.0)
            throw ConfigError("at least one loss term must have positive weight");
        if (masked_w < 0.0 || masked_w > 1.0) throw ConfigError("masked_w must lie in [0, 1]");
        if (ssim_kernel < 3 || ssim_kernel % 2 == 0) throw ConfigError("ssim kernel must be odd and >= 3");
        if (freq_radius < 1) throw ConfigError("freq radius must be >= 1");
        if (vgg_taps.size() != vgg_lambdas.size()) throw ConfigError("vgg taps and lambdas must align");
    }

    bool needs_adversary() const { return w_adv > 0.0; }
    bool needs_vgg() const { return w_vgg > 0.0; }

    // Named presets for the ablation grid plus the full objective.
    static LossConfig preset(const std::string& name) {
        LossConfig c;
        if (name == "l1") {
            c.w_l1 = 1.0;
        } else if (name == "l1m") {
            c.w_l1_masked = 1.0;
        } else if (name == "l1m_adv") {
            c.w_l1_masked = 1.0;
            c.w_adv = 1.0;
        } else if (name == "l1m_ssim") {
            c.w_l1_masked = 1.0;
            c.w_ssim = 1.0;
        } else if (name == "l1m_vgg") {
            c.w_l1_masked = 1.0;
            c.w_vgg = 1.0;
        } else if (name == "l1m_freq") {
            c.w_l1_masked = 1.0;
            c.w_freq = 1.0;
        } else if (name == "combined") {
            c.w_l1_masked = 5.0;
            c.w_adv = 1.0;
            c.w_ssim = 1.0;
            c.w_vgg = 1.0;
            c.w_freq = 1.0;
        } else {
            throw ConfigError("unknown loss preset '" + name + "'");
        }
        return c;
    }

    static const std::vector<std::string>& preset_names() {
        static const std::vector<std::string> names{"l1", "l1m", "l1m_adv", "l1m_ssim", "l1m_vgg", "l1m_freq",
                                                    "combined"};
        return names;
    }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = nlohmann::json{{"w_l1", c.w_l1},
                       {"w_l1_masked", c.w_l1_masked},
                       {"w_adv", c.w_adv},
                       {"w_ssim", c.w_ssim},
                       {"w_vgg", c.w_vgg},
                       {"w_freq", c.w_freq},
                       {"masked_w", c.masked_w},
                       {"ssim_kernel", c.ssim_kernel},
                       {"ssim_sigma", c.ssim_sigma},
                       {"freq_radius", c.freq_radius},
                       {"vgg_taps", c.vgg_taps},
                       {"vgg_lambdas", c.vgg_lambdas},
                       {"vgg_seed", c.vgg_seed},
                       {"vgg_weights_file", c.vgg_weights_file}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
    c.w_l1 = j.value("w_l1", c.w_l1);
    c.w_l1_masked = j.value("w_l1_masked", c.w_l1_masked);
    c.w_adv = j.value("w_adv", c.w_adv);
    c.w_ssim = j.value("w_ssim", c.w_ssim);
    c.w_vgg = j.value("w_vgg", c.w_vgg);
    c.w_freq = j.value("w_freq", c.w_freq);
    c.masked_w = j.value("masked_w", c.masked_w);
    c.ssim_kernel = j.value("ssim_kernel", c.ssim_kernel);
    c.ssim_sigma = j.value("ssim_sigma", c.ssim_sigma);
    c.freq_radius = j.value("freq_radius", c.freq_radius);
    if (j.contains("vgg_taps")) c.vgg_taps = j.at("vgg_taps").get<std::vector<int>>();
    if (j.contains("vgg_lambdas")) c.vgg_lambdas = j.at("vgg_lambdas").get<std::vector<double>>();
    c.vgg_seed = j.value("vgg_seed", c.vgg_seed);
    c.vgg_weights_file = j.value("vgg_weights_file", c.vgg_weights_file);
}

// Per-term values of one evaluation; total equals the weighted sum of the
// entries by construction.
struct LossReport {
    std::vector<std::pair<std::string, double>> terms;  // unweighted term values
    double total = 0.0;

    double term(const std::string& name) const {
        for (const auto& [k, v] : terms)
            if (k == name) return v;
        throw ArgumentError("no loss term named '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& [k, v] : terms)
            if (k == name) return true;
        return false;
    }
};

struct CombinedLoss {
    ad::Var total;
    LossReport report;
};

// Builds the enabled terms only. `d_fake` must be a discriminator output on
// the current generator candidate when the adversarial weight is positive;
// `extractor` must be present when the perceptual weight is positive.
inline CombinedLoss combined_loss(const ad::Var& yhat, const ad::Var& y, const Tensor& tumor_mask,
                                  const std::optional<ad::Var>& d_fake, const LossConfig& cfg,
                                  VggFeatureExtractor* extractor) {
    cfg.validate();
    CombinedLoss out;
    auto accumulate = [&](const std::string& name, double weight, const ad::Var& term) {
        out.report.terms.emplace_back(name, term.value()[0]);
        ad::Var weighted = ad::mul_scalar(term, weight);
        out.total = out.total.valid() ? ad::add(out.total, weighted) : weighted;
    };
    if (cfg.w_l1 > 0.0) accumulate("l1", cfg.w_l1, l1_loss(yhat, y));
    if (cfg.w_l1_masked > 0.0)
        accumulate("l1_masked", cfg.w_l1_masked, masked_l1_loss(yhat, y, tumor_mask, cfg.masked_w).total);
    if (cfg.w_adv > 0.0) {
        if (!d_fake) throw DependencyError("adversarial term enabled but no discriminator output given");
        accumulate("adv", cfg.w_adv, lsgan_g_loss(*d_fake));
    }
    if (cfg.w_ssim > 0.0) accumulate("ssim", cfg.w_ssim, ssim_loss(yhat, y, cfg.ssim_kernel, cfg.ssim_sigma));
    if (cfg.w_vgg > 0.0) {
        if (!extractor) throw DependencyError("perceptual term enabled but no feature extractor given");
        accumulate("vgg", cfg.w_vgg, vgg_loss(yhat, y, *extractor, cfg.vgg_taps, cfg.vgg_lambdas));
    }
    if (cfg.w_freq > 0.0) accumulate("freq", cfg.w_freq, freq_loss(yhat, y, cfg.freq_radius).total);
    if (!out.total.value().all_finite()) {
        std::ostringstream os;
        os << "combined loss is not finite; terms:";
        for (const auto& [k, v] : out.report.terms) os << " " << k << "=" << v;
        throw NumericError(os.str());
    }
    out.report.total = out.total.value()[0];
    return out;
}

}  // namespace seqsynth
