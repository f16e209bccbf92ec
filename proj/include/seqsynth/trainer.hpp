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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqsynth/dataset.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/fusion.hpp"
#include "seqsynth/losses.hpp"
#include "seqsynth/metrics.hpp"
#include "seqsynth/networks.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"
#include "seqsynth/vgg.hpp"

// Alternating generator/discriminator optimization: per step one
// discriminator update on a detached candidate (when the adversarial term is
// enabled), then one generator update on the combined loss. Fully
// deterministic given the seed.

namespace seqsynth {

struct TrainConfig {
    Sequence target_sequence = Sequence::t2f;
    double lr0 = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    std::int64_t batch_size = 64;
    std::int64_t epochs = 100;
    std::int64_t epoch_size = 400000;
    double lr_decay_factor = 0.5;
    std::int64_t lr_decay_every = 10;
    LossConfig loss = LossConfig::preset("combined");
    std::uint64_t seed = 1;
    double dev_fraction = 0.2;           // train/dev split used by the CLI
    std::int64_t dev_every = 0;          // dev evaluation every k epochs, 0 = off
    FusionMode dev_fusion = FusionMode::three;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    AugmentConfig augment;
    bool augment_enabled = true;

    void validate() const {
        try {
            if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
            if (epoch_size < batch_size) throw ArgumentError("epoch_size must be >= batch_size");
            if (epochs < 1) throw ArgumentError("epochs must be >= 1");
            if (!(lr0 > 0.0)) throw ArgumentError("lr0 must be positive");
            if (lr_decay_every < 1) throw ArgumentError("lr_decay_every must be >= 1");
            if (!(lr_decay_factor > 0.0)) throw ArgumentError("lr_decay_factor must be positive");
            if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw ArgumentError("dev_fraction must lie in [0, 1)");
            if (dev_every < 0) throw ArgumentError("dev_every must be >= 0");
            loss.validate();
            double weight_sum = loss.w_l1 + loss.w_l1_masked + loss.w_adv + loss.w_ssim + loss.w_vgg + loss.w_freq;
            if (!(weight_sum > 0.0)) throw ArgumentError("at least one loss weight must be positive");
            generator.validate();
            if (augment_enabled) {
                augment.validate();
                const std::int64_t mult = generator.size_multiple();
                if (augment.crop_to[0] % mult != 0 || augment.crop_to[1] % mult != 0)
                    throw ArgumentError("augment crop size must be a multiple of the generator size multiple " +
                                        std::to_string(mult));
            }
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"target_sequence", sequence_name(c.target_sequence)},
                       {"lr0", c.lr0},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"epoch_size", c.epoch_size},
                       {"lr_decay", {{"factor", c.lr_decay_factor}, {"every", c.lr_decay_every}}},
                       {"loss", c.loss},
                       {"seed", c.seed},
                       {"dev_fraction", c.dev_fraction},
                       {"dev_every", c.dev_every},
                       {"dev_fusion", fusion_mode_name(c.dev_fusion)},
                       {"generator", c.generator},
                       {"discriminator", c.discriminator},
                       {"augment", c.augment},
                       {"augment_enabled", c.augment_enabled}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("target_sequence")) c.target_sequence = sequence_from_string(j.at("target_sequence"));
    c.lr0 = j.value("lr0", c.lr0);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.epoch_size = j.value("epoch_size", c.epoch_size);
    if (j.contains("lr_decay")) {
        c.lr_decay_factor = j.at("lr_decay").value("factor", c.lr_decay_factor);
        c.lr_decay_every = j.at("lr_decay").value("every", c.lr_decay_every);
    }
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
    c.seed = j.value("seed", c.seed);
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
    c.dev_every = j.value("dev_every", c.dev_every);
    if (j.contains("dev_fusion")) c.dev_fusion = fusion_mode_from_string(j.at("dev_fusion"));
    if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
    if (j.contains("discriminator")) c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
    if (j.contains("augment")) c.augment = j.at("augment").get<AugmentConfig>();
    c.augment_enabled = j.value("augment_enabled", c.augment_enabled);
}

// Closed-form schedule: lr0 * factor^floor(epoch / every), epochs 0-indexed.
inline double learning_rate_at(const TrainConfig& cfg, std::int64_t epoch) {
    return cfg.lr0 * std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

inline std::string fnv1a64_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string train_config_hash(const TrainConfig& cfg) {
    nlohmann::json j = cfg;
    return fnv1a64_hex(j.dump());
}

// ---- optimizer ----

struct AdamState {
    double beta1 = 0.5;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::int64_t t = 0;
};

// One bias-corrected ADAM update over the parameters bound for the current
// step; moment buffers live on the Parameters and persist across steps.
inline void adam_update(ParamBinding& binding, AdamState& st, double lr) {
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (auto& [param, var] : binding.entries) {
        const Tensor& g = var.grad();
        Parameter& p = *param;
        if (p.adam_m.numel() != p.value.numel()) {
            p.adam_m = Tensor::zeros(p.value.shape());
            p.adam_v = Tensor::zeros(p.value.shape());
        }
        double* value = p.value.data();
        double* m = p.adam_m.data();
        double* v = p.adam_v.data();
        for (std::int64_t i = 0; i < p.value.numel(); ++i) {
            const double gi = g[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + st.eps);
        }
    }
}

// ---- batch assembly ----

namespace train_detail {

inline Stack25D pad_stack_to_multiple(const Stack25D& s, std::int64_t mult) {
    const std::int64_t h = fusion_detail::round_up(s.input.dim(1), mult);
    const std::int64_t w = fusion_detail::round_up(s.input.dim(2), mult);
    if (h == s.input.dim(1) && w == s.input.dim(2)) return s;
    Stack25D out;
    out.plane = s.plane;
    out.slice_index = s.slice_index;
    out.input = fusion_detail::pad_center_2d(s.input, h, w);
    if (s.target.numel() > 0) out.target = fusion_detail::pad_center_2d(s.target, h, w);
    if (s.tumor_mask.numel() > 0) out.tumor_mask = fusion_detail::pad_center_2d(s.tumor_mask, h, w);
    return out;
}

struct Batch {
    Tensor input;      // (B, 9, H, W)
    Tensor target;     // (B, 1, H, W)
    Tensor mask;       // (B, 1, H, W)
    Tensor condition;  // (B, 1, H, W) center slice of the first input sequence
};

inline Batch pack_batch(const std::vector<Stack25D>& stacks) {
    const std::int64_t b = static_cast<std::int64_t>(stacks.size());
    const std::int64_t h = stacks[0].input.dim(1), w = stacks[0].input.dim(2);
    Batch out{Tensor::zeros({b, 9, h, w}), Tensor::zeros({b, 1, h, w}), Tensor::zeros({b, 1, h, w}),
              Tensor::zeros({b, 1, h, w})};
    for (std::int64_t n = 0; n < b; ++n) {
        const Stack25D& s = stacks[static_cast<std::size_t>(n)];
        if (s.input.dim(1) != h || s.input.dim(2) != w) throw ShapeError("batch slices disagree in size");
        for (std::int64_t c = 0; c < 9; ++c)
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t q = 0; q < w; ++q) out.input.at4(n, c, r, q) = s.input.at3(c, r, q);
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q) {
                out.target.at4(n, 0, r, q) = s.target.at3(0, r, q);
                out.mask.at4(n, 0, r, q) = s.tumor_mask.at3(0, r, q);
                // channel 1 holds the center (dz = 0) slice of input sequence 0
                out.condition.at4(n, 0, r, q) = s.input.at3(1, r, q);
            }
    }
    return out;
}

// Candidate plus optional conditioning channel, matching
// DiscriminatorConfig::in_channels().
inline ad::Var disc_input(const ad::Var& candidate, const ad::Var& condition, bool conditional) {
    return conditional ? ad::concat_ch(candidate, condition) : candidate;
}

}  // namespace train_detail

// Adapts a generator to the slice-level SliceSynth interface. The generator
// must outlive the returned function.
inline SliceSynth generator_synth(Generator& gen) {
    return [&gen](const Tensor& stack) {
        Tensor x({1, stack.dim(0), stack.dim(1), stack.dim(2)});
        std::copy(stack.data(), stack.data() + stack.numel(), x.data());
        Tensor y = gen.predict(x);
        Tensor out({1, y.dim(2), y.dim(3)});
        std::copy(y.data(), y.data() + y.numel(), out.data());
        return out;
    };
}

// ---- dev-set monitoring ----

// Fusion inference plus masked metrics per dev case. Cases without a
// segmentation degrade to whole-brain "healthy" scores with a warning.
inline std::vector<MetricRow> evaluate_dev(const SliceSynth& synth, const std::vector<NormalizedCase>& dev_cases,
                                           FusionMode mode, std::int64_t size_multiple,
                                           std::ostream* warn = nullptr) {
    std::vector<MetricRow> rows;
    rows.reserve(dev_cases.size());
    for (const NormalizedCase& nc : dev_cases) {
        if (nc.target.numel() == 0)
            throw MissingInputError("dev case " + nc.case_id + " has no target volume to score against");
        const std::array<const Volume*, 3> in{&nc.inputs[0], &nc.inputs[1], &nc.inputs[2]};
        FusedVolume fused = fuse(synth, in, mode, size_multiple);
        const LabelVolume* seg = nc.seg ? &*nc.seg : nullptr;
        if (!seg && warn)
            *warn << "warning: case " << nc.case_id << " has no segmentation; scoring the whole brain as healthy\n";
        rows.push_back(evaluate_case(nc.case_id, fused.value, nc.target, seg));
    }
    return rows;
}

// ---- training loop ----

struct StepLog {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::int64_t global_step = 0;
    double lr = 0.0;
    LossReport generator;
    std::optional<double> adv_d;  // discriminator loss, when trained
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<CheckpointMeta> epoch_meta;
    std::filesystem::path log_path;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;  // empty unless dev evaluation ran
};

namespace train_detail {

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline void write_log_row(std::ofstream& log, const StepLog& s) {
    static const char* kTerms[] = {"l1", "l1_masked", "adv", "ssim", "vgg", "freq"};
    log << s.epoch << "," << s.step << "," << s.global_step << "," << format_double(s.lr);
    for (const char* name : kTerms) {
        log << ",";
        if (s.generator.has(name)) log << format_double(s.generator.term(name));
        if (std::string(name) == "adv") {
            log << ",";
            if (s.adv_d) log << format_double(*s.adv_d);
        }
    }
    log << "," << format_double(s.generator.total) << "\n";
}

}  // namespace train_detail

// Runs the full schedule over pre-normalized cases, logging one CSV row per
// step and checkpointing per epoch under run_dir/ckpt/<target>/<epoch>.bin.
// When dev evaluation is enabled the epoch with the best mean healthy-region
// SSIM is mirrored to best.bin.
inline TrainResult train_model(const TrainConfig& cfg, const std::vector<NormalizedCase>& train_cases,
                               const std::vector<NormalizedCase>& dev_cases, const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (train_cases.empty()) throw ArgumentError("no training cases");

    struct Sample {
        std::size_t case_idx;
        SliceRef ref;
    };
    const std::vector<Plane> planes{Plane::sagittal, Plane::coronal, Plane::axial};
    std::vector<Sample> pool;
    for (std::size_t ci = 0; ci < train_cases.size(); ++ci) {
        if (train_cases[ci].target.numel() == 0)
            throw MissingInputError("training case " + train_cases[ci].case_id + " has no target volume");
        for (const SliceRef& r : enumerate_slices(train_cases[ci].target, planes)) pool.push_back({ci, r});
    }
    if (pool.empty()) throw EmptyRegionError("no nonzero target slices to train on");

    Generator gen(cfg.generator, cfg.seed);
    std::optional<Discriminator> disc;
    if (cfg.loss.needs_adversary()) disc.emplace(cfg.discriminator, cfg.seed);
    std::optional<VggFeatureExtractor> vgg;
    if (cfg.loss.needs_vgg())
        vgg = cfg.loss.vgg_weights_file.empty()
                  ? VggFeatureExtractor::random_init(VggConfig{}, cfg.loss.vgg_seed)
                  : VggFeatureExtractor::load(cfg.loss.vgg_weights_file, VggConfig{});

    AdamState adam_g{cfg.beta1, cfg.beta2, cfg.adam_eps, 0};
    AdamState adam_d{cfg.beta1, cfg.beta2, cfg.adam_eps, 0};

    const std::string cfg_hash = train_config_hash(cfg);
    const fs::path ckpt_dir = run_dir / "ckpt" / sequence_name(cfg.target_sequence);
    fs::create_directories(ckpt_dir);
    const fs::path log_path = run_dir / "train_log.csv";
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot write training log " + log_path.string());
    log << "epoch,step,global_step,lr,l1,l1_masked,adv_g,adv_d,ssim,vgg,freq,total\n";

    const std::int64_t mult = cfg.generator.size_multiple();
    const std::int64_t steps_per_epoch = cfg.epoch_size / cfg.batch_size;
    const bool conditional = cfg.discriminator.conditional;

    TrainResult result;
    result.log_path = log_path;
    std::int64_t global_step = 0;
    double best_ssim = -std::numeric_limits<double>::infinity();

    for (std::int64_t e = 0; e < cfg.epochs; ++e) {
        const double lr = learning_rate_at(cfg, e);
        const auto indices =
            epoch_sample_indices(pool.size(), static_cast<std::size_t>(cfg.epoch_size), cfg.seed,
                                 static_cast<std::uint64_t>(e));
        Rng aug_rng = Rng::derive(cfg.seed, {0x61756731ULL, static_cast<std::uint64_t>(e)});

        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<Stack25D> stacks;
            stacks.reserve(static_cast<std::size_t>(cfg.batch_size));
            for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
                const Sample& sm = pool[indices[static_cast<std::size_t>(s * cfg.batch_size + b)]];
                Stack25D st = extract_stack(train_cases[sm.case_idx], sm.ref.plane, sm.ref.index);
                stacks.push_back(cfg.augment_enabled ? augment(st, cfg.augment, aug_rng)
                                                     : train_detail::pad_stack_to_multiple(st, mult));
            }
            train_detail::Batch batch = train_detail::pack_batch(stacks);

            ad::Var x = ad::leaf(batch.input, false);
            ad::Var y = ad::leaf(batch.target, false);
            ad::Var cond = ad::leaf(batch.condition, false);

            ParamBinding g_bind;
            ad::Var yhat = gen.forward(x, &g_bind);

            std::optional<double> d_loss_value;
            if (disc) {
                ParamBinding d_bind;
                ad::Var d_real = disc->forward(train_detail::disc_input(y, cond, conditional), &d_bind, true);
                ad::Var d_fake =
                    disc->forward(train_detail::disc_input(ad::detach(yhat), cond, conditional), &d_bind, false);
                ad::Var d_loss = lsgan_d_loss(d_real, d_fake);
                if (!d_loss.value().all_finite())
                    throw NumericError("discriminator loss not finite at epoch " + std::to_string(e) + " step " +
                                       std::to_string(s));
                d_loss.backward();
                adam_update(d_bind, adam_d, lr);
                d_loss_value = d_loss.value()[0];
            }

            std::optional<ad::Var> d_fake_g;
            if (disc)  // discriminator parameters enter as constants: no gradient reaches them here
                d_fake_g = disc->forward(train_detail::disc_input(yhat, cond, conditional), nullptr, false);

            CombinedLoss loss;
            try {
                loss = combined_loss(yhat, y, batch.mask, d_fake_g, cfg.loss, vgg ? &*vgg : nullptr);
            } catch (const NumericError& err) {
                throw NumericError("epoch " + std::to_string(e) + " step " + std::to_string(s) + ": " + err.what());
            }
            loss.total.backward();
            adam_update(g_bind, adam_g, lr);

            StepLog sl;
            sl.epoch = e;
            sl.step = s;
            sl.global_step = global_step;
            sl.lr = lr;
            sl.generator = loss.report;
            sl.adv_d = d_loss_value;
            train_detail::write_log_row(log, sl);
            result.steps.push_back(std::move(sl));
            ++global_step;
        }

        CheckpointMeta meta;
        meta.epoch = e;
        meta.global_step = global_step;
        meta.config_hash = cfg_hash;

        const bool run_dev = cfg.dev_every > 0 && !dev_cases.empty() &&
                             (((e + 1) % cfg.dev_every == 0) || e == cfg.epochs - 1);
        if (run_dev) {
            const auto rows = evaluate_dev(generator_synth(gen), dev_cases, cfg.dev_fusion, mult, &std::cerr);
            const MetricRow mean = mean_metric_row(rows);
            auto put = [&meta](const char* key, const std::optional<double>& v) {
                if (v && std::isfinite(*v)) meta.dev_metrics[key] = *v;
            };
            put("ssim_h", mean.ssim_h);
            put("ssim_t", mean.ssim_t);
            put("psnr_h", mean.psnr_h);
            put("psnr_t", mean.psnr_t);
        }

        const fs::path epoch_path = ckpt_dir / (std::to_string(e) + ".bin");
        save_checkpoint(epoch_path, gen, disc ? &*disc : nullptr, meta);
        result.last_checkpoint = epoch_path;
        result.epoch_meta.push_back(meta);

        if (run_dev && meta.dev_metrics.count("ssim_h") && meta.dev_metrics.at("ssim_h") > best_ssim) {
            best_ssim = meta.dev_metrics.at("ssim_h");
            result.best_checkpoint = ckpt_dir / "best.bin";
            fs::copy_file(epoch_path, result.best_checkpoint, fs::copy_options::overwrite_existing);
        }
    }

    log.flush();
    if (!log) throw IoError("short write on training log " + log_path.string());
    return result;
}

}  // namespace seqsynth
