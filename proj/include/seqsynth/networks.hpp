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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqsynth/autodiff.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/rng.hpp"
#include "seqsynth/tensor.hpp"

namespace seqsynth {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor adam_m;  // optimizer state, allocated on the first step
    Tensor adam_v;
};

// Collects the leaf Vars a forward pass created for each parameter so the
// caller can harvest gradients after backward(). Passing nullptr to a forward
// builds a gradient-free (inference) graph instead.
struct ParamBinding {
    bool requires_grad = true;
    std::vector<std::pair<Parameter*, ad::Var>> entries;

    ad::Var bind(Parameter& p) {
        ad::Var v = ad::leaf(p.value, requires_grad);
        entries.emplace_back(&p, v);
        return v;
    }
};

inline ad::Var bind_param(Parameter& p, ParamBinding* binding) {
    if (binding) return binding->bind(p);
    return ad::leaf(p.value, false);
}

// ---- generator ----

// Encoder: `depth` stride-2 3x3 convolutions, Mish after each, widths
// base_width * 2^i capped at width_cap. Decoder mirrors it with nearest
// upsampling, a skip concatenation from the matching encoder activation (the
// raw input at full resolution), a 3x3 convolution and Mish. A 1x1 head with
// CeLU(alpha=1) produces the output.
struct GeneratorConfig {
    std::int64_t in_channels = 9;
    std::int64_t out_channels = 1;
    std::int64_t depth = 8;
    std::int64_t base_width = 32;
    std::int64_t width_cap = 512;
    double init_std = 0.02;

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0) throw ConfigError("generator channel counts must be positive");
        if (depth < 1 || depth > 10) throw ConfigError("generator depth must lie in [1, 10]");
        if (base_width < 1 || width_cap < base_width) throw ConfigError("bad generator widths");
        if (init_std <= 0.0) throw ConfigError("init_std must be positive");
    }

    std::int64_t width(std::int64_t level) const { return std::min(base_width << level, width_cap); }
    std::int64_t size_multiple() const { return std::int64_t{1} << depth; }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = nlohmann::json{{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"depth", c.depth},
                       {"base_width", c.base_width},   {"width_cap", c.width_cap},       {"init_std", c.init_std}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.depth = j.value("depth", c.depth);
    c.base_width = j.value("base_width", c.base_width);
    c.width_cap = j.value("width_cap", c.width_cap);
    c.init_std = j.value("init_std", c.init_std);
}

class Generator {
 public:
    Generator() = default;

    Generator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = Rng::derive(seed, {0x67656e5fULL});
        std::int64_t in = cfg_.in_channels;
        for (std::int64_t i = 0; i < cfg_.depth; ++i) {
            add_conv("enc" + std::to_string(i), cfg_.width(i), in, 3, rng);
            in = cfg_.width(i);
        }
        for (std::int64_t i = cfg_.depth - 1; i >= 0; --i) {
            const std::int64_t up_ch = (i == cfg_.depth - 1) ? cfg_.width(cfg_.depth - 1) : dec_out(i + 1);
            const std::int64_t skip_ch = (i == 0) ? cfg_.in_channels : cfg_.width(i - 1);
            add_conv("dec" + std::to_string(i), dec_out(i), up_ch + skip_ch, 3, rng);
        }
        add_conv("head", cfg_.out_channels, dec_out(0), 1, rng);
    }

    const GeneratorConfig& config() const { return cfg_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }

    ad::Var forward(const ad::Var& x, ParamBinding* binding) {
        const Tensor& xv = x.value();
        if (xv.rank() != 4 || xv.dim(1) != cfg_.in_channels)
            throw ShapeError("generator expects (N, " + std::to_string(cfg_.in_channels) + ", H, W) input");
        const std::int64_t mult = cfg_.size_multiple();
        if (xv.dim(2) % mult != 0 || xv.dim(3) % mult != 0 || xv.dim(2) < mult || xv.dim(3) < mult)
            throw ShapeError("generator input extent must be a positive multiple of " + std::to_string(mult));

        std::vector<ad::Var> acts;
        acts.reserve(static_cast<std::size_t>(cfg_.depth) + 1);
        acts.push_back(x);
        for (std::int64_t i = 0; i < cfg_.depth; ++i)
            acts.push_back(ad::mish(conv(("enc" + std::to_string(i)), acts.back(), binding, 2, 1)));
        ad::Var y = acts.back();
        for (std::int64_t i = cfg_.depth - 1; i >= 0; --i) {
            y = ad::upsample_nearest2(y);
            y = ad::concat_ch(y, acts[static_cast<std::size_t>(i)]);
            y = ad::mish(conv("dec" + std::to_string(i), y, binding, 1, 1));
        }
        return ad::celu(conv("head", y, binding, 1, 0), 1.0);
    }

    // Inference convenience: raw network output for one input tensor.
    Tensor predict(const Tensor& x) {
        ad::Var out = forward(ad::leaf(x, false), nullptr);
        return out.value();
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

 private:
    std::int64_t dec_out(std::int64_t level) const {
        return (level == 0) ? cfg_.base_width : cfg_.width(level - 1);
    }

    void add_conv(const std::string& name, std::int64_t out_ch, std::int64_t in_ch, std::int64_t k, Rng& rng) {
        params_.push_back({name + ".weight", Tensor::randn({out_ch, in_ch, k, k}, rng, 0.0, cfg_.init_std), {}, {}});
        params_.push_back({name + ".bias", Tensor::zeros({out_ch}), {}, {}});
    }

    ad::Var conv(const std::string& name, const ad::Var& x, ParamBinding* binding, std::int64_t stride,
                 std::int64_t pad) {
        Parameter* w = find(name + ".weight");
        Parameter* b = find(name + ".bias");
        return ad::conv2d(x, bind_param(*w, binding), bind_param(*b, binding), stride, pad);
    }

    GeneratorConfig cfg_;
    std::vector<Parameter> params_;
};

// ---- discriminator ----

// Patch discriminator: n_layers 4x4 convolutions, stride 2 for all but the
// last two, LeakyReLU(0.2) between layers, single-channel patch map output.
// Stride-2 layers use padding 2 and stride-1 layers padding 1, so 256 input
// maps to a 31x31 patch grid and 64 to 7x7. Every weight is spectrally
// normalized with a persistent power-iteration vector.
struct DiscriminatorConfig {
    bool conditional = true;  // pair input (candidate + conditioning slice) vs candidate only
    std::int64_t n_layers = 5;
    std::int64_t base_width = 64;
    std::int64_t width_cap = 512;
    double init_std = 0.02;
    double leaky_slope = 0.2;
    std::int64_t sn_power_iters = 1;
    std::int64_t sn_init_iters = 30;

    std::int64_t in_channels() const { return conditional ? 2 : 1; }

    void validate() const {
        if (n_layers < 3 || n_layers > 8) throw ConfigError("discriminator n_layers must lie in [3, 8]");
        if (base_width < 1 || width_cap < base_width) throw ConfigError("bad discriminator widths");
        if (init_std <= 0.0) throw ConfigError("init_std must be positive");
        if (sn_power_iters < 0 || sn_init_iters < 0) throw ConfigError("power iteration counts must be >= 0");
    }

    std::int64_t stride(std::int64_t layer) const { return (layer < n_layers - 2) ? 2 : 1; }
    std::int64_t padding(std::int64_t layer) const { return (stride(layer) == 2) ? 2 : 1; }
    std::int64_t out_width(std::int64_t layer) const {
        return (layer == n_layers - 1) ? 1 : std::min(base_width << layer, width_cap);
    }
};

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
    j = nlohmann::json{{"conditional", c.conditional},   {"n_layers", c.n_layers},
                       {"base_width", c.base_width},     {"width_cap", c.width_cap},
                       {"init_std", c.init_std},         {"leaky_slope", c.leaky_slope},
                       {"sn_power_iters", c.sn_power_iters}, {"sn_init_iters", c.sn_init_iters}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
    c.conditional = j.value("conditional", c.conditional);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.base_width = j.value("base_width", c.base_width);
    c.width_cap = j.value("width_cap", c.width_cap);
    c.init_std = j.value("init_std", c.init_std);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.sn_power_iters = j.value("sn_power_iters", c.sn_power_iters);
    c.sn_init_iters = j.value("sn_init_iters", c.sn_init_iters);
}

namespace sn_detail {

// One power-iteration round over W viewed as (rows, cols) = (Co, Ci*kh*kw).
inline void power_iterate(const Tensor& w, Tensor& u, Tensor& v) {
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.numel() / rows;
    // v = normalize(W^T u)
    for (std::int64_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) acc += w[r * cols + c] * u[r];
        v[c] = acc;
    }
    double nv = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) nv += v[c] * v[c];
    nv = std::sqrt(nv) + 1e-12;
    for (std::int64_t c = 0; c < cols; ++c) v[c] /= nv;
    // u = normalize(W v)
    for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[c];
        u[r] = acc;
    }
    double nu = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) nu += u[r] * u[r];
    nu = std::sqrt(nu) + 1e-12;
    for (std::int64_t r = 0; r < rows; ++r) u[r] /= nu;
}

}  // namespace sn_detail

class Discriminator {
 public:
    Discriminator() = default;

    Discriminator(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = Rng::derive(seed, {0x646973635fULL});
        std::int64_t in = cfg_.in_channels();
        for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::int64_t out = cfg_.out_width(l);
            const std::string name = "layer" + std::to_string(l);
            params_.push_back({name + ".weight", Tensor::randn({out, in, 4, 4}, rng, 0.0, cfg_.init_std), {}, {}});
            params_.push_back({name + ".bias", Tensor::zeros({out}), {}, {}});
            Tensor u = Tensor::randn({out}, rng);
            double n = 0.0;
            for (std::int64_t i = 0; i < u.numel(); ++i) n += u[i] * u[i];
            n = std::sqrt(n) + 1e-12;
            for (std::int64_t i = 0; i < u.numel(); ++i) u[i] /= n;
            sn_u_.push_back(std::move(u));
            in = out;
        }
        for (std::int64_t l = 0; l < cfg_.n_layers; ++l)
            for (std::int64_t it = 0; it < cfg_.sn_init_iters; ++it) refresh_u(l);
    }

    const DiscriminatorConfig& config() const { return cfg_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    std::vector<Tensor>& power_vectors() { return sn_u_; }

    // x: (N, in_channels, H, W) -> patch logits (N, 1, Ho, Wo).
    // update_power_iter refreshes the persistent u vectors before use (the
    // training path); inference passes reuse the stored estimate.
    ad::Var forward(const ad::Var& x, ParamBinding* binding, bool update_power_iter) {
        const Tensor& xv = x.value();
        if (xv.rank() != 4 || xv.dim(1) != cfg_.in_channels())
            throw ShapeError("discriminator expects (N, " + std::to_string(cfg_.in_channels()) + ", H, W) input");
        ad::Var y = x;
        for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
            if (update_power_iter)
                for (std::int64_t it = 0; it < cfg_.sn_power_iters; ++it) refresh_u(l);
            y = sn_conv(l, y, binding);
            if (l + 1 < cfg_.n_layers) y = ad::leaky_relu(y, cfg_.leaky_slope);
        }
        return y;
    }

    Tensor predict(const Tensor& x) {
        ad::Var out = forward(ad::leaf(x, false), nullptr, false);
        return out.value();
    }

    // Effective (normalized) weight of one layer, for inspection and tests.
    Tensor normalized_weight(std::int64_t layer) {
        Parameter& w = params_[static_cast<std::size_t>(2 * layer)];
        Tensor u = sn_u_[static_cast<std::size_t>(layer)];
        Tensor v = Tensor::zeros({w.value.numel() / w.value.dim(0)});
        sn_detail::power_iterate(w.value, u, v);
        const double sigma = sigma_of(w.value, u, v);
        Tensor out = w.value;
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= sigma;
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

 private:
    static double sigma_of(const Tensor& w, const Tensor& u, const Tensor& v) {
        const std::int64_t rows = w.dim(0);
        const std::int64_t cols = w.numel() / rows;
        double sigma = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[c];
            sigma += u[r] * acc;
        }
        return sigma;
    }

    void refresh_u(std::int64_t layer) {
        Parameter& w = params_[static_cast<std::size_t>(2 * layer)];
        Tensor v = Tensor::zeros({w.value.numel() / w.value.dim(0)});
        sn_detail::power_iterate(w.value, sn_u_[static_cast<std::size_t>(layer)], v);
    }

    // sigma enters the graph as sum(W * u v^T) so gradients flow through W
    // both directly and via the normalization, with u and v held constant.
    ad::Var sn_conv(std::int64_t layer, const ad::Var& x, ParamBinding* binding) {
        Parameter& wp = params_[static_cast<std::size_t>(2 * layer)];
        Parameter& bp = params_[static_cast<std::size_t>(2 * layer + 1)];
        const Tensor& w = wp.value;
        const std::int64_t rows = w.dim(0);
        const std::int64_t cols = w.numel() / rows;
        const Tensor& u = sn_u_[static_cast<std::size_t>(layer)];
        Tensor v = Tensor::zeros({cols});
        Tensor u_copy = u;
        sn_detail::power_iterate(w, u_copy, v);

        Tensor uvT(w.shape());
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c) uvT[r * cols + c] = u_copy[r] * v[c];

        ad::Var wvar = bind_param(wp, binding);
        ad::Var sigma = ad::sum_all(ad::mul(wvar, ad::constant(uvT)));
        ad::Var wsn = ad::scale_by(wvar, ad::inv(sigma));
        return ad::conv2d(x, wsn, bind_param(bp, binding), cfg_.stride(layer), cfg_.padding(layer));
    }

    DiscriminatorConfig cfg_;
    std::vector<Parameter> params_;
    std::vector<Tensor> sn_u_;  // persistent power-iteration state per layer
};

// ---- checkpoints ----

struct CheckpointMeta {
    std::int64_t epoch = 0;
    std::int64_t global_step = 0;
    std::string config_hash;
    std::map<std::string, double> dev_metrics;
};

inline void to_json(nlohmann::json& j, const CheckpointMeta& m) {
    j = nlohmann::json{{"epoch", m.epoch},
                       {"global_step", m.global_step},
                       {"config_hash", m.config_hash},
                       {"dev_metrics", m.dev_metrics}};
}

inline void from_json(const nlohmann::json& j, CheckpointMeta& m) {
    m.epoch = j.value("epoch", std::int64_t{0});
    m.global_step = j.value("global_step", std::int64_t{0});
    m.config_hash = j.value("config_hash", std::string{});
    if (j.contains("dev_metrics")) m.dev_metrics = j.at("dev_metrics").get<std::map<std::string, double>>();
}

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'S', 'Q', 'S', 'Y', 'N', 'C', 'K', '1'};

inline void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    const auto name_len = static_cast<std::uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = static_cast<std::uint8_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (std::size_t d = 0; d < t.rank(); ++d) {
        const std::int64_t dim = t.dim(d);
        out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline std::pair<std::string, Tensor> read_tensor(std::ifstream& in) {
    std::uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) in.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!in) throw FormatError("truncated checkpoint tensor header");
    Tensor t(dims);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint tensor data");
    return {std::move(name), std::move(t)};
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::filesystem::path& path, Generator& gen, Discriminator* disc,
                            const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));

    nlohmann::json j;
    j["generator"] = gen.config();
    if (disc) j["discriminator"] = disc->config();
    j["meta"] = meta;
    const std::string js = j.dump();
    const auto js_len = static_cast<std::uint32_t>(js.size());
    out.write(reinterpret_cast<const char*>(&js_len), sizeof(js_len));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));

    std::uint32_t n_tensors = static_cast<std::uint32_t>(gen.params().size());
    if (disc) n_tensors += static_cast<std::uint32_t>(disc->params().size() + disc->power_vectors().size());
    out.write(reinterpret_cast<const char*>(&n_tensors), sizeof(n_tensors));
    for (const auto& p : gen.params()) ckpt_detail::write_tensor(out, "gen." + p.name, p.value);
    if (disc) {
        for (const auto& p : disc->params()) ckpt_detail::write_tensor(out, "disc." + p.name, p.value);
        for (std::size_t l = 0; l < disc->power_vectors().size(); ++l)
            ckpt_detail::write_tensor(out, "disc.layer" + std::to_string(l) + ".sn_u", disc->power_vectors()[l]);
    }
    if (!out) throw IoError("short write on checkpoint " + path.string());
}

struct LoadedCheckpoint {
    Generator generator;
    std::optional<Discriminator> discriminator;
    CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
        throw FormatError(path.string() + ": not a checkpoint file");
    std::uint32_t js_len = 0;
    in.read(reinterpret_cast<char*>(&js_len), sizeof(js_len));
    std::string js(js_len, '\0');
    in.read(js.data(), js_len);
    if (!in) throw FormatError(path.string() + ": truncated checkpoint header");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad checkpoint config block: " + e.what());
    }

    LoadedCheckpoint lc;
    GeneratorConfig gcfg = j.at("generator").get<GeneratorConfig>();
    lc.generator = Generator(gcfg, 0);
    if (j.contains("discriminator") && !j.at("discriminator").is_null()) {
        DiscriminatorConfig dcfg = j.at("discriminator").get<DiscriminatorConfig>();
        lc.discriminator = Discriminator(dcfg, 0);
    }
    lc.meta = j.value("meta", CheckpointMeta{});

    std::uint32_t n_tensors = 0;
    in.read(reinterpret_cast<char*>(&n_tensors), sizeof(n_tensors));
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto [name, t] = ckpt_detail::read_tensor(in);
        if (name.rfind("gen.", 0) == 0) {
            Parameter* p = lc.generator.find(name.substr(4));
            if (!p || !p->value.same_shape(t)) throw FormatError("checkpoint tensor " + name + " does not fit");
            p->value = std::move(t);
        } else if (name.rfind("disc.", 0) == 0) {
            if (!lc.discriminator) throw FormatError("checkpoint holds discriminator tensors but no config");
            const std::string dn = name.substr(5);
            if (dn.size() > 5 && dn.substr(dn.size() - 5) == ".sn_u") {
                const auto layer = static_cast<std::size_t>(std::stoll(dn.substr(5, dn.size() - 10)));
                if (layer >= lc.discriminator->power_vectors().size())
                    throw FormatError("checkpoint tensor " + name + " does not fit");
                lc.discriminator->power_vectors()[layer] = std::move(t);
            } else {
                Parameter* p = lc.discriminator->find(dn);
                if (!p || !p->value.same_shape(t)) throw FormatError("checkpoint tensor " + name + " does not fit");
                p->value = std::move(t);
            }
        } else {
            throw FormatError("checkpoint tensor " + name + " has an unknown prefix");
        }
    }
    return lc;
}

}  // namespace seqsynth
