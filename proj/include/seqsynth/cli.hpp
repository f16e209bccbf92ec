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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "seqsynth/case_io.hpp"
#include "seqsynth/dataset.hpp"
#include "seqsynth/errors.hpp"
#include "seqsynth/fusion.hpp"
#include "seqsynth/metrics.hpp"
#include "seqsynth/networks.hpp"
#include "seqsynth/nifti.hpp"
#include "seqsynth/phantom.hpp"
#include "seqsynth/preprocess.hpp"
#include "seqsynth/trainer.hpp"
#include "seqsynth/volume.hpp"

// Pipeline entry point: `phantom`, `fit-landmarks`, `train`, `synthesize`,
// `evaluate`. Config files are JSON with the key names of the stage config
// types; explicit flags override file values, and the effective merged
// config is written next to the primary output. Exit codes: 0 success,
// 2 usage error, 3 config error, 1 anything else; failures print one
// `error: <kind>: <message>` line on stderr.

namespace seqsynth {

namespace cli_detail {

namespace fs = std::filesystem;

inline void write_config_used(const fs::path& dir, const std::string& stage, const nlohmann::json& j) {
    fs::create_directories(dir);
    const fs::path path = dir / (stage + ".config_used.json");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline nlohmann::json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
}

// ---- phantom ----

struct PhantomArgs {
    std::int64_t cases = 4;
    std::int64_t shape = 32;
    std::uint64_t seed = 1;
    std::string out;
    double tumor_radius_min = 3.0;
    double tumor_radius_max = 5.0;
    int shells = 4;
    double noise_sigma = 1.0;
    bool determinism = false;
};

inline int run_phantom(const PhantomArgs& a) {
    if (a.cases < 1) throw ConfigError("--cases must be >= 1");
    PhantomSpec spec;
    spec.shape = {a.shape, a.shape, a.shape};
    spec.tumor_radius_range = {a.tumor_radius_min, a.tumor_radius_max};
    spec.n_shells = a.shells;
    spec.noise_sigma = a.noise_sigma;
    try {
        spec.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    for (std::int64_t i = 0; i < a.cases; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "case_%04lld", static_cast<long long>(i));
        spec.seed = a.seed + static_cast<std::uint64_t>(i);
        save_case(a.out, generate_phantom_case(spec, id));
    }
    write_config_used(a.out, "phantom",
                      nlohmann::json{{"cases", a.cases},
                                     {"shape", spec.shape},
                                     {"seed", a.seed},
                                     {"tumor_radius_range", spec.tumor_radius_range},
                                     {"n_shells", spec.n_shells},
                                     {"noise_sigma", spec.noise_sigma},
                                     {"out", a.out},
                                     {"determinism", a.determinism}});
    return 0;
}

// ---- fit-landmarks ----

struct FitLandmarksArgs {
    std::string data;
    std::string out;
    bool determinism = false;
};

inline int run_fit_landmarks(const FitLandmarksArgs& a) {
    const auto dirs = list_case_dirs(a.data);
    if (dirs.empty()) throw MissingInputError("no case directories under " + a.data);
    std::vector<SequenceSet> cases;
    cases.reserve(dirs.size());
    for (const auto& d : dirs) cases.push_back(load_case(d, {}));

    LandmarkMap map;
    for (Sequence s : kAllSequences) {
        std::vector<const Volume*> vols;
        for (const auto& c : cases)
            if (c.has(s)) vols.push_back(&c.get(s));
        if (vols.empty()) {
            std::cerr << "warning: no volumes for sequence " << sequence_name(s) << "; skipping\n";
            continue;
        }
        map[s] = fit_landmarks(vols, default_percentiles());
    }
    if (map.empty()) throw MissingInputError("no volumes found for any sequence");
    const fs::path out_path(a.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_landmarks(out_path, map);
    write_config_used(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "fit-landmarks",
                      nlohmann::json{{"data", a.data},
                                     {"out", a.out},
                                     {"cases", dirs.size()},
                                     {"percentiles", default_percentiles()},
                                     {"determinism", a.determinism}});
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string data;
    std::string landmarks;
    std::string target;
    std::string out;
    std::string config_file;
    std::string loss_preset;
    std::optional<std::int64_t> epochs, epoch_size, batch_size, dev_every, gen_depth, gen_base_width;
    std::optional<double> lr0, dev_fraction;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> dev_fusion;
    bool no_augment = false;
    bool determinism = false;
};

inline int run_train(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config_file.empty()) {
        try {
            cfg = load_json_file(a.config_file).get<TrainConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad training config: ") + e.what());
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
    try {
        cfg.target_sequence = sequence_from_string(a.target);
        if (!a.loss_preset.empty()) cfg.loss = LossConfig::preset(a.loss_preset);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.epoch_size) cfg.epoch_size = *a.epoch_size;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.lr0) cfg.lr0 = *a.lr0;
    if (a.seed) cfg.seed = *a.seed;
    if (a.dev_fraction) cfg.dev_fraction = *a.dev_fraction;
    if (a.dev_every) cfg.dev_every = *a.dev_every;
    if (a.dev_fusion) cfg.dev_fusion = fusion_mode_from_string(*a.dev_fusion);
    if (a.gen_depth) cfg.generator.depth = static_cast<int>(*a.gen_depth);
    if (a.gen_base_width) cfg.generator.base_width = *a.gen_base_width;
    if (a.no_augment) cfg.augment_enabled = false;
    cfg.validate();

    const LandmarkMap landmarks = load_landmarks(a.landmarks);
    auto [train_dirs, dev_dirs] = split_train_dev(list_case_dirs(a.data), cfg.dev_fraction);
    if (train_dirs.empty()) throw MissingInputError("no training cases under " + a.data);

    const auto required = input_sequences_for(cfg.target_sequence);
    const std::vector<Sequence> need{required[0], required[1], required[2], cfg.target_sequence};
    auto load_split = [&](const std::vector<fs::path>& dirs) {
        std::vector<NormalizedCase> out;
        out.reserve(dirs.size());
        for (const auto& d : dirs) out.push_back(normalize_case(load_case(d, need), cfg.target_sequence, landmarks));
        return out;
    };
    const std::vector<NormalizedCase> train_cases = load_split(train_dirs);
    const std::vector<NormalizedCase> dev_cases = load_split(dev_dirs);

    const TrainResult result = train_model(cfg, train_cases, dev_cases, a.out);

    nlohmann::json j = cfg;
    j["data"] = a.data;
    j["landmarks"] = a.landmarks;
    j["out"] = a.out;
    j["determinism"] = a.determinism;
    j["train_cases"] = train_dirs.size();
    j["dev_cases"] = dev_dirs.size();
    write_config_used(a.out, "train", j);

    std::cout << "trained " << result.steps.size() << " steps; last checkpoint "
              << result.last_checkpoint.string() << "\n";
    return 0;
}

// ---- synthesize ----

struct SynthesizeArgs {
    std::string checkpoint;
    std::string case_dir;
    std::string target;
    std::string landmarks;
    std::string orientations = "nine";
    std::string out;
    bool determinism = false;
};

inline int run_synthesize(const SynthesizeArgs& a) {
    Sequence target;
    FusionMode mode;
    try {
        target = sequence_from_string(a.target);
        mode = fusion_mode_from_string(a.orientations);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const LandmarkMap landmarks = load_landmarks(a.landmarks);

    const auto required = input_sequences_for(target);
    const SequenceSet raw = load_case(a.case_dir, {required[0], required[1], required[2]});
    const NormalizedCase nc = normalize_case(raw, target, landmarks);

    const SliceSynth synth = generator_synth(ck.generator);
    const std::array<const Volume*, 3> in{&nc.inputs[0], &nc.inputs[1], &nc.inputs[2]};
    const FusedVolume fused = fuse(synth, in, mode, ck.generator.config().size_multiple());
    // The true target intensity scale is unknown at inference; the joint
    // input scale maps the prediction back to standardized intensities.
    const Volume restored = minmax_invert(fused.value, nc.input_scale);

    fs::path out_path(a.out);
    const std::string name = out_path.filename().string();
    const bool is_file = name.size() > 4 && (name.ends_with(".nii") || name.ends_with(".nii.gz"));
    if (!is_file) out_path = out_path / raw.case_id / (raw.case_id + "-" + sequence_name(target) + ".nii.gz");
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_volume(out_path, restored);

    write_config_used(out_path.parent_path(), "synthesize",
                      nlohmann::json{{"checkpoint", a.checkpoint},
                                     {"case", a.case_dir},
                                     {"target", sequence_name(target)},
                                     {"landmarks", a.landmarks},
                                     {"orientations", fusion_mode_name(mode)},
                                     {"out", out_path.string()},
                                     {"checkpoint_epoch", ck.meta.epoch},
                                     {"determinism", a.determinism}});
    return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string pred;
    std::string ref;
    std::string target;
    std::string out = "metrics.csv";
    bool determinism = false;
};

inline int run_evaluate(const EvaluateArgs& a) {
    Sequence target;
    try {
        target = sequence_from_string(a.target);
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    const std::string suffix = sequence_name(target);

    std::vector<MetricRow> rows;
    for (const fs::path& pred_dir : list_case_dirs(a.pred)) {
        const std::string case_id = pred_dir.filename().string();
        const auto pred_file = find_case_file(pred_dir, case_id, suffix);
        if (!pred_file) continue;  // unrelated directory
        const fs::path ref_dir = fs::path(a.ref) / case_id;
        const auto ref_file = find_case_file(ref_dir, case_id, suffix);
        if (!ref_file)
            throw MissingInputError("no reference " + std::string(sequence_name(target)) + " volume for case " +
                                    case_id + " under " + a.ref);
        const Volume pred = load_volume(*pred_file);
        const Volume ref = load_volume(*ref_file);
        std::optional<LabelVolume> seg;
        if (const auto seg_file = find_case_file(ref_dir, case_id, "seg")) seg = load_label_volume(*seg_file);
        rows.push_back(evaluate_case(case_id, pred, ref, seg ? &*seg : nullptr));
    }
    if (rows.empty())
        throw MissingInputError("no prediction volumes for " + std::string(sequence_name(target)) + " under " +
                                a.pred);

    const fs::path out_path(a.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_metrics_csv(out_path, rows, true);

    const MetricRow mean = mean_metric_row(rows);
    nlohmann::json summary{{"cases", rows.size()}, {"mean", nlohmann::json::object()}};
    auto put = [&summary](const char* key, const std::optional<double>& v) {
        if (v) summary["mean"][key] = metric_detail::format_metric(v);
    };
    put("ssim_h", mean.ssim_h);
    put("ssim_t", mean.ssim_t);
    put("psnr_h", mean.psnr_h);
    put("psnr_t", mean.psnr_t);
    const fs::path summary_path = out_path.string() + ".summary.json";
    std::ofstream sf(summary_path);
    if (!sf) throw IoError("cannot write " + summary_path.string());
    sf << summary.dump(2) << "\n";

    write_config_used(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "evaluate",
                      nlohmann::json{{"pred", a.pred},
                                     {"ref", a.ref},
                                     {"target", sequence_name(target)},
                                     {"out", out_path.string()},
                                     {"determinism", a.determinism}});
    return 0;
}

}  // namespace cli_detail

// Parses and runs one subcommand; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"MRI sequence synthesis pipeline"};
    app.require_subcommand(1);

    cli_detail::PhantomArgs pa;
    CLI::App* phantom = app.add_subcommand("phantom", "generate synthetic multi-sequence cases");
    phantom->add_option("--cases", pa.cases, "number of cases");
    phantom->add_option("--shape", pa.shape, "cubic volume side length");
    phantom->add_option("--seed", pa.seed, "base seed");
    phantom->add_option("--out", pa.out, "output data root")->required();
    phantom->add_option("--tumor-radius-min", pa.tumor_radius_min, "minimum tumor semi-axis (voxels)");
    phantom->add_option("--tumor-radius-max", pa.tumor_radius_max, "maximum tumor semi-axis (voxels)");
    phantom->add_option("--shells", pa.shells, "number of intensity shells");
    phantom->add_option("--noise-sigma", pa.noise_sigma, "intensity noise sigma");
    phantom->add_flag("--determinism", pa.determinism, "record the determinism contract");

    cli_detail::FitLandmarksArgs fa;
    CLI::App* fitlm = app.add_subcommand("fit-landmarks", "fit intensity-standardization landmarks");
    fitlm->add_option("--data", fa.data, "case data root")->required();
    fitlm->add_option("--out", fa.out, "landmarks file to write")->required();
    fitlm->add_flag("--determinism", fa.determinism, "record the determinism contract");

    cli_detail::TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "train a synthesis model for one target sequence");
    train->add_option("--data", ta.data, "case data root")->required();
    train->add_option("--landmarks", ta.landmarks, "fitted landmarks file")->required();
    train->add_option("--target", ta.target, "sequence to synthesize (t1c|t1n|t2f|t2w)")->required();
    train->add_option("--out", ta.out, "run directory")->required();
    train->add_option("--config", ta.config_file, "JSON training config (flags override)");
    train->add_option("--loss", ta.loss_preset, "loss preset (l1|l1m|l1m_adv|l1m_ssim|l1m_vgg|l1m_freq|combined)");
    train->add_option("--epochs", ta.epochs, "epoch count");
    train->add_option("--epoch-size", ta.epoch_size, "samples per epoch");
    train->add_option("--batch-size", ta.batch_size, "batch size");
    train->add_option("--lr0", ta.lr0, "initial learning rate");
    train->add_option("--seed", ta.seed, "training seed");
    train->add_option("--dev-fraction", ta.dev_fraction, "fraction of cases held out for monitoring");
    train->add_option("--dev-every", ta.dev_every, "dev evaluation period in epochs (0 = off)");
    train->add_option("--dev-fusion", ta.dev_fusion, "dev fusion mode (nine|three)");
    train->add_option("--gen-depth", ta.gen_depth, "generator encoder depth");
    train->add_option("--gen-base-width", ta.gen_base_width, "generator base width");
    train->add_flag("--no-augment", ta.no_augment, "disable augmentation");
    train->add_flag("--determinism", ta.determinism, "record the determinism contract");

    cli_detail::SynthesizeArgs sa;
    CLI::App* synth = app.add_subcommand("synthesize", "synthesize the missing sequence for one case");
    synth->add_option("--checkpoint", sa.checkpoint, "trained checkpoint file")->required();
    synth->add_option("--case", sa.case_dir, "case directory with the three input sequences")->required();
    synth->add_option("--target", sa.target, "sequence to synthesize")->required();
    synth->add_option("--landmarks", sa.landmarks, "fitted landmarks file")->required();
    synth->add_option("--orientations", sa.orientations, "fusion mode (nine|three)");
    synth->add_option("--out", sa.out, "output volume file or data root")->required();
    synth->add_flag("--determinism", sa.determinism, "record the determinism contract");

    cli_detail::EvaluateArgs ea;
    CLI::App* eval = app.add_subcommand("evaluate", "score predicted volumes against references");
    eval->add_option("--pred", ea.pred, "prediction data root")->required();
    eval->add_option("--ref", ea.ref, "reference data root (with segmentations)")->required();
    eval->add_option("--target", ea.target, "evaluated sequence")->required();
    eval->add_option("--out", ea.out, "metrics CSV path");
    eval->add_flag("--determinism", ea.determinism, "record the determinism contract");

    int rc = 0;
    phantom->callback([&] { rc = cli_detail::run_phantom(pa); });
    fitlm->callback([&] { rc = cli_detail::run_fit_landmarks(fa); });
    train->callback([&] { rc = cli_detail::run_train(ta); });
    synth->callback([&] { rc = cli_detail::run_synthesize(sa); });
    eval->callback([&] { rc = cli_detail::run_evaluate(ea); });

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("seqsynth");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        return rc;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace seqsynth
