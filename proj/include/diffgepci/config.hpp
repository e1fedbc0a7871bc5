#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"

#include "error.hpp"
#include "network.hpp"
#include "phantom.hpp"
#include "pipeline.hpp"
#include "schedule.hpp"

namespace diffgepci {

/// Invalid or inconsistent run configuration, detected before any work starts.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Everything a command-line run needs. JSON keys mirror the member names
/// grouped by section; see README for the schema.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    // schedule
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // pipeline
    int refine_steps = 10;
    FusionWeights fusion_weights = kUniformFusion;
    bool no_refine = false;

    // phantom dataset
    std::size_t side = 32;
    std::size_t echoes = 10;
    double te1_ms = 4.0;
    double echo_spacing_ms = 4.0;
    double noise_sigma = kDefaultEchoNoise;
    std::size_t volumes = 12;
    std::array<std::size_t, 3> split{8, 2, 2};

    // network and training
    std::array<std::size_t, 3> widths{8, 16, 16};
    std::size_t epochs = 120;
    std::size_t batch_size = 8;
    std::string optimizer = "adam";
    double learning_rate = 0.001;
    double momentum = 0.9;
    double ema_decay = 0.999;

    // evaluation
    std::optional<double> mask_quantile;  // unset = exclude the reference background level
    std::string eval_prediction;
    std::string eval_reference;

    // synthesis
    std::string synth_split = "test";
    std::size_t synth_max_volumes = 0;  // 0 = every volume of the split
    bool synth_clamp = true;            // clamp clean-image estimates to the target range [-1, 1]

    // paths
    std::filesystem::path data_dir = "data";
    std::filesystem::path checkpoint = "model.gpdn";
    std::filesystem::path out_dir = "out";

    EchoTrain echo_train() const { return EchoTrain::uniform(echoes, te1_ms, echo_spacing_ms); }
    NoiseSchedule schedule() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
    NetworkShape network_shape() const { return NetworkShape{echoes, widths}; }
    std::filesystem::path manifest_path() const { return data_dir / "manifest.tsv"; }
    std::filesystem::path loss_log_path() const { return std::filesystem::path(checkpoint.string() + ".log.jsonl"); }

    TrainingOptions training_options() const {
        TrainingOptions o;
        o.epochs = epochs;
        o.batch_size = batch_size;
        o.learning_rate = learning_rate;
        o.momentum = momentum;
        o.optimizer = optimizer == "adam" ? Optimizer::Adam : Optimizer::Sgd;
        o.ema_decay = ema_decay;
        o.seed = seed;
        return o;
    }

    PipelineConfig pipeline_config(std::uint64_t volume_seed) const {
        PipelineConfig p;
        p.steps = steps;
        p.refine_steps = refine_steps;
        p.side = side;
        p.condition_channels = echoes;
        p.fusion_weights = fusion_weights;
        p.seed = volume_seed;
        p.workers = workers;
        return p;
    }

    /// Range checks on every numeric field.
    void validate() const {
        auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
        if (workers < 1 || workers > 256) fail("workers must lie in [1, 256]");
        if (steps < 1) fail("schedule.steps must be >= 1");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) fail("need 0 < beta_start <= beta_end < 1");
        if (refine_steps < 1 || refine_steps > steps) fail("pipeline.refine_steps must lie in [1, steps]");
        const double wsum = fusion_weights[0] + fusion_weights[1] + fusion_weights[2];
        if (!(std::abs(wsum - 1.0) <= 1e-9)) fail("pipeline.fusion_weights must sum to 1");
        if (side < kMinPhantomSide || side % 4 != 0) fail("phantom.side must be >= 8 and a multiple of 4");
        if (echoes < 1) fail("phantom.echoes must be >= 1");
        if (!(te1_ms > 0.0) || !(echo_spacing_ms > 0.0)) fail("echo times must be positive");
        if (!(noise_sigma >= 0.0)) fail("phantom.noise_sigma must be >= 0");
        if (split[0] == 0 || split[1] == 0 || split[2] == 0) fail("phantom.split entries must be positive");
        if (split[0] + split[1] + split[2] > volumes) fail("phantom.split exceeds phantom.volumes");
        if (widths[0] == 0 || widths[1] == 0 || widths[2] == 0) fail("network.widths must be positive");
        if (batch_size < 1) fail("training.batch_size must be >= 1");
        if (!(learning_rate >= 0.0)) fail("training.learning_rate must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) fail("training.momentum must lie in [0, 1)");
        if (optimizer != "sgd" && optimizer != "adam") fail("training.optimizer must be sgd or adam");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("training.ema_decay must lie in [0, 1)");
        if (mask_quantile && !(*mask_quantile >= 0.0 && *mask_quantile < 1.0)) fail("metrics.mask_quantile must lie in [0, 1)");
        if (synth_split != "train" && synth_split != "validation" && synth_split != "test") {
            fail("synth.split must be train, validation or test");
        }
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{
        {"seed", c.seed},
        {"workers", c.workers},
        {"schedule", {{"steps", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
        {"pipeline", {{"refine_steps", c.refine_steps}, {"fusion_weights", c.fusion_weights}, {"no_refine", c.no_refine}}},
        {"phantom",
         {{"side", c.side},
          {"echoes", c.echoes},
          {"te1_ms", c.te1_ms},
          {"echo_spacing_ms", c.echo_spacing_ms},
          {"noise_sigma", c.noise_sigma},
          {"volumes", c.volumes},
          {"split", c.split}}},
        {"network", {{"widths", c.widths}}},
        {"training",
         {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", c.optimizer},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"ema_decay", c.ema_decay}}},
        {"metrics", {{"mask_quantile", c.mask_quantile ? nlohmann::json(*c.mask_quantile) : nlohmann::json(nullptr)}}},
        {"eval", {{"prediction", c.eval_prediction}, {"reference", c.eval_reference}}},
        {"synth", {{"split", c.synth_split}, {"max_volumes", c.synth_max_volumes}, {"clamp", c.synth_clamp}}},
        {"paths", {{"data_dir", c.data_dir.string()}, {"checkpoint", c.checkpoint.string()}, {"out_dir", c.out_dir.string()}}},
    };
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& section, const char* key, T& dst) {
    if (section.contains(key)) dst = section.at(key).get<T>();
}

inline void read_path(const nlohmann::json& section, const char* key, std::filesystem::path& dst) {
    if (section.contains(key)) dst = section.at(key).get<std::string>();
}

} // namespace detail

/// Overlays the keys present in `j` onto `c`; unknown top-level sections are rejected.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
    static const std::array<const char*, 12> known{"seed",    "workers",  "schedule", "pipeline", "phantom", "network",
                                                   "training", "metrics", "eval",     "synth",    "paths",   "$schema"};
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw ConfigError("config: unknown section \"" + key + "\"");
        }
    }
    const auto empty = nlohmann::json::object();
    auto section = [&](const char* name) -> const nlohmann::json& { return j.contains(name) ? j.at(name) : empty; };
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "workers", c.workers);
    detail::read_field(section("schedule"), "steps", c.steps);
    detail::read_field(section("schedule"), "beta_start", c.beta_start);
    detail::read_field(section("schedule"), "beta_end", c.beta_end);
    detail::read_field(section("pipeline"), "refine_steps", c.refine_steps);
    detail::read_field(section("pipeline"), "fusion_weights", c.fusion_weights);
    detail::read_field(section("pipeline"), "no_refine", c.no_refine);
    detail::read_field(section("phantom"), "side", c.side);
    detail::read_field(section("phantom"), "echoes", c.echoes);
    detail::read_field(section("phantom"), "te1_ms", c.te1_ms);
    detail::read_field(section("phantom"), "echo_spacing_ms", c.echo_spacing_ms);
    detail::read_field(section("phantom"), "noise_sigma", c.noise_sigma);
    detail::read_field(section("phantom"), "volumes", c.volumes);
    detail::read_field(section("phantom"), "split", c.split);
    detail::read_field(section("network"), "widths", c.widths);
    detail::read_field(section("training"), "epochs", c.epochs);
    detail::read_field(section("training"), "batch_size", c.batch_size);
    detail::read_field(section("training"), "learning_rate", c.learning_rate);
    detail::read_field(section("training"), "momentum", c.momentum);
    detail::read_field(section("training"), "optimizer", c.optimizer);
    detail::read_field(section("training"), "ema_decay", c.ema_decay);
    if (const auto& m = section("metrics"); m.contains("mask_quantile")) {
        const auto& q = m.at("mask_quantile");
        c.mask_quantile = q.is_null() ? std::nullopt : std::optional<double>(q.get<double>());
    }
    detail::read_field(section("eval"), "prediction", c.eval_prediction);
    detail::read_field(section("eval"), "reference", c.eval_reference);
    detail::read_field(section("synth"), "split", c.synth_split);
    detail::read_field(section("synth"), "max_volumes", c.synth_max_volumes);
    detail::read_field(section("synth"), "clamp", c.synth_clamp);
    detail::read_path(section("paths"), "data_dir", c.data_dir);
    detail::read_path(section("paths"), "checkpoint", c.checkpoint);
    detail::read_path(section("paths"), "out_dir", c.out_dir);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    RunConfig c;
    try {
        from_json(nlohmann::json::parse(in), c);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return c;
}

/// FNV-1a 64 of the canonical JSON form of the resolved configuration.
/// The worker count is left out; it never changes any output.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json j = c;
    j.erase("workers");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    return out;
}

} // namespace diffgepci
