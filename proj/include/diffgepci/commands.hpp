#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "config.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "phantom.hpp"
#include "pipeline.hpp"
#include "volume_io.hpp"

namespace diffgepci::cli {

namespace fs = std::filesystem;

/// Line-delimited JSON event log; every record carries the config hash.
class EventLog {
public:
    EventLog(std::ostream& out, const RunConfig& config) : out_(out), hash_(config_hash(config)) {}

    void emit(const std::string& event, nlohmann::json fields = nlohmann::json::object()) const {
        fields["event"] = event;
        fields["config_hash"] = hash_;
        out_ << fields.dump() << '\n';
    }

    const std::string& hash() const noexcept { return hash_; }

private:
    std::ostream& out_;
    std::string hash_;
};

inline std::string pair_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "pair%03zu", index);
    return buf;
}

inline std::uint64_t volume_seed(std::uint64_t seed, std::size_t index) { return mix64(seed ^ mix64(index + 1)); }

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create directory " + dir.string());
}

inline void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

inline std::vector<ManifestEntry> load_manifest_checked(const RunConfig& config) {
    require_file(config.manifest_path(), "dataset manifest");
    return read_manifest(config.manifest_path());
}

/// Phantom dataset plus manifest under data_dir.
inline fs::path cmd_gen_data(const RunConfig& config, std::ostream& log_stream) {
    config.validate();
    ensure_directory(config.data_dir);
    const EventLog log(log_stream, config);
    const EchoTrain echoes = config.echo_train();
    const DatasetSplit split = split_dataset(config.volumes, config.split, config.seed);

    std::vector<std::string> membership(config.volumes);
    for (auto i : split.train) membership[i] = "train";
    for (auto i : split.validation) membership[i] = "validation";
    for (auto i : split.test) membership[i] = "test";

    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < config.volumes; ++i) {
        if (membership[i].empty()) continue;
        const std::string id = pair_id(i);
        const PhantomPair pair = generate_pair(volume_seed(config.seed, i), config.side, echoes, config.noise_sigma);
        ManifestEntry e{id, id + "_condition.gpcv", id + "_target.gpcv", membership[i]};
        save_volume(config.data_dir / e.condition_path, pair.condition);
        save_volume(config.data_dir / e.target_path, pair.target);
        log.emit("volume", {{"pair", id}, {"split", e.split}, {"foreground_voxels", pair.field.foreground()}});
        entries.push_back(std::move(e));
    }
    write_manifest(config.manifest_path(), entries);
    log.emit("manifest", {{"path", config.manifest_path().string()}, {"pairs", entries.size()}});
    return config.manifest_path();
}

/// Condition volume as fed to the learned denoiser.
inline Volume load_network_condition(const fs::path& path) { return normalize_condition_channels(load_volume(path)); }

/// Slices of all three planes of every training volume.
inline std::vector<TrainingPair> load_training_set(const RunConfig& config, const std::vector<ManifestEntry>& manifest) {
    std::vector<TrainingPair> data;
    for (const auto& e : manifest) {
        if (e.split != "train") continue;
        const Volume target = load_volume(config.data_dir / e.target_path);
        const Volume cond = load_network_condition(config.data_dir / e.condition_path);
        auto slices = tri_plane_pairs(target, cond);
        data.insert(data.end(), std::make_move_iterator(slices.begin()), std::make_move_iterator(slices.end()));
    }
    return data;
}

/// Trains the denoiser on the train split; writes the checkpoint and a per-epoch loss log.
inline fs::path cmd_train(const RunConfig& config, std::ostream& log_stream) {
    config.validate();
    const auto manifest = load_manifest_checked(config);
    const EventLog log(log_stream, config);
    const auto data = load_training_set(config, manifest);
    if (data.empty()) throw ConfigError("manifest lists no training volumes");
    if (data.front().y.channels() != config.echoes) {
        throw ConfigError("condition volumes have " + std::to_string(data.front().y.channels()) + " echoes, config expects " +
                          std::to_string(config.echoes));
    }
    if (config.checkpoint.has_parent_path()) ensure_directory(config.checkpoint.parent_path());

    const NoiseSchedule schedule = config.schedule();
    const NetworkShape shape = config.network_shape();
    std::ofstream loss_log(config.loss_log_path(), std::ios::trunc);
    if (!loss_log) throw IoError("cannot write " + config.loss_log_path().string());
    const EventLog file_log(loss_log, config);

    log.emit("train_start", {{"slices", data.size()}, {"parameters", shape.parameter_count()}, {"epochs", config.epochs}});
    TrainingOptions options = config.training_options();
    options.on_epoch = [&](std::size_t epoch, double loss) {
        file_log.emit("epoch", {{"epoch", epoch}, {"loss", loss}});
        log.emit("epoch", {{"epoch", epoch}, {"loss", loss}});
    };
    const TrainingResult result = train(data, initialize_params(shape, config.seed), schedule, options);
    save_params(config.checkpoint, result.params);
    log.emit("checkpoint", {{"path", config.checkpoint.string()}});
    return config.checkpoint;
}

inline fs::path output_path(const RunConfig& config, const std::string& id, const char* kind) {
    return config.out_dir / (id + "_" + kind + ".gpcv");
}

/// Synthesizes every volume of the configured split. Writes initial,
/// refined coronal/sagittal and final volumes; with no_refine only the
/// axial synthesis runs and `final` is a copy of `initial`.
inline std::vector<fs::path> cmd_synth(const RunConfig& config, std::ostream& log_stream) {
    config.validate();
    const auto manifest = load_manifest_checked(config);
    require_file(config.checkpoint, "checkpoint");
    ensure_directory(config.out_dir);
    const EventLog log(log_stream, config);

    const NoiseSchedule schedule = config.schedule();
    const auto params = std::make_shared<const DenoiserParams>(load_params(config.checkpoint));
    const LearnedDenoiser network(params, config.steps);
    const ClampedDenoiser clamped(network, schedule, kBackgroundTarget, 1.0);
    const Denoiser& model = config.synth_clamp ? static_cast<const Denoiser&>(clamped) : network;

    std::vector<fs::path> written;
    std::size_t done = 0;
    for (std::size_t idx = 0; idx < manifest.size(); ++idx) {
        const auto& e = manifest[idx];
        if (e.split != config.synth_split) continue;
        if (config.synth_max_volumes != 0 && done == config.synth_max_volumes) break;
        const Volume y = load_network_condition(config.data_dir / e.condition_path);
        const PipelineConfig pc = config.pipeline_config(volume_seed(config.seed, idx));
        auto save = [&](const char* kind, const Volume& v) {
            const fs::path p = output_path(config, e.pair_id, kind);
            save_volume(p, v);
            written.push_back(p);
        };
        if (config.no_refine) {
            pc.validate(schedule);
            const Volume initial = initial_synthesis(y, model, schedule, pc.seed, pc.workers);
            save("initial", initial);
            save("final", initial);
        } else {
            const SynthesisResult r = diffgepci(y, model, schedule, pc);
            save("initial", r.initial);
            save("coronal", r.refined_coronal);
            save("sagittal", r.refined_sagittal);
            save("final", r.final);
        }
        log.emit("synthesized", {{"pair", e.pair_id}, {"refined", !config.no_refine}});
        ++done;
    }
    return written;
}

/// Per-plane PSNR/SSIM of one prediction against its reference.
inline std::vector<MetricRecord> evaluate_pair(const std::string& task, const Volume& reference, const Volume& prediction,
                                               std::optional<double> mask_quantile) {
    const Mask mask = threshold_mask(reference, mask_quantile.value_or(background_quantile(reference)));
    const double range = masked_range(reference, mask);
    if (!(range > 0.0)) throw NumericalError("eval: reference is constant inside the mask");
    return evaluate_planes(task, reference, prediction, mask, range);
}

/// Writes report.tsv in out_dir. Evaluates the explicit eval pair when
/// configured; otherwise the initial and final volumes of every
/// synthesized pair of the configured split.
inline fs::path cmd_eval(const RunConfig& config, std::ostream& log_stream) {
    config.validate();
    const EventLog log(log_stream, config);
    std::vector<MetricRecord> records;
    if (!config.eval_prediction.empty() || !config.eval_reference.empty()) {
        require_file(config.eval_prediction, "prediction volume");
        require_file(config.eval_reference, "reference volume");
        const auto r = evaluate_pair("custom", load_volume(config.eval_reference), load_volume(config.eval_prediction),
                                     config.mask_quantile);
        records.insert(records.end(), r.begin(), r.end());
    } else {
        const auto manifest = load_manifest_checked(config);
        for (const auto& e : manifest) {
            if (e.split != config.synth_split) continue;
            const fs::path final_path = output_path(config, e.pair_id, "final");
            if (!fs::is_regular_file(final_path)) continue;
            const Volume reference = load_volume(config.data_dir / e.target_path);
            for (const char* kind : {"initial", "final"}) {
                const auto r = evaluate_pair(e.pair_id + "/" + kind, reference, load_volume(output_path(config, e.pair_id, kind)),
                                             config.mask_quantile);
                records.insert(records.end(), r.begin(), r.end());
            }
        }
        if (records.empty()) throw ConfigError("eval: no synthesized volumes found in " + config.out_dir.string());
    }
    ensure_directory(config.out_dir);
    const fs::path report = config.out_dir / "report.tsv";
    std::ofstream out(report, std::ios::trunc);
    if (!out) throw IoError("cannot write " + report.string());
    for (const auto& r : records) out << format_record(r) << '\n';
    log.emit("report", {{"path", report.string()}, {"records", records.size()}});
    return report;
}

} // namespace diffgepci::cli
