#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffgepci/commands.hpp"

using namespace diffgepci;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("diffgepci_cli_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

RunConfig small_config(const fs::path& root) {
    RunConfig c;
    c.seed = 11;
    c.side = 8;
    c.volumes = 4;
    c.split = {2, 1, 1};
    c.steps = 20;
    c.refine_steps = 5;
    c.epochs = 2;
    c.batch_size = 4;
    c.widths = {4, 4, 4};
    c.data_dir = root / "data";
    c.checkpoint = root / "model" / "net.gpdn";
    c.out_dir = root / "out";
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DIFFGEPCI_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

} // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
    const RunConfig c;
    EXPECT_NO_THROW(c.validate());
    RunConfig back;
    from_json(nlohmann::json(c), back);
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);
    RunConfig other = c;
    other.seed = 1;
    EXPECT_NE(config_hash(other), config_hash(c));
    other = c;
    other.workers = 8;
    EXPECT_EQ(config_hash(other), config_hash(c));
}

TEST(Config, ParsesPartialFile) {
    TempDir dir("parse");
    write_text(dir.path() / "c.json", R"({"seed": 5, "schedule": {"steps": 50}, "pipeline": {"refine_steps": 3}})");
    const RunConfig c = load_config(dir.path() / "c.json");
    EXPECT_FALSE(c.mask_quantile.has_value());
    write_text(dir.path() / "q.json", R"({"metrics": {"mask_quantile": 0.25}})");
    EXPECT_EQ(load_config(dir.path() / "q.json").mask_quantile, 0.25);
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.steps, 50);
    EXPECT_EQ(c.refine_steps, 3);
    EXPECT_EQ(c.side, RunConfig{}.side);
}

TEST(Config, RejectsBadInput) {
    TempDir dir("bad");
    write_text(dir.path() / "unknown.json", R"({"sampler": {}})");
    EXPECT_THROW(load_config(dir.path() / "unknown.json"), ConfigError);
    write_text(dir.path() / "broken.json", "{");
    EXPECT_THROW(load_config(dir.path() / "broken.json"), ConfigError);
    write_text(dir.path() / "type.json", R"({"schedule": {"steps": "many"}})");
    EXPECT_THROW(load_config(dir.path() / "type.json"), ConfigError);
    EXPECT_THROW(load_config(dir.path() / "missing.json"), ConfigError);

    RunConfig c;
    c.refine_steps = 2000;
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.fusion_weights = {0.5, 0.5, 0.5};
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.side = 30;
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.split = {10, 2, 2};
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.mask_quantile = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.workers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GenData, DeterministicAndComplete) {
    TempDir a("gen_a"), b("gen_b");
    std::ostringstream log;
    const RunConfig ca = small_config(a.path()), cb = small_config(b.path());
    cli::cmd_gen_data(ca, log);
    cli::cmd_gen_data(cb, log);
    const auto manifest = read_manifest(ca.manifest_path());
    ASSERT_EQ(manifest.size(), 4u);
    std::map<std::string, int> counts;
    for (const auto& e : manifest) {
        ++counts[e.split];
        EXPECT_EQ(slurp(ca.data_dir / e.condition_path), slurp(cb.data_dir / e.condition_path));
        EXPECT_EQ(slurp(ca.data_dir / e.target_path), slurp(cb.data_dir / e.target_path));
        const Volume y = load_volume(ca.data_dir / e.condition_path);
        EXPECT_EQ(y.dims(), (Volume::Dims{8, 8, 8}));
        EXPECT_EQ(y.channels(), 10u);
    }
    EXPECT_EQ(counts["train"], 2);
    EXPECT_EQ(counts["validation"], 1);
    EXPECT_EQ(counts["test"], 1);
    const std::string text = log.str();
    EXPECT_NE(text.find("\"config_hash\":\"" + config_hash(ca) + "\""), std::string::npos);
    EXPECT_NE(text.find("\"event\":\"manifest\""), std::string::npos);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
    TempDir dir("train0");
    RunConfig c = small_config(dir.path());
    c.epochs = 0;
    std::ostringstream log;
    cli::cmd_gen_data(c, log);
    cli::cmd_train(c, log);
    const DenoiserParams p = load_params(c.checkpoint);
    const DenoiserParams init = initialize_params(c.network_shape(), c.seed);
    EXPECT_EQ(p.layers, init.layers);
    EXPECT_EQ(p.weights, init.weights);
}

TEST(Train, WritesLossLogAndRequiresData) {
    TempDir dir("train");
    RunConfig c = small_config(dir.path());
    std::ostringstream log;
    EXPECT_THROW(cli::cmd_train(c, log), ConfigError);
    cli::cmd_gen_data(c, log);
    cli::cmd_train(c, log);
    std::ifstream in(c.loss_log_path());
    std::string line;
    int epochs = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("event"), "epoch");
        EXPECT_TRUE(std::isfinite(j.at("loss").get<double>()));
        ++epochs;
    }
    EXPECT_EQ(epochs, 2);
}

TEST(Synth, OutputsAndFusionConsistency) {
    TempDir dir("synth");
    RunConfig c = small_config(dir.path());
    std::ostringstream log;
    cli::cmd_gen_data(c, log);
    cli::cmd_train(c, log);
    const auto written = cli::cmd_synth(c, log);
    ASSERT_EQ(written.size(), 4u);
    const std::string id = read_manifest(c.manifest_path()).at(0).pair_id;
    std::string test_id;
    for (const auto& e : read_manifest(c.manifest_path()))
        if (e.split == "test") test_id = e.pair_id;
    const Volume init = load_volume(cli::output_path(c, test_id, "initial"));
    const Volume cor = load_volume(cli::output_path(c, test_id, "coronal"));
    const Volume sag = load_volume(cli::output_path(c, test_id, "sagittal"));
    const Volume fin = load_volume(cli::output_path(c, test_id, "final"));
    EXPECT_EQ(fin, fuse(init, cor, sag, c.fusion_weights));
    for (std::size_t v = 0; v < fin.voxels(); ++v) {
        EXPECT_NEAR(fin.values()[v], (init.values()[v] + cor.values()[v] + sag.values()[v]) / 3.0, 1e-6);
    }

    RunConfig flat = c;
    flat.no_refine = true;
    flat.out_dir = dir.path() / "flat";
    cli::cmd_synth(flat, log);
    EXPECT_EQ(slurp(cli::output_path(flat, test_id, "initial")), slurp(cli::output_path(flat, test_id, "final")));
    EXPECT_EQ(load_volume(cli::output_path(flat, test_id, "initial")), init);
    EXPECT_FALSE(fs::exists(cli::output_path(flat, test_id, "coronal")));

    RunConfig threaded = c;
    threaded.workers = 3;
    threaded.out_dir = dir.path() / "threaded";
    cli::cmd_synth(threaded, log);
    EXPECT_EQ(slurp(cli::output_path(threaded, test_id, "final")), slurp(cli::output_path(c, test_id, "final")));
}

TEST(Eval, SelfComparisonAndLibraryAgreement) {
    TempDir dir("eval");
    RunConfig c = small_config(dir.path());
    std::ostringstream log;
    cli::cmd_gen_data(c, log);
    const auto manifest = read_manifest(c.manifest_path());
    const fs::path ref = c.data_dir / manifest.at(0).target_path;
    const fs::path other = c.data_dir / manifest.at(1).target_path;

    c.eval_reference = ref.string();
    c.eval_prediction = ref.string();
    const fs::path report = cli::cmd_eval(c, log);
    std::ifstream in(report);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        EXPECT_TRUE(line.ends_with(line.find("psnr") != std::string::npos ? "\tinf" : "\t1")) << line;
    }
    EXPECT_EQ(n, 6);

    c.eval_prediction = other.string();
    cli::cmd_eval(c, log);
    const Volume r = load_volume(ref), p = load_volume(other);
    const Mask m = threshold_mask(r, background_quantile(r));
    const double range = masked_range(r, m);
    std::ifstream in2(report);
    for (PlaneAxis axis : kAllAxes) {
        for (const char* metric : {"psnr", "ssim"}) {
            ASSERT_TRUE(std::getline(in2, line));
            std::istringstream fields(line);
            std::string task, plane, name, text;
            fields >> task >> plane >> name >> text;
            const double value = std::stod(text);
            EXPECT_EQ(task, "custom");
            EXPECT_EQ(plane, axis_name(axis));
            EXPECT_EQ(name, metric);
            const double expected = name == "psnr" ? plane_psnr(r, p, m, range, axis) : plane_ssim(r, p, m, range, axis, 7);
            EXPECT_TRUE(std::isfinite(expected));
            EXPECT_NEAR(value, expected, 1e-12);
        }
    }
}

TEST(Eval, PipelineReportCoversInitialAndFinal) {
    TempDir dir("eval_pipe");
    RunConfig c = small_config(dir.path());
    std::ostringstream log;
    cli::cmd_gen_data(c, log);
    EXPECT_THROW(cli::cmd_synth(c, log), ConfigError);
    cli::cmd_train(c, log);
    EXPECT_THROW(cli::cmd_eval(c, log), ConfigError);
    cli::cmd_synth(c, log);
    std::ifstream in(cli::cmd_eval(c, log));
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 12);
}

TEST(Executable, ExitCodes) {
    TempDir dir("exe");
    write_text(dir.path() / "ok.json", nlohmann::json{{"phantom", {{"side", 8}, {"volumes", 3}, {"split", {1, 1, 1}}}},
                                                      {"paths", {{"data_dir", (dir.path() / "data").string()}}}}
                                           .dump());
    write_text(dir.path() / "bad.json", R"({"pipeline": {"refine_steps": 0}})");
    EXPECT_EQ(run_cli("--config " + (dir.path() / "ok.json").string() + " gen-data"), 0);
    EXPECT_TRUE(fs::exists(dir.path() / "data" / "manifest.tsv"));
    EXPECT_EQ(run_cli("--config " + (dir.path() / "bad.json").string() + " gen-data"), 1);
    EXPECT_EQ(run_cli("--config " + (dir.path() / "ok.json").string() + " --refine-steps 5000 synth"), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("--help"), 0);
    write_text(dir.path() / "data" / "pair000_target.gpcv", "garbage");
    write_text(dir.path() / "eval.json",
               nlohmann::json{{"eval", {{"prediction", (dir.path() / "data" / "pair000_target.gpcv").string()},
                                        {"reference", (dir.path() / "data" / "pair000_target.gpcv").string()}}}}
                   .dump());
    EXPECT_EQ(run_cli("--config " + (dir.path() / "eval.json").string() + " eval"), 2);
}
