// Command-line front end: gen-data, train, synth, eval.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "diffgepci/commands.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    bool no_refine = false;
    std::optional<int> refine_steps;
    std::optional<int> steps;
    std::optional<std::string> out;
};

diffgepci::RunConfig resolve(const Overrides& o) {
    diffgepci::RunConfig c = o.config_path.empty() ? diffgepci::RunConfig{} : diffgepci::load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.workers) c.workers = *o.workers;
    if (o.no_refine) c.no_refine = true;
    if (o.refine_steps) c.refine_steps = *o.refine_steps;
    if (o.steps) c.steps = *o.steps;
    if (o.out) c.out_dir = *o.out;
    c.validate();
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Volumetric cross-modality synthesis with 2.5D diffusion refinement"};
    app.require_subcommand(1, 4);

    Overrides o;
    app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Random seed");
    app.add_option("--workers", o.workers, "Slice-level worker threads");
    app.add_flag("--no-refine", o.no_refine, "Skip the coronal/sagittal refinement (axial synthesis only)");
    app.add_option("--refine-steps", o.refine_steps, "Refinement steps k");
    app.add_option("--steps", o.steps, "Total diffusion steps T");
    app.add_option("--out", o.out, "Output directory");

    auto* gen = app.add_subcommand("gen-data", "Generate the phantom dataset and manifest");
    auto* train = app.add_subcommand("train", "Train the noise predictor");
    auto* synth = app.add_subcommand("synth", "Synthesize target volumes");
    auto* eval = app.add_subcommand("eval", "Per-plane PSNR/SSIM report");
    for (auto* sub : {gen, train, synth, eval}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const diffgepci::RunConfig config = resolve(o);
        if (gen->parsed()) diffgepci::cli::cmd_gen_data(config, std::cerr);
        if (train->parsed()) diffgepci::cli::cmd_train(config, std::cerr);
        if (synth->parsed()) diffgepci::cli::cmd_synth(config, std::cerr);
        if (eval->parsed()) diffgepci::cli::cmd_eval(config, std::cerr);
    } catch (const diffgepci::InvalidArgument& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
