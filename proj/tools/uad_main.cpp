// Command-line front end: one subcommand per pipeline stage plus the phantom
// corpus generator. Exit codes: 0 success, 2 invalid configuration, 3 data or
// I/O failure, 1 unexpected error.

#include <cstdint>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "uad/errors.hpp"
#include "uad/pipeline.hpp"
#include "uad/version.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    bool seed_set = false;
};

uad::RunConfig make_config(const CliOptions& opt) {
    uad::RunConfig cfg = uad::load_run_config(opt.config_path);
    if (opt.seed_set) cfg.seed = static_cast<std::uint64_t>(opt.seed);
    if (!opt.out_dir.empty()) cfg.paths.out_dir = opt.out_dir;
    return cfg;
}

void add_common_options(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_path, "run configuration file (JSON)");
    cmd->add_option("--seed", opt.seed, "override the root seed")
        ->each([&opt](const std::string&) { opt.seed_set = true; });
    cmd->add_option("--out", opt.out_dir, "override the artifact directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("uad — unsupervised pelvic MRI anomaly detection (") +
                 uad::kCodeVersion + ")"};
    app.require_subcommand(1);

    CliOptions opt;
    struct Entry {
        const char* name;
        const char* help;
    };
    const Entry stage_entries[] = {
        {"preprocess", "resample, normalize, and crop the input corpus"},
        {"train", "train the residual variational autoencoder"},
        {"infer", "write anomaly heatmaps for the evaluation cases"},
        {"evaluate", "compute stratified pixel-level metrics"},
        {"bench", "measure single-slice reconstruction latency"},
    };
    for (const Entry& e : stage_entries) add_common_options(app.add_subcommand(e.name, e.help), opt);
    add_common_options(app.add_subcommand("synth-train", "train the diffusion slice generator"),
                       opt);
    add_common_options(app.add_subcommand("synth-sample", "draw synthetic slices"), opt);
    add_common_options(
        app.add_subcommand("synth-filter", "drop memorized samples and publish the rest"), opt);
    add_common_options(
        app.add_subcommand("phantom", "generate a synthetic phantom corpus under data_dir"), opt);

    CLI11_PARSE(app, argc, argv);

    try {
        const std::string sub = app.get_subcommands().front()->get_name();
        const uad::RunConfig cfg = make_config(opt);
        if (sub == "phantom") {
            cfg.validate();
            uad::generate_phantom_data(cfg, &std::cout);
        } else if (sub == "synth-train") {
            uad::run_synth_step(cfg, uad::SynthStep::Train, &std::cout);
        } else if (sub == "synth-sample") {
            uad::run_synth_step(cfg, uad::SynthStep::Sample, &std::cout);
        } else if (sub == "synth-filter") {
            uad::run_synth_step(cfg, uad::SynthStep::Filter, &std::cout);
        } else {
            uad::run_pipeline(cfg, {uad::stage_from_string(sub)}, &std::cout);
        }
        return 0;
    } catch (const uad::ValidationError& e) {
        std::cerr << "error (validation): " << e.what() << "\n";
        return 2;
    } catch (const uad::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
