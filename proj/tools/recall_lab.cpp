#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "recall/errors.hpp"
#include "recall/harness.hpp"

namespace {

const char* kUsage =
    "usage: recall-lab <command> [options]\n"
    "\n"
    "commands:\n"
    "  gen-data   render the synthetic shapes dataset\n"
    "  train      train codec, text encoder, detector and denoiser\n"
    "  unlearn    produce concept-erased bundles and record their gates\n"
    "  attack     run the adversarial image-prompt attack\n"
    "  baseline   run the prompt-level baselines\n"
    "  ablate     run the attack ablation sweeps\n"
    "  report     merge result tables and render plots\n"
    "\n"
    "options:\n"
    "  --config FILE    JSON experiment config\n"
    "  --seed N         override the master seed\n"
    "  --output-dir D   override the output directory\n"
    "  --bundle NAME    restrict attack/baseline to one bundle\n";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal unlearning attack testbed"};
    app.require_subcommand(1);

    std::string config_path, output_dir, bundle;
    std::uint64_t seed = 0;

    std::vector<CLI::App*> subs;
    for (const char* name :
         {"gen-data", "train", "unlearn", "attack", "baseline", "ablate", "report"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON experiment config");
        sub->add_option("--seed", seed, "master seed override");
        sub->add_option("--output-dir", output_dir, "output directory override");
        std::string n(name);
        if (n == "attack" || n == "baseline")
            sub->add_option("--bundle", bundle, "bundle name (base, esd_finetune, sld_guidance)");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << kUsage;
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << kUsage;
        return 64;
    }

    try {
        recall::ExperimentConfig cfg;
        if (!config_path.empty()) cfg = recall::load_config(config_path);
        bool seed_given = false;
        for (CLI::App* sub : subs)
            if (sub->count("--seed") > 0) seed_given = true;
        if (seed_given) cfg.master_seed = seed;
        if (!output_dir.empty()) cfg.output_dir = output_dir;

        const std::string& cmd = app.get_subcommands().front()->get_name();
        if (cmd == "gen-data")
            recall::run_gen_data(cfg);
        else if (cmd == "train")
            recall::run_train(cfg);
        else if (cmd == "unlearn")
            recall::run_unlearn_stage(cfg);
        else if (cmd == "attack")
            recall::run_attack_stage(cfg, bundle);
        else if (cmd == "baseline")
            recall::run_baseline_stage(cfg, bundle);
        else if (cmd == "ablate")
            recall::run_ablations(cfg);
        else if (cmd == "report")
            recall::run_report(cfg);
    } catch (const recall::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const recall::GateError& e) {
        std::cerr << "gate failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
