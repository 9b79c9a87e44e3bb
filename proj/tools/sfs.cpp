// Command-line front end: one subcommand per pipeline phase, all sharing a
// workspace directory. Exit codes: 0 success, 2 configuration error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "sfs/config.hpp"
#include "sfs/pipeline.hpp"

namespace {

using CmdFn = std::function<void(const sfs::SfsConfig&, const std::filesystem::path&)>;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"source-free domain adaptation for semantic segmentation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t master_seed = 0;

    const std::map<std::string, std::pair<const char*, CmdFn>> commands = {
        {"generate-data", {"generate the synthetic source/target splits", sfs::cmd_generate_data}},
        {"train-source", {"supervised training on the source split", sfs::cmd_train_source}},
        {"estimate-gmm", {"fit the latent mixture from confident source pixels", sfs::cmd_estimate_gmm}},
        {"adapt", {"source-free adaptation on the target split", sfs::cmd_adapt}},
        {"evaluate", {"Dice/ASSD report, migration tables, embedding dumps", sfs::cmd_evaluate}},
        {"ablate", {"sweep omega, rho or classifier fine-tuning", sfs::cmd_ablate}},
    };

    std::map<std::string, CLI::Option*> seed_opts;
    for (const auto& [name, desc_fn] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc_fn.first);
        sub->add_option("--config", config_path, "JSON configuration file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "workspace directory")->required();
        seed_opts[name] = sub->add_option("--seed", master_seed,
                                          "master seed overriding every configured seed");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        sfs::SfsConfig cfg = sfs::SfsConfig::from_json_file(config_path);
        if (seed_opts.at(name)->count() > 0) cfg.override_master_seed(master_seed);
        std::filesystem::create_directories(out_dir);
        commands.at(name).second(cfg, out_dir);
    } catch (const sfs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sfs::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
