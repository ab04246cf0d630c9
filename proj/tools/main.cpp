#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mean field games on the discretized torus: experiment runner"};
    app.require_subcommand(1);

    std::string config, output;
    auto* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("config", config, "INI config file")->required();
    run->add_option("-o,--output", output, "run directory (overrides output.directory)");

    auto* validate = app.add_subcommand("validate", "check a config without computing");
    validate->add_option("config", config, "INI config file")->required();

    auto* sweep = app.add_subcommand("sweep", "run the cartesian product of the sweep.* lists");
    sweep->add_option("config", config, "INI config file")->required();
    sweep->add_option("-o,--output", output, "sweep directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mfg::cli::kExitConfig;
    }
    if (*run) return mfg::cli::command_run(config, output, std::cout, std::cerr);
    if (*validate) return mfg::cli::command_validate(config, std::cout, std::cerr);
    return mfg::cli::command_sweep(config, output, std::cout, std::cerr);
}
