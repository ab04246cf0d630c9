#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"

namespace mfg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCertificate = 1;
inline constexpr int kExitConfig = 2;

struct Certificate {
    std::string name;
    bool passed;
    double lhs;
    double rhs;
    std::string detail;
};

struct RunResult {
    int status = kExitOk;
    std::string directory;
    std::vector<Certificate> certificates;
    std::string error;  // set when a stage threw
};

// MFG_OUTPUT_ROOT prefixes relative directories; an empty output.directory
// becomes runs/<config file stem>.
std::string resolve_output_directory(const ExperimentConfig& cfg, const std::string& config_path,
                                     const std::string& override_dir = "");

// Runs a validated config and writes manifest.json, report.txt and CSVs.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& directory);

int command_run(const std::string& config_path, const std::string& output, std::ostream& out,
                std::ostream& err);
int command_validate(const std::string& config_path, std::ostream& out, std::ostream& err);
int command_sweep(const std::string& config_path, const std::string& output, std::ostream& out,
                  std::ostream& err);

}  // namespace mfg::cli
