#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fedsim/run_config.hpp"

namespace fedsim {

// Exit codes: 0 success, 1 runtime error, 2 config error.
int cmd_simulate(const std::string& config_path);
int cmd_serve(const std::string& config_path);
int cmd_join(const std::string& config_path, uint32_t client_id);
int cmd_report(const std::string& out_dir);

int run_cli(int argc, char** argv);

// Runs a configured experiment and writes the full output tree (run_config
// echo, rounds.csv + confusion files + global.csv, checkpoints/, summary.txt)
// into cfg.out_dir. Shared by simulate and serve.
ExperimentResult run_and_write_outputs(const RunConfig& cfg);

}  // namespace fedsim
