// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <ostream>

#include "shallowpi/config.hpp"

namespace shallowpi::cli {

/// Where each stage reads and writes its artifacts under the output dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path baseline() const { return root / "baseline"; }
  std::filesystem::path sensitivity() const { return root / "sensitivity"; }
  std::filesystem::path stage2() const { return root / "stage2"; }
  std::filesystem::path finetune() const { return root / "finetune"; }
  std::filesystem::path cost() const { return root / "cost"; }
};

struct CommandOptions {
  bool fig1 = false;
};

// Each command writes its artifacts and a one-line summary to `log`.
// Prerequisite stages are run when their artifacts are missing, except
// that finetune and cost require an existing stage-2 checkpoint.
void cmd_baseline(const ExperimentConfig& config, std::ostream& log);
void cmd_sensitivity(const ExperimentConfig& config, std::ostream& log);
void cmd_stage2(const ExperimentConfig& config, std::ostream& log);
void cmd_finetune(const ExperimentConfig& config, std::ostream& log);
void cmd_cost(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log);

/// Entry point shared by the executable and tests. Returns the exit code;
/// failures print {"error": kind, "message": text} to `err`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace shallowpi::cli
