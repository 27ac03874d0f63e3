#pragma once

#include "json.hpp"

#include "condredact/config.hpp"

namespace condredact {

struct RunOutcome {
  nlohmann::json report;
  int exit_code = 0;  // 0 success, 3 phase failure
};

// Executes train -> redact -> eval -> attack for one config, writing
// checkpoints, CSV tables, plots, and report.json under cfg.output_dir.
// Throws std::invalid_argument on config errors before any phase runs.
RunOutcome run_experiment(const ExperimentConfig& cfg);

}  // namespace condredact
