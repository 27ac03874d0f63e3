#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "condredact/attack.hpp"
#include "condredact/distill.hpp"
#include "condredact/metrics.hpp"
#include "condredact/toymodels.hpp"

namespace condredact {

// One experiment = task + teacher + redaction + evaluation + attack.
// The JSON schema is documented in the README; validation runs before any
// phase and names the offending field.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";

  SyntheticTask task;
  GeneratorArch arch;
  TrainConfig train;

  std::string redaction_method = "closed-form";  // closed-form | distill | none
  RedactionSpec spec;
  DistillConfig distill;

  EvalConfig eval;

  bool attack_enabled = true;
  AttackConfig attack;
  int attack_trials = 40;

  // per-phase seed overrides; absent means derived from the global seed
  std::optional<std::uint64_t> train_seed;
  std::optional<std::uint64_t> distill_seed;
  std::optional<std::uint64_t> eval_seed;
  std::optional<std::uint64_t> attack_seed;

  std::uint64_t phase_seed(const std::string& phase) const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  void validate() const;
};

}  // namespace condredact
