#pragma once

#include <cstdint>
#include <vector>

#include "condredact/distill.hpp"
#include "condredact/metrics.hpp"
#include "condredact/toymodels.hpp"

namespace condredact {

struct AttackConfig {
  int iterations = 16;
  int candidates = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AttackResult {
  Conditional adversarial;              // final caption after the last update
  Conditional best;                     // best-so-far caption
  double best_corr = 0.0;
  double initial_corr = 0.0;            // corr of the unmodified caption
  std::vector<double> corr_trace;       // corr of the chosen caption, per iteration
  std::vector<Conditional> caption_trace;
  std::vector<double> latent;           // the fixed z used throughout
  bool success = false;
};

// Discrete square attack: per iteration, sample one position, sample
// `candidates` replacement tokens uniformly, keep the caption maximizing
// corr(G'(z|caption), c) under one fixed latent. Success is judged on the
// best-so-far caption: corr(.., c) > corr(.., c_hat).
AttackResult square_attack(const Generator& edited, const SyntheticTask& task,
                           const Conditional& c, const Conditional& c_hat,
                           const std::vector<int>& vocab,
                           const AttackConfig& cfg);

// Fraction of successful attacks over n redacted conditionals drawn uniformly.
double attack_success_rate(const Generator& edited, const SyntheticTask& task,
                           const RedactionSpec& spec, const AttackConfig& cfg,
                           int n);

std::vector<int> full_vocabulary(const SyntheticTask& task);

}  // namespace condredact
