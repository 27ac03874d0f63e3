#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "condredact/distill.hpp"
#include "condredact/toymodels.hpp"

namespace condredact {

struct EvalConfig {
  int trials = 500;
  int mismatches = 100;  // capped at the available mismatch pool
  int quality_samples = 256;
  // calibration bar for per-conditional MMD² of a trained generator,
  // fixed by a calibration run across the shipped presets
  double quality_threshold = 0.35;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalReport {
  double faithfulness = 0.0;
  double r_precision = 0.0;
  double c_vs_chat = 0.0;
  std::map<std::string, double> quality_edited;   // conditional name -> MMD²
  std::map<std::string, double> quality_teacher;
  double quality_threshold = 0.0;
  bool teacher_within_threshold = false;
  int trials = 0;
  int mismatches = 0;
  int quality_samples = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> substitution_notices;
};

// corr(x, c) = -|x - mu(c)|₂ : higher is better, 0 at the mean itself.
double corr(std::span<const double> x, const Conditional& c,
            const SyntheticTask& task);

// Fraction of shared-latent trials where the edited model's output for a
// redacted c lands closer to the teacher's reference output than to the
// teacher's original output. Ties count as failures.
double faithfulness(const Generator& edited, const Generator& teacher,
                    const SyntheticTask& task, const RedactionSpec& spec,
                    int n, std::uint64_t seed);

// Fraction of trials where corr against the reference beats every sampled
// mismatched conditional (sampled without replacement, excluding c and ĉ).
double r_precision(const Generator& edited, const SyntheticTask& task,
                   const RedactionSpec& spec, int n, int m, std::uint64_t seed);

// Fraction of trials where the output matches ĉ strictly better than c.
double c_vs_chat(const Generator& edited, const SyntheticTask& task,
                 const RedactionSpec& spec, int n, std::uint64_t seed);

// Per-conditional MMD² between generated samples and fresh data draws.
std::map<std::string, double> quality_mmd(
    const Generator& g, const SyntheticTask& task,
    const std::vector<Conditional>& conditionals, int n, std::uint64_t seed);

// Appendix-style inversion of negative-guidance distillation:
// eps* = (1/eta) ((1+eta) eps_uncond - eps_cond_distilled).
std::vector<double> recover_original_score(
    std::span<const double> eps_uncond,
    std::span<const double> eps_cond_distilled, double eta);

EvalReport evaluate(const Generator& edited, const Generator& teacher,
                    const SyntheticTask& task, const RedactionSpec& spec,
                    const EvalConfig& cfg);

}  // namespace condredact
