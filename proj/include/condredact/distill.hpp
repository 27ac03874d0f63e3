#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "condredact/closedform.hpp"
#include "condredact/networks.hpp"
#include "condredact/tensor.hpp"
#include "condredact/toymodels.hpp"

namespace condredact {

// The redaction set Ω plus the reference map ĉ. Label rules pair a redacted
// label with its reference; token rules substitute redacted tokens wherever
// they appear in a conditional.
struct RedactionSpec {
  enum class Kind { labels, token_sub };
  Kind kind = Kind::labels;
  std::vector<std::pair<int, int>> label_map;  // (redacted, reference)
  std::vector<std::pair<int, int>> token_sub;  // (from token, to token)

  static RedactionSpec labels(std::vector<std::pair<int, int>> map);
  static RedactionSpec token_substitution(std::vector<std::pair<int, int>> sub);
  static RedactionSpec none();  // empty Ω, pure imitation

  bool empty() const { return label_map.empty() && token_sub.empty(); }
  bool is_redacted(const Conditional& c) const;
  Conditional reference(const Conditional& c) const;
  std::vector<Conditional> redacted_set(const SyntheticTask& task) const;
  std::vector<Conditional> valid_set(const SyntheticTask& task) const;
  void validate(const SyntheticTask& task) const;
  LabelRedactionPlan to_label_plan() const;
};

struct DistillConfig {
  double lambda_value = 1.0;
  bool anneal = false;
  double lambda_min = 1.0;
  double lambda_max = 3.0;
  std::string metric = "l2-squared";  // l1 | l2-squared
  std::string schedule = "uniform";   // +w-order|lambda-order|w-dilation|lambda-dilation
  double alpha = 0.001;
  double beta = 0.01;
  int steps = 2000;
  int batch = 8;
  double lr = 0.05;
  std::uint64_t seed = 1;
  std::string optimizer = "sgd";
  std::string student_init = "copy";  // copy | fresh
  int prefix_hidden = 0;              // >0: capacity prefix on the stage-1 student
  bool gated_rewriter = false;        // residual students swap in the rewriter

  void validate(const std::string& topology) const;
  double lambda_for_step(int step) const;
};

struct DistillOutcome {
  std::unique_ptr<Generator> edited;
  std::vector<std::pair<int, double>> trace;  // (step, loss)
  std::vector<double> block_initial;          // residual-n per-block eval loss
  std::vector<double> block_final;
};

// Eq.-style imitation + projection loss over explicit batches. Teacher
// targets are evaluated without tape; `metric` is l1 or l2-squared.
Tensor distill_loss(const std::function<Tensor(const Conditional&)>& student,
                    const std::function<Tensor(const Conditional&)>& teacher,
                    const std::vector<Conditional>& batch_valid,
                    const std::vector<Conditional>& batch_redacted,
                    const RedactionSpec& spec, double lambda,
                    const std::string& metric);

Tensor distill_loss(const Conditioner& student, const Conditioner& teacher,
                    const std::vector<Conditional>& batch_valid,
                    const std::vector<Conditional>& batch_redacted,
                    const RedactionSpec& spec, double lambda,
                    const std::string& metric);

// Linear annealing from lambda_min at step 0 to lambda_max at total_steps.
double lambda_at(int step, int total_steps, double lambda_min, double lambda_max);

struct LayerSchedules {
  std::vector<double> weights;
  std::vector<double> lambdas;
};

// Per-block weights w_i and coefficients λ_i, i = 1..n:
//   uniform      w_i = 1/n                          λ_i = λ
//   w-order      w_i = 1/n + α(i-(n+1)/2)           λ_i = λ
//   lambda-order w_i = 1/n                          λ_i = λ + β(i-(n+1)/2)
//   w-dilation   w_i = 1/n + α(i mod n' - (n'+1)/6) λ_i = λ
//   lambda-dilation                                 λ_i = λ + β(i mod n' - (n'+1)/6)
LayerSchedules layer_schedules(int n, int n_prime, const std::string& schedule,
                               double alpha, double beta, double lambda);

// Single-stage topology: distill H into a student H', main network frozen.
DistillOutcome distill_conditioner(const SingleStageGenerator& teacher,
                                   const SyntheticTask& task,
                                   const RedactionSpec& spec,
                                   const DistillConfig& cfg);

using StageProbe =
    std::function<void(const Tensor& z, const Conditional& c, const Tensor& x1)>;

// Cascaded topology: H1' first, then H2' trained on the already-distilled
// stage-1 outputs. `probe` observes every stage-2 training input.
DistillOutcome distill_sequential(const CascadedGenerator& teacher,
                                  const SyntheticTask& task,
                                  const RedactionSpec& spec,
                                  const DistillConfig& cfg,
                                  const StageProbe& probe = nullptr);

// Residual topology: all block conditioners jointly, loss Σ w_i L(H_i'; λ_i).
DistillOutcome distill_parallel(const ResidualGenerator& teacher,
                                const SyntheticTask& task,
                                const RedactionSpec& spec,
                                const DistillConfig& cfg);

// Dispatch on the teacher's topology.
DistillOutcome distill(const Generator& teacher, const SyntheticTask& task,
                       const RedactionSpec& spec, const DistillConfig& cfg);

}  // namespace condredact
