#include "condredact/distill.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "condredact/optim.hpp"

namespace condredact {

// ---------------------------------------------------------------------------
// RedactionSpec
// ---------------------------------------------------------------------------

RedactionSpec RedactionSpec::labels(std::vector<std::pair<int, int>> map) {
  RedactionSpec spec;
  spec.kind = Kind::labels;
  spec.label_map = std::move(map);
  return spec;
}

RedactionSpec RedactionSpec::token_substitution(
    std::vector<std::pair<int, int>> sub) {
  RedactionSpec spec;
  spec.kind = Kind::token_sub;
  spec.token_sub = std::move(sub);
  return spec;
}

RedactionSpec RedactionSpec::none() { return RedactionSpec{}; }

bool RedactionSpec::is_redacted(const Conditional& c) const {
  if (kind == Kind::labels) {
    if (c.size() != 1) return false;
    for (const auto& [j, _] : label_map) {
      if (c[0] == j) return true;
    }
    return false;
  }
  for (int token : c) {
    for (const auto& [from, _] : token_sub) {
      if (token == from) return true;
    }
  }
  return false;
}

Conditional RedactionSpec::reference(const Conditional& c) const {
  if (!is_redacted(c)) {
    throw std::invalid_argument("reference: conditional \"" +
                                conditional_key(c) + "\" is not redacted");
  }
  Conditional out = c;
  if (kind == Kind::labels) {
    for (const auto& [j, ref] : label_map) {
      if (out[0] == j) out[0] = ref;
    }
    return out;
  }
  for (int& token : out) {
    for (const auto& [from, to] : token_sub) {
      if (token == from) token = to;
    }
  }
  return out;
}

std::vector<Conditional> RedactionSpec::redacted_set(
    const SyntheticTask& task) const {
  std::vector<Conditional> out;
  for (const auto& c : task.conditionals()) {
    if (is_redacted(c)) out.push_back(c);
  }
  return out;
}

std::vector<Conditional> RedactionSpec::valid_set(
    const SyntheticTask& task) const {
  std::vector<Conditional> out;
  for (const auto& c : task.conditionals()) {
    if (!is_redacted(c)) out.push_back(c);
  }
  return out;
}

void RedactionSpec::validate(const SyntheticTask& task) const {
  if (valid_set(task).empty()) {
    throw std::invalid_argument("redaction spec: no valid conditionals remain");
  }
  if (empty()) return;
  const auto redacted = redacted_set(task);
  if (redacted.empty()) {
    throw std::invalid_argument(
        "redaction spec: rules match no conditional of this task");
  }
  for (const auto& c : redacted) {
    const Conditional ref = reference(c);
    if (is_redacted(ref)) {
      throw std::invalid_argument("redaction spec: reference of \"" +
                                  conditional_key(c) +
                                  "\" is itself redacted");
    }
    task.require_valid(ref);
  }
}

LabelRedactionPlan RedactionSpec::to_label_plan() const {
  if (kind != Kind::labels) {
    throw std::invalid_argument("to_label_plan: spec is not label-based");
  }
  return LabelRedactionPlan::from_pairs(label_map);
}

// ---------------------------------------------------------------------------
// DistillConfig
// ---------------------------------------------------------------------------

void DistillConfig::validate(const std::string& topology) const {
  if (steps < 0 || batch <= 0 || lr <= 0.0) {
    throw std::invalid_argument("distill config: steps/batch/lr out of range");
  }
  if (metric != "l1" && metric != "l2-squared") {
    throw std::invalid_argument("distill config: unknown metric " + metric);
  }
  if (anneal && lambda_min > lambda_max) {
    throw std::invalid_argument("distill config: lambda_min > lambda_max");
  }
  if (alpha < 0.0 || beta < 0.0) {
    throw std::invalid_argument("distill config: alpha/beta must be >= 0");
  }
  if (lambda_value < 0.0) {
    throw std::invalid_argument("distill config: lambda must be >= 0");
  }
  if (student_init != "copy" && student_init != "fresh") {
    throw std::invalid_argument("distill config: unknown student_init " +
                                student_init);
  }
  if (schedule != "uniform" && topology != "residual-n") {
    throw std::invalid_argument("distill config: schedule \"" + schedule +
                                "\" is only valid for the residual topology");
  }
}

double DistillConfig::lambda_for_step(int step) const {
  return anneal ? lambda_at(step, steps, lambda_min, lambda_max) : lambda_value;
}

// ---------------------------------------------------------------------------
// Loss pieces
// ---------------------------------------------------------------------------

namespace {

Tensor metric_norm(const std::string& metric, const Tensor& a, const Tensor& b) {
  if (metric == "l2-squared") return squared_distance(a, b);
  // l1: sum |a - b| with |x| = relu(x) + relu(-x)
  Tensor d = subtract(a, b);
  return sum_all(add(relu(d), relu(scale(-1.0, d))));
}

Tensor batch_mean(const std::string& metric,
                  const std::function<Tensor(const Conditional&)>& student,
                  const std::function<Tensor(const Conditional&)>& target,
                  const std::vector<Conditional>& batch) {
  Tensor acc;
  for (const auto& c : batch) {
    Tensor term = metric_norm(metric, student(c), target(c));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(1.0 / static_cast<double>(batch.size()), acc);
}

std::vector<Conditional> draw_batch(const std::vector<Conditional>& pool,
                                    int batch, Rng& rng) {
  std::vector<Conditional> out;
  out.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    out.push_back(pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]);
  }
  return out;
}

// Frozen-teacher target cache keyed by the conditional.
class TargetCache {
 public:
  explicit TargetCache(std::function<Tensor(const Conditional&)> fn)
      : fn_(std::move(fn)) {}

  Tensor operator()(const Conditional& c) {
    const std::string key = conditional_key(c);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      NoGradGuard guard;
      it = cache_.emplace(key, fn_(c).detach()).first;
    }
    return it->second;
  }

 private:
  std::function<Tensor(const Conditional&)> fn_;
  std::map<std::string, Tensor> cache_;
};

std::vector<std::vector<double>> snapshot_values(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(t.values_copy());
  return out;
}

}  // namespace

Tensor distill_loss(const std::function<Tensor(const Conditional&)>& student,
                    const std::function<Tensor(const Conditional&)>& teacher,
                    const std::vector<Conditional>& batch_valid,
                    const std::vector<Conditional>& batch_redacted,
                    const RedactionSpec& spec, double lambda,
                    const std::string& metric) {
  if (batch_valid.empty()) {
    throw std::invalid_argument("distill_loss: empty valid batch");
  }
  auto teacher_frozen = [&](const Conditional& c) {
    NoGradGuard guard;
    return teacher(c).detach();
  };
  Tensor loss = batch_mean(metric, student, teacher_frozen, batch_valid);
  if (!batch_redacted.empty()) {
    auto projected = [&](const Conditional& c) {
      return teacher_frozen(spec.reference(c));
    };
    loss = add(loss, scale(lambda, batch_mean(metric, student, projected,
                                              batch_redacted)));
  } else if (!spec.empty()) {
    throw std::invalid_argument(
        "distill_loss: empty redacted batch for a non-empty redaction set");
  }
  return loss;
}

Tensor distill_loss(const Conditioner& student, const Conditioner& teacher,
                    const std::vector<Conditional>& batch_valid,
                    const std::vector<Conditional>& batch_redacted,
                    const RedactionSpec& spec, double lambda,
                    const std::string& metric) {
  return distill_loss([&](const Conditional& c) { return student.forward(c); },
                      [&](const Conditional& c) { return teacher.forward(c); },
                      batch_valid, batch_redacted, spec, lambda, metric);
}

double lambda_at(int step, int total_steps, double lambda_min,
                 double lambda_max) {
  if (total_steps == 0) {
    throw std::invalid_argument("lambda_at: total_steps must be nonzero");
  }
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("lambda_at: step out of [0, total_steps]");
  }
  return lambda_min + (lambda_max - lambda_min) * static_cast<double>(step) /
                          static_cast<double>(total_steps);
}

LayerSchedules layer_schedules(int n, int n_prime, const std::string& schedule,
                               double alpha, double beta, double lambda) {
  if (n < 1) throw std::invalid_argument("layer_schedules: n must be >= 1");
  const bool dilation = schedule == "w-dilation" || schedule == "lambda-dilation";
  if (dilation && n_prime < 1) {
    throw std::invalid_argument("layer_schedules: dilation needs n' >= 1");
  }
  LayerSchedules out;
  out.weights.assign(n, 1.0 / n);
  out.lambdas.assign(n, lambda);
  for (int idx = 0; idx < n; ++idx) {
    const double i = static_cast<double>(idx + 1);
    if (schedule == "uniform") {
      // defaults already in place
    } else if (schedule == "w-order") {
      out.weights[idx] = 1.0 / n + alpha * (i - (n + 1) / 2.0);
    } else if (schedule == "lambda-order") {
      out.lambdas[idx] = lambda + beta * (i - (n + 1) / 2.0);
    } else if (schedule == "w-dilation") {
      out.weights[idx] =
          1.0 / n + alpha * (std::fmod(i, n_prime) - (n_prime + 1) / 6.0);
    } else if (schedule == "lambda-dilation") {
      out.lambdas[idx] =
          lambda + beta * (std::fmod(i, n_prime) - (n_prime + 1) / 6.0);
    } else {
      throw std::invalid_argument("layer_schedules: unknown schedule " + schedule);
    }
  }
  for (int idx = 0; idx < n; ++idx) {
    if (out.weights[idx] <= 0.0 || out.lambdas[idx] <= 0.0) {
      throw std::invalid_argument(
          "layer_schedules: block " + std::to_string(idx + 1) +
          " got non-positive weight or lambda; reduce alpha/beta");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-stage distillation
// ---------------------------------------------------------------------------

DistillOutcome distill_conditioner(const SingleStageGenerator& teacher,
                                   const SyntheticTask& task,
                                   const RedactionSpec& spec,
                                   const DistillConfig& cfg) {
  spec.validate(task);
  cfg.validate("single");

  auto edited_gen = teacher.clone();
  auto* edited = dynamic_cast<SingleStageGenerator*>(edited_gen.get());
  std::unique_ptr<Conditioner> student = teacher.cond().clone();
  Rng init_rng(derive_seed(cfg.seed, "student-init"));
  if (cfg.student_init == "fresh") student->reinit_trainable(init_rng);

  const auto valid = spec.valid_set(task);
  const auto redacted = spec.redacted_set(task);
  TargetCache teacher_target(
      [&](const Conditional& c) { return teacher.cond().forward(c); });

  const auto main_before = snapshot_values(collect_params(
      [&](const ParamVisitor& v) { edited->main().visit("main", v, true); },
      false));

  auto opt = make_optimizer(cfg.optimizer, student->distill_trainable(), cfg.lr);
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  DistillOutcome outcome;
  for (int step = 0; step < cfg.steps; ++step) {
    opt->zero_grad();
    const auto batch_valid = draw_batch(valid, cfg.batch, batch_rng);
    const auto batch_red =
        redacted.empty() ? std::vector<Conditional>{}
                         : draw_batch(redacted, cfg.batch, batch_rng);
    Tensor loss = distill_loss(
        [&](const Conditional& c) { return student->forward(c); },
        [&](const Conditional& c) { return teacher_target(c); }, batch_valid,
        batch_red, spec, cfg.lambda_for_step(step), cfg.metric);
    const double value = loss.value();
    if (!std::isfinite(value)) {
      throw std::runtime_error("distill_conditioner: loss diverged at step " +
                               std::to_string(step));
    }
    outcome.trace.emplace_back(step, value);
    backward(loss);
    opt->step();
  }

  edited->set_cond(std::move(student));
  const auto main_after = snapshot_values(collect_params(
      [&](const ParamVisitor& v) { edited->main().visit("main", v, true); },
      false));
  if (main_after != main_before) {
    throw std::logic_error("distill_conditioner: main network moved");
  }
  outcome.edited = std::move(edited_gen);
  return outcome;
}

// ---------------------------------------------------------------------------
// Sequential distillation (cascaded-2)
// ---------------------------------------------------------------------------

DistillOutcome distill_sequential(const CascadedGenerator& teacher,
                                  const SyntheticTask& task,
                                  const RedactionSpec& spec,
                                  const DistillConfig& cfg,
                                  const StageProbe& probe) {
  spec.validate(task);
  cfg.validate("cascaded-2");

  auto edited_gen = teacher.clone();
  auto* edited = dynamic_cast<CascadedGenerator*>(edited_gen.get());

  const auto valid = spec.valid_set(task);
  const auto redacted = spec.redacted_set(task);
  DistillOutcome outcome;

  // --- stage 1: H1' on sentence embeddings, variance branch frozen ---
  {
    auto h1_clone = edited->h1().clone();
    auto* student = dynamic_cast<SeqConditioner*>(h1_clone.get());
    Rng init_rng(derive_seed(cfg.seed, "h1-init"));
    if (cfg.prefix_hidden > 0 && !student->has_prefix()) {
      student->attach_prefix(static_cast<std::size_t>(cfg.prefix_hidden),
                             init_rng);
      edited->arch_mut().prefix_hidden = cfg.prefix_hidden;
    }
    if (student->has_head()) student->head().freeze_variance = true;
    if (cfg.student_init == "fresh") student->reinit_trainable(init_rng);

    TargetCache target(
        [&](const Conditional& c) { return teacher.h1().forward(c); });
    auto opt =
        make_optimizer(cfg.optimizer, student->distill_trainable(), cfg.lr);
    Rng batch_rng(derive_seed(cfg.seed, "h1-batches"));
    for (int step = 0; step < cfg.steps; ++step) {
      opt->zero_grad();
      const auto batch_valid = draw_batch(valid, cfg.batch, batch_rng);
      const auto batch_red =
          redacted.empty() ? std::vector<Conditional>{}
                           : draw_batch(redacted, cfg.batch, batch_rng);
      Tensor loss = distill_loss(
          [&](const Conditional& c) { return student->forward(c); },
          [&](const Conditional& c) { return target(c); }, batch_valid,
          batch_red, spec, cfg.lambda_for_step(step), cfg.metric);
      const double value = loss.value();
      if (!std::isfinite(value)) {
        throw std::runtime_error("distill_sequential: stage-1 diverged at step " +
                                 std::to_string(step));
      }
      outcome.trace.emplace_back(step, value);
      backward(loss);
      opt->step();
    }
    edited->set_h1(std::move(*student));
  }

  // --- stage 2: H2' conditioned on the distilled stage-1 outputs ---
  {
    FusionConditioner student = teacher.h2().clone(edited->h1().table_ptr());
    Rng init_rng(derive_seed(cfg.seed, "h2-init"));
    if (cfg.student_init == "fresh") student.reinit_trainable(init_rng);

    auto stage1_edited = [&](const Conditional& c, const Tensor& z) {
      NoGradGuard guard;
      return edited->generate_stage1(z, c).detach();
    };

    auto opt =
        make_optimizer(cfg.optimizer, student.distill_trainable(), cfg.lr);
    Rng batch_rng(derive_seed(cfg.seed, "h2-batches"));
    Rng z_rng(derive_seed(cfg.seed, "h2-z"));
    for (int step = 0; step < cfg.steps; ++step) {
      opt->zero_grad();
      const double lambda = cfg.lambda_for_step(step);
      Tensor loss;

      auto accumulate = [&](const std::vector<Conditional>& batch,
                            bool project, double weight) {
        if (batch.empty()) return;
        Tensor acc;
        for (const auto& c : batch) {
          Tensor z = sample_latent(teacher, z_rng);
          Tensor x1 = stage1_edited(c, z);
          if (probe) probe(z, c, x1);
          Tensor student_rep = student.forward(c, x1);
          Tensor target_rep;
          {
            NoGradGuard guard;
            if (project) {
              const Conditional ref = spec.reference(c);
              Tensor x1_ref = stage1_edited(ref, z);
              target_rep = teacher.h2().forward(ref, x1_ref).detach();
            } else {
              target_rep = teacher.h2().forward(c, x1).detach();
            }
          }
          Tensor term = metric_norm(cfg.metric, student_rep, target_rep);
          acc = acc.defined() ? add(acc, term) : term;
        }
        acc = scale(weight / static_cast<double>(batch.size()), acc);
        loss = loss.defined() ? add(loss, acc) : acc;
      };

      accumulate(draw_batch(valid, cfg.batch, batch_rng), false, 1.0);
      if (!redacted.empty()) {
        accumulate(draw_batch(redacted, cfg.batch, batch_rng), true, lambda);
      }

      const double value = loss.value();
      if (!std::isfinite(value)) {
        throw std::runtime_error("distill_sequential: stage-2 diverged at step " +
                                 std::to_string(step));
      }
      outcome.trace.emplace_back(cfg.steps + step, value);
      backward(loss);
      opt->step();
    }
    edited->set_h2(std::move(student));
  }

  outcome.edited = std::move(edited_gen);
  return outcome;
}

// ---------------------------------------------------------------------------
// Parallel distillation (residual-n)
// ---------------------------------------------------------------------------

DistillOutcome distill_parallel(const ResidualGenerator& teacher,
                                const SyntheticTask& task,
                                const RedactionSpec& spec,
                                const DistillConfig& cfg) {
  spec.validate(task);
  cfg.validate("residual-n");

  const std::size_t n = teacher.block_count();
  const LayerSchedules schedules =
      layer_schedules(static_cast<int>(n), teacher.arch().dilation_cycle,
                      cfg.schedule, cfg.alpha, cfg.beta, cfg.lambda_value);

  auto edited_gen = teacher.clone();
  auto* edited = dynamic_cast<ResidualGenerator*>(edited_gen.get());

  const auto valid = spec.valid_set(task);
  const auto redacted = spec.redacted_set(task);

  std::vector<std::unique_ptr<BlockConditioner>> students;
  std::vector<std::unique_ptr<TargetCache>> targets;
  std::vector<Tensor> params;
  Rng init_rng(derive_seed(cfg.seed, "block-init"));
  if (cfg.gated_rewriter) edited->arch_mut().gated_rewriter = true;
  for (std::size_t i = 0; i < n; ++i) {
    auto student = edited->block_cond(i).clone_with_table(edited->table());
    if (cfg.gated_rewriter) student->upgrade_to_rewriter(init_rng);
    if (cfg.student_init == "fresh") student->reinit_trainable(init_rng);
    auto t = collect_params(
        [&](const ParamVisitor& v) { student->visit_params("h", v); }, true);
    params.insert(params.end(), t.begin(), t.end());
    targets.push_back(std::make_unique<TargetCache>(
        [&teacher, i](const Conditional& c) {
          return teacher.block_cond(i).forward(c);
        }));
    students.push_back(std::move(student));
  }

  auto block_loss = [&](std::size_t i, const std::vector<Conditional>& bv,
                        const std::vector<Conditional>& br, double lambda) {
    return distill_loss(
        [&](const Conditional& c) { return students[i]->forward(c); },
        [&](const Conditional& c) { return (*targets[i])(c); }, bv, br, spec,
        lambda, cfg.metric);
  };

  DistillOutcome outcome;
  auto eval_blocks = [&]() {
    NoGradGuard guard;
    std::vector<double> losses;
    for (std::size_t i = 0; i < n; ++i) {
      losses.push_back(
          block_loss(i, valid, redacted, schedules.lambdas[i]).value());
    }
    return losses;
  };
  outcome.block_initial = eval_blocks();

  auto opt = make_optimizer(cfg.optimizer, std::move(params), cfg.lr);
  Rng batch_rng(derive_seed(cfg.seed, "block-batches"));
  for (int step = 0; step < cfg.steps; ++step) {
    opt->zero_grad();
    const auto batch_valid = draw_batch(valid, cfg.batch, batch_rng);
    const auto batch_red =
        redacted.empty() ? std::vector<Conditional>{}
                         : draw_batch(redacted, cfg.batch, batch_rng);
    // gradient accumulation ordered by block index
    Tensor total;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor term = scale(schedules.weights[i],
                          block_loss(i, batch_valid, batch_red,
                                     schedules.lambdas[i]));
      total = total.defined() ? add(total, term) : term;
    }
    const double value = total.value();
    if (!std::isfinite(value)) {
      throw std::runtime_error("distill_parallel: loss diverged at step " +
                               std::to_string(step));
    }
    outcome.trace.emplace_back(step, value);
    backward(total);
    opt->step();
  }

  for (std::size_t i = 0; i < n; ++i) {
    edited->set_block_cond(i, std::move(students[i]));
  }
  // re-evaluate on the edited blocks
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < n; ++i) {
      outcome.block_final.push_back(
          distill_loss(
              [&](const Conditional& c) { return edited->block_cond(i).forward(c); },
              [&](const Conditional& c) { return teacher.block_cond(i).forward(c); },
              valid, redacted, spec, schedules.lambdas[i], cfg.metric)
              .value());
    }
  }
  outcome.edited = std::move(edited_gen);
  return outcome;
}

DistillOutcome distill(const Generator& teacher, const SyntheticTask& task,
                       const RedactionSpec& spec, const DistillConfig& cfg) {
  if (const auto* single = dynamic_cast<const SingleStageGenerator*>(&teacher)) {
    return distill_conditioner(*single, task, spec, cfg);
  }
  if (const auto* cascaded = dynamic_cast<const CascadedGenerator*>(&teacher)) {
    return distill_sequential(*cascaded, task, spec, cfg);
  }
  if (const auto* residual = dynamic_cast<const ResidualGenerator*>(&teacher)) {
    return distill_parallel(*residual, task, spec, cfg);
  }
  throw std::invalid_argument("distill: unknown generator topology");
}

}  // namespace condredact
