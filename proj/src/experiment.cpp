#include "condredact/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>

#include "condredact/attack.hpp"
#include "condredact/checkpoint.hpp"
#include "condredact/distill.hpp"
#include "condredact/metrics.hpp"
#include "condredact/plot.hpp"
#include "condredact/presets.hpp"
#include "condredact/report.hpp"

namespace condredact {

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  ReportBuilder builder(cfg.to_json());
  RunOutcome outcome;

  std::unique_ptr<Generator> teacher;
  std::unique_ptr<Generator> edited;

  auto finish = [&](int code) {
    outcome.report = builder.build();
    outcome.exit_code = code;
    write_json((dir / "report.json").string(), outcome.report);
    return outcome;
  };

  // --- train ---
  try {
    Stopwatch timer;
    teacher = build_generator(cfg.arch, cfg.task, derive_seed(cfg.seed, "build"));
    TrainConfig train = cfg.train;
    train.seed = cfg.phase_seed("train");
    TrainResult result = train_generator(*teacher, cfg.task, train);
    builder.set_training(result.initial_mmd, result.final_mmd);
    write_trace_csv((dir / "train_trace.csv").string(), result.trace);
    save_checkpoint((dir / "teacher.ckpt.json").string(), *teacher, cfg.task,
                    cfg.seed, train.steps);
    builder.add_timing("train", timer.seconds());
  } catch (const std::exception& e) {
    builder.mark_failed("train", e.what());
    return finish(3);
  }

  // --- redact ---
  try {
    Stopwatch timer;
    if (cfg.redaction_method == "closed-form") {
      auto* single = dynamic_cast<SingleStageGenerator*>(teacher.get());
      auto* affine = dynamic_cast<AffineConditioner*>(&single->cond());
      const LabelRedactionPlan plan = cfg.spec.to_label_plan();
      AffineConditioner redacted = redact_affine(*affine, plan);
      const RedactionCertificate cert = verify_redaction(
          affine->map(), redacted.map(), affine->embeddings(), plan);
      edited = teacher->clone();
      dynamic_cast<SingleStageGenerator*>(edited.get())
          ->set_cond(std::make_unique<AffineConditioner>(std::move(redacted)));
      builder.set_certificate(cert);
    } else if (cfg.redaction_method == "distill") {
      DistillConfig distill_cfg = cfg.distill;
      distill_cfg.seed = cfg.phase_seed("distill");
      DistillOutcome result = distill(*teacher, cfg.task, cfg.spec, distill_cfg);
      write_trace_csv((dir / "distill_trace.csv").string(), result.trace);
      builder.set_distill_summary(
          result.trace.empty() ? 0.0 : result.trace.front().second,
          result.trace.empty() ? 0.0 : result.trace.back().second,
          result.block_initial, result.block_final);
      edited = std::move(result.edited);
    } else {
      edited = teacher->clone();
    }
    save_checkpoint((dir / "edited.ckpt.json").string(), *edited, cfg.task,
                    cfg.seed, 0);
    builder.add_timing("redact", timer.seconds());
  } catch (const std::exception& e) {
    builder.mark_failed("redact", e.what());
    return finish(3);
  }

  // --- eval ---
  if (!cfg.spec.empty()) {
    try {
      Stopwatch timer;
      EvalConfig eval_cfg = cfg.eval;
      eval_cfg.seed = cfg.phase_seed("eval");
      EvalReport metrics = evaluate(*edited, *teacher, cfg.task, cfg.spec,
                                    eval_cfg);
      builder.set_metrics(metrics);
      std::vector<std::vector<double>> rows;
      std::vector<std::string> names;
      for (const auto& [name, v] : metrics.quality_edited) {
        rows.push_back({v, metrics.quality_teacher.at(name)});
        names.push_back(name);
      }
      // quality table keyed by conditional name
      std::ofstream q((dir / "quality.csv").string());
      q << "conditional,mmd2_edited,mmd2_teacher\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        q << names[i] << "," << format_double(rows[i][0]) << ","
          << format_double(rows[i][1]) << "\n";
      }
      builder.add_timing("eval", timer.seconds());
    } catch (const std::exception& e) {
      builder.mark_failed("eval", e.what());
      return finish(3);
    }
  }

  // --- attack ---
  if (cfg.attack_enabled && !cfg.spec.empty()) {
    try {
      Stopwatch timer;
      AttackConfig attack_cfg = cfg.attack;
      attack_cfg.seed = cfg.phase_seed("attack");
      const double rate = attack_success_rate(*edited, cfg.task, cfg.spec,
                                              attack_cfg, cfg.attack_trials);
      builder.set_attack(rate, cfg.attack_trials);

      // detailed traces for the first few attacks
      const auto redacted = cfg.spec.redacted_set(cfg.task);
      const auto vocab = full_vocabulary(cfg.task);
      std::vector<std::vector<double>> rows;
      const int detail = std::min<int>(5, cfg.attack_trials);
      for (int i = 0; i < detail; ++i) {
        AttackConfig per = attack_cfg;
        per.seed = derive_seed(attack_cfg.seed, "trace:" + std::to_string(i));
        const Conditional& c = redacted[i % redacted.size()];
        AttackResult r = square_attack(*edited, cfg.task, c,
                                       cfg.spec.reference(c), vocab, per);
        for (std::size_t it = 0; it < r.corr_trace.size(); ++it) {
          rows.push_back({static_cast<double>(i), static_cast<double>(it),
                          r.corr_trace[it]});
        }
      }
      write_csv((dir / "attack_trace.csv").string(),
                {"attack", "iteration", "corr"}, rows);
      builder.add_timing("attack", timer.seconds());
    } catch (const std::exception& e) {
      builder.mark_failed("attack", e.what());
      return finish(3);
    }
  }

  // --- plots (2-D tasks only) ---
  if (cfg.task.out_dim == 2) {
    try {
      Stopwatch timer;
      plot_comparison(*teacher, *edited, cfg.task, cfg.task.conditionals(), 48,
                      derive_seed(cfg.seed, "plot"),
                      (dir / "samples.svg").string());
      builder.add_timing("plot", timer.seconds());
    } catch (const std::exception& e) {
      builder.mark_failed("plot", e.what());
      return finish(3);
    }
  }

  return finish(0);
}

}  // namespace condredact
