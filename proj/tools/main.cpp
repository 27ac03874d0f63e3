#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "condredact/attack.hpp"
#include "condredact/checkpoint.hpp"
#include "condredact/closedform.hpp"
#include "condredact/distill.hpp"
#include "condredact/experiment.hpp"
#include "condredact/metrics.hpp"
#include "condredact/plot.hpp"
#include "condredact/presets.hpp"
#include "condredact/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace condredact;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPhase = 3;

struct ConfigSource {
  std::string preset;
  std::string file;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> train_steps;
  std::optional<int> distill_steps;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "built-in preset name");
    cmd->add_option("--config", file, "experiment config JSON file");
    cmd->add_option("--out", output_dir, "output directory (overrides config)");
    cmd->add_option("--seed", seed, "global seed (overrides config)");
    cmd->add_option("--train-steps", train_steps, "teacher training steps");
    cmd->add_option("--distill-steps", distill_steps, "distillation steps");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!preset.empty() && !file.empty()) {
      throw std::invalid_argument("give either --preset or --config, not both");
    }
    if (!preset.empty()) {
      cfg = preset_config(preset);
    } else if (!file.empty()) {
      cfg = ExperimentConfig::load(file);
    } else {
      throw std::invalid_argument("one of --preset/--config is required");
    }
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (const char* env = std::getenv("CONDREDACT_OUT")) cfg.output_dir = env;
    if (seed) cfg.seed = *seed;
    if (train_steps) cfg.train.steps = *train_steps;
    if (distill_steps) cfg.distill.steps = *distill_steps;
    return cfg;
  }
};

Conditional parse_conditional(const SyntheticTask& task, const std::string& text) {
  Conditional c;
  if (task.kind == SyntheticTask::Kind::kgon) {
    c.push_back(std::stoi(text));
  } else {
    std::istringstream words(text);
    std::string word;
    while (words >> word) c.push_back(task.token_id(word));
  }
  task.require_valid(c);
  return c;
}

int cmd_gen_data(const std::string& task_kind, int k, double sigma, int dim,
                 const std::string& conditional, int n, std::uint64_t seed,
                 const std::string& out) {
  SyntheticTask task = task_kind == "kgon"
                           ? SyntheticTask::kgon_task(k, sigma)
                           : SyntheticTask::token_attr_task(dim, sigma);
  const Conditional c = parse_conditional(task, conditional);
  SampleSet samples = sample_data(task, c, n, seed);
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out);
  for (std::size_t d = 0; d < samples.dim; ++d) {
    file << (d ? "," : "") << "x" << d;
  }
  file << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto row = samples.row(i);
    for (std::size_t d = 0; d < samples.dim; ++d) {
      file << (d ? "," : "") << format_double(row[d]);
    }
    file << "\n";
  }
  std::printf("wrote %d samples for \"%s\" to %s\n", n, task.name(c).c_str(),
              out.c_str());
  return kExitOk;
}

int cmd_train(const ConfigSource& source) {
  ExperimentConfig cfg = source.resolve();
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  auto g = build_generator(cfg.arch, cfg.task, derive_seed(cfg.seed, "build"));
  TrainConfig train = cfg.train;
  train.seed = cfg.phase_seed("train");
  TrainResult result = train_generator(*g, cfg.task, train);
  const fs::path dir(cfg.output_dir);
  save_checkpoint((dir / "teacher.ckpt.json").string(), *g, cfg.task, cfg.seed,
                  train.steps);
  write_trace_csv((dir / "train_trace.csv").string(), result.trace);
  std::printf("trained %s: mmd2 %.6f -> %.6f (%d steps)\n",
              cfg.arch.topology.c_str(), result.initial_mmd, result.final_mmd,
              train.steps);
  return kExitOk;
}

int cmd_redact_exact(const std::string& ckpt_path, const std::string& plan_path,
                     const std::string& out_path, const std::string& report_path) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  auto* single = dynamic_cast<SingleStageGenerator*>(loaded.generator.get());
  auto* affine = single ? dynamic_cast<AffineConditioner*>(&single->cond())
                        : nullptr;
  if (!affine) {
    throw std::invalid_argument(
        "redact-exact needs a single-stage checkpoint with an affine "
        "conditioner");
  }
  const json plan_json = read_json(plan_path);
  const LabelRedactionPlan plan = LabelRedactionPlan::from_pairs(
      plan_json.at("labels").get<std::vector<std::pair<int, int>>>());

  AffineConditioner redacted = redact_affine(*affine, plan);
  const RedactionCertificate cert = verify_redaction(
      affine->map(), redacted.map(), affine->embeddings(), plan);
  single->set_cond(std::make_unique<AffineConditioner>(std::move(redacted)));
  save_checkpoint(out_path, *loaded.generator, loaded.task, loaded.seed,
                  loaded.step);

  json report = {{"schema_version", kReportSchemaVersion},
                 {"certificate",
                  {{"preservation_error", cert.preservation_error},
                   {"projection_error", cert.projection_error}}},
                 {"plan", plan_json}};
  write_json(report_path, report);
  std::printf("certificate: preservation %.3e, projection %.3e\n",
              cert.preservation_error, cert.projection_error);
  return kExitOk;
}

int cmd_distill(const ConfigSource& source, const std::string& teacher_path) {
  ExperimentConfig cfg = source.resolve();
  if (cfg.redaction_method != "distill") cfg.redaction_method = "distill";
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);

  std::unique_ptr<Generator> teacher;
  if (!teacher_path.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(teacher_path);
    teacher = std::move(loaded.generator);
  } else {
    teacher = build_generator(cfg.arch, cfg.task, derive_seed(cfg.seed, "build"));
    TrainConfig train = cfg.train;
    train.seed = cfg.phase_seed("train");
    train_generator(*teacher, cfg.task, train);
    save_checkpoint((dir / "teacher.ckpt.json").string(), *teacher, cfg.task,
                    cfg.seed, train.steps);
  }

  DistillConfig distill_cfg = cfg.distill;
  distill_cfg.seed = cfg.phase_seed("distill");
  DistillOutcome outcome = distill(*teacher, cfg.task, cfg.spec, distill_cfg);
  save_checkpoint((dir / "edited.ckpt.json").string(), *outcome.edited,
                  cfg.task, cfg.seed, distill_cfg.steps);
  write_trace_csv((dir / "distill_trace.csv").string(), outcome.trace);
  std::printf("distilled %s: loss %.6f -> %.6f (%d steps)\n",
              cfg.arch.topology.c_str(),
              outcome.trace.empty() ? 0.0 : outcome.trace.front().second,
              outcome.trace.empty() ? 0.0 : outcome.trace.back().second,
              distill_cfg.steps);
  return kExitOk;
}

int cmd_eval(const ConfigSource& source, const std::string& teacher_path,
             const std::string& edited_path, const std::string& out_path) {
  ExperimentConfig cfg = source.resolve();
  LoadedCheckpoint teacher = load_checkpoint(teacher_path);
  LoadedCheckpoint edited = load_checkpoint(edited_path);
  EvalConfig eval_cfg = cfg.eval;
  eval_cfg.seed = cfg.phase_seed("eval");
  EvalReport report = evaluate(*edited.generator, *teacher.generator, cfg.task,
                               cfg.spec, eval_cfg);
  write_json(out_path, json{{"schema_version", kReportSchemaVersion},
                            {"metrics", eval_report_to_json(report)}});
  std::printf("faithfulness %.4f  r_precision %.4f  c_vs_chat %.4f\n",
              report.faithfulness, report.r_precision, report.c_vs_chat);
  return kExitOk;
}

int cmd_attack(const ConfigSource& source, const std::string& edited_path,
               const std::string& out_path) {
  ExperimentConfig cfg = source.resolve();
  LoadedCheckpoint edited = load_checkpoint(edited_path);
  AttackConfig attack_cfg = cfg.attack;
  attack_cfg.seed = cfg.phase_seed("attack");
  const double rate = attack_success_rate(*edited.generator, cfg.task, cfg.spec,
                                          attack_cfg, cfg.attack_trials);
  write_json(out_path,
             json{{"schema_version", kReportSchemaVersion},
                  {"attack",
                   {{"success_rate", rate}, {"trials", cfg.attack_trials}}}});
  std::printf("attack success rate: %.4f over %d attacks\n", rate,
              cfg.attack_trials);
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  const json report = read_json((fs::path(dir) / "report.json").string());
  validate_report_schema(report);
  const json& results = report.at("results");
  std::printf("report schema %s, tool %s\n",
              report.at("schema_version").get<std::string>().c_str(),
              report.at("diagnostics").at("tool_version")
                  .get<std::string>().c_str());
  for (const auto& phase : results.at("phases")) {
    std::printf("  phase: %s\n", phase.get<std::string>().c_str());
  }
  if (results.contains("certificate")) {
    std::printf("  certificate: preservation %.3e projection %.3e\n",
                results["certificate"]["preservation_error"].get<double>(),
                results["certificate"]["projection_error"].get<double>());
  }
  if (results.contains("metrics")) {
    std::printf("  faithfulness %.4f  r_precision %.4f  c_vs_chat %.4f\n",
                results["metrics"]["faithfulness"].get<double>(),
                results["metrics"]["r_precision"].get<double>(),
                results["metrics"]["c_vs_chat"].get<double>());
  }
  if (results.contains("attack")) {
    std::printf("  attack success rate %.4f\n",
                results["attack"]["success_rate"].get<double>());
  }
  if (results.contains("failure")) {
    std::printf("  FAILED in phase %s: %s\n",
                results["failure"]["phase"].get<std::string>().c_str(),
                results["failure"]["error"].get<std::string>().c_str());
    return kExitPhase;
  }
  return kExitOk;
}

int cmd_run(const ConfigSource& source) {
  ExperimentConfig cfg = source.resolve();
  RunOutcome outcome = run_experiment(cfg);
  std::printf("run \"%s\" finished, report at %s/report.json\n",
              cfg.name.c_str(), cfg.output_dir.c_str());
  if (outcome.exit_code == 0 && outcome.report["results"].contains("metrics")) {
    const auto& m = outcome.report["results"]["metrics"];
    std::printf("faithfulness %.4f  r_precision %.4f  c_vs_chat %.4f\n",
                m["faithfulness"].get<double>(),
                m["r_precision"].get<double>(), m["c_vs_chat"].get<double>());
  }
  return outcome.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data redaction for conditional generative models at desk scale"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "sample task data to CSV");
  std::string gd_task = "kgon", gd_cond = "0", gd_out = "data.csv";
  int gd_k = 10, gd_dim = 2, gd_n = 256;
  double gd_sigma = 0.1;
  std::uint64_t gd_seed = 1;
  gen->add_option("--task", gd_task, "kgon | token-attr")
      ->check(CLI::IsMember({"kgon", "token-attr"}));
  gen->add_option("--k", gd_k, "kgon label count");
  gen->add_option("--sigma", gd_sigma, "conditional noise scale");
  gen->add_option("--dim", gd_dim, "token-attr output dim (2 or 4)");
  gen->add_option("--conditional", gd_cond, "label index or token words");
  gen->add_option("--n", gd_n, "sample count");
  gen->add_option("--seed", gd_seed, "sampling seed");
  gen->add_option("--out", gd_out, "output CSV path");

  // train
  auto* train = app.add_subcommand("train", "train a teacher generator");
  ConfigSource train_src;
  train_src.attach(train);

  // redact-exact
  auto* exact = app.add_subcommand("redact-exact",
                                   "closed-form label redaction of a checkpoint");
  std::string re_ckpt, re_plan, re_out = "edited.ckpt.json",
              re_report = "redact_report.json";
  exact->add_option("--checkpoint", re_ckpt, "teacher checkpoint")->required();
  exact->add_option("--plan", re_plan, "plan JSON {\"labels\":[[j,ref],...]}")
      ->required();
  exact->add_option("--out", re_out, "edited checkpoint path");
  exact->add_option("--report", re_report, "certificate report path");

  // distill
  auto* dist = app.add_subcommand("distill", "distill a redacted conditioner");
  ConfigSource dist_src;
  dist_src.attach(dist);
  std::string dist_teacher;
  dist->add_option("--teacher", dist_teacher, "teacher checkpoint (else trains)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run the redaction metrics");
  ConfigSource eval_src;
  eval_src.attach(eval_cmd);
  std::string ev_teacher, ev_edited, ev_out = "eval_report.json";
  eval_cmd->add_option("--teacher", ev_teacher, "teacher checkpoint")->required();
  eval_cmd->add_option("--edited", ev_edited, "edited checkpoint")->required();
  eval_cmd->add_option("--report", ev_out, "metrics report path");

  // attack
  auto* atk = app.add_subcommand("attack", "adversarial prompting attack");
  ConfigSource atk_src;
  atk_src.attach(atk);
  std::string atk_edited, atk_out = "attack_report.json";
  atk->add_option("--edited", atk_edited, "edited checkpoint")->required();
  atk->add_option("--report", atk_out, "attack report path");

  // report
  auto* rep = app.add_subcommand("report", "validate and summarize a run report");
  std::string rep_dir = ".";
  rep->add_option("--dir", rep_dir, "run directory containing report.json");

  // run
  auto* run = app.add_subcommand("run", "full pipeline: train, redact, eval, attack");
  ConfigSource run_src;
  run_src.attach(run);

  // demo
  auto* demo = app.add_subcommand("demo", "digit-flip preset (closed-form, kgon)");
  std::string demo_out = "runs/demo";
  demo->add_option("--out", demo_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gd_task, gd_k, gd_sigma, gd_dim, gd_cond, gd_n,
                          gd_seed, gd_out);
    }
    if (train->parsed()) return cmd_train(train_src);
    if (exact->parsed()) return cmd_redact_exact(re_ckpt, re_plan, re_out, re_report);
    if (dist->parsed()) return cmd_distill(dist_src, dist_teacher);
    if (eval_cmd->parsed()) return cmd_eval(eval_src, ev_teacher, ev_edited, ev_out);
    if (atk->parsed()) return cmd_attack(atk_src, atk_edited, atk_out);
    if (rep->parsed()) return cmd_report(rep_dir);
    if (run->parsed()) return cmd_run(run_src);
    if (demo->parsed()) {
      ConfigSource src;
      src.preset = "mnist-analog";
      src.output_dir = demo_out;
      return cmd_run(src);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitPhase;
  }
  return kExitOk;
}
