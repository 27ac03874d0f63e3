#include "condredact/presets.hpp"

#include <stdexcept>

namespace condredact {

namespace {

ExperimentConfig mnist_analog() {
  ExperimentConfig cfg;
  cfg.name = "mnist-analog";
  cfg.seed = 7001;
  cfg.output_dir = "runs/mnist-analog";
  cfg.task = SyntheticTask::kgon_task(10, 0.1);
  cfg.arch.topology = "single";
  cfg.arch.conditioner = "affine";
  cfg.arch.embed_dim = 10;
  cfg.arch.rep_dim = 8;
  cfg.arch.latent_dim = 4;
  cfg.arch.hidden = 16;
  cfg.train.steps = 400;
  cfg.train.batch = 24;
  cfg.train.lr = 0.02;
  cfg.train.optimizer = "adam";
  cfg.redaction_method = "closed-form";
  cfg.spec = RedactionSpec::labels({{0, 9}, {1, 8}, {2, 7}, {3, 6}});
  cfg.eval.trials = 1000;
  cfg.eval.quality_samples = 128;
  cfg.attack_enabled = true;
  cfg.attack_trials = 40;
  return cfg;
}

ExperimentConfig token_sequential(const std::string& name,
                                  std::vector<std::pair<std::string, std::string>>
                                      substitutions,
                                  std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.name = name;
  cfg.seed = seed;
  cfg.output_dir = "runs/" + name;
  cfg.task = SyntheticTask::token_attr_task(4, 0.1);
  cfg.arch.topology = "cascaded-2";
  cfg.arch.embed_dim = 4;
  cfg.arch.rep_dim = 3;
  cfg.arch.latent_dim = 2;
  cfg.arch.hidden = 12;
  cfg.arch.cond_hidden = 8;
  cfg.arch.stage1_dim = 2;
  cfg.train.steps = 700;
  cfg.train.batch = 24;
  cfg.train.lr = 0.01;
  cfg.train.optimizer = "adam";
  cfg.redaction_method = "distill";
  std::vector<std::pair<int, int>> subs;
  for (const auto& [from, to] : substitutions) {
    subs.emplace_back(cfg.task.token_id(from), cfg.task.token_id(to));
  }
  cfg.spec = RedactionSpec::token_substitution(std::move(subs));
  cfg.distill.metric = "l2-squared";
  cfg.distill.anneal = true;
  cfg.distill.lambda_min = 1.0;
  cfg.distill.lambda_max = 3.0;
  cfg.distill.steps = 1500;
  cfg.distill.batch = 8;
  cfg.distill.lr = 0.05;
  cfg.distill.optimizer = "sgd";
  cfg.distill.student_init = "copy";
  cfg.distill.prefix_hidden = 4;
  cfg.eval.trials = 500;
  cfg.eval.quality_samples = 128;
  cfg.attack_enabled = true;
  cfg.attack_trials = 40;
  return cfg;
}

ExperimentConfig residual_voice() {
  ExperimentConfig cfg;
  cfg.name = "residual-voice";
  cfg.seed = 7003;
  cfg.output_dir = "runs/residual-voice";
  cfg.task = SyntheticTask::kgon_task(5, 0.1);
  cfg.arch.topology = "residual-n";
  cfg.arch.blocks = 6;
  cfg.arch.dilation_cycle = 3;
  cfg.arch.embed_dim = 4;
  cfg.arch.rep_dim = 3;
  cfg.arch.latent_dim = 4;
  cfg.arch.hidden = 10;
  cfg.arch.cond_hidden = 6;
  cfg.train.steps = 500;
  cfg.train.batch = 24;
  cfg.train.lr = 0.01;
  cfg.train.optimizer = "adam";
  cfg.redaction_method = "distill";
  cfg.spec = RedactionSpec::labels({{1, 4}});
  cfg.distill.metric = "l1";
  cfg.distill.lambda_value = 1.5;
  cfg.distill.schedule = "lambda-order";
  cfg.distill.alpha = 0.001;
  cfg.distill.beta = 0.01;
  cfg.distill.steps = 1200;
  cfg.distill.batch = 8;
  cfg.distill.lr = 0.05;
  cfg.distill.optimizer = "sgd";
  cfg.eval.trials = 500;
  cfg.eval.quality_samples = 128;
  cfg.attack_enabled = true;
  cfg.attack_trials = 40;
  return cfg;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"mnist-analog", "blue-to-red", "yellow-red", "residual-voice"};
}

ExperimentConfig preset_config(const std::string& name) {
  if (name == "mnist-analog") return mnist_analog();
  if (name == "blue-to-red") {
    return token_sequential("blue-to-red", {{"blue", "red"}}, 7002);
  }
  if (name == "yellow-red") {
    return token_sequential("yellow-red",
                            {{"yellow", "black"}, {"red", "black"}}, 7004);
  }
  if (name == "residual-voice") return residual_voice();
  throw std::invalid_argument("unknown preset \"" + name +
                              "\"; available: mnist-analog, blue-to-red, "
                              "yellow-red, residual-voice");
}

}  // namespace condredact
