#include "condredact/config.hpp"

#include <fstream>
#include <stdexcept>

#include "condredact/checkpoint.hpp"

namespace condredact {

using nlohmann::json;

std::uint64_t ExperimentConfig::phase_seed(const std::string& phase) const {
  if (phase == "train" && train_seed) return *train_seed;
  if (phase == "distill" && distill_seed) return *distill_seed;
  if (phase == "eval" && eval_seed) return *eval_seed;
  if (phase == "attack" && attack_seed) return *attack_seed;
  return derive_seed(seed, "phase:" + phase);
}

namespace {

json spec_to_json(const RedactionSpec& spec, const SyntheticTask& task) {
  json j;
  if (spec.empty()) {
    j["kind"] = "none";
    return j;
  }
  if (spec.kind == RedactionSpec::Kind::labels) {
    j["kind"] = "labels";
    j["map"] = spec.label_map;
  } else {
    j["kind"] = "token-sub";
    json subs = json::array();
    for (const auto& [from, to] : spec.token_sub) {
      subs.push_back({task.token_word(from), task.token_word(to)});
    }
    j["substitutions"] = std::move(subs);
  }
  return j;
}

RedactionSpec spec_from_json(const json& j, const SyntheticTask& task) {
  const std::string kind = j.value("kind", "none");
  if (kind == "none") return RedactionSpec::none();
  if (kind == "labels") {
    return RedactionSpec::labels(
        j.at("map").get<std::vector<std::pair<int, int>>>());
  }
  if (kind == "token-sub") {
    std::vector<std::pair<int, int>> subs;
    for (const auto& pair : j.at("substitutions")) {
      subs.emplace_back(task.token_id(pair.at(0).get<std::string>()),
                        task.token_id(pair.at(1).get<std::string>()));
    }
    return RedactionSpec::token_substitution(std::move(subs));
  }
  throw std::invalid_argument("config field redaction.kind: unknown value \"" +
                              kind + "\"");
}

json train_to_json(const TrainConfig& t) {
  return json{{"steps", t.steps},
              {"batch", t.batch},
              {"lr", t.lr},
              {"optimizer", t.optimizer},
              {"bandwidth", t.bandwidth_policy},
              {"fixed_bandwidth", t.fixed_bandwidth}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.steps = j.value("steps", t.steps);
  t.batch = j.value("batch", t.batch);
  t.lr = j.value("lr", t.lr);
  t.optimizer = j.value("optimizer", t.optimizer);
  t.bandwidth_policy = j.value("bandwidth", t.bandwidth_policy);
  t.fixed_bandwidth = j.value("fixed_bandwidth", t.fixed_bandwidth);
  return t;
}

json distill_to_json(const DistillConfig& d) {
  return json{{"lambda", d.lambda_value},
              {"anneal", d.anneal},
              {"lambda_min", d.lambda_min},
              {"lambda_max", d.lambda_max},
              {"metric", d.metric},
              {"schedule", d.schedule},
              {"alpha", d.alpha},
              {"beta", d.beta},
              {"steps", d.steps},
              {"batch", d.batch},
              {"lr", d.lr},
              {"optimizer", d.optimizer},
              {"student_init", d.student_init},
              {"prefix_hidden", d.prefix_hidden},
              {"gated_rewriter", d.gated_rewriter}};
}

DistillConfig distill_from_json(const json& j) {
  DistillConfig d;
  d.lambda_value = j.value("lambda", d.lambda_value);
  d.anneal = j.value("anneal", d.anneal);
  d.lambda_min = j.value("lambda_min", d.lambda_min);
  d.lambda_max = j.value("lambda_max", d.lambda_max);
  d.metric = j.value("metric", d.metric);
  d.schedule = j.value("schedule", d.schedule);
  d.alpha = j.value("alpha", d.alpha);
  d.beta = j.value("beta", d.beta);
  d.steps = j.value("steps", d.steps);
  d.batch = j.value("batch", d.batch);
  d.lr = j.value("lr", d.lr);
  d.optimizer = j.value("optimizer", d.optimizer);
  d.student_init = j.value("student_init", d.student_init);
  d.prefix_hidden = j.value("prefix_hidden", d.prefix_hidden);
  d.gated_rewriter = j.value("gated_rewriter", d.gated_rewriter);
  return d;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["task"] = task_to_json(task);
  j["topology"] = arch_to_json(arch);
  j["train"] = train_to_json(train);
  j["redaction"] = spec_to_json(spec, task);
  j["redaction"]["method"] = redaction_method;
  j["distill"] = distill_to_json(distill);
  j["eval"] = {{"trials", eval.trials},
               {"mismatches", eval.mismatches},
               {"quality_samples", eval.quality_samples},
               {"quality_threshold", eval.quality_threshold}};
  j["attack"] = {{"enabled", attack_enabled},
                 {"iterations", attack.iterations},
                 {"candidates", attack.candidates},
                 {"trials", attack_trials}};
  json seeds = json::object();
  if (train_seed) seeds["train"] = *train_seed;
  if (distill_seed) seeds["distill"] = *distill_seed;
  if (eval_seed) seeds["eval"] = *eval_seed;
  if (attack_seed) seeds["attack"] = *attack_seed;
  if (!seeds.empty()) j["phase_seeds"] = std::move(seeds);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.task = task_from_json(j.at("task"));
  cfg.arch = arch_from_json(j.at("topology"));
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
  if (j.contains("redaction")) {
    cfg.redaction_method = j.at("redaction").value("method", cfg.redaction_method);
    cfg.spec = spec_from_json(j.at("redaction"), cfg.task);
  }
  if (j.contains("distill")) cfg.distill = distill_from_json(j.at("distill"));
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    cfg.eval.trials = e.value("trials", cfg.eval.trials);
    cfg.eval.mismatches = e.value("mismatches", cfg.eval.mismatches);
    cfg.eval.quality_samples = e.value("quality_samples", cfg.eval.quality_samples);
    cfg.eval.quality_threshold = e.value("quality_threshold", cfg.eval.quality_threshold);
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    cfg.attack_enabled = a.value("enabled", cfg.attack_enabled);
    cfg.attack.iterations = a.value("iterations", cfg.attack.iterations);
    cfg.attack.candidates = a.value("candidates", cfg.attack.candidates);
    cfg.attack_trials = a.value("trials", cfg.attack_trials);
  }
  if (j.contains("phase_seeds")) {
    const json& s = j.at("phase_seeds");
    if (s.contains("train")) cfg.train_seed = s.at("train").get<std::uint64_t>();
    if (s.contains("distill")) cfg.distill_seed = s.at("distill").get<std::uint64_t>();
    if (s.contains("eval")) cfg.eval_seed = s.at("eval").get<std::uint64_t>();
    if (s.contains("attack")) cfg.attack_seed = s.at("attack").get<std::uint64_t>();
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("config: cannot read " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path + " is not valid JSON: " +
                                e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field " + field + ": " + why);
  };
  if (output_dir.empty()) fail("output_dir", "must not be empty");
  try {
    train.validate();
  } catch (const std::exception& e) {
    fail("train", e.what());
  }
  if (redaction_method != "closed-form" && redaction_method != "distill" &&
      redaction_method != "none") {
    fail("redaction.method", "must be closed-form, distill, or none");
  }
  if (redaction_method != "none" && spec.empty()) {
    fail("redaction", "method " + redaction_method + " needs redaction rules");
  }
  if (redaction_method == "closed-form") {
    if (arch.topology != "single" || arch.conditioner != "affine") {
      fail("redaction.method",
           "closed-form redaction needs the single/affine topology");
    }
    if (spec.kind != RedactionSpec::Kind::labels) {
      fail("redaction.kind", "closed-form redaction needs label rules");
    }
  }
  try {
    spec.validate(task);
  } catch (const std::exception& e) {
    fail("redaction", e.what());
  }
  if (redaction_method == "distill") {
    try {
      distill.validate(arch.topology);
    } catch (const std::exception& e) {
      fail("distill", e.what());
    }
  }
  try {
    eval.validate();
  } catch (const std::exception& e) {
    fail("eval", e.what());
  }
  if (attack_enabled) {
    try {
      attack.validate();
    } catch (const std::exception& e) {
      fail("attack", e.what());
    }
    if (attack_trials <= 0) fail("attack.trials", "must be positive");
  }
  // the architecture must actually build against this task
  try {
    build_generator(arch, task, 0);
  } catch (const std::exception& e) {
    fail("topology", e.what());
  }
}

}  // namespace condredact
