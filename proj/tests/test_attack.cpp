#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "condredact/attack.hpp"
#include "condredact/closedform.hpp"
#include "condredact/metrics.hpp"
#include "condredact/rng.hpp"
#include "doctest.h"

using namespace condredact;

namespace {

class FunctionGenerator final : public Generator {
 public:
  using Fn = std::function<std::vector<double>(std::span<const double>,
                                               const Conditional&)>;
  FunctionGenerator(std::size_t latent, std::size_t out, Fn fn)
      : latent_(latent), out_(out), fn_(std::move(fn)) {
    arch_.topology = "single";
  }
  std::string topology() const override { return "single"; }
  const GeneratorArch& arch() const override { return arch_; }
  std::size_t latent_dim() const override { return latent_; }
  std::size_t output_dim() const override { return out_; }
  Tensor generate(const Tensor& z, const Conditional& c) const override {
    auto out = fn_(z.values(), c);
    const std::size_t n = out.size();
    return Tensor::from({n}, std::move(out));
  }
  void visit_params(const ParamVisitor&) override {}
  std::unique_ptr<Generator> clone() const override {
    return std::make_unique<FunctionGenerator>(latent_, out_, fn_);
  }

 private:
  std::size_t latent_, out_;
  Fn fn_;
  GeneratorArch arch_;
};

bool results_equal(const AttackResult& a, const AttackResult& b) {
  return a.adversarial == b.adversarial && a.best == b.best &&
         a.best_corr == b.best_corr && a.corr_trace == b.corr_trace &&
         a.caption_trace == b.caption_trace && a.latent == b.latent &&
         a.success == b.success;
}

}  // namespace

TEST_SUITE_BEGIN("attack");

TEST_CASE("zero iterations return the caption unchanged with an empty trace") {
  SyntheticTask task = SyntheticTask::token_attr_task(2);
  const int blue = task.token_id("blue");
  const int red = task.token_id("red");
  FunctionGenerator g(2, 2, [&](std::span<const double>, const Conditional& c) {
    return conditional_mean(task, task.valid(c) ? c : Conditional{red, c[1]});
  });
  AttackConfig cfg;
  cfg.iterations = 0;
  Conditional c = {blue, task.token_id("wing")};
  Conditional ref = {red, task.token_id("wing")};
  auto result = square_attack(g, task, c, ref, full_vocabulary(task), cfg);
  CHECK(result.adversarial == c);
  CHECK(result.best == c);
  CHECK(result.corr_trace.empty());
  // the teacher-like model still matches c itself best: immediate success
  CHECK(result.success);
}

TEST_CASE("attack results are deterministic per seed") {
  SyntheticTask task = SyntheticTask::token_attr_task(2);
  const int blue = task.token_id("blue");
  const int red = task.token_id("red");
  RedactionSpec spec = RedactionSpec::token_substitution({{blue, red}});
  FunctionGenerator projector(2, 2, [&](std::span<const double> z,
                                        const Conditional& c) {
    Conditional q = c;
    if (task.valid(q) && spec.is_redacted(q)) q = spec.reference(q);
    auto mu = task.valid(q) ? conditional_mean(task, q)
                            : std::vector<double>{2.0, 2.0};
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += 0.02 * z[i];
    return mu;
  });
  AttackConfig cfg;
  cfg.seed = 2024;
  Conditional c = {blue, task.token_id("belly")};
  auto a = square_attack(projector, task, c, spec.reference(c),
                         full_vocabulary(task), cfg);
  auto b = square_attack(projector, task, c, spec.reference(c),
                         full_vocabulary(task), cfg);
  CHECK(results_equal(a, b));

  AttackConfig other = cfg;
  other.seed = 2025;
  auto d = square_attack(projector, task, c, spec.reference(c),
                         full_vocabulary(task), other);
  CHECK_FALSE(results_equal(a, d));
}

TEST_CASE("the unedited teacher is attacked with near-certain success") {
  SyntheticTask task = SyntheticTask::token_attr_task(2);
  const int blue = task.token_id("blue");
  const int red = task.token_id("red");
  RedactionSpec spec = RedactionSpec::token_substitution({{blue, red}});
  // teacher honors every caption, including redacted ones
  FunctionGenerator teacher(2, 2, [&](std::span<const double> z,
                                      const Conditional& c) {
    auto mu = task.valid(c) ? conditional_mean(task, c)
                            : std::vector<double>{3.0, 3.0};
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += 0.03 * z[i];
    return mu;
  });
  AttackConfig cfg;
  cfg.seed = 7;
  const double rate = attack_success_rate(teacher, task, spec, cfg, 40);
  CHECK(rate >= 0.95);
}

TEST_CASE("best-so-far dominates the trace; captions change one slot at a time") {
  SyntheticTask task = SyntheticTask::token_attr_task(2);
  const int blue = task.token_id("blue");
  const int red = task.token_id("red");
  RedactionSpec spec = RedactionSpec::token_substitution({{blue, red}});
  FunctionGenerator projector(2, 2, [&](std::span<const double>,
                                        const Conditional& c) {
    // piecewise response with some structure for the search to exploit
    double x = 0.17 * c[0] - 0.23 * c[1];
    double y = 0.11 * c[1] + 0.05 * c[0];
    return std::vector<double>{x, y};
  });
  AttackConfig cfg;
  cfg.seed = 99;
  Conditional c = {blue, task.token_id("beak")};
  auto result = square_attack(projector, task, c, spec.reference(c),
                              full_vocabulary(task), cfg);

  REQUIRE(result.corr_trace.size() == 16);
  double running_best = result.initial_corr;
  for (double v : result.corr_trace) running_best = std::max(running_best, v);
  CHECK(result.best_corr == running_best);
  for (double v : result.corr_trace) CHECK(result.best_corr >= v);

  Conditional prev = c;
  for (const auto& caption : result.caption_trace) {
    REQUIRE(caption.size() == prev.size());
    int changed = 0;
    for (std::size_t i = 0; i < caption.size(); ++i) {
      if (caption[i] != prev[i]) ++changed;
    }
    CHECK(changed <= 1);
    prev = caption;
  }
}

TEST_CASE("the fixed latent reproduces traced correlations exactly") {
  SyntheticTask task = SyntheticTask::kgon_task(6);
  RedactionSpec spec = RedactionSpec::labels({{1, 4}});
  FunctionGenerator g(3, 2, [&](std::span<const double> z, const Conditional& c) {
    auto mu = conditional_mean(task, {c[0] % 6 < 0 ? 0 : c[0] % 6});
    mu[0] += 0.1 * z[0];
    mu[1] += 0.1 * z[1];
    return mu;
  });
  AttackConfig cfg;
  cfg.seed = 55;
  Conditional c = {1};
  auto result =
      square_attack(g, task, c, spec.reference(c), full_vocabulary(task), cfg);
  REQUIRE(!result.corr_trace.empty());
  Tensor z = Tensor::from({result.latent.size()}, result.latent);
  const double replayed =
      corr(g.generate(z, result.adversarial).values(), c, task);
  CHECK(replayed == result.corr_trace.back());
}

TEST_CASE("error paths: empty vocabulary, zero attacks, bad config") {
  SyntheticTask task = SyntheticTask::kgon_task(4);
  RedactionSpec spec = RedactionSpec::labels({{0, 2}});
  FunctionGenerator g(2, 2, [&](std::span<const double>, const Conditional& c) {
    return conditional_mean(task, c);
  });
  AttackConfig cfg;
  CHECK_THROWS_AS(square_attack(g, task, {0}, {2}, {}, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(attack_success_rate(g, task, spec, cfg, 0),
                  std::invalid_argument);
  AttackConfig bad;
  bad.candidates = 0;
  CHECK_THROWS_AS(square_attack(g, task, {0}, {2}, full_vocabulary(task), bad),
                  std::invalid_argument);
}

TEST_CASE("an exactly redacted model resists the attack better than the teacher") {
  SyntheticTask task = SyntheticTask::kgon_task(8);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 8;
  arch.rep_dim = 6;
  auto teacher = build_generator(arch, task, 123);
  // make the teacher honest: train it so its outputs sit near the vertices
  TrainConfig tcfg;
  tcfg.steps = 250;
  tcfg.batch = 16;
  tcfg.lr = 0.02;
  tcfg.seed = 124;
  train_generator(*teacher, task, tcfg);

  auto* single = dynamic_cast<SingleStageGenerator*>(teacher.get());
  auto* affine = dynamic_cast<AffineConditioner*>(&single->cond());
  RedactionSpec spec = RedactionSpec::labels({{0, 7}, {1, 6}});
  auto edited = teacher->clone();
  dynamic_cast<SingleStageGenerator*>(edited.get())
      ->set_cond(std::make_unique<AffineConditioner>(
          redact_affine(*affine, spec.to_label_plan())));

  AttackConfig cfg;
  cfg.seed = 31;
  const double teacher_rate = attack_success_rate(*teacher, task, spec, cfg, 24);
  const double edited_rate = attack_success_rate(*edited, task, spec, cfg, 24);
  CHECK(teacher_rate > edited_rate);
  if (std::getenv("CONDREDACT_RECORD")) {
    std::printf("attack-golden: teacher %.17g edited %.17g\n", teacher_rate,
                edited_rate);
  }
  // rates pinned at this seed; exact ratios of integer counts. The attack
  // still wins a fraction of the time against the exact edit by steering to
  // labels whose vertices neighbor the redacted one.
  CHECK(teacher_rate == 1.0);
  CHECK(edited_rate == 16.0 / 24.0);
}

TEST_SUITE_END();
