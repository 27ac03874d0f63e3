#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <vector>

#include "condredact/closedform.hpp"
#include "condredact/metrics.hpp"
#include "condredact/rng.hpp"
#include "condredact/tensor.hpp"
#include "condredact/toymodels.hpp"
#include "doctest.h"

using namespace condredact;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

SampleSet constant_set(const std::vector<double>& point, std::size_t n) {
  SampleSet s;
  s.dim = point.size();
  for (std::size_t i = 0; i < n; ++i) s.push(point);
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("toymodels");

TEST_CASE("kgon means sit on the unit polygon") {
  SyntheticTask task = SyntheticTask::kgon_task(4);
  auto mu = conditional_mean(task, {0});
  CHECK(mu[0] == doctest::Approx(1.0));
  CHECK(mu[1] == doctest::Approx(0.0).epsilon(1e-12));
  auto mu1 = conditional_mean(task, {1});
  CHECK(mu1[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mu1[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(conditional_mean(task, {9}), std::invalid_argument);
}

TEST_CASE("token-attr means move one coordinate per attribute change") {
  SyntheticTask task = SyntheticTask::token_attr_task(2);
  const int blue = task.token_id("blue");
  const int red = task.token_id("red");
  const int wing = task.token_id("wing");
  const int belly = task.token_id("belly");
  auto a = conditional_mean(task, {blue, wing});
  auto b = conditional_mean(task, {red, wing});
  auto c = conditional_mean(task, {blue, belly});
  CHECK(a[1] == b[1]);  // same part, same y
  CHECK(a[0] != b[0]);
  CHECK(a[0] == c[0]);  // same color, same x
  CHECK(a[1] != c[1]);
}

TEST_CASE("means are injective over the full conditional grid") {
  for (int dim : {2, 4}) {
    SyntheticTask task = SyntheticTask::token_attr_task(dim);
    const auto conds = task.conditionals();
    CHECK(conds.size() == 15);
    std::set<std::vector<double>> seen;
    for (const auto& c : conds) seen.insert(conditional_mean(task, c));
    CHECK(seen.size() == conds.size());
  }
}

TEST_CASE("sampling collapses to the vertex as sigma vanishes") {
  SyntheticTask task = SyntheticTask::kgon_task(4, 1e-12);
  SampleSet s = sample_data(task, {0}, 50, 7);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::abs(s.row(i)[0] - 1.0) <= 1e-10);
    CHECK(std::abs(s.row(i)[1]) <= 1e-10);
  }
}

TEST_CASE("sample mean obeys the CLT bound at n=10000") {
  SyntheticTask task = SyntheticTask::kgon_task(5, 0.1);
  const std::size_t n = 10000;
  SampleSet s = sample_data(task, {2}, n, 11);
  auto mu = conditional_mean(task, {2});
  for (std::size_t d = 0; d < 2; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += s.row(i)[d];
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean - mu[d]) <= 4.0 * task.sigma / std::sqrt(n));
  }
}

TEST_CASE("sampling is deterministic per seed") {
  SyntheticTask task = SyntheticTask::token_attr_task(4);
  Conditional c = {1, 6};
  SampleSet a = sample_data(task, c, 32, 99);
  SampleSet b = sample_data(task, c, 32, 99);
  CHECK(a.flat == b.flat);
  SampleSet other = sample_data(task, c, 32, 100);
  CHECK(a.flat != other.flat);
}

TEST_CASE("mmd2 of a set against itself is exactly zero") {
  SyntheticTask task = SyntheticTask::kgon_task(3);
  SampleSet s = sample_data(task, {1}, 40, 5);
  CHECK(mmd2(s, s, 0.7) == 0.0);
}

TEST_CASE("mmd2 of two point masses matches the closed form") {
  const std::vector<double> a = {0.0, 0.0};
  const std::vector<double> b = {1.5, -2.0};
  const double d2 = 1.5 * 1.5 + 2.0 * 2.0;
  SampleSet x = constant_set(a, 13);
  SampleSet y = constant_set(b, 7);
  const double h = 1.0;
  const double expected = 2.0 - 2.0 * std::exp(-d2 / (2.0 * h * h));
  CHECK(mmd2(x, y, h) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("mmd2 is symmetric and rejects bad bandwidths") {
  SyntheticTask task = SyntheticTask::kgon_task(3);
  SampleSet x = sample_data(task, {0}, 20, 3);
  SampleSet y = sample_data(task, {1}, 25, 4);
  CHECK(mmd2(x, y, 0.5) == doctest::Approx(mmd2(y, x, 0.5)).epsilon(1e-13));
  CHECK(mmd2(x, y, 0.5) >= 0.0);
  CHECK_THROWS_AS(mmd2(x, y, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mmd2(x, SampleSet{}, 1.0), std::invalid_argument);
}

TEST_CASE("mmd2_loss forward agrees with the plain estimator") {
  SyntheticTask task = SyntheticTask::kgon_task(3);
  SampleSet data = sample_data(task, {0}, 12, 21);
  Rng rng(22);
  std::vector<Tensor> gen;
  SampleSet gen_set;
  gen_set.dim = 2;
  for (int i = 0; i < 9; ++i) {
    std::vector<double> v = {rng.normal(), rng.normal()};
    gen_set.push(v);
    gen.push_back(Tensor::from({2}, std::move(v)));
  }
  const double h = 0.8;
  CHECK(mmd2_loss(gen, data, h).value() ==
        doctest::Approx(mmd2(gen_set, data, h)).epsilon(1e-14));
}

TEST_CASE("mmd2_loss backward matches finite differences") {
  SyntheticTask task = SyntheticTask::kgon_task(3);
  SampleSet data = sample_data(task, {1}, 10, 31);
  Rng rng(32);
  const std::size_t n = 6;
  std::vector<std::vector<double>> raw;
  for (std::size_t i = 0; i < n; ++i) raw.push_back({rng.normal(), rng.normal()});

  std::vector<Tensor> gen;
  for (const auto& v : raw) gen.push_back(Tensor::from({2}, v, true));
  backward(mmd2_loss(gen, data, 0.6));

  NoGradGuard guard;
  const double eps = 1e-6;
  for (std::size_t a = 0; a < n; ++a) {
    auto analytic = gen[a].grad();
    for (std::size_t t = 0; t < 2; ++t) {
      auto bump = [&](double delta) {
        std::vector<Tensor> probe;
        for (std::size_t i = 0; i < n; ++i) {
          auto v = raw[i];
          if (i == a) v[t] += delta;
          probe.push_back(Tensor::from({2}, std::move(v)));
        }
        return mmd2_loss(probe, data, 0.6).value();
      };
      const double fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
      CHECK(std::abs(analytic[t] - fd) / std::max(1.0, std::abs(analytic[t])) <=
            1e-5);
    }
  }
}

TEST_CASE("closed-form redaction transfers exactly through the generator") {
  SyntheticTask task = SyntheticTask::kgon_task(6);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 6;
  arch.rep_dim = 5;
  auto g = build_generator(arch, task, 77);
  auto* single = dynamic_cast<SingleStageGenerator*>(g.get());
  auto* affine = dynamic_cast<AffineConditioner*>(&single->cond());
  REQUIRE(affine != nullptr);

  LabelRedactionPlan plan = LabelRedactionPlan::from_pairs({{1, 4}, {2, 5}});
  auto edited = g->clone();
  auto* edited_single = dynamic_cast<SingleStageGenerator*>(edited.get());
  edited_single->set_cond(
      std::make_unique<AffineConditioner>(redact_affine(*affine, plan)));

  Rng zrng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = sample_latent(*g, zrng);
    for (int label : {1, 2}) {
      Tensor redirected = edited->generate(z, {label});
      Tensor reference = g->generate(z, {plan.reference_for(label)});
      CHECK(max_abs_diff(redirected.values(), reference.values()) <= 1e-9);
    }
    for (int label : {0, 3, 4, 5}) {
      Tensor a = edited->generate(z, {label});
      Tensor b = g->generate(z, {label});
      CHECK(max_abs_diff(a.values(), b.values()) <= 1e-9);
    }
  }
}

TEST_CASE("generate is deterministic and pinned at a fixed seed") {
  SyntheticTask task = SyntheticTask::kgon_task(5);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "mlp";
  arch.embed_dim = 4;
  arch.rep_dim = 6;
  auto g = build_generator(arch, task, 2024);
  Rng zrng(8);
  Tensor z = sample_latent(*g, zrng);
  Tensor x = g->generate(z, {3});
  if (std::getenv("CONDREDACT_RECORD")) {
    std::printf("gen-golden: %.17g %.17g\n", x.at(0), x.at(1));
  }
  const double golden[2] = {0.29428469756730946, 0.29735008007345087};
  CHECK(x.at(0) == golden[0]);
  CHECK(x.at(1) == golden[1]);

  Tensor z2 = Tensor::from(z.shape(), z.values_copy());
  Tensor x2 = g->generate(z2, {3});
  CHECK(x.at(0) == x2.at(0));
  CHECK(x.at(1) == x2.at(1));
}

TEST_CASE("distinct latents give distinct outputs") {
  SyntheticTask task = SyntheticTask::kgon_task(4);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 4;
  auto g = build_generator(arch, task, 5);
  Rng zrng(6);
  Tensor z1 = sample_latent(*g, zrng);
  Tensor z2 = sample_latent(*g, zrng);
  CHECK(max_abs_diff(g->generate(z1, {0}).values(),
                     g->generate(z2, {0}).values()) > 0.0);
}

TEST_CASE("cascaded stage boundary: stage-2 consumes stage-1 outputs") {
  SyntheticTask task = SyntheticTask::token_attr_task(4);
  GeneratorArch arch;
  arch.topology = "cascaded-2";
  arch.embed_dim = 4;
  arch.rep_dim = 3;
  arch.latent_dim = 2;
  auto g = build_generator(arch, task, 12);
  auto* cascaded = dynamic_cast<CascadedGenerator*>(g.get());
  REQUIRE(cascaded != nullptr);
  CHECK(g->latent_dim() == 2 + 3);

  Conditional c = {1, 6};
  Rng zrng(13);
  Tensor z = sample_latent(*g, zrng);
  Tensor x1_before = cascaded->generate_stage1(z, c);

  // perturb an h1 parameter; stage-1 output and hence stage-2 input must move
  auto h1_params = cascaded->h1().distill_trainable();
  REQUIRE(!h1_params.empty());
  h1_params[0].mutable_values()[0] += 0.25;
  Tensor x1_after = cascaded->generate_stage1(z, c);
  CHECK(max_abs_diff(x1_before.values(), x1_after.values()) > 0.0);
  CHECK(max_abs_diff(
            cascaded->generate_stage2(x1_before, c).values(),
            cascaded->generate_stage2(x1_after, c).values()) > 0.0);
}

TEST_CASE("conditioner gradients and main-network gradients separate") {
  SyntheticTask task = SyntheticTask::kgon_task(4);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "mlp";
  arch.embed_dim = 4;
  arch.rep_dim = 3;
  auto g = build_generator(arch, task, 9);
  auto* single = dynamic_cast<SingleStageGenerator*>(g.get());
  Rng zrng(10);
  Tensor z = sample_latent(*g, zrng);
  Tensor target = Tensor::from({2}, {0.3, -0.4});

  auto main_params = collect_params(
      [&](const ParamVisitor& v) { single->main().visit("main", v, true); }, true);

  // full tape through the conditioner
  backward(squared_distance(g->generate(z, {1}), target));
  std::vector<std::vector<double>> with_cond;
  for (auto& p : main_params) with_cond.push_back(p.grad());
  for (auto& p : main_params) p.zero_grad();

  // identical fused representation, no gradient into the conditioner
  Tensor rep = single->cond().forward({1}).detach();
  backward(squared_distance(
      single->main().forward(concat_last_axis(z, rep)), target));
  for (std::size_t i = 0; i < main_params.size(); ++i) {
    CHECK(main_params[i].grad() == with_cond[i]);
  }
}

TEST_CASE("training reduces the kernel two-sample loss") {
  SyntheticTask task = SyntheticTask::kgon_task(3, 0.25);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 3;
  arch.rep_dim = 4;
  arch.hidden = 12;
  auto g = build_generator(arch, task, 41);

  TrainConfig cfg;
  cfg.steps = 120;
  cfg.batch = 16;
  cfg.lr = 0.02;
  cfg.seed = 42;
  TrainResult r = train_generator(*g, task, cfg);
  CHECK(r.trace.size() == 120);
  CHECK(r.final_mmd < r.initial_mmd);
}

TEST_CASE("trained teacher quality clears the calibrated per-conditional bar") {
  SyntheticTask task = SyntheticTask::kgon_task(5, 0.1);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 5;
  arch.rep_dim = 6;
  arch.hidden = 16;
  auto g = build_generator(arch, task, 71);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 24;
  cfg.lr = 0.02;
  cfg.seed = 72;
  train_generator(*g, task, cfg);

  const EvalConfig eval_defaults;  // carries the calibrated threshold
  NoGradGuard guard;
  for (const auto& c : task.conditionals()) {
    SampleSet data = sample_data(task, c, 128, 73);
    SampleSet gen;
    gen.dim = 2;
    Rng zrng(derive_seed(74, conditional_key(c)));
    for (int i = 0; i < 128; ++i) {
      Tensor z = sample_latent(*g, zrng);
      gen.push(g->generate(z, c).values());
    }
    const double value = mmd2(gen, data, median_heuristic_bandwidth(data));
    CAPTURE(task.name(c));
    CHECK(value < eval_defaults.quality_threshold);
  }
}

TEST_CASE("zero training steps leave parameters bit-identical") {
  SyntheticTask task = SyntheticTask::kgon_task(3);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "affine";
  arch.embed_dim = 3;
  auto g = build_generator(arch, task, 50);
  std::vector<std::vector<double>> before;
  g->visit_params([&](const std::string&, Tensor& t, bool) {
    before.push_back(t.values_copy());
  });
  TrainConfig cfg;
  cfg.steps = 0;
  train_generator(*g, task, cfg);
  std::size_t idx = 0;
  g->visit_params([&](const std::string&, Tensor& t, bool) {
    CHECK(t.values_copy() == before[idx++]);
  });
}

TEST_CASE("training is deterministic per seed") {
  SyntheticTask task = SyntheticTask::kgon_task(3, 0.2);
  GeneratorArch arch;
  arch.topology = "single";
  arch.conditioner = "mlp";
  arch.embed_dim = 3;
  arch.rep_dim = 3;
  arch.hidden = 8;
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 8;
  cfg.seed = 77;

  auto run = [&]() {
    auto g = build_generator(arch, task, 99);
    train_generator(*g, task, cfg);
    std::vector<double> flat;
    g->visit_params([&](const std::string&, Tensor& t, bool) {
      auto v = t.values_copy();
      flat.insert(flat.end(), v.begin(), v.end());
    });
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("residual generator runs and exposes frozen block structure") {
  SyntheticTask task = SyntheticTask::kgon_task(5);
  GeneratorArch arch;
  arch.topology = "residual-n";
  arch.blocks = 6;
  arch.embed_dim = 4;
  arch.rep_dim = 3;
  arch.hidden = 8;
  arch.cond_hidden = 5;
  auto g = build_generator(arch, task, 31);
  auto* residual = dynamic_cast<ResidualGenerator*>(g.get());
  REQUIRE(residual != nullptr);
  CHECK(residual->block_count() == 6);
  Rng zrng(32);
  Tensor z = sample_latent(*g, zrng);
  CHECK(g->generate(z, {2}).numel() == 2);
  // teacher training must not touch the frozen first layers or the table
  auto trainables = g->train_params();
  for (std::size_t i = 0; i < residual->block_count(); ++i) {
    const Tensor& w = residual->block_cond(i).first_layer().weight;
    for (const auto& p : trainables) CHECK(p.node().get() != w.node().get());
  }
}

TEST_SUITE_END();
