#include "condredact/toymodels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "condredact/optim.hpp"

namespace condredact {

SampleSet SampleSet::truncated(std::size_t new_dim) const {
  if (new_dim > dim) throw std::invalid_argument("truncated: dim too large");
  SampleSet out;
  out.dim = new_dim;
  out.flat.reserve(size() * new_dim);
  for (std::size_t i = 0; i < size(); ++i) {
    auto r = row(i);
    out.flat.insert(out.flat.end(), r.begin(), r.begin() + new_dim);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SyntheticTask
// ---------------------------------------------------------------------------

SyntheticTask SyntheticTask::kgon_task(int k, double sigma) {
  if (k < 2 || sigma <= 0.0) {
    throw std::invalid_argument("kgon_task: need k >= 2 and sigma > 0");
  }
  SyntheticTask t;
  t.kind = Kind::kgon;
  t.k = k;
  t.sigma = sigma;
  t.out_dim = 2;
  return t;
}

SyntheticTask SyntheticTask::token_attr_task(int out_dim, double sigma) {
  if ((out_dim != 2 && out_dim != 4) || sigma <= 0.0) {
    throw std::invalid_argument("token_attr_task: out_dim must be 2 or 4");
  }
  SyntheticTask t;
  t.kind = Kind::token_attr;
  t.sigma = sigma;
  t.out_dim = out_dim;
  return t;
}

std::size_t SyntheticTask::vocab_size() const {
  return kind == Kind::kgon ? static_cast<std::size_t>(k)
                            : colors.size() + parts.size();
}

std::vector<Conditional> SyntheticTask::conditionals() const {
  std::vector<Conditional> out;
  if (kind == Kind::kgon) {
    for (int i = 0; i < k; ++i) out.push_back({i});
  } else {
    for (std::size_t c = 0; c < colors.size(); ++c) {
      for (std::size_t p = 0; p < parts.size(); ++p) {
        out.push_back({static_cast<int>(c),
                       static_cast<int>(colors.size() + p)});
      }
    }
  }
  return out;
}

bool SyntheticTask::valid(const Conditional& c) const {
  if (kind == Kind::kgon) {
    return c.size() == 1 && c[0] >= 0 && c[0] < k;
  }
  if (c.size() != 2) return false;
  const int nc = static_cast<int>(colors.size());
  const int np = static_cast<int>(parts.size());
  return c[0] >= 0 && c[0] < nc && c[1] >= nc && c[1] < nc + np;
}

void SyntheticTask::require_valid(const Conditional& c) const {
  if (!valid(c)) {
    throw std::invalid_argument("unknown conditional \"" + conditional_key(c) +
                                "\" for this task");
  }
}

std::string SyntheticTask::name(const Conditional& c) const {
  require_valid(c);
  if (kind == Kind::kgon) return std::to_string(c[0]);
  return token_word(c[0]) + " " + token_word(c[1]);
}

int SyntheticTask::token_id(const std::string& word) const {
  if (kind != Kind::token_attr) {
    throw std::invalid_argument("token_id: not a token task");
  }
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i] == word) return static_cast<int>(i);
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == word) return static_cast<int>(colors.size() + i);
  }
  throw std::invalid_argument("token_id: unknown word \"" + word + "\"");
}

std::string SyntheticTask::token_word(int token) const {
  if (kind != Kind::token_attr) return std::to_string(token);
  const int nc = static_cast<int>(colors.size());
  if (token >= 0 && token < nc) return colors[token];
  const int p = token - nc;
  if (p >= 0 && p < static_cast<int>(parts.size())) return parts[p];
  throw std::invalid_argument("token_word: token out of range");
}

std::vector<double> conditional_mean(const SyntheticTask& task,
                                     const Conditional& c) {
  task.require_valid(c);
  if (task.kind == SyntheticTask::Kind::kgon) {
    const double angle =
        2.0 * std::numbers::pi * static_cast<double>(c[0]) / task.k;
    return {std::cos(angle), std::sin(angle)};
  }
  const double cx = -1.0 + 0.5 * c[0];
  const double py = -0.6 + 0.6 * (c[1] - static_cast<int>(task.colors.size()));
  if (task.out_dim == 2) return {cx, py};
  return {cx, py, 0.5 * (cx + py), 0.5 * (cx - py)};
}

SampleSet sample_data(const SyntheticTask& task, const Conditional& c,
                      std::size_t n, std::uint64_t seed) {
  const auto mu = conditional_mean(task, c);
  Rng rng(derive_seed(seed, "data:" + conditional_key(c)));
  SampleSet out;
  out.dim = mu.size();
  out.flat.reserve(n * mu.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (double m : mu) out.flat.push_back(m + task.sigma * rng.normal());
  }
  return out;
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double kernel_sum(const SampleSet& a, const SampleSet& b, double inv_two_h2) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      acc += std::exp(-sq_dist(a.row(i), b.row(j)) * inv_two_h2);
    }
  }
  return acc;
}

}  // namespace

double mmd2(const SampleSet& x, const SampleSet& y, double bandwidth) {
  if (bandwidth <= 0.0) {
    throw std::invalid_argument("mmd2: bandwidth must be positive");
  }
  if (x.size() == 0 || y.size() == 0) {
    throw std::invalid_argument("mmd2: empty sample set");
  }
  if (x.dim != y.dim) {
    throw std::invalid_argument("mmd2: sample dimension mismatch");
  }
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  const double xx = kernel_sum(x, x, inv) / (n * n);
  const double yy = kernel_sum(y, y, inv) / (m * m);
  const double xy = kernel_sum(x, y, inv) / (n * m);
  return xx + yy - 2.0 * xy;
}

double median_heuristic_bandwidth(const SampleSet& x) {
  if (x.size() < 2) {
    throw std::invalid_argument("median_heuristic_bandwidth: need >= 2 samples");
  }
  std::vector<double> dists;
  dists.reserve(x.size() * (x.size() - 1) / 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      dists.push_back(sq_dist(x.row(i), x.row(j)));
    }
  }
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double median = dists[dists.size() / 2];
  return std::max(std::sqrt(median / 2.0), 1e-9);
}

Tensor mmd2_loss(const std::vector<Tensor>& generated, const SampleSet& data,
                 double bandwidth) {
  if (bandwidth <= 0.0) {
    throw std::invalid_argument("mmd2_loss: bandwidth must be positive");
  }
  if (generated.empty() || data.size() == 0) {
    throw std::invalid_argument("mmd2_loss: empty sample set");
  }
  const std::size_t d = generated[0].numel();
  if (d != data.dim) {
    throw std::invalid_argument("mmd2_loss: sample dimension mismatch");
  }
  SampleSet gen;
  gen.dim = d;
  for (const auto& t : generated) {
    if (t.numel() != d) {
      throw std::invalid_argument("mmd2_loss: ragged generated samples");
    }
    gen.push(t.values());
  }

  const double value = mmd2(gen, data, bandwidth);
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  const double h2 = bandwidth * bandwidth;
  const std::size_t n = gen.size();
  const std::size_t m = data.size();

  // d/dx_a MMD² = (2/n²) Σ_j k(x_a,x_j)(x_j-x_a)/h² + (2/nm) Σ_j k(x_a,y_j)(x_a-y_j)/h²
  auto rule = [gen, data, inv, h2, n, m](
                  std::span<const double> out_grad,
                  const std::vector<detail::Node*>& parents) {
    const double g = out_grad[0];
    const std::size_t d = gen.dim;
    for (std::size_t a = 0; a < n; ++a) {
      if (!parents[a]->requires_grad) continue;
      auto xa = gen.row(a);
      std::vector<double> grad(d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        auto xj = gen.row(j);
        const double kij = std::exp(-sq_dist(xa, xj) * inv);
        const double w = 2.0 / (static_cast<double>(n) * n) * kij / h2;
        for (std::size_t t = 0; t < d; ++t) grad[t] += w * (xj[t] - xa[t]);
      }
      for (std::size_t j = 0; j < m; ++j) {
        auto yj = data.row(j);
        const double kij = std::exp(-sq_dist(xa, yj) * inv);
        const double w = 2.0 / (static_cast<double>(n) * m) * kij / h2;
        for (std::size_t t = 0; t < d; ++t) grad[t] += w * (xa[t] - yj[t]);
      }
      for (std::size_t t = 0; t < d; ++t) parents[a]->grad[t] += g * grad[t];
    }
  };
  return make_custom_op("mmd2", generated, {1}, {value}, rule);
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

std::vector<Tensor> Generator::train_params() {
  std::vector<Tensor> out;
  visit_params([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) out.push_back(t);
  });
  return out;
}

Tensor generate(const Generator& g, const Conditional& c, const Tensor& z) {
  return g.generate(z, c);
}

Tensor sample_latent(const Generator& g, Rng& rng) {
  const std::size_t n = g.latent_dim();
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal();
  return Tensor::from({n}, std::move(z));
}

namespace {

Tensor slice_vec(const Tensor& z, std::size_t lo, std::size_t len) {
  auto v = z.values();
  return Tensor::from({len}, {v.begin() + lo, v.begin() + lo + len});
}

}  // namespace

// --- SingleStageGenerator ---

SingleStageGenerator::SingleStageGenerator(GeneratorArch arch,
                                           std::unique_ptr<Conditioner> cond,
                                           Mlp main)
    : arch_(std::move(arch)), cond_(std::move(cond)), main_(std::move(main)) {}

std::size_t SingleStageGenerator::latent_dim() const {
  return static_cast<std::size_t>(arch_.latent_dim);
}

std::size_t SingleStageGenerator::output_dim() const {
  return main_.layers.back().out_dim();
}

Tensor SingleStageGenerator::generate(const Tensor& z,
                                      const Conditional& c) const {
  if (z.numel() != latent_dim()) {
    throw std::invalid_argument("generate: latent has shape " +
                                shape_to_string(z.shape()) + ", expected [" +
                                std::to_string(latent_dim()) + "]");
  }
  return main_.forward(concat_last_axis(z, cond_->forward(c)));
}

void SingleStageGenerator::visit_params(const ParamVisitor& v) {
  cond_->visit_params("cond", v);
  main_.visit("main", v, true);
}

std::unique_ptr<Generator> SingleStageGenerator::clone() const {
  return std::make_unique<SingleStageGenerator>(arch_, cond_->clone(),
                                                main_.clone());
}

void SingleStageGenerator::set_cond(std::unique_ptr<Conditioner> cond) {
  if (cond->rep_dim() != cond_->rep_dim()) {
    throw std::invalid_argument("set_cond: representation dimension changed");
  }
  cond_ = std::move(cond);
}

// --- CascadedGenerator ---

CascadedGenerator::CascadedGenerator(GeneratorArch arch, SeqConditioner h1,
                                     Mlp main1, FusionConditioner h2, Mlp main2)
    : arch_(std::move(arch)),
      h1_(std::move(h1)),
      main1_(std::move(main1)),
      h2_(std::move(h2)),
      main2_(std::move(main2)) {
  if (!h1_.has_head()) {
    throw std::invalid_argument("CascadedGenerator: stage-1 conditioner needs a head");
  }
}

std::size_t CascadedGenerator::latent_dim() const {
  return static_cast<std::size_t>(arch_.latent_dim) + h1_.rep_dim();
}

std::size_t CascadedGenerator::output_dim() const {
  return main2_.layers.back().out_dim();
}

Tensor CascadedGenerator::generate_stage1(const Tensor& z,
                                          const Conditional& c) const {
  if (z.numel() != latent_dim()) {
    throw std::invalid_argument("generate_stage1: latent has shape " +
                                shape_to_string(z.shape()) + ", expected [" +
                                std::to_string(latent_dim()) + "]");
  }
  Tensor z_main = slice_vec(z, 0, arch_.latent_dim);
  Tensor eps = slice_vec(z, arch_.latent_dim, h1_.rep_dim());
  Tensor rep = h1_.forward_sampled(c, eps);
  return main1_.forward(concat_last_axis(z_main, rep));
}

Tensor CascadedGenerator::generate_stage2(const Tensor& x1,
                                          const Conditional& c) const {
  Tensor rep = h2_.forward(c, x1);
  return main2_.forward(concat_last_axis(x1, rep));
}

Tensor CascadedGenerator::generate(const Tensor& z, const Conditional& c) const {
  return generate_stage2(generate_stage1(z, c), c);
}

void CascadedGenerator::visit_params(const ParamVisitor& v) {
  h1_.visit_params("h1", v);
  main1_.visit("main1", v, true);
  h2_.visit_params("h2", v);
  main2_.visit("main2", v, true);
}

std::unique_ptr<Generator> CascadedGenerator::clone() const {
  auto h1_copy = h1_.clone();
  auto* seq = dynamic_cast<SeqConditioner*>(h1_copy.get());
  // both stages read the same token table, keep that sharing in the copy
  FusionConditioner h2_copy = h2_.clone(seq->table_ptr());
  return std::make_unique<CascadedGenerator>(
      arch_, std::move(*seq), main1_.clone(), std::move(h2_copy), main2_.clone());
}

// --- ResidualGenerator ---

ResidualGenerator::ResidualGenerator(
    GeneratorArch arch, std::shared_ptr<TokenTable> table,
    std::vector<std::unique_ptr<BlockConditioner>> conds, DenseLayer input,
    std::vector<Block> blocks, DenseLayer output)
    : arch_(std::move(arch)),
      table_(std::move(table)),
      conds_(std::move(conds)),
      input_(std::move(input)),
      blocks_(std::move(blocks)),
      output_(std::move(output)) {
  if (conds_.size() != blocks_.size()) {
    throw std::invalid_argument("ResidualGenerator: conditioner/block count mismatch");
  }
}

std::size_t ResidualGenerator::latent_dim() const {
  return static_cast<std::size_t>(arch_.latent_dim);
}

std::size_t ResidualGenerator::output_dim() const { return output_.out_dim(); }

Tensor ResidualGenerator::generate(const Tensor& z, const Conditional& c) const {
  if (z.numel() != latent_dim()) {
    throw std::invalid_argument("generate: latent has shape " +
                                shape_to_string(z.shape()) + ", expected [" +
                                std::to_string(latent_dim()) + "]");
  }
  Tensor h = input_.forward(z);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Tensor rep = conds_[i]->forward(c);
    Tensor update = blocks_[i].fuse.forward(concat_last_axis(h, rep));
    h = add(h, update);
  }
  return output_.forward(h);
}

void ResidualGenerator::visit_params(const ParamVisitor& v) {
  v("table", table_->table, false);
  input_.visit("in", v, true);
  for (std::size_t i = 0; i < conds_.size(); ++i) {
    conds_[i]->visit_params("h" + std::to_string(i), v);
    blocks_[i].fuse.visit("block" + std::to_string(i), v, true);
  }
  output_.visit("out", v, true);
}

std::unique_ptr<Generator> ResidualGenerator::clone() const {
  auto table = std::make_shared<TokenTable>(*table_);
  table->table = table_->table.clone_leaf();
  std::vector<std::unique_ptr<BlockConditioner>> conds;
  conds.reserve(conds_.size());
  for (const auto& c : conds_) conds.push_back(c->clone_with_table(table));
  std::vector<Block> blocks;
  blocks.reserve(blocks_.size());
  for (const auto& b : blocks_) blocks.push_back({b.fuse.clone()});
  return std::make_unique<ResidualGenerator>(arch_, std::move(table),
                                             std::move(conds), input_.clone(),
                                             std::move(blocks), output_.clone());
}

void ResidualGenerator::set_block_cond(std::size_t i,
                                       std::unique_ptr<BlockConditioner> cond) {
  if (cond->rep_dim() != conds_.at(i)->rep_dim()) {
    throw std::invalid_argument("set_block_cond: representation dimension changed");
  }
  conds_[i] = std::move(cond);
}

// --- builder ---

std::unique_ptr<Generator> build_generator(const GeneratorArch& arch,
                                           const SyntheticTask& task,
                                           std::uint64_t seed) {
  Rng rng(derive_seed(seed, "build:" + arch.topology));
  const std::size_t out_dim = static_cast<std::size_t>(task.out_dim);
  const std::size_t rep = static_cast<std::size_t>(arch.rep_dim);
  const std::size_t hidden = static_cast<std::size_t>(arch.hidden);
  const std::size_t lat = static_cast<std::size_t>(arch.latent_dim);

  if (arch.topology == "single") {
    std::unique_ptr<Conditioner> cond;
    if (arch.conditioner == "affine") {
      if (task.kind != SyntheticTask::Kind::kgon) {
        throw std::invalid_argument("affine conditioner needs a label task");
      }
      cond = std::make_unique<AffineConditioner>(AffineConditioner::random(
          task.k, static_cast<std::size_t>(arch.embed_dim), rep, rng));
    } else if (arch.conditioner == "mlp") {
      cond = std::make_unique<MlpConditioner>(MlpConditioner::random(
          task.vocab_size(), static_cast<std::size_t>(arch.embed_dim),
          static_cast<std::size_t>(arch.cond_hidden), rep, rng));
    } else {
      throw std::invalid_argument("unknown conditioner kind: " + arch.conditioner);
    }
    Mlp main = make_mlp({lat + rep, hidden, hidden, out_dim}, Activation::tanh,
                        Activation::linear, rng);
    return std::make_unique<SingleStageGenerator>(arch, std::move(cond),
                                                  std::move(main));
  }

  if (arch.topology == "cascaded-2") {
    if (task.kind != SyntheticTask::Kind::token_attr || task.out_dim != 4) {
      throw std::invalid_argument("cascaded-2 expects the 4-D token task");
    }
    auto table = std::make_shared<TokenTable>(
        task.vocab_size(), static_cast<std::size_t>(arch.embed_dim), rng);
    GaussianHead head;
    head.mean_branch =
        make_mlp({static_cast<std::size_t>(arch.embed_dim),
                  static_cast<std::size_t>(arch.cond_hidden), rep},
                 Activation::tanh, Activation::linear, rng);
    head.var_branch = make_mlp({static_cast<std::size_t>(arch.embed_dim), rep},
                               Activation::linear, Activation::linear, rng);
    SeqConditioner h1(table, Mlp{}, std::move(head));
    if (arch.prefix_hidden > 0) {
      h1.attach_prefix(static_cast<std::size_t>(arch.prefix_hidden), rng);
    }
    const std::size_t s1 = static_cast<std::size_t>(arch.stage1_dim);
    Mlp main1 = make_mlp({lat + rep, hidden, s1}, Activation::tanh,
                         Activation::linear, rng);
    FusionConditioner h2 = FusionConditioner::random(
        table, task.conditional_length(), s1,
        static_cast<std::size_t>(arch.cond_hidden), rep, rng);
    Mlp main2 = make_mlp({s1 + rep, hidden, out_dim}, Activation::tanh,
                         Activation::linear, rng);
    return std::make_unique<CascadedGenerator>(arch, std::move(h1),
                                               std::move(main1), std::move(h2),
                                               std::move(main2));
  }

  if (arch.topology == "residual-n") {
    auto table = std::make_shared<TokenTable>(
        task.vocab_size(), static_cast<std::size_t>(arch.embed_dim), rng);
    std::vector<std::unique_ptr<BlockConditioner>> conds;
    std::vector<ResidualGenerator::Block> blocks;
    for (int i = 0; i < arch.blocks; ++i) {
      DenseLayer first(static_cast<std::size_t>(arch.embed_dim),
                       static_cast<std::size_t>(arch.cond_hidden),
                       Activation::tanh, rng);
      if (arch.gated_rewriter) {
        GatedRewriter rewriter(static_cast<std::size_t>(arch.cond_hidden), rep,
                               rng);
        conds.push_back(std::make_unique<BlockConditioner>(
            table, std::move(first), std::move(rewriter)));
      } else {
        DenseLayer conv(static_cast<std::size_t>(arch.cond_hidden), rep,
                        Activation::linear, rng);
        conds.push_back(std::make_unique<BlockConditioner>(
            table, std::move(first), std::move(conv)));
      }
      ResidualGenerator::Block block;
      block.fuse = make_mlp({hidden + rep, hidden, hidden}, Activation::tanh,
                            Activation::linear, rng);
      blocks.push_back(std::move(block));
    }
    DenseLayer input(lat, hidden, Activation::tanh, rng);
    DenseLayer output(hidden, out_dim, Activation::linear, rng);
    return std::make_unique<ResidualGenerator>(arch, std::move(table),
                                               std::move(conds), std::move(input),
                                               std::move(blocks), std::move(output));
  }

  throw std::invalid_argument("unknown topology: " + arch.topology);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (steps < 0 || batch <= 0 || lr <= 0.0) {
    throw std::invalid_argument("TrainConfig: steps/batch/lr must be positive");
  }
  if (optimizer != "adam" && optimizer != "sgd") {
    throw std::invalid_argument("TrainConfig: unknown optimizer " + optimizer);
  }
  if (bandwidth_policy != "median" && bandwidth_policy != "fixed") {
    throw std::invalid_argument("TrainConfig: unknown bandwidth policy " +
                                bandwidth_policy);
  }
  if (bandwidth_policy == "fixed" && fixed_bandwidth <= 0.0) {
    throw std::invalid_argument("TrainConfig: fixed bandwidth must be positive");
  }
}

double evaluate_generator(const Generator& g, const SyntheticTask& task,
                          std::size_t n, std::uint64_t seed) {
  NoGradGuard guard;
  const auto conds = task.conditionals();
  double total = 0.0;
  for (const auto& c : conds) {
    SampleSet data = sample_data(task, c, n, derive_seed(seed, "eval-data"));
    SampleSet gen;
    gen.dim = g.output_dim();
    Rng zrng(derive_seed(seed, "eval-z:" + conditional_key(c)));
    for (std::size_t i = 0; i < n; ++i) {
      Tensor z = sample_latent(g, zrng);
      gen.push(g.generate(z, c).values());
    }
    total += mmd2(gen, data, median_heuristic_bandwidth(data));
  }
  return total / static_cast<double>(conds.size());
}

namespace {

struct ConditionalStream {
  Conditional c;
  double bandwidth;
  Rng data_rng;
  Rng z_rng;
};

// One optimization phase over a set of parameters; `forward` maps (stream, z)
// to the sample fed into the per-conditional MMD loss.
void run_mmd_phase(
    const SyntheticTask& task, const TrainConfig& cfg, std::size_t data_dim,
    const std::function<Tensor(const ConditionalStream&, const Tensor&)>& forward,
    const std::function<SampleSet(const ConditionalStream&, Rng&)>& draw_data,
    std::vector<Tensor> params, const Generator& g,
    std::vector<std::pair<int, double>>& trace, int trace_offset) {
  const auto conditionals = task.conditionals();
  std::vector<ConditionalStream> streams;
  for (const auto& c : conditionals) {
    ConditionalStream s{
        c, cfg.fixed_bandwidth,
        Rng(derive_seed(cfg.seed, "train-data:" + conditional_key(c))),
        Rng(derive_seed(cfg.seed, "train-z:" + conditional_key(c)))};
    if (cfg.bandwidth_policy == "median") {
      // computed once per conditional, then frozen. The probe pools data
      // with initial generator output so the kernel scale covers the gap
      // the optimizer has to close, not just the data cluster width.
      SampleSet probe = sample_data(task, c, 128, derive_seed(cfg.seed, "bandwidth"))
                            .truncated(data_dim);
      {
        NoGradGuard guard;
        Rng probe_z(derive_seed(cfg.seed, "bandwidth-z:" + conditional_key(c)));
        for (int i = 0; i < 128; ++i) {
          Tensor z = sample_latent(g, probe_z);
          probe.push(forward(s, z).values());
        }
      }
      s.bandwidth = median_heuristic_bandwidth(probe);
    }
    streams.push_back(std::move(s));
  }

  auto opt = make_optimizer(cfg.optimizer, std::move(params), cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    opt->zero_grad();
    Tensor total;
    for (auto& s : streams) {
      SampleSet data = draw_data(s, s.data_rng);
      std::vector<Tensor> generated;
      generated.reserve(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i) {
        Tensor z = sample_latent(g, s.z_rng);
        generated.push_back(forward(s, z));
      }
      Tensor loss = mmd2_loss(generated, data, s.bandwidth);
      total = total.defined() ? add(total, loss) : loss;
    }
    total = scale(1.0 / static_cast<double>(streams.size()), total);
    const double loss_value = total.value();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train_generator: loss diverged at step " +
                               std::to_string(trace_offset + step));
    }
    trace.emplace_back(trace_offset + step, loss_value);
    backward(total);
    opt->step();
  }
}

}  // namespace

TrainResult train_generator(Generator& g, const SyntheticTask& task,
                            const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  result.initial_mmd =
      evaluate_generator(g, task, 128, derive_seed(cfg.seed, "initial-eval"));

  if (auto* cascaded = dynamic_cast<CascadedGenerator*>(&g)) {
    // stage 1 learns the coarse marginal, stage 2 the full output, in order
    const std::size_t s1 = cascaded->stage1_dim();
    run_mmd_phase(
        task, cfg, s1,
        [&](const ConditionalStream& s, const Tensor& z) {
          return cascaded->generate_stage1(z, s.c);
        },
        [&](const ConditionalStream& s, Rng& rng) {
          return sample_data(task, s.c, cfg.batch, rng.u64()).truncated(s1);
        },
        collect_params([&](const ParamVisitor& v) {
          cascaded->h1().visit_params("h1", v);
          cascaded->main1().visit("main1", v, true);
        }, true),
        g, result.trace, 0);
    run_mmd_phase(
        task, cfg, static_cast<std::size_t>(task.out_dim),
        [&](const ConditionalStream& s, const Tensor& z) {
          Tensor x1 = cascaded->generate_stage1(z, s.c).detach();
          return cascaded->generate_stage2(x1, s.c);
        },
        [&](const ConditionalStream& s, Rng& rng) {
          return sample_data(task, s.c, cfg.batch, rng.u64());
        },
        collect_params([&](const ParamVisitor& v) {
          cascaded->h2().visit_params("h2", v);
          cascaded->main2().visit("main2", v, true);
        }, true),
        g, result.trace, cfg.steps);
  } else {
    run_mmd_phase(
        task, cfg, static_cast<std::size_t>(task.out_dim),
        [&](const ConditionalStream& s, const Tensor& z) {
          return g.generate(z, s.c);
        },
        [&](const ConditionalStream& s, Rng& rng) {
          return sample_data(task, s.c, cfg.batch, rng.u64());
        },
        g.train_params(), g, result.trace, 0);
  }

  result.final_mmd =
      evaluate_generator(g, task, 128, derive_seed(cfg.seed, "final-eval"));
  return result;
}

}  // namespace condredact
