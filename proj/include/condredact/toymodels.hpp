#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condredact/networks.hpp"
#include "condredact/rng.hpp"
#include "condredact/tensor.hpp"

namespace condredact {

struct SampleSet {
  std::size_t dim = 0;
  std::vector<double> flat;

  std::size_t size() const { return dim ? flat.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const {
    return {flat.data() + i * dim, dim};
  }
  void push(std::span<const double> x) {
    flat.insert(flat.end(), x.begin(), x.end());
  }
  SampleSet truncated(std::size_t new_dim) const;
};

// Synthetic conditional families with analytic means: Gaussians at the
// vertices of the unit k-gon, or a (color, part) token grid with a
// coordinate-encoded mean.
struct SyntheticTask {
  enum class Kind { kgon, token_attr };
  Kind kind = Kind::kgon;
  int k = 10;
  double sigma = 0.1;
  int out_dim = 2;
  std::vector<std::string> colors = {"red", "blue", "yellow", "black", "white"};
  std::vector<std::string> parts = {"wing", "belly", "beak"};

  static SyntheticTask kgon_task(int k, double sigma = 0.1);
  static SyntheticTask token_attr_task(int out_dim = 2, double sigma = 0.1);

  std::size_t vocab_size() const;
  std::vector<Conditional> conditionals() const;
  bool valid(const Conditional& c) const;
  void require_valid(const Conditional& c) const;
  std::string name(const Conditional& c) const;
  int token_id(const std::string& word) const;
  std::string token_word(int token) const;
  std::size_t conditional_length() const { return kind == Kind::kgon ? 1 : 2; }
};

std::vector<double> conditional_mean(const SyntheticTask& task,
                                     const Conditional& c);
SampleSet sample_data(const SyntheticTask& task, const Conditional& c,
                      std::size_t n, std::uint64_t seed);

// Biased V-statistic estimate of squared MMD under an RBF kernel.
double mmd2(const SampleSet& x, const SampleSet& y, double bandwidth);
// h with 2h^2 = median pairwise squared distance.
double median_heuristic_bandwidth(const SampleSet& x);

// Differentiable MMD² of generated samples against a fixed data batch;
// fused tape op with an analytic backward rule.
Tensor mmd2_loss(const std::vector<Tensor>& generated, const SampleSet& data,
                 double bandwidth);

// ---------------------------------------------------------------------------
// Generator topologies
// ---------------------------------------------------------------------------

struct GeneratorArch {
  std::string topology = "single";     // single | cascaded-2 | residual-n
  std::string conditioner = "affine";  // single stage: affine | mlp
  int embed_dim = 10;
  int rep_dim = 8;
  int latent_dim = 4;  // main latent; cascaded adds rep_dim of head noise
  int hidden = 16;
  int cond_hidden = 8;
  int stage1_dim = 2;
  int blocks = 6;
  int dilation_cycle = 3;
  bool gated_rewriter = false;
  int prefix_hidden = 0;  // >0 attaches a capacity prefix (students only)
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string topology() const = 0;
  virtual const GeneratorArch& arch() const = 0;
  virtual std::size_t latent_dim() const = 0;  // full z length for generate()
  virtual std::size_t output_dim() const = 0;
  virtual Tensor generate(const Tensor& z, const Conditional& c) const = 0;
  virtual void visit_params(const ParamVisitor& v) = 0;
  virtual std::unique_ptr<Generator> clone() const = 0;

  // Parameters moved by teacher training (fixed tables and the frozen
  // first block layers stay put).
  std::vector<Tensor> train_params();
};

Tensor generate(const Generator& g, const Conditional& c, const Tensor& z);
Tensor sample_latent(const Generator& g, Rng& rng);

class SingleStageGenerator final : public Generator {
 public:
  SingleStageGenerator(GeneratorArch arch, std::unique_ptr<Conditioner> cond,
                       Mlp main);

  std::string topology() const override { return "single"; }
  const GeneratorArch& arch() const override { return arch_; }
  std::size_t latent_dim() const override;
  std::size_t output_dim() const override;
  Tensor generate(const Tensor& z, const Conditional& c) const override;
  void visit_params(const ParamVisitor& v) override;
  std::unique_ptr<Generator> clone() const override;

  Conditioner& cond() { return *cond_; }
  const Conditioner& cond() const { return *cond_; }
  GeneratorArch& arch_mut() { return arch_; }
  void set_cond(std::unique_ptr<Conditioner> cond);
  Mlp& main() { return main_; }

 private:
  GeneratorArch arch_;
  std::unique_ptr<Conditioner> cond_;
  Mlp main_;
};

class CascadedGenerator final : public Generator {
 public:
  CascadedGenerator(GeneratorArch arch, SeqConditioner h1, Mlp main1,
                    FusionConditioner h2, Mlp main2);

  std::string topology() const override { return "cascaded-2"; }
  const GeneratorArch& arch() const override { return arch_; }
  std::size_t latent_dim() const override;
  std::size_t output_dim() const override;
  Tensor generate(const Tensor& z, const Conditional& c) const override;
  void visit_params(const ParamVisitor& v) override;
  std::unique_ptr<Generator> clone() const override;

  Tensor generate_stage1(const Tensor& z, const Conditional& c) const;
  Tensor generate_stage2(const Tensor& x1, const Conditional& c) const;

  SeqConditioner& h1() { return h1_; }
  const SeqConditioner& h1() const { return h1_; }
  GeneratorArch& arch_mut() { return arch_; }
  void set_h1(SeqConditioner h1) { h1_ = std::move(h1); }
  FusionConditioner& h2() { return h2_; }
  const FusionConditioner& h2() const { return h2_; }
  void set_h2(FusionConditioner h2) { h2_ = std::move(h2); }
  Mlp& main1() { return main1_; }
  Mlp& main2() { return main2_; }
  std::size_t stage1_dim() const { return arch_.stage1_dim; }

 private:
  GeneratorArch arch_;
  SeqConditioner h1_;
  Mlp main1_;
  FusionConditioner h2_;
  Mlp main2_;
};

class ResidualGenerator final : public Generator {
 public:
  struct Block {
    Mlp fuse;  // (hidden + rep) -> hidden -> hidden residual update
  };

  ResidualGenerator(GeneratorArch arch, std::shared_ptr<TokenTable> table,
                    std::vector<std::unique_ptr<BlockConditioner>> conds,
                    DenseLayer input, std::vector<Block> blocks,
                    DenseLayer output);

  std::string topology() const override { return "residual-n"; }
  const GeneratorArch& arch() const override { return arch_; }
  std::size_t latent_dim() const override;
  std::size_t output_dim() const override;
  Tensor generate(const Tensor& z, const Conditional& c) const override;
  void visit_params(const ParamVisitor& v) override;
  std::unique_ptr<Generator> clone() const override;

  GeneratorArch& arch_mut() { return arch_; }
  std::size_t block_count() const { return conds_.size(); }
  BlockConditioner& block_cond(std::size_t i) { return *conds_[i]; }
  const BlockConditioner& block_cond(std::size_t i) const { return *conds_[i]; }
  void set_block_cond(std::size_t i, std::unique_ptr<BlockConditioner> cond);
  std::shared_ptr<TokenTable> table() const { return table_; }

 private:
  GeneratorArch arch_;
  std::shared_ptr<TokenTable> table_;
  std::vector<std::unique_ptr<BlockConditioner>> conds_;
  DenseLayer input_;
  std::vector<Block> blocks_;
  DenseLayer output_;
};

std::unique_ptr<Generator> build_generator(const GeneratorArch& arch,
                                           const SyntheticTask& task,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Teacher training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int steps = 500;
  int batch = 24;
  double lr = 0.01;
  std::string optimizer = "adam";
  std::string bandwidth_policy = "median";  // median | fixed
  double fixed_bandwidth = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainResult {
  std::vector<std::pair<int, double>> trace;  // (step, loss)
  double initial_mmd = 0.0;  // average per-conditional MMD² before training
  double final_mmd = 0.0;
};

// Kernel two-sample training of the full generator (all topologies); the
// cascaded topology is trained stage by stage, `steps` each.
TrainResult train_generator(Generator& g, const SyntheticTask& task,
                            const TrainConfig& cfg);

// Average per-conditional MMD² against fresh data draws.
double evaluate_generator(const Generator& g, const SyntheticTask& task,
                          std::size_t n, std::uint64_t seed);

}  // namespace condredact
