#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "condredact/rng.hpp"
#include "condredact/tensor.hpp"

namespace condredact {

// A conditional is a token sequence over the task vocabulary. Discrete-label
// tasks use length-1 sequences whose single token is the label id.
using Conditional = std::vector<int>;

std::string conditional_key(const Conditional& c);

using ParamVisitor =
    std::function<void(const std::string& name, Tensor& tensor, bool trainable)>;

enum class Activation { linear, tanh, relu, sigmoid };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation act);
Tensor apply_activation(Activation act, const Tensor& x);

Tensor leaky_relu(const Tensor& x, double slope);

struct DenseLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
  Activation act = Activation::linear;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng);
  static DenseLayer zero_init(std::size_t in, std::size_t out, Activation act);

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
  Tensor forward(const Tensor& x) const;
  DenseLayer clone() const;
  void reinit(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& v, bool trainable);
};

struct Mlp {
  std::vector<DenseLayer> layers;

  Tensor forward(Tensor x) const;
  bool empty() const { return layers.empty(); }
  Mlp clone() const;
  void reinit(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& v, bool trainable);
};

// dims = {in, h1, ..., out}; hidden layers use `hidden`, the last uses `out`.
Mlp make_mlp(const std::vector<std::size_t>& dims, Activation hidden,
             Activation out, Rng& rng);

// Fixed per-token input vectors (the stand-in for a pretrained text encoder
// or the conditioning features fed to every block). Never trained.
struct TokenTable {
  Tensor table;  // (vocab, dim)

  TokenTable() = default;
  TokenTable(std::size_t vocab, std::size_t dim, Rng& rng);
  static TokenTable one_hot(std::size_t vocab);

  std::size_t vocab() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }
  Tensor embed(int token) const;                      // (dim)
  Tensor mean_embedding(const Conditional& c) const;  // v_s
  Tensor flat_embedding(const Conditional& c) const;  // v_w, concatenated
};

// ---------------------------------------------------------------------------
// Conditioners
// ---------------------------------------------------------------------------

class Conditioner {
 public:
  virtual ~Conditioner() = default;
  virtual Tensor forward(const Conditional& c) const = 0;
  virtual std::size_t rep_dim() const = 0;
  virtual std::unique_ptr<Conditioner> clone() const = 0;
  virtual void visit_params(const std::string& prefix, const ParamVisitor& v) = 0;
  // What a distillation run may update; everything else must stay bit-identical.
  virtual std::vector<Tensor> distill_trainable() = 0;
  virtual std::vector<Tensor> distill_frozen() = 0;
  // Re-randomize the trainable parameters in place (fresh student init);
  // mandated zero initializations are re-applied, frozen parts untouched.
  virtual void reinit_trainable(Rng& rng) = 0;
};

Tensor conditioner_forward(const Conditioner& h, const Conditional& c);

// H(c) = M * v_c over a fixed embedding table with linearly independent columns.
class AffineConditioner : public Conditioner {
 public:
  AffineConditioner(Tensor embeddings /* (embed_dim, k) columns */, Tensor map);
  static AffineConditioner random(std::size_t k, std::size_t embed_dim,
                                  std::size_t out_dim, Rng& rng);
  static AffineConditioner one_hot(std::size_t k, std::size_t out_dim, Rng& rng);

  Tensor forward(const Conditional& c) const override;
  std::size_t rep_dim() const override { return map_.dim(0); }
  std::size_t label_count() const { return embeddings_.dim(1); }
  std::size_t embed_dim() const { return embeddings_.dim(0); }
  std::unique_ptr<Conditioner> clone() const override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::vector<Tensor> distill_trainable() override { return {map_}; }
  std::vector<Tensor> distill_frozen() override { return {embeddings_}; }
  void reinit_trainable(Rng& rng) override;

  const Tensor& embeddings() const { return embeddings_; }
  const Tensor& map() const { return map_; }
  Tensor& map() { return map_; }
  Tensor embedding_column(int label) const;  // v_label as (embed_dim)

 private:
  Tensor embeddings_;  // (embed_dim, k), fixed
  Tensor map_;         // (out_dim, embed_dim)
};

// Label embedding followed by a small MLP trunk.
class MlpConditioner : public Conditioner {
 public:
  MlpConditioner(std::shared_ptr<TokenTable> table, Mlp trunk);
  static MlpConditioner random(std::size_t k, std::size_t embed_dim,
                               std::size_t hidden, std::size_t out_dim, Rng& rng);

  Tensor forward(const Conditional& c) const override;
  std::size_t rep_dim() const override { return trunk_.layers.back().out_dim(); }
  std::unique_ptr<Conditioner> clone() const override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::vector<Tensor> distill_trainable() override;
  std::vector<Tensor> distill_frozen() override;
  void reinit_trainable(Rng& rng) override;

 private:
  std::shared_ptr<TokenTable> table_;
  Mlp trunk_;
};

// Mean/variance split head; when freeze_variance is set the variance branch
// is excluded from every optimizer step.
struct GaussianHead {
  Mlp mean_branch;
  Mlp var_branch;
  bool freeze_variance = false;

  std::size_t rep_dim() const { return mean_branch.layers.back().out_dim(); }
  Tensor mean(const Tensor& h) const { return mean_branch.forward(h); }
  Tensor scale_vec(const Tensor& h) const { return var_branch.forward(h); }
  // mean + scale ⊙ eps
  Tensor sample(const Tensor& h, const Tensor& eps) const;
  GaussianHead clone() const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

// Small recurrent encoder over token embeddings whose output projection is
// zero-initialized, so at creation it contributes exactly nothing.
struct CapacityPrefix {
  DenseLayer input_map;  // dim -> hidden, linear (activation applied jointly)
  Tensor recurrent;      // (hidden, hidden)
  DenseLayer projection; // hidden -> dim, zero-initialized

  CapacityPrefix() = default;
  CapacityPrefix(std::size_t dim, std::size_t hidden, Rng& rng);
  Tensor correction(const TokenTable& table, const Conditional& c) const;
  CapacityPrefix clone() const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

// Sentence-level conditioner: mean-pooled token embeddings (v_s), optional
// capacity prefix, trunk, optional Gaussian head.
class SeqConditioner : public Conditioner {
 public:
  SeqConditioner(std::shared_ptr<TokenTable> table, Mlp trunk,
                 std::optional<GaussianHead> head = std::nullopt);

  void attach_prefix(std::size_t hidden, Rng& rng);
  bool has_prefix() const { return prefix_.has_value(); }
  bool has_head() const { return head_.has_value(); }
  GaussianHead& head() { return *head_; }
  const GaussianHead& head() const { return *head_; }
  const TokenTable& table() const { return *table_; }
  std::shared_ptr<TokenTable> table_ptr() const { return table_; }

  Tensor sentence_embedding(const Conditional& c) const;  // v_s (+ prefix)
  // Mean-path representation (deterministic).
  Tensor forward(const Conditional& c) const override;
  // Reparameterized representation when a Gaussian head is present.
  Tensor forward_sampled(const Conditional& c, const Tensor& eps) const;

  std::size_t rep_dim() const override;
  std::unique_ptr<Conditioner> clone() const override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::vector<Tensor> distill_trainable() override;
  std::vector<Tensor> distill_frozen() override;
  void reinit_trainable(Rng& rng) override;

 private:
  std::shared_ptr<TokenTable> table_;
  std::optional<CapacityPrefix> prefix_;
  Mlp trunk_;
  std::optional<GaussianHead> head_;
};

// Stage-2 conditioner: consumes word embeddings v_w(c) and the previous
// stage's output.
class FusionConditioner {
 public:
  FusionConditioner(std::shared_ptr<TokenTable> table, std::size_t seq_len,
                    std::size_t stage_dim, Mlp trunk);
  static FusionConditioner random(std::shared_ptr<TokenTable> table,
                                  std::size_t seq_len, std::size_t stage_dim,
                                  std::size_t hidden, std::size_t rep,
                                  Rng& rng);

  Tensor forward(const Conditional& c, const Tensor& stage_input) const;
  std::size_t rep_dim() const { return trunk_.layers.back().out_dim(); }
  std::size_t stage_dim() const { return stage_dim_; }
  const TokenTable& table() const { return *table_; }
  FusionConditioner clone(std::shared_ptr<TokenTable> shared_table) const;
  void visit_params(const std::string& prefix, const ParamVisitor& v);
  std::vector<Tensor> distill_trainable();
  std::vector<Tensor> distill_frozen();
  void reinit_trainable(Rng& rng);

 private:
  std::shared_ptr<TokenTable> table_;
  std::size_t seq_len_;
  std::size_t stage_dim_;
  Mlp trunk_;
};

// y = h_conv(v) ⊙ h_gate(v) + h_conv(h_trans(v)) ⊙ (1 - h_gate(v))
// with a zero-initialized gate, so the gate is exactly 0.5 at creation.
struct GatedRewriter {
  DenseLayer h_conv;    // linear, in -> out
  DenseLayer h_gate;    // sigmoid, zero-initialized, in -> out
  DenseLayer h_trans1;  // in -> in
  DenseLayer h_trans2;  // in -> in, leaky activation between the two
  double leaky_slope = 0.4;

  GatedRewriter() = default;
  GatedRewriter(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& v) const;
  GatedRewriter clone() const;
  void visit(const std::string& prefix, const ParamVisitor& v, bool trainable);
};

Tensor gated_forward(const GatedRewriter& g, const Tensor& v);

// Per-block conditioner for the residual topology: a frozen first layer (the
// fixed up-sampling analog) followed by either a plain layer or a rewriter.
class BlockConditioner : public Conditioner {
 public:
  BlockConditioner(std::shared_ptr<TokenTable> table, DenseLayer first,
                   DenseLayer conv);
  BlockConditioner(std::shared_ptr<TokenTable> table, DenseLayer first,
                   GatedRewriter rewriter);

  Tensor forward(const Conditional& c) const override;
  std::size_t rep_dim() const override;
  bool has_rewriter() const { return use_rewriter_; }
  std::unique_ptr<Conditioner> clone() const override;
  std::unique_ptr<BlockConditioner> clone_with_table(
      std::shared_ptr<TokenTable> shared_table) const;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::vector<Tensor> distill_trainable() override;
  std::vector<Tensor> distill_frozen() override;
  void reinit_trainable(Rng& rng) override;
  const DenseLayer& first_layer() const { return first_; }
  // Swap the trainable tail for a rewriter (improved-capacity configuration).
  void upgrade_to_rewriter(Rng& rng);

 private:
  std::shared_ptr<TokenTable> table_;
  DenseLayer first_;
  bool use_rewriter_ = false;
  DenseLayer conv_;
  GatedRewriter rewriter_;
};

std::vector<Tensor> collect_params(
    const std::function<void(const ParamVisitor&)>& visit, bool trainable_only);

}  // namespace condredact
