#include "condredact/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace condredact {

std::string conditional_key(const Conditional& c) {
  std::string key;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (i) key += ",";
    key += std::to_string(c[i]);
  }
  return key;
}

Activation activation_from_string(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string activation_to_string(Activation act) {
  switch (act) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Tensor apply_activation(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::linear: return x;
    case Activation::tanh: return condredact::tanh(x);
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  throw std::invalid_argument("apply_activation: bad tag");
}

Tensor leaky_relu(const Tensor& x, double slope) {
  // relu(x) - slope * relu(-x)
  return subtract(relu(x), scale(slope, relu(scale(-1.0, x))));
}

// ---------------------------------------------------------------------------
// DenseLayer / Mlp
// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng)
    : act(act) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(out * in);
  for (double& v : w) v = rng.uniform(-limit, limit);
  weight = Tensor::from({out, in}, std::move(w), true);
  bias = Tensor::zeros({out}, true);
}

DenseLayer DenseLayer::zero_init(std::size_t in, std::size_t out, Activation act) {
  DenseLayer layer;
  layer.act = act;
  layer.weight = Tensor::zeros({out, in}, true);
  layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor DenseLayer::forward(const Tensor& x) const {
  return apply_activation(act, add(matmul(weight, x), bias));
}

DenseLayer DenseLayer::clone() const {
  DenseLayer copy;
  copy.weight = weight.clone_leaf();
  copy.bias = bias.clone_leaf();
  copy.act = act;
  return copy;
}

void DenseLayer::reinit(Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
  for (double& v : weight.mutable_values()) v = rng.uniform(-limit, limit);
  for (double& v : bias.mutable_values()) v = 0.0;
}

void DenseLayer::visit(const std::string& prefix, const ParamVisitor& v,
                       bool trainable) {
  v(prefix + ".weight", weight, trainable);
  v(prefix + ".bias", bias, trainable);
}

Tensor Mlp::forward(Tensor x) const {
  for (const auto& layer : layers) x = layer.forward(x);
  return x;
}

Mlp Mlp::clone() const {
  Mlp copy;
  copy.layers.reserve(layers.size());
  for (const auto& layer : layers) copy.layers.push_back(layer.clone());
  return copy;
}

void Mlp::reinit(Rng& rng) {
  for (auto& layer : layers) layer.reinit(rng);
}

void Mlp::visit(const std::string& prefix, const ParamVisitor& v, bool trainable) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].visit(prefix + ".l" + std::to_string(i), v, trainable);
  }
}

Mlp make_mlp(const std::vector<std::size_t>& dims, Activation hidden,
             Activation out, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need >= 2 dims");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    mlp.layers.emplace_back(dims[i], dims[i + 1], last ? out : hidden, rng);
  }
  return mlp;
}

// ---------------------------------------------------------------------------
// TokenTable
// ---------------------------------------------------------------------------

TokenTable::TokenTable(std::size_t vocab, std::size_t dim, Rng& rng) {
  std::vector<double> v(vocab * dim);
  for (double& x : v) x = rng.normal();
  table = Tensor::from({vocab, dim}, std::move(v));
}

TokenTable TokenTable::one_hot(std::size_t vocab) {
  TokenTable t;
  std::vector<double> v(vocab * vocab, 0.0);
  for (std::size_t i = 0; i < vocab; ++i) v[i * vocab + i] = 1.0;
  t.table = Tensor::from({vocab, vocab}, std::move(v));
  return t;
}

Tensor TokenTable::embed(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab()) {
    throw std::invalid_argument("TokenTable::embed: token " +
                                std::to_string(token) + " out of range [0, " +
                                std::to_string(vocab()) + ")");
  }
  const std::size_t d = dim();
  auto v = table.values();
  std::vector<double> row(v.begin() + token * d, v.begin() + (token + 1) * d);
  return Tensor::from({d}, std::move(row));
}

Tensor TokenTable::mean_embedding(const Conditional& c) const {
  if (c.empty()) throw std::invalid_argument("mean_embedding: empty conditional");
  const std::size_t d = dim();
  std::vector<double> acc(d, 0.0);
  for (int token : c) {
    Tensor e = embed(token);
    for (std::size_t i = 0; i < d; ++i) acc[i] += e.at(i);
  }
  for (double& x : acc) x /= static_cast<double>(c.size());
  return Tensor::from({d}, std::move(acc));
}

Tensor TokenTable::flat_embedding(const Conditional& c) const {
  if (c.empty()) throw std::invalid_argument("flat_embedding: empty conditional");
  const std::size_t d = dim();
  std::vector<double> flat;
  flat.reserve(c.size() * d);
  for (int token : c) {
    Tensor e = embed(token);
    for (std::size_t i = 0; i < d; ++i) flat.push_back(e.at(i));
  }
  return Tensor::from({c.size() * d}, std::move(flat));
}

// ---------------------------------------------------------------------------
// AffineConditioner
// ---------------------------------------------------------------------------

Tensor conditioner_forward(const Conditioner& h, const Conditional& c) {
  return h.forward(c);
}

AffineConditioner::AffineConditioner(Tensor embeddings, Tensor map)
    : embeddings_(std::move(embeddings)), map_(std::move(map)) {
  if (embeddings_.shape().size() != 2 || map_.shape().size() != 2 ||
      map_.dim(1) != embeddings_.dim(0)) {
    throw std::invalid_argument("AffineConditioner: map " +
                                shape_to_string(map_.shape()) +
                                " incompatible with embeddings " +
                                shape_to_string(embeddings_.shape()));
  }
}

AffineConditioner AffineConditioner::random(std::size_t k, std::size_t embed_dim,
                                            std::size_t out_dim, Rng& rng) {
  if (embed_dim < k) {
    throw std::invalid_argument("AffineConditioner: embed_dim must be >= k");
  }
  std::vector<double> e(embed_dim * k);
  for (double& x : e) x = rng.normal();
  std::vector<double> m(out_dim * embed_dim);
  const double limit = std::sqrt(6.0 / static_cast<double>(out_dim + embed_dim));
  for (double& x : m) x = rng.uniform(-limit, limit);
  return AffineConditioner(Tensor::from({embed_dim, k}, std::move(e)),
                           Tensor::from({out_dim, embed_dim}, std::move(m), true));
}

AffineConditioner AffineConditioner::one_hot(std::size_t k, std::size_t out_dim,
                                             Rng& rng) {
  std::vector<double> e(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) e[i * k + i] = 1.0;
  std::vector<double> m(out_dim * k);
  const double limit = std::sqrt(6.0 / static_cast<double>(out_dim + k));
  for (double& x : m) x = rng.uniform(-limit, limit);
  return AffineConditioner(Tensor::from({k, k}, std::move(e)),
                           Tensor::from({out_dim, k}, std::move(m), true));
}

Tensor AffineConditioner::embedding_column(int label) const {
  const std::size_t k = label_count();
  if (label < 0 || static_cast<std::size_t>(label) >= k) {
    throw std::invalid_argument("AffineConditioner: label " +
                                std::to_string(label) + " out of range [0, " +
                                std::to_string(k) + ")");
  }
  const std::size_t re = embed_dim();
  std::vector<double> col(re);
  for (std::size_t i = 0; i < re; ++i) col[i] = embeddings_.at2(i, label);
  return Tensor::from({re}, std::move(col));
}

Tensor AffineConditioner::forward(const Conditional& c) const {
  if (c.size() != 1) {
    throw std::invalid_argument("AffineConditioner: expected a single label");
  }
  return matmul(map_, embedding_column(c[0]));
}

std::unique_ptr<Conditioner> AffineConditioner::clone() const {
  return std::make_unique<AffineConditioner>(embeddings_.clone_leaf(),
                                             map_.clone_leaf());
}

void AffineConditioner::visit_params(const std::string& prefix,
                                     const ParamVisitor& v) {
  v(prefix + ".embeddings", embeddings_, false);
  v(prefix + ".map", map_, true);
}

void AffineConditioner::reinit_trainable(Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(rep_dim() + embed_dim()));
  for (double& x : map_.mutable_values()) x = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------------------
// MlpConditioner
// ---------------------------------------------------------------------------

MlpConditioner::MlpConditioner(std::shared_ptr<TokenTable> table, Mlp trunk)
    : table_(std::move(table)), trunk_(std::move(trunk)) {}

MlpConditioner MlpConditioner::random(std::size_t k, std::size_t embed_dim,
                                      std::size_t hidden, std::size_t out_dim,
                                      Rng& rng) {
  auto table = std::make_shared<TokenTable>(k, embed_dim, rng);
  Mlp trunk = make_mlp({embed_dim, hidden, out_dim}, Activation::tanh,
                       Activation::linear, rng);
  return MlpConditioner(std::move(table), std::move(trunk));
}

Tensor MlpConditioner::forward(const Conditional& c) const {
  return trunk_.forward(table_->mean_embedding(c));
}

std::unique_ptr<Conditioner> MlpConditioner::clone() const {
  auto table = std::make_shared<TokenTable>(*table_);
  table->table = table_->table.clone_leaf();
  return std::make_unique<MlpConditioner>(std::move(table), trunk_.clone());
}

void MlpConditioner::visit_params(const std::string& prefix,
                                  const ParamVisitor& v) {
  v(prefix + ".table", table_->table, false);
  trunk_.visit(prefix + ".trunk", v, true);
}

std::vector<Tensor> MlpConditioner::distill_trainable() {
  return collect_params(
      [this](const ParamVisitor& v) { trunk_.visit("trunk", v, true); }, true);
}

std::vector<Tensor> MlpConditioner::distill_frozen() { return {table_->table}; }

void MlpConditioner::reinit_trainable(Rng& rng) { trunk_.reinit(rng); }

// ---------------------------------------------------------------------------
// GaussianHead
// ---------------------------------------------------------------------------

Tensor GaussianHead::sample(const Tensor& h, const Tensor& eps) const {
  return add(mean(h), hadamard(scale_vec(h), eps));
}

GaussianHead GaussianHead::clone() const {
  GaussianHead copy;
  copy.mean_branch = mean_branch.clone();
  copy.var_branch = var_branch.clone();
  copy.freeze_variance = freeze_variance;
  return copy;
}

void GaussianHead::visit(const std::string& prefix, const ParamVisitor& v) {
  mean_branch.visit(prefix + ".mean", v, true);
  var_branch.visit(prefix + ".var", v, !freeze_variance);
}

// ---------------------------------------------------------------------------
// CapacityPrefix
// ---------------------------------------------------------------------------

CapacityPrefix::CapacityPrefix(std::size_t dim, std::size_t hidden, Rng& rng)
    : input_map(dim, hidden, Activation::linear, rng),
      projection(DenseLayer::zero_init(hidden, dim, Activation::linear)) {
  std::vector<double> w(hidden * hidden);
  const double limit = std::sqrt(6.0 / static_cast<double>(2 * hidden));
  for (double& x : w) x = rng.uniform(-limit, limit);
  recurrent = Tensor::from({hidden, hidden}, std::move(w), true);
}

Tensor CapacityPrefix::correction(const TokenTable& table,
                                  const Conditional& c) const {
  Tensor state = Tensor::zeros({input_map.out_dim()});
  for (int token : c) {
    Tensor drive = add(matmul(input_map.weight, table.embed(token)),
                       input_map.bias);
    state = condredact::tanh(add(drive, matmul(recurrent, state)));
  }
  return projection.forward(state);
}

CapacityPrefix CapacityPrefix::clone() const {
  CapacityPrefix copy;
  copy.input_map = input_map.clone();
  copy.recurrent = recurrent.clone_leaf();
  copy.projection = projection.clone();
  return copy;
}

void CapacityPrefix::visit(const std::string& prefix, const ParamVisitor& v) {
  input_map.visit(prefix + ".input", v, true);
  v(prefix + ".recurrent", recurrent, true);
  projection.visit(prefix + ".proj", v, true);
}

// ---------------------------------------------------------------------------
// SeqConditioner
// ---------------------------------------------------------------------------

SeqConditioner::SeqConditioner(std::shared_ptr<TokenTable> table, Mlp trunk,
                               std::optional<GaussianHead> head)
    : table_(std::move(table)), trunk_(std::move(trunk)), head_(std::move(head)) {}

void SeqConditioner::attach_prefix(std::size_t hidden, Rng& rng) {
  prefix_.emplace(table_->dim(), hidden, rng);
}

Tensor SeqConditioner::sentence_embedding(const Conditional& c) const {
  Tensor vs = table_->mean_embedding(c);
  if (prefix_) vs = add(vs, prefix_->correction(*table_, c));
  return vs;
}

Tensor SeqConditioner::forward(const Conditional& c) const {
  Tensor h = trunk_.forward(sentence_embedding(c));
  return head_ ? head_->mean(h) : h;
}

Tensor SeqConditioner::forward_sampled(const Conditional& c,
                                       const Tensor& eps) const {
  if (!head_) throw std::logic_error("forward_sampled: no Gaussian head");
  return head_->sample(trunk_.forward(sentence_embedding(c)), eps);
}

std::size_t SeqConditioner::rep_dim() const {
  if (head_) return head_->rep_dim();
  return trunk_.layers.back().out_dim();
}

std::unique_ptr<Conditioner> SeqConditioner::clone() const {
  auto table = std::make_shared<TokenTable>(*table_);
  table->table = table_->table.clone_leaf();
  auto copy = std::make_unique<SeqConditioner>(
      std::move(table), trunk_.clone(),
      head_ ? std::optional<GaussianHead>(head_->clone()) : std::nullopt);
  if (prefix_) copy->prefix_ = prefix_->clone();
  return copy;
}

void SeqConditioner::visit_params(const std::string& prefix,
                                  const ParamVisitor& v) {
  v(prefix + ".table", table_->table, false);
  if (prefix_) prefix_->visit(prefix + ".prefix", v);
  trunk_.visit(prefix + ".trunk", v, true);
  if (head_) head_->visit(prefix + ".head", v);
}

std::vector<Tensor> SeqConditioner::distill_trainable() {
  return collect_params(
      [this](const ParamVisitor& v) {
        if (prefix_) prefix_->visit("prefix", v);
        trunk_.visit("trunk", v, true);
        if (head_) head_->visit("head", v);
      },
      true);
}

void SeqConditioner::reinit_trainable(Rng& rng) {
  trunk_.reinit(rng);
  if (prefix_) {
    prefix_->input_map.reinit(rng);
    const std::size_t hidden = prefix_->input_map.out_dim();
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * hidden));
    for (double& x : prefix_->recurrent.mutable_values()) {
      x = rng.uniform(-limit, limit);
    }
    // the projection stays zero: the prefix must keep contributing nothing
    for (double& x : prefix_->projection.weight.mutable_values()) x = 0.0;
    for (double& x : prefix_->projection.bias.mutable_values()) x = 0.0;
  }
  if (head_) {
    head_->mean_branch.reinit(rng);
    if (!head_->freeze_variance) head_->var_branch.reinit(rng);
  }
}

std::vector<Tensor> SeqConditioner::distill_frozen() {
  std::vector<Tensor> frozen = {table_->table};
  if (head_ && head_->freeze_variance) {
    auto var = collect_params(
        [this](const ParamVisitor& v) { head_->var_branch.visit("var", v, false); },
        false);
    frozen.insert(frozen.end(), var.begin(), var.end());
  }
  return frozen;
}

// ---------------------------------------------------------------------------
// FusionConditioner
// ---------------------------------------------------------------------------

FusionConditioner::FusionConditioner(std::shared_ptr<TokenTable> table,
                                     std::size_t seq_len, std::size_t stage_dim,
                                     Mlp trunk)
    : table_(std::move(table)),
      seq_len_(seq_len),
      stage_dim_(stage_dim),
      trunk_(std::move(trunk)) {}

FusionConditioner FusionConditioner::random(std::shared_ptr<TokenTable> table,
                                            std::size_t seq_len,
                                            std::size_t stage_dim,
                                            std::size_t hidden, std::size_t rep,
                                            Rng& rng) {
  const std::size_t in = seq_len * table->dim() + stage_dim;
  Mlp trunk =
      make_mlp({in, hidden, rep}, Activation::tanh, Activation::linear, rng);
  return FusionConditioner(std::move(table), seq_len, stage_dim, std::move(trunk));
}

Tensor FusionConditioner::forward(const Conditional& c,
                                  const Tensor& stage_input) const {
  if (c.size() != seq_len_) {
    throw std::invalid_argument("FusionConditioner: conditional length " +
                                std::to_string(c.size()) + " != " +
                                std::to_string(seq_len_));
  }
  return trunk_.forward(
      concat_last_axis(table_->flat_embedding(c), stage_input));
}

FusionConditioner FusionConditioner::clone(
    std::shared_ptr<TokenTable> shared_table) const {
  return FusionConditioner(std::move(shared_table), seq_len_, stage_dim_,
                           trunk_.clone());
}

void FusionConditioner::visit_params(const std::string& prefix,
                                     const ParamVisitor& v) {
  trunk_.visit(prefix + ".trunk", v, true);
}

std::vector<Tensor> FusionConditioner::distill_trainable() {
  return collect_params(
      [this](const ParamVisitor& v) { trunk_.visit("trunk", v, true); }, true);
}

std::vector<Tensor> FusionConditioner::distill_frozen() {
  return {table_->table};
}

void FusionConditioner::reinit_trainable(Rng& rng) { trunk_.reinit(rng); }

// ---------------------------------------------------------------------------
// GatedRewriter
// ---------------------------------------------------------------------------

GatedRewriter::GatedRewriter(std::size_t in, std::size_t out, Rng& rng)
    : h_conv(in, out, Activation::linear, rng),
      h_gate(DenseLayer::zero_init(in, out, Activation::sigmoid)),
      h_trans1(in, in, Activation::linear, rng),
      h_trans2(in, in, Activation::linear, rng) {}

Tensor GatedRewriter::forward(const Tensor& v) const {
  Tensor gate = h_gate.forward(v);
  Tensor direct = h_conv.forward(v);
  Tensor transformed =
      h_conv.forward(h_trans2.forward(leaky_relu(h_trans1.forward(v), leaky_slope)));
  Tensor ones = Tensor::full(gate.shape(), 1.0);
  return add(hadamard(direct, gate),
             hadamard(transformed, subtract(ones, gate)));
}

GatedRewriter GatedRewriter::clone() const {
  GatedRewriter copy;
  copy.h_conv = h_conv.clone();
  copy.h_gate = h_gate.clone();
  copy.h_trans1 = h_trans1.clone();
  copy.h_trans2 = h_trans2.clone();
  copy.leaky_slope = leaky_slope;
  return copy;
}

void GatedRewriter::visit(const std::string& prefix, const ParamVisitor& v,
                          bool trainable) {
  h_conv.visit(prefix + ".conv", v, trainable);
  h_gate.visit(prefix + ".gate", v, trainable);
  h_trans1.visit(prefix + ".trans1", v, trainable);
  h_trans2.visit(prefix + ".trans2", v, trainable);
}

Tensor gated_forward(const GatedRewriter& g, const Tensor& v) {
  return g.forward(v);
}

// ---------------------------------------------------------------------------
// BlockConditioner
// ---------------------------------------------------------------------------

BlockConditioner::BlockConditioner(std::shared_ptr<TokenTable> table,
                                   DenseLayer first, DenseLayer conv)
    : table_(std::move(table)),
      first_(std::move(first)),
      use_rewriter_(false),
      conv_(std::move(conv)) {}

BlockConditioner::BlockConditioner(std::shared_ptr<TokenTable> table,
                                   DenseLayer first, GatedRewriter rewriter)
    : table_(std::move(table)),
      first_(std::move(first)),
      use_rewriter_(true),
      rewriter_(std::move(rewriter)) {}

Tensor BlockConditioner::forward(const Conditional& c) const {
  Tensor h = first_.forward(table_->mean_embedding(c));
  return use_rewriter_ ? rewriter_.forward(h) : conv_.forward(h);
}

std::size_t BlockConditioner::rep_dim() const {
  return use_rewriter_ ? rewriter_.h_conv.out_dim() : conv_.out_dim();
}

std::unique_ptr<Conditioner> BlockConditioner::clone() const {
  auto table = std::make_shared<TokenTable>(*table_);
  table->table = table_->table.clone_leaf();
  return clone_with_table(std::move(table));
}

std::unique_ptr<BlockConditioner> BlockConditioner::clone_with_table(
    std::shared_ptr<TokenTable> shared_table) const {
  std::unique_ptr<BlockConditioner> copy;
  if (use_rewriter_) {
    copy = std::make_unique<BlockConditioner>(std::move(shared_table),
                                              first_.clone(), rewriter_.clone());
  } else {
    copy = std::make_unique<BlockConditioner>(std::move(shared_table),
                                              first_.clone(), conv_.clone());
  }
  return copy;
}

void BlockConditioner::visit_params(const std::string& prefix,
                                    const ParamVisitor& v) {
  first_.visit(prefix + ".first", v, false);
  if (use_rewriter_) {
    rewriter_.visit(prefix + ".rewriter", v, true);
  } else {
    conv_.visit(prefix + ".conv", v, true);
  }
}

std::vector<Tensor> BlockConditioner::distill_trainable() {
  return collect_params(
      [this](const ParamVisitor& v) {
        if (use_rewriter_) {
          rewriter_.visit("rewriter", v, true);
        } else {
          conv_.visit("conv", v, true);
        }
      },
      true);
}

std::vector<Tensor> BlockConditioner::distill_frozen() {
  auto frozen = collect_params(
      [this](const ParamVisitor& v) { first_.visit("first", v, false); }, false);
  frozen.push_back(table_->table);
  return frozen;
}

void BlockConditioner::reinit_trainable(Rng& rng) {
  if (use_rewriter_) {
    rewriter_.h_conv.reinit(rng);
    rewriter_.h_trans1.reinit(rng);
    rewriter_.h_trans2.reinit(rng);
    // gate stays zero-initialized by contract
    for (double& x : rewriter_.h_gate.weight.mutable_values()) x = 0.0;
    for (double& x : rewriter_.h_gate.bias.mutable_values()) x = 0.0;
  } else {
    conv_.reinit(rng);
  }
}

void BlockConditioner::upgrade_to_rewriter(Rng& rng) {
  if (use_rewriter_) return;
  rewriter_ = GatedRewriter(first_.out_dim(), conv_.out_dim(), rng);
  // the rewriter wraps the existing conv layer; only gate and transform are new
  rewriter_.h_conv = conv_.clone();
  use_rewriter_ = true;
}

std::vector<Tensor> collect_params(
    const std::function<void(const ParamVisitor&)>& visit, bool trainable_only) {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t, bool trainable) {
    if (!trainable_only || trainable) out.push_back(t);
  });
  return out;
}

}  // namespace condredact
