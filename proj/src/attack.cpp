#include "condredact/attack.hpp"

#include <stdexcept>

namespace condredact {

void AttackConfig::validate() const {
  if (iterations < 0) {
    throw std::invalid_argument("attack config: iterations must be >= 0");
  }
  if (candidates < 1) {
    throw std::invalid_argument("attack config: candidates must be >= 1");
  }
}

std::vector<int> full_vocabulary(const SyntheticTask& task) {
  std::vector<int> vocab(task.vocab_size());
  for (std::size_t i = 0; i < vocab.size(); ++i) vocab[i] = static_cast<int>(i);
  return vocab;
}

AttackResult square_attack(const Generator& edited, const SyntheticTask& task,
                           const Conditional& c, const Conditional& c_hat,
                           const std::vector<int>& vocab,
                           const AttackConfig& cfg) {
  cfg.validate();
  if (vocab.empty()) {
    throw std::invalid_argument("square_attack: empty vocabulary");
  }
  if (c.empty()) {
    throw std::invalid_argument("square_attack: empty caption");
  }
  NoGradGuard guard;
  Rng rng(derive_seed(cfg.seed, "attack"));
  Tensor z = sample_latent(edited, rng);

  auto objective = [&](const Conditional& caption) {
    return corr(edited.generate(z, caption).values(), c, task);
  };

  AttackResult result;
  result.latent = z.values_copy();
  result.adversarial = c;
  result.best = c;
  result.initial_corr = objective(c);
  result.best_corr = result.initial_corr;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const int position =
        rng.uniform_int(0, static_cast<int>(result.adversarial.size()) - 1);
    Conditional chosen;
    double chosen_corr = 0.0;
    bool have = false;
    for (int k = 0; k < cfg.candidates; ++k) {
      // with replacement; the current token may be redrawn
      const int token =
          vocab[rng.uniform_int(0, static_cast<int>(vocab.size()) - 1)];
      Conditional candidate = result.adversarial;
      candidate[position] = token;
      const double score = objective(candidate);
      if (!have || score > chosen_corr) {  // first max wins ties
        chosen = std::move(candidate);
        chosen_corr = score;
        have = true;
      }
    }
    result.adversarial = std::move(chosen);
    result.corr_trace.push_back(chosen_corr);
    result.caption_trace.push_back(result.adversarial);
    if (chosen_corr > result.best_corr) {
      result.best = result.adversarial;
      result.best_corr = chosen_corr;
    }
  }

  const auto best_out = edited.generate(z, result.best).values_copy();
  result.success =
      corr(best_out, c, task) > corr(best_out, c_hat, task);
  return result;
}

double attack_success_rate(const Generator& edited, const SyntheticTask& task,
                           const RedactionSpec& spec, const AttackConfig& cfg,
                           int n) {
  if (n <= 0) {
    throw std::invalid_argument("attack_success_rate: n must be positive");
  }
  const auto redacted = spec.redacted_set(task);
  if (redacted.empty()) {
    throw std::invalid_argument("attack_success_rate: empty redaction set");
  }
  const auto vocab = full_vocabulary(task);
  Rng rng(derive_seed(cfg.seed, "attack-rate"));
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const Conditional& c =
        redacted[rng.uniform_int(0, static_cast<int>(redacted.size()) - 1)];
    AttackConfig per = cfg;
    per.seed = derive_seed(cfg.seed, "attack-trial:" + std::to_string(i));
    if (square_attack(edited, task, c, spec.reference(c), vocab, per).success) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace condredact
