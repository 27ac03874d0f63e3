#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "condredact/networks.hpp"
#include "condredact/tensor.hpp"

namespace condredact {

// Which labels to reroute and where. Labels are 0-based everywhere.
struct LabelRedactionPlan {
  std::vector<int> redacted;   // strictly ascending
  std::vector<int> reference;  // parallel; reference(j) is never redacted

  static LabelRedactionPlan from_pairs(std::vector<std::pair<int, int>> pairs);

  void validate(std::size_t label_count) const;
  bool is_redacted(int label) const;
  int reference_for(int label) const;
  // non-redacted labels in ascending order
  std::vector<int> kept_labels(std::size_t label_count) const;
  // position of reference(j) within kept_labels, per redacted label
  std::vector<std::size_t> eta_positions(std::size_t label_count) const;
};

struct RedactionCertificate {
  // max over i not in J of |M'v_i - M v_i| / max(1, |M v_i|)
  double preservation_error = 0.0;
  // max over j in J of |M'v_j - M v_ref(j)| / max(1, |M v_ref(j)|)
  double projection_error = 0.0;
};

// Unit basis vector of null{v_i : i != j} that is not orthogonal to v_j.
// Chosen as the normalized component of v_j orthogonal to the other columns,
// which also covers embedding dimensions larger than the label count.
// V is (embed_dim, k) with linearly independent columns.
Tensor complement_basis(const Tensor& embeddings, int label);

// M' = M + W U^T with W = M (V_-J Y_-J - V_J) (U^T V_J)^{-1}.
Tensor redact_labels(const Tensor& map, const Tensor& embeddings,
                     const LabelRedactionPlan& plan);

// One-hot shortcut: redacted columns are overwritten by their reference
// columns via index mapping, O(r k).
Tensor redact_onehot(const Tensor& map, const LabelRedactionPlan& plan);

// Pure constraint check, written against plain loops so it stays independent
// of the solver path above.
RedactionCertificate verify_redaction(const Tensor& map, const Tensor& edited,
                                      const Tensor& embeddings,
                                      const LabelRedactionPlan& plan);

// Closed-form edit of an affine conditioner; only the map changes.
AffineConditioner redact_affine(const AffineConditioner& conditioner,
                                const LabelRedactionPlan& plan);

}  // namespace condredact
