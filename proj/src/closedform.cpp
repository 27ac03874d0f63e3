#include "condredact/closedform.hpp"

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace condredact {

namespace {

constexpr double kRankTolerance = 1e-8;       // relative to largest singular value
constexpr double kDiagonalTolerance = 1e-10;  // relative to |v_j|

Eigen::MatrixXd to_eigen(const Tensor& t) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument("closedform: expected a matrix, got shape " +
                                shape_to_string(t.shape()));
  }
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    for (std::size_t c = 0; c < t.dim(1); ++c) m(r, c) = t.at2(r, c);
  }
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[r * m.cols() + c] = m(r, c);
  }
  return Tensor::from({static_cast<std::size_t>(m.rows()),
                       static_cast<std::size_t>(m.cols())},
                      std::move(v));
}

void require_full_column_rank(const Eigen::MatrixXd& v) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v);
  const auto& sv = svd.singularValues();
  const double largest = sv(0);
  const double smallest = sv(sv.size() - 1);
  if (largest == 0.0 || smallest / largest < kRankTolerance) {
    std::ostringstream msg;
    msg << "embedding columns are numerically rank-deficient "
        << "(singular value ratio " << (largest == 0.0 ? 0.0 : smallest / largest)
        << " below " << kRankTolerance << ")";
    throw std::runtime_error(msg.str());
  }
}

Eigen::VectorXd complement_basis_impl(const Eigen::MatrixXd& v, int label) {
  const Eigen::Index re = v.rows();
  const Eigen::Index k = v.cols();
  if (label < 0 || label >= k) {
    throw std::invalid_argument("complement_basis: label " +
                                std::to_string(label) + " out of range");
  }
  require_full_column_rank(v);

  Eigen::MatrixXd others(re, k - 1);
  Eigen::Index col = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (i == label) continue;
    others.col(col++) = v.col(i);
  }

  Eigen::VectorXd residual = v.col(label);
  if (k > 1) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(others);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(re, k - 1);
    // two projection passes keep the residual orthogonal to working precision
    residual -= q * (q.transpose() * residual);
    residual -= q * (q.transpose() * residual);
  }

  const double norm = residual.norm();
  if (norm < kRankTolerance * v.col(label).norm()) {
    std::ostringstream msg;
    msg << "label " << label
        << " embedding is numerically dependent on the remaining embeddings "
        << "(relative residual " << norm / v.col(label).norm() << ")";
    throw std::runtime_error(msg.str());
  }
  return residual / norm;
}

}  // namespace

// ---------------------------------------------------------------------------
// LabelRedactionPlan
// ---------------------------------------------------------------------------

LabelRedactionPlan LabelRedactionPlan::from_pairs(
    std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  LabelRedactionPlan plan;
  for (const auto& [j, ref] : pairs) {
    plan.redacted.push_back(j);
    plan.reference.push_back(ref);
  }
  return plan;
}

void LabelRedactionPlan::validate(std::size_t label_count) const {
  const int k = static_cast<int>(label_count);
  if (redacted.empty()) {
    throw std::invalid_argument("redaction plan: no labels to redact");
  }
  if (redacted.size() != reference.size()) {
    throw std::invalid_argument(
        "redaction plan: redacted/reference size mismatch");
  }
  if (redacted.size() >= label_count) {
    throw std::invalid_argument(
        "redaction plan: must keep at least one label (got " +
        std::to_string(redacted.size()) + " of " + std::to_string(k) + ")");
  }
  for (std::size_t i = 0; i < redacted.size(); ++i) {
    if (i > 0 && redacted[i] <= redacted[i - 1]) {
      throw std::invalid_argument(
          "redaction plan: labels must be strictly ascending");
    }
    if (redacted[i] < 0 || redacted[i] >= k) {
      throw std::invalid_argument("redaction plan: label " +
                                  std::to_string(redacted[i]) + " out of range");
    }
    if (reference[i] < 0 || reference[i] >= k) {
      throw std::invalid_argument("redaction plan: reference " +
                                  std::to_string(reference[i]) +
                                  " out of range");
    }
    if (is_redacted(reference[i])) {
      throw std::invalid_argument(
          "redaction plan: reference " + std::to_string(reference[i]) +
          " for label " + std::to_string(redacted[i]) + " is itself redacted");
    }
  }
}

bool LabelRedactionPlan::is_redacted(int label) const {
  return std::binary_search(redacted.begin(), redacted.end(), label);
}

int LabelRedactionPlan::reference_for(int label) const {
  auto it = std::lower_bound(redacted.begin(), redacted.end(), label);
  if (it == redacted.end() || *it != label) {
    throw std::invalid_argument("reference_for: label " + std::to_string(label) +
                                " is not redacted");
  }
  return reference[static_cast<std::size_t>(it - redacted.begin())];
}

std::vector<int> LabelRedactionPlan::kept_labels(std::size_t label_count) const {
  std::vector<int> kept;
  for (int i = 0; i < static_cast<int>(label_count); ++i) {
    if (!is_redacted(i)) kept.push_back(i);
  }
  return kept;
}

std::vector<std::size_t> LabelRedactionPlan::eta_positions(
    std::size_t label_count) const {
  const auto kept = kept_labels(label_count);
  std::vector<std::size_t> positions;
  positions.reserve(redacted.size());
  for (int ref : reference) {
    auto it = std::lower_bound(kept.begin(), kept.end(), ref);
    positions.push_back(static_cast<std::size_t>(it - kept.begin()));
  }
  return positions;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor complement_basis(const Tensor& embeddings, int label) {
  Eigen::VectorXd u = complement_basis_impl(to_eigen(embeddings), label);
  std::vector<double> v(u.data(), u.data() + u.size());
  return Tensor::from({static_cast<std::size_t>(u.size())}, std::move(v));
}

Tensor redact_labels(const Tensor& map, const Tensor& embeddings,
                     const LabelRedactionPlan& plan) {
  const Eigen::MatrixXd m = to_eigen(map);
  const Eigen::MatrixXd v = to_eigen(embeddings);
  const std::size_t k = static_cast<std::size_t>(v.cols());
  plan.validate(k);
  if (m.cols() != v.rows()) {
    throw std::invalid_argument(
        "redact_labels: map " + shape_to_string(map.shape()) +
        " incompatible with embeddings " + shape_to_string(embeddings.shape()));
  }

  const std::size_t nj = plan.redacted.size();
  const auto kept = plan.kept_labels(k);
  const auto eta = plan.eta_positions(k);

  Eigen::MatrixXd u(v.rows(), nj);   // null-space basis vectors, one per label
  Eigen::MatrixXd vj(v.rows(), nj);  // redacted embedding columns
  Eigen::VectorXd diag(nj);          // u_j^T v_j
  for (std::size_t idx = 0; idx < nj; ++idx) {
    const int j = plan.redacted[idx];
    u.col(idx) = complement_basis_impl(v, j);
    vj.col(idx) = v.col(j);
    diag(idx) = u.col(idx).dot(v.col(j));
    if (std::abs(diag(idx)) < kDiagonalTolerance * v.col(j).norm()) {
      throw std::runtime_error(
          "redact_labels: U^T V_J diagonal entry for label " +
          std::to_string(j) + " is numerically singular");
    }
  }

  // V_-J Y_-J selects the reference embedding for each redacted label
  Eigen::MatrixXd ref_cols(v.rows(), nj);
  for (std::size_t idx = 0; idx < nj; ++idx) {
    ref_cols.col(idx) = v.col(kept[eta[idx]]);
  }

  const Eigen::MatrixXd w =
      m * (ref_cols - vj) * diag.cwiseInverse().asDiagonal();
  return from_eigen(m + w * u.transpose());
}

Tensor redact_onehot(const Tensor& map, const LabelRedactionPlan& plan) {
  const std::size_t k = map.dim(1);
  plan.validate(k);
  const std::size_t r = map.dim(0);
  std::vector<double> out = map.values_copy();
  for (std::size_t idx = 0; idx < plan.redacted.size(); ++idx) {
    const std::size_t j = static_cast<std::size_t>(plan.redacted[idx]);
    const std::size_t ref = static_cast<std::size_t>(plan.reference[idx]);
    for (std::size_t row = 0; row < r; ++row) {
      out[row * k + j] = map.at2(row, ref);
    }
  }
  return Tensor::from({r, k}, std::move(out));
}

RedactionCertificate verify_redaction(const Tensor& map, const Tensor& edited,
                                      const Tensor& embeddings,
                                      const LabelRedactionPlan& plan) {
  const std::size_t r = map.dim(0);
  const std::size_t re = map.dim(1);
  const std::size_t k = embeddings.dim(1);
  plan.validate(k);
  if (edited.shape() != map.shape() || embeddings.dim(0) != re) {
    throw std::invalid_argument("verify_redaction: shape mismatch");
  }

  auto apply = [&](const Tensor& mat, int label) {
    std::vector<double> out(r, 0.0);
    for (std::size_t row = 0; row < r; ++row) {
      double acc = 0.0;
      for (std::size_t col = 0; col < re; ++col) {
        acc += mat.at2(row, col) * embeddings.at2(col, label);
      }
      out[row] = acc;
    }
    return out;
  };
  auto rel_dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dist = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dist += (a[i] - b[i]) * (a[i] - b[i]);
      ref += b[i] * b[i];
    }
    return std::sqrt(dist) / std::max(1.0, std::sqrt(ref));
  };

  RedactionCertificate cert;
  for (int i = 0; i < static_cast<int>(k); ++i) {
    if (plan.is_redacted(i)) {
      const auto target = apply(map, plan.reference_for(i));
      cert.projection_error =
          std::max(cert.projection_error, rel_dist(apply(edited, i), target));
    } else {
      cert.preservation_error = std::max(
          cert.preservation_error, rel_dist(apply(edited, i), apply(map, i)));
    }
  }
  return cert;
}

AffineConditioner redact_affine(const AffineConditioner& conditioner,
                                const LabelRedactionPlan& plan) {
  Tensor edited =
      redact_labels(conditioner.map(), conditioner.embeddings(), plan);
  return AffineConditioner(
      conditioner.embeddings().clone_leaf(),
      Tensor::from(edited.shape(), edited.values_copy(), true));
}

}  // namespace condredact
