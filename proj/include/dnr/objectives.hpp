// SPDX-License-Identifier: Apache-2.0
//
// Loss functions of both training phases. Every loss here is a composition
// of differentiable tape ops, so gradients come from backward().
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dnr/autograd.hpp"
#include "dnr/error.hpp"
#include "dnr/model.hpp"

namespace dnr {

struct ObjectiveConfig {
  double lambda_uncor = 1.0;
  double lambda_corr = 0.5;
  double alpha = 0.5;    // synergy-uniqueness coupling
  double lambda1 = 0.1;  // augmentation consistency
  double lambda2 = 0.1;  // augmented-masked alignment
  double tau = 0.5;      // InfoNCE temperature
  double sigma = 0.1;    // redundancy noise, relative to per-dimension batch std
  std::size_t K = 2;     // augmented views

  void validate() const {
    require(lambda_uncor >= 0.0 && lambda_uncor <= 1.0, "objective.lambda_uncor must lie in [0, 1]");
    require(lambda_corr >= 0.0 && lambda_corr <= 1.0, "objective.lambda_corr must lie in [0, 1]");
    require(alpha >= 0.0, "objective.alpha must be non-negative");
    require(lambda1 >= 0.0, "objective.lambda1 must be non-negative");
    require(lambda2 >= 0.0, "objective.lambda2 must be non-negative");
    require(tau > 0.0, "objective.tau must be positive");
    require(sigma >= 0.0, "objective.sigma must be non-negative");
    require(K >= 2, "objective.K must be at least 2");
  }
};

/// Variance (per sample) below which a dimension is treated as constant.
inline constexpr double kMinVariance = 1e-12;

/// Per-dimension Pearson correlation across the batch, averaged over
/// dimensions. A dimension that is constant in either input contributes 0.
inline Var pearson_corr(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && A.shape() == B.shape(),
          "pearson_corr: inputs must be equal-shaped [N, d], got " + shape_str(A.shape()) + " and " +
              shape_str(B.shape()));
  const std::size_t n = A.rows(), d = A.cols();
  require(n >= 2, "pearson_corr: need a batch of at least 2 samples");

  const Var ac = a - mean(a, 0);
  const Var bc = b - mean(b, 0);
  const Var cov = sum(ac * bc, 0);
  const Var va = sum(ac * ac, 0);
  const Var vb = sum(bc * bc, 0);

  Tensor live({1, d}), pad({1, d});
  const double nn = static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    const bool ok = va.value()[j] / nn >= kMinVariance && vb.value()[j] / nn >= kMinVariance;
    live[j] = ok ? 1.0 : 0.0;
    pad[j] = ok ? 0.0 : 1.0;
  }
  Tape& tape = a.tape();
  const Var denom = sqrt(va * vb + tape.constant(std::move(pad)));
  const Var corr = cov / denom * tape.constant(std::move(live));
  return sum_all(corr) * (1.0 / static_cast<double>(d));
}

/// Sum over modalities of |corr(u_m, r_m)|.
inline Var loss_uncor(const DecomposedBatch& reps) {
  require(!reps.empty(), "loss_uncor: empty modality set");
  Var total;
  for (const StreamTriple& t : reps) {
    const Var term = abs(pearson_corr(t.unique, t.redundant));
    total = total.valid() ? total + term : term;
  }
  return total;
}

/// -sum_{m!=s} corr(r_m, r_s) - sum_{m!=s} corr(s_m, s_s) - alpha sum_m corr(s_m, u_m),
/// m != s over ordered pairs.
inline Var loss_corr(const DecomposedBatch& reps, double alpha) {
  require(reps.size() >= 2, "loss_corr: needs at least two modalities");
  Var cross, coupling;
  for (std::size_t m = 0; m < reps.size(); ++m) {
    for (std::size_t s = 0; s < reps.size(); ++s) {
      if (m == s) continue;
      const Var term = pearson_corr(reps[m].redundant, reps[s].redundant) +
                       pearson_corr(reps[m].synergy, reps[s].synergy);
      cross = cross.valid() ? cross + term : term;
    }
    const Var c = pearson_corr(reps[m].synergy, reps[m].unique);
    coupling = coupling.valid() ? coupling + c : c;
  }
  return -cross - coupling * alpha;
}

/// Mean negative log-likelihood of the labels under row-wise softmax.
inline Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  require(L.rank() == 2 && L.rows() == labels.size(),
          "cross_entropy: logits " + shape_str(L.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  Tensor onehot(L.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < L.cols(),
            "cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                std::to_string(L.cols()) + ")");
    onehot(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  const Var picked = sum_all(log_softmax(logits) * logits.tape().constant(std::move(onehot)));
  return picked * (-1.0 / static_cast<double>(labels.size()));
}

/// Symmetric InfoNCE between paired rows of a and b: cosine similarity over
/// tau as logits, in-batch negatives, averaged over both directions.
inline Var infonce(const Var& a, const Var& b, double tau) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && A.shape() == B.shape(),
          "infonce: inputs must be equal-shaped [N, d], got " + shape_str(A.shape()) + " and " +
              shape_str(B.shape()));
  const std::size_t n = A.rows();
  require(n >= 2, "infonce: need a batch of at least 2 pairs");
  require(tau > 0.0, "infonce: tau must be positive");
  for (const Tensor* t : {&A, &B})
    for (std::size_t r = 0; r < n; ++r) {
      double ss = 0.0;
      for (std::size_t c = 0; c < t->cols(); ++c) ss += (*t)(r, c) * (*t)(r, c);
      if (ss == 0.0) throw numeric_fault("infonce: zero row " + std::to_string(r) + " has undefined cosine");
    }

  Tape& tape = a.tape();
  const Var an = a / sqrt(sum(a * a, 1));
  const Var bn = b / sqrt(sum(b * b, 1));
  Tensor eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  const Var diag = tape.constant(std::move(eye));
  const double scale = -1.0 / static_cast<double>(n);
  const Var s_ab = matmul(an, transpose(bn)) * (1.0 / tau);
  const Var s_ba = matmul(bn, transpose(an)) * (1.0 / tau);
  const Var nce_ab = sum_all(log_softmax(s_ab) * diag) * scale;
  const Var nce_ba = sum_all(log_softmax(s_ba) * diag) * scale;
  return (nce_ab + nce_ba) * 0.5;
}

/// Sum of InfoNCE over ordered pairs of distinct augmented views.
inline Var loss_aug_intra(std::span<const Var> z_aug, double tau) {
  require(z_aug.size() >= 2, "loss_aug_intra: needs at least 2 augmented views");
  Var total;
  for (std::size_t k = 0; k < z_aug.size(); ++k)
    for (std::size_t n = 0; n < z_aug.size(); ++n) {
      if (k == n) continue;
      const Var term = infonce(z_aug[k], z_aug[n], tau);
      total = total.valid() ? total + term : term;
    }
  return total;
}

/// Sum over modalities m and views k of InfoNCE(Z_aug^k, Z_m).
inline Var loss_aug_mask(std::span<const Var> z_aug, std::span<const Var> z_masked, double tau) {
  require(!z_masked.empty(), "loss_aug_mask: empty modality set");
  require(!z_aug.empty(), "loss_aug_mask: needs at least one augmented view");
  for (const Var& zm : z_masked)
    require(zm.value().shape() == z_aug.front().value().shape(),
            "loss_aug_mask: masked fusion " + shape_str(zm.value().shape()) +
                " does not match augmented fusion " + shape_str(z_aug.front().value().shape()));
  Var total;
  for (const Var& zm : z_masked)
    for (const Var& za : z_aug) {
      const Var term = infonce(za, zm, tau);
      total = total.valid() ? total + term : term;
    }
  return total;
}

namespace detail {
inline void check_finite_component(double v, const char* what) {
  if (!std::isfinite(v)) throw numeric_fault(std::string("objective: non-finite ") + what + " component");
}
inline void check_finite_component(const Var& v, const char* what) {
  check_finite_component(v.value().item(), what);
}
}  // namespace detail

/// task + lambda_uncor * uncor + lambda_corr * corr. Works on plain doubles
/// and on tape scalars.
template <class T>
T divide_objective(const T& task, const T& uncor, const T& corr, const ObjectiveConfig& cfg) {
  detail::check_finite_component(task, "task");
  detail::check_finite_component(uncor, "uncor");
  detail::check_finite_component(corr, "corr");
  return task + uncor * cfg.lambda_uncor + corr * cfg.lambda_corr;
}

/// task + lambda1 * aug_intra + lambda2 * aug_mask.
template <class T>
T refine_objective(const T& task, const T& aug_intra, const T& aug_mask, const ObjectiveConfig& cfg) {
  detail::check_finite_component(task, "task");
  detail::check_finite_component(aug_intra, "aug_intra");
  detail::check_finite_component(aug_mask, "aug_mask");
  return task + aug_intra * cfg.lambda1 + aug_mask * cfg.lambda2;
}

}  // namespace dnr
