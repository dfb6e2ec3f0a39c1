#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "jst/autodiff/ops.hpp"
#include "jst/vocab.hpp"

// Training objectives. Sequence-level terms return sums over positions; the
// caller normalizes per target token (see objectives.hpp).
namespace jst::loss {

struct LossWeights {
  double alpha = 0.8;             // NLL vs KD mix on the speech path
  double lambda = 0.02;           // cross-attentive regularization weight
  double label_smoothing = 0.1;

  void validate() const;
};

// Counts columns whose norm was clamped while forming a cosine similarity.
struct Diagnostics {
  std::size_t degenerate_columns = 0;
};

inline constexpr double min_column_norm = 1e-8;

// Cosine similarity of columns: S[i,j] = <hs_i, ht_j> / (|hs_i| |ht_j|).
// hs is [d x N], ht is [d x M]; S is [N x M].
ad::Tensor similarity_matrix(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& ht, Diagnostics* diag = nullptr);

// hs · softmax_cols(S): every output column is a convex combination of the
// columns of hs. Result is [d x M].
ad::Tensor reconstruct(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& similarity);
ad::Tensor self_reconstruct(ad::Graph& g, const ad::Tensor& ht, Diagnostics* diag = nullptr);

// (1/M) ||reconstruct(hs, S(hs, ht)) - self_reconstruct(ht)||_F with ht
// behind a stop-gradient everywhere, so no gradient reaches ht.
ad::Tensor car_loss(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& ht, Diagnostics* diag = nullptr);

// Label-smoothed cross-entropy summed over positions: the target carries
// 1 - eps and the other |V|-1 labels eps/(|V|-1) each. mask, if given, holds
// one weight per position (0 drops the position).
ad::Tensor nll_loss(ad::Graph& g, const ad::Tensor& logits, std::span<const TokenId> targets, double smoothing,
                    std::span<const double> mask = {});

// -sum_k sum_v q(v) log p(v) with q = softmax(teacher_logits) treated as a
// constant (temperature 1).
ad::Tensor kd_loss(ad::Graph& g, const ad::Tensor& student_logits, const ad::Tensor& teacher_logits,
                   std::span<const double> mask = {});

// Row-wise softmax of a value (no graph).
std::vector<double> softmax_rows_values(const ad::Tensor& logits);

}  // namespace jst::loss
