#include "jst/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "jst/error.hpp"

namespace jst::loss {

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
}

ad::Tensor similarity_matrix(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& ht, Diagnostics* diag) {
  if (hs.rank() != 2 || ht.rank() != 2 || hs.rows() != ht.rows()) {
    throw DimensionError("similarity_matrix: state widths differ, " + ad::shape_string(hs.shape()) + " vs " +
                         ad::shape_string(ht.shape()));
  }
  std::size_t clamped = 0;
  const auto a = ad::l2_normalize_cols(g, hs, min_column_norm, &clamped);
  const auto b = ad::l2_normalize_cols(g, ht, min_column_norm, &clamped);
  if (diag != nullptr) diag->degenerate_columns += clamped;
  return ad::matmul(g, ad::transpose(g, a), b);
}

ad::Tensor reconstruct(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& similarity) {
  if (similarity.rank() != 2 || similarity.rows() != hs.cols()) {
    throw DimensionError("reconstruct: similarity " + ad::shape_string(similarity.shape()) +
                         " does not match states " + ad::shape_string(hs.shape()));
  }
  return ad::matmul(g, hs, ad::softmax_cols(g, similarity));
}

ad::Tensor self_reconstruct(ad::Graph& g, const ad::Tensor& ht, Diagnostics* diag) {
  return reconstruct(g, ht, similarity_matrix(g, ht, ht, diag));
}

ad::Tensor car_loss(ad::Graph& g, const ad::Tensor& hs, const ad::Tensor& ht, Diagnostics* diag) {
  const auto text = ad::stop_gradient(g, ht);
  const auto from_speech = reconstruct(g, hs, similarity_matrix(g, hs, text, diag));
  const auto from_text = self_reconstruct(g, text, diag);
  const double inv_len = 1.0 / static_cast<double>(ht.cols());
  return ad::scale(g, ad::frobenius_norm(g, ad::sub(g, from_speech, from_text)), inv_len);
}

namespace {

void check_targets(const ad::Tensor& logits, std::span<const TokenId> targets, std::span<const double> mask) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("logits " + ad::shape_string(logits.shape()) + " do not match " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!mask.empty() && mask.size() != targets.size()) throw DimensionError("mask length differs from targets");
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw VocabularyError("target id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(logits.cols()));
    }
  }
}

}  // namespace

ad::Tensor nll_loss(ad::Graph& g, const ad::Tensor& logits, std::span<const TokenId> targets, double smoothing,
                    std::span<const double> mask) {
  check_targets(logits, targets, mask);
  const std::size_t vocab = logits.cols();
  const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
  std::vector<double> weights(targets.size() * vocab);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double m = mask.empty() ? 1.0 : mask[k];
    for (std::size_t v = 0; v < vocab; ++v) weights[k * vocab + v] = -m * off;
    weights[k * vocab + static_cast<std::size_t>(targets[k])] = -m * (1.0 - smoothing);
  }
  const ad::Tensor w({targets.size(), vocab}, std::move(weights));
  return ad::sum(g, ad::mul(g, ad::log_softmax_rows(g, logits), w));
}

std::vector<double> softmax_rows_values(const ad::Tensor& logits) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  auto x = logits.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += out[r * cols + c] = std::exp(x[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return out;
}

ad::Tensor kd_loss(ad::Graph& g, const ad::Tensor& student_logits, const ad::Tensor& teacher_logits,
                   std::span<const double> mask) {
  if (student_logits.shape() != teacher_logits.shape() || student_logits.rank() != 2) {
    throw DimensionError("kd_loss: student " + ad::shape_string(student_logits.shape()) + " vs teacher " +
                         ad::shape_string(teacher_logits.shape()));
  }
  if (!mask.empty() && mask.size() != student_logits.rows()) throw DimensionError("mask length differs from rows");
  auto q = softmax_rows_values(teacher_logits);
  const std::size_t vocab = student_logits.cols();
  for (std::size_t k = 0; k < student_logits.rows(); ++k) {
    const double m = mask.empty() ? 1.0 : mask[k];
    for (std::size_t v = 0; v < vocab; ++v) q[k * vocab + v] *= -m;
  }
  const ad::Tensor w(student_logits.shape(), std::move(q));
  return ad::sum(g, ad::mul(g, ad::log_softmax_rows(g, student_logits), w));
}

}  // namespace jst::loss
