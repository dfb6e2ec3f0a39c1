#pragma once

#include <cstddef>
#include <span>

#include "jst/autodiff/graph.hpp"
#include "jst/autodiff/tensor.hpp"
#include "jst/rng.hpp"
#include "jst/vocab.hpp"

// Differentiable operations. Every op computes its forward value eagerly and,
// when the graph is recording and an operand requires grad, tapes its local
// backward rule. Matrix ops treat rank-1 tensors as row vectors.
namespace jst::ad {

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& a);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double factor);
// x[n×d] + b broadcast over rows; b has d elements.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& b);

// Rows of table selected by ids (embedding lookup).
Tensor gather_rows(Graph& g, const Tensor& table, std::span<const TokenId> ids);

// Row-wise normalization with learned gain and bias (each of width cols).
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(Graph& g, const Tensor& x);

// Inverted dropout. Identity (same handle) when !train or rate == 0.
Tensor dropout(Graph& g, const Tensor& x, double rate, bool train, Rng& rng);

Tensor log_softmax_rows(Graph& g, const Tensor& x);
Tensor softmax_cols(Graph& g, const Tensor& x);

// Forward identity, backward zero.
Tensor stop_gradient(Graph& g, const Tensor& x);

// Scales every column to unit L2 norm. Norms below min_norm are clamped to
// min_norm; the number of clamped columns is added to *clamped if non-null.
Tensor l2_normalize_cols(Graph& g, const Tensor& x, double min_norm, std::size_t* clamped = nullptr);

Tensor frobenius_norm(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);

// Multi-head scaled dot-product attention. q is [Lq×d], k and v are [Lk×d];
// heads split d evenly. With causal set, query i attends to keys 0..i.
Tensor attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 bool causal);

}  // namespace jst::ad
