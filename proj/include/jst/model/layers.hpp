#pragma once

#include <map>
#include <string>

#include "jst/autodiff/ops.hpp"
#include "jst/rng.hpp"

namespace jst::model {

using ParameterMap = std::map<std::string, ad::Tensor>;

struct ForwardContext {
  ad::Graph& graph;
  bool train = false;
  Rng* rng = nullptr;  // dropout source; required when train is set
  double dropout = 0.0;

  ad::Tensor drop(const ad::Tensor& x) const;
};

struct Linear {
  ad::Tensor weight;  // [in x out]
  ad::Tensor bias;    // [out]

  // Tensors are named <prefix>.w<tag> and <prefix>.b<tag>.
  static Linear declare(ParameterMap& params, const std::string& prefix, const std::string& tag, std::size_t in,
                        std::size_t out, Rng& rng);
  static Linear bind(const ParameterMap& params, const std::string& prefix, const std::string& tag = "");
  ad::Tensor operator()(ad::Graph& g, const ad::Tensor& x) const;
};

struct Norm {
  ad::Tensor gain;
  ad::Tensor bias;

  static Norm declare(ParameterMap& params, const std::string& prefix, std::size_t width);
  static Norm bind(const ParameterMap& params, const std::string& prefix);
  ad::Tensor operator()(ad::Graph& g, const ad::Tensor& x) const;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;

  static MultiHeadAttention declare(ParameterMap& params, const std::string& prefix, std::size_t width,
                                    std::size_t heads, Rng& rng);
  static MultiHeadAttention bind(const ParameterMap& params, const std::string& prefix, std::size_t heads);
  ad::Tensor operator()(ad::Graph& g, const ad::Tensor& x, const ad::Tensor& memory, bool causal) const;
};

struct FeedForward {
  Linear inner, outer;

  static FeedForward declare(ParameterMap& params, const std::string& prefix, std::size_t width,
                             std::size_t hidden, Rng& rng);
  static FeedForward bind(const ParameterMap& params, const std::string& prefix);
  ad::Tensor operator()(ad::Graph& g, const ad::Tensor& x) const;
};

// Pre-norm layers: x + drop(sublayer(norm(x))).
struct EncoderLayer {
  Norm norm1;
  MultiHeadAttention self_attn;
  Norm norm2;
  FeedForward ffn;

  static void declare(ParameterMap& params, const std::string& prefix, std::size_t width, std::size_t heads,
                      std::size_t hidden, Rng& rng);
  static EncoderLayer bind(const ParameterMap& params, const std::string& prefix, std::size_t heads);
  ad::Tensor operator()(const ForwardContext& ctx, const ad::Tensor& x) const;
};

struct DecoderLayer {
  Norm norm1;
  MultiHeadAttention self_attn;
  Norm norm2;
  MultiHeadAttention cross_attn;
  Norm norm3;
  FeedForward ffn;

  static void declare(ParameterMap& params, const std::string& prefix, std::size_t width, std::size_t heads,
                      std::size_t hidden, Rng& rng);
  static DecoderLayer bind(const ParameterMap& params, const std::string& prefix, std::size_t heads);
  ad::Tensor operator()(const ForwardContext& ctx, const ad::Tensor& x, const ad::Tensor& memory) const;
};

// Sinusoidal position table rows [0, length) as a constant [length x width].
ad::Tensor sinusoidal_positions(std::size_t length, std::size_t width);

}  // namespace jst::model
