#include "jst/model/layers.hpp"

#include <cmath>

#include "jst/error.hpp"

namespace jst::model {

namespace {

const ad::Tensor& lookup(const ParameterMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw InitError("missing parameter " + name);
  return it->second;
}

ad::Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> values(in * out);
  for (auto& v : values) v = rng.uniform(-limit, limit);
  return ad::Tensor({in, out}, std::move(values), true);
}

void insert(ParameterMap& params, const std::string& name, ad::Tensor t) {
  if (!params.emplace(name, std::move(t)).second) throw InitError("duplicate parameter " + name);
}

}  // namespace

ad::Tensor ForwardContext::drop(const ad::Tensor& x) const {
  if (!train || dropout == 0.0) return x;
  if (rng == nullptr) throw ContractError("training forward pass without a dropout generator");
  return ad::dropout(graph, x, dropout, true, *rng);
}

Linear Linear::declare(ParameterMap& params, const std::string& prefix, const std::string& tag, std::size_t in,
                       std::size_t out, Rng& rng) {
  insert(params, prefix + ".w" + tag, xavier(in, out, rng));
  insert(params, prefix + ".b" + tag, ad::Tensor::zeros({out}, true));
  return bind(params, prefix, tag);
}

Linear Linear::bind(const ParameterMap& params, const std::string& prefix, const std::string& tag) {
  return Linear{lookup(params, prefix + ".w" + tag), lookup(params, prefix + ".b" + tag)};
}

ad::Tensor Linear::operator()(ad::Graph& g, const ad::Tensor& x) const {
  return ad::add_bias(g, ad::matmul(g, x, weight), bias);
}

Norm Norm::declare(ParameterMap& params, const std::string& prefix, std::size_t width) {
  insert(params, prefix + ".gain", ad::Tensor::filled({width}, 1.0, true));
  insert(params, prefix + ".bias", ad::Tensor::zeros({width}, true));
  return bind(params, prefix);
}

Norm Norm::bind(const ParameterMap& params, const std::string& prefix) {
  return Norm{lookup(params, prefix + ".gain"), lookup(params, prefix + ".bias")};
}

ad::Tensor Norm::operator()(ad::Graph& g, const ad::Tensor& x) const { return ad::layer_norm(g, x, gain, bias); }

MultiHeadAttention MultiHeadAttention::declare(ParameterMap& params, const std::string& prefix,
                                               std::size_t width, std::size_t heads, Rng& rng) {
  Linear::declare(params, prefix, "q", width, width, rng);
  Linear::declare(params, prefix, "k", width, width, rng);
  Linear::declare(params, prefix, "v", width, width, rng);
  Linear::declare(params, prefix, "o", width, width, rng);
  return bind(params, prefix, heads);
}

MultiHeadAttention MultiHeadAttention::bind(const ParameterMap& params, const std::string& prefix,
                                            std::size_t heads) {
  return MultiHeadAttention{Linear::bind(params, prefix, "q"), Linear::bind(params, prefix, "k"),
                            Linear::bind(params, prefix, "v"), Linear::bind(params, prefix, "o"), heads};
}

ad::Tensor MultiHeadAttention::operator()(ad::Graph& g, const ad::Tensor& x, const ad::Tensor& memory,
                                          bool causal) const {
  const auto q = query(g, x);
  const auto k = key(g, memory);
  const auto v = value(g, memory);
  return output(g, ad::attention(g, q, k, v, heads, causal));
}

FeedForward FeedForward::declare(ParameterMap& params, const std::string& prefix, std::size_t width,
                                 std::size_t hidden, Rng& rng) {
  Linear::declare(params, prefix, "1", width, hidden, rng);
  Linear::declare(params, prefix, "2", hidden, width, rng);
  return bind(params, prefix);
}

FeedForward FeedForward::bind(const ParameterMap& params, const std::string& prefix) {
  return FeedForward{Linear::bind(params, prefix, "1"), Linear::bind(params, prefix, "2")};
}

ad::Tensor FeedForward::operator()(ad::Graph& g, const ad::Tensor& x) const {
  return outer(g, ad::relu(g, inner(g, x)));
}

void EncoderLayer::declare(ParameterMap& params, const std::string& prefix, std::size_t width,
                           std::size_t heads, std::size_t hidden, Rng& rng) {
  Norm::declare(params, prefix + ".norm1", width);
  MultiHeadAttention::declare(params, prefix + ".self_attn", width, heads, rng);
  Norm::declare(params, prefix + ".norm2", width);
  FeedForward::declare(params, prefix + ".ffn", width, hidden, rng);
}

EncoderLayer EncoderLayer::bind(const ParameterMap& params, const std::string& prefix, std::size_t heads) {
  return EncoderLayer{Norm::bind(params, prefix + ".norm1"),
                      MultiHeadAttention::bind(params, prefix + ".self_attn", heads),
                      Norm::bind(params, prefix + ".norm2"), FeedForward::bind(params, prefix + ".ffn")};
}

ad::Tensor EncoderLayer::operator()(const ForwardContext& ctx, const ad::Tensor& x) const {
  auto& g = ctx.graph;
  const auto h = norm1(g, x);
  auto y = ad::add(g, x, ctx.drop(self_attn(g, h, h, false)));
  return ad::add(g, y, ctx.drop(ffn(g, norm2(g, y))));
}

void DecoderLayer::declare(ParameterMap& params, const std::string& prefix, std::size_t width,
                           std::size_t heads, std::size_t hidden, Rng& rng) {
  Norm::declare(params, prefix + ".norm1", width);
  MultiHeadAttention::declare(params, prefix + ".self_attn", width, heads, rng);
  Norm::declare(params, prefix + ".norm2", width);
  MultiHeadAttention::declare(params, prefix + ".cross_attn", width, heads, rng);
  Norm::declare(params, prefix + ".norm3", width);
  FeedForward::declare(params, prefix + ".ffn", width, hidden, rng);
}

DecoderLayer DecoderLayer::bind(const ParameterMap& params, const std::string& prefix, std::size_t heads) {
  return DecoderLayer{Norm::bind(params, prefix + ".norm1"),
                      MultiHeadAttention::bind(params, prefix + ".self_attn", heads),
                      Norm::bind(params, prefix + ".norm2"),
                      MultiHeadAttention::bind(params, prefix + ".cross_attn", heads),
                      Norm::bind(params, prefix + ".norm3"),
                      FeedForward::bind(params, prefix + ".ffn")};
}

ad::Tensor DecoderLayer::operator()(const ForwardContext& ctx, const ad::Tensor& x,
                                    const ad::Tensor& memory) const {
  auto& g = ctx.graph;
  const auto h = norm1(g, x);
  auto y = ad::add(g, x, ctx.drop(self_attn(g, h, h, true)));
  y = ad::add(g, y, ctx.drop(cross_attn(g, norm2(g, y), memory, false)));
  return ad::add(g, y, ctx.drop(ffn(g, norm3(g, y))));
}

ad::Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  std::vector<double> table(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * rate;
      table[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return ad::Tensor({length, width}, std::move(table));
}

}  // namespace jst::model
