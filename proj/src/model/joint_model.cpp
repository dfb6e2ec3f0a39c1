#include "jst/model/joint_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "jst/error.hpp"

namespace jst::model {

namespace {

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

std::string layer_name(const char* component, std::size_t index) {
  return std::string(component) + "." + std::to_string(index);
}

}  // namespace

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::st: return "st";
    case Scheme::jt: return "jt";
    case Scheme::jt_s_asr: return "jt-s-asr";
    case Scheme::jt_s_mt: return "jt-s-mt";
    case Scheme::jt_proposed: return "jt-proposed";
  }
  return "?";
}

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::speech_only: return "speech_only";
    case Layout::text_only: return "text_only";
    case Layout::joint_separate: return "joint_separate";
    case Layout::joint_shared: return "joint_shared";
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto s : {Scheme::st, Scheme::jt, Scheme::jt_s_asr, Scheme::jt_s_mt, Scheme::jt_proposed}) {
    if (lower == to_string(s)) return s;
  }
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

Layout layout_for(Scheme scheme) {
  switch (scheme) {
    case Scheme::st: return Layout::speech_only;
    case Scheme::jt: return Layout::joint_separate;
    default: return Layout::joint_shared;
  }
}

ad::Tensor subsample_frames(const ad::Tensor& features) {
  const std::size_t n = features.rows();
  const std::size_t dim = features.cols();
  const std::size_t out_rows = (n + 1) / 2;
  std::vector<double> out(out_rows * dim);
  auto in = features.data();
  for (std::size_t r = 0; r < out_rows; ++r) {
    const std::size_t a = 2 * r;
    const std::size_t b = std::min(a + 1, n - 1);
    for (std::size_t j = 0; j < dim; ++j) {
      out[r * dim + j] = a == b ? in[a * dim + j] : 0.5 * (in[a * dim + j] + in[b * dim + j]);
    }
  }
  return ad::Tensor({out_rows, dim}, std::move(out));
}

JointModel::JointModel(const ModelConfig& config, Layout layout) : config_(config), layout_(layout) {
  config_.validate();
  position_table_ = sinusoidal_positions(config_.max_positions, config_.d_model);
}

JointModel::JointModel(const ModelConfig& config, Layout layout, std::uint64_t seed) : JointModel(config, layout) {
  Rng rng(seed);
  declare(rng);
  bind();
}

void JointModel::declare(Rng& rng) {
  const auto d = config_.d_model;
  const auto h = config_.n_heads;
  const auto f = config_.d_ffn;
  const auto lower = config_.n_speech_lower_layers;
  const auto upper = config_.n_shared_encoder_layers;
  auto embedding = [&](const std::string& name, std::size_t rows) {
    std::vector<double> values(rows * d);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& v : values) v = rng.normal(0.0, stddev);
    params_.emplace(name, ad::Tensor({rows, d}, std::move(values), true));
  };

  if (has_speech_path()) {
    Linear::declare(params_, "speech_frontend.proj", "", config_.speech_feature_dim, d, rng);
    const bool tied = layout_ == Layout::joint_shared;
    const std::size_t own = tied ? lower : lower + upper;
    for (std::size_t i = 0; i < own; ++i) EncoderLayer::declare(params_, layer_name("speech_encoder", i), d, h, f, rng);
    if (!tied) Norm::declare(params_, "speech_encoder.norm", d);
  }
  if (layout_ == Layout::joint_shared) {
    for (std::size_t i = 0; i < upper; ++i) EncoderLayer::declare(params_, layer_name("shared_encoder", i), d, h, f, rng);
    Norm::declare(params_, "shared_encoder.norm", d);
  }
  if (has_text_path()) {
    embedding("text_embedding.table", config_.src_vocab_size);
    if (layout_ != Layout::joint_shared) {
      for (std::size_t i = 0; i < upper; ++i) EncoderLayer::declare(params_, layer_name("text_encoder", i), d, h, f, rng);
      Norm::declare(params_, "text_encoder.norm", d);
    }
  }
  embedding("decoder.embedding.table", config_.tgt_vocab_size);
  for (std::size_t i = 0; i < config_.n_decoder_layers; ++i) {
    DecoderLayer::declare(params_, layer_name("decoder", i), d, h, f, rng);
  }
  Norm::declare(params_, "decoder.norm", d);
  Linear::declare(params_, "output_projection", "", d, config_.tgt_vocab_size, rng);
}

void JointModel::bind() {
  const auto h = config_.n_heads;
  const auto lower = config_.n_speech_lower_layers;
  const auto upper = config_.n_shared_encoder_layers;
  speech_lower_.clear();
  speech_upper_.clear();
  text_upper_.clear();
  decoder_.clear();

  if (layout_ == Layout::joint_shared) {
    for (std::size_t i = 0; i < upper; ++i) {
      speech_upper_.push_back(EncoderLayer::bind(params_, layer_name("shared_encoder", i), h));
    }
    speech_norm_ = Norm::bind(params_, "shared_encoder.norm");
    text_upper_ = speech_upper_;
    text_norm_ = speech_norm_;
  }
  if (has_speech_path()) {
    speech_frontend_ = Linear::bind(params_, "speech_frontend.proj");
    for (std::size_t i = 0; i < lower; ++i) {
      speech_lower_.push_back(EncoderLayer::bind(params_, layer_name("speech_encoder", i), h));
    }
    if (layout_ != Layout::joint_shared) {
      for (std::size_t i = 0; i < upper; ++i) {
        speech_upper_.push_back(EncoderLayer::bind(params_, layer_name("speech_encoder", lower + i), h));
      }
      speech_norm_ = Norm::bind(params_, "speech_encoder.norm");
    }
  }
  if (has_text_path()) {
    text_embedding_ = params_.at("text_embedding.table");
    if (layout_ != Layout::joint_shared) {
      for (std::size_t i = 0; i < upper; ++i) {
        text_upper_.push_back(EncoderLayer::bind(params_, layer_name("text_encoder", i), h));
      }
      text_norm_ = Norm::bind(params_, "text_encoder.norm");
    }
  }
  decoder_embedding_ = params_.at("decoder.embedding.table");
  for (std::size_t i = 0; i < config_.n_decoder_layers; ++i) {
    decoder_.push_back(DecoderLayer::bind(params_, layer_name("decoder", i), h));
  }
  decoder_norm_ = Norm::bind(params_, "decoder.norm");
  output_projection_ = Linear::bind(params_, "output_projection");
}

JointModel JointModel::from_checkpoint(ModelConfig config, const trainer::Checkpoint& ckpt) {
  bool speech = false, text = false, shared = false;
  for (const auto& [name, _] : ckpt.tensors) {
    speech = speech || starts_with(name, "speech_encoder.");
    text = text || starts_with(name, "text_encoder.") || starts_with(name, "text_embedding.");
    shared = shared || starts_with(name, "shared_encoder.");
  }
  Layout layout;
  if (shared) {
    layout = Layout::joint_shared;
  } else if (speech && text) {
    layout = Layout::joint_separate;
  } else if (speech) {
    layout = Layout::speech_only;
  } else if (text) {
    layout = Layout::text_only;
  } else {
    throw InitError("checkpoint holds no encoder tensors");
  }
  const auto& out = ckpt.at("output_projection.w");
  if (out.shape.size() != 2) throw InitError("output_projection.w must be a matrix");
  config.tgt_vocab_size = out.shape[1];
  if (text) {
    const auto& emb = ckpt.at("text_embedding.table");
    if (emb.shape.size() == 2) config.src_vocab_size = emb.shape[0];
  }
  JointModel model(config, layout, 0);
  model.load(ckpt);
  return model;
}

JointModel JointModel::clone() const {
  JointModel copy(config_, layout_);
  for (const auto& [name, tensor] : params_) {
    copy.params_.emplace(name, ad::Tensor(tensor.shape(),
                                          std::vector<double>(tensor.data().begin(), tensor.data().end()), true));
  }
  copy.bind();
  return copy;
}

std::vector<std::pair<std::string, ParamOwner>> JointModel::sharing_map() const {
  std::vector<std::pair<std::string, ParamOwner>> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) {
    ParamOwner owner = ParamOwner::speech;
    if (starts_with(name, "decoder.") || starts_with(name, "output_projection.") ||
        starts_with(name, "shared_encoder.")) {
      owner = ParamOwner::shared;
    } else if (starts_with(name, "text_")) {
      owner = ParamOwner::text;
    }
    out.emplace_back(name, owner);
  }
  return out;
}

ForwardContext JointModel::with_dropout(const ForwardContext& ctx) const {
  return ForwardContext{ctx.graph, ctx.train, ctx.rng, config_.dropout};
}

ad::Tensor JointModel::positions(std::size_t length) const {
  auto all = position_table_.data();
  const std::size_t width = config_.d_model;
  return ad::Tensor({length, width}, std::vector<double>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(length * width)));
}

ad::Tensor JointModel::encode_speech(const ForwardContext& outer, const ad::Tensor& features) const {
  if (!has_speech_path()) throw ContractError("model has no speech encoder");
  if (features.rank() != 2 || features.cols() != config_.speech_feature_dim) {
    throw DimensionError("speech features must be [frames x " + std::to_string(config_.speech_feature_dim) +
                         "], got " + ad::shape_string(features.shape()));
  }
  if (features.rows() > config_.max_positions) {
    throw LengthError("speech input of " + std::to_string(features.rows()) + " frames exceeds max positions " +
                      std::to_string(config_.max_positions));
  }
  const auto ctx = with_dropout(outer);
  auto& g = ctx.graph;
  const auto frames = subsample_frames(features);
  auto x = ad::add(g, speech_frontend_(g, frames), positions(frames.rows()));
  x = ctx.drop(x);
  for (const auto& layer : speech_lower_) x = layer(ctx, x);
  for (const auto& layer : speech_upper_) x = layer(ctx, x);
  return speech_norm_(g, x);
}

ad::Tensor JointModel::encode_text(const ForwardContext& outer, std::span<const TokenId> tokens) const {
  if (!has_text_path()) throw ContractError("model has no text encoder");
  if (tokens.empty()) throw LengthError("empty text input");
  if (tokens.size() > config_.max_positions) {
    throw LengthError("text input of " + std::to_string(tokens.size()) + " tokens exceeds max positions " +
                      std::to_string(config_.max_positions));
  }
  const auto ctx = with_dropout(outer);
  auto& g = ctx.graph;
  auto x = ad::scale(g, ad::gather_rows(g, text_embedding_, tokens), std::sqrt(static_cast<double>(config_.d_model)));
  x = ctx.drop(ad::add(g, x, positions(tokens.size())));
  for (const auto& layer : text_upper_) x = layer(ctx, x);
  return text_norm_(g, x);
}

ForwardTrace JointModel::decode(const ForwardContext& outer, const ad::Tensor& encoder_out,
                                std::span<const TokenId> targets) const {
  if (targets.empty()) throw LengthError("empty target sequence");
  if (targets.size() > config_.max_positions) {
    throw LengthError("target of " + std::to_string(targets.size()) + " tokens exceeds max positions " +
                      std::to_string(config_.max_positions));
  }
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.tgt_vocab_size) {
      throw VocabularyError("target id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(config_.tgt_vocab_size));
    }
  }
  const auto ctx = with_dropout(outer);
  auto& g = ctx.graph;
  std::vector<TokenId> inputs;
  inputs.reserve(targets.size());
  inputs.push_back(vocab::bos);
  inputs.insert(inputs.end(), targets.begin(), targets.end() - 1);

  ForwardTrace trace;
  trace.encoder_out = encoder_out;
  auto x = ad::scale(g, ad::gather_rows(g, decoder_embedding_, inputs), std::sqrt(static_cast<double>(config_.d_model)));
  x = ctx.drop(ad::add(g, x, positions(inputs.size())));
  for (const auto& layer : decoder_) {
    x = layer(ctx, x, encoder_out);
    trace.decoder_states.push_back(x);
  }
  trace.logits = output_projection_(g, decoder_norm_(g, x));
  return trace;
}

ForwardTrace JointModel::forward_speech(const ForwardContext& ctx, const ad::Tensor& features,
                                        std::span<const TokenId> targets) const {
  return decode(ctx, encode_speech(ctx, features), targets);
}

ForwardTrace JointModel::forward_text(const ForwardContext& ctx, std::span<const TokenId> tokens,
                                      std::span<const TokenId> targets) const {
  return decode(ctx, encode_text(ctx, tokens), targets);
}

trainer::Checkpoint JointModel::to_checkpoint() const {
  trainer::Checkpoint ckpt;
  for (const auto& [name, tensor] : params_) {
    trainer::CheckpointTensor t;
    t.shape = tensor.shape();
    t.values.reserve(tensor.size());
    for (double v : tensor.data()) t.values.push_back(static_cast<float>(v));
    ckpt.tensors.emplace(name, std::move(t));
  }
  ckpt.metadata["layout"] = to_string(layout_);
  return ckpt;
}

void JointModel::load(const trainer::Checkpoint& ckpt) {
  for (const auto& [name, _] : ckpt.tensors) {
    if (!params_.count(name)) throw InitError("checkpoint tensor " + name + " is not a parameter of this model");
  }
  for (auto& [name, tensor] : params_) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw InitError("checkpoint lacks parameter " + name);
    if (it->second.shape != tensor.shape()) {
      throw InitError("shape mismatch for " + name + ": checkpoint " + ad::shape_string(it->second.shape) +
                      " vs model " + ad::shape_string(tensor.shape()));
    }
    auto dst = tensor.mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

void JointModel::zero_grad() {
  for (auto& [_, tensor] : params_) tensor.zero_grad();
}

}  // namespace jst::model
