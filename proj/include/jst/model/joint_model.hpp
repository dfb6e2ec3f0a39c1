#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jst/model/config.hpp"
#include "jst/model/layers.hpp"
#include "jst/trainer/checkpoint.hpp"
#include "jst/vocab.hpp"

namespace jst::model {

// Which encoder stacks exist and whether the upper stack is tied.
enum class Layout {
  speech_only,     // ASR pretraining and the single-task ST model
  text_only,       // MT pretraining
  joint_separate,  // two full encoders, shared decoder (JT)
  joint_shared,    // upper encoder layers tied between paths (JT-S-*)
};

// Initialization schemes; see init_from_scheme.
enum class Scheme { st, jt, jt_s_asr, jt_s_mt, jt_proposed };

std::string to_string(Scheme scheme);
std::string to_string(Layout layout);
// Accepts "st", "jt", "jt-s-asr", "jt-s-mt", "jt-proposed" in any case.
Scheme parse_scheme(std::string_view name);
Layout layout_for(Scheme scheme);

enum class ParamOwner { speech, text, shared };

struct ForwardTrace {
  ad::Tensor encoder_out;                  // [positions x d_model]
  std::vector<ad::Tensor> decoder_states;  // residual stream after each decoder layer, [K x d_model]
  ad::Tensor logits;                       // [K x tgt_vocab]
};

// Dual-encoder, shared-decoder transformer. Parameters live in one map keyed
// by canonical name (component.layer.sublayer.tensor); the layer structs
// hold handles into it, so a tied stack is literally the same storage on
// both paths.
class JointModel {
 public:
  JointModel(const ModelConfig& config, Layout layout, std::uint64_t seed);
  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;
  JointModel(JointModel&&) = default;
  JointModel& operator=(JointModel&&) = default;

  // Layout and target vocabulary are inferred from the tensor names/shapes.
  static JointModel from_checkpoint(ModelConfig config, const trainer::Checkpoint& ckpt);
  JointModel clone() const;

  const ModelConfig& config() const noexcept { return config_; }
  Layout layout() const noexcept { return layout_; }
  bool has_speech_path() const noexcept { return layout_ != Layout::text_only; }
  bool has_text_path() const noexcept { return layout_ != Layout::speech_only; }

  ParameterMap& parameters() noexcept { return params_; }
  const ParameterMap& parameters() const noexcept { return params_; }
  std::vector<std::pair<std::string, ParamOwner>> sharing_map() const;

  // features: [frames x speech_feature_dim], one frame per row.
  ad::Tensor encode_speech(const ForwardContext& ctx, const ad::Tensor& features) const;
  ad::Tensor encode_text(const ForwardContext& ctx, std::span<const TokenId> tokens) const;
  // Teacher-forced: position k sees bos, targets[0..k-1] and the encoder output.
  ForwardTrace decode(const ForwardContext& ctx, const ad::Tensor& encoder_out,
                      std::span<const TokenId> targets) const;

  ForwardTrace forward_speech(const ForwardContext& ctx, const ad::Tensor& features,
                              std::span<const TokenId> targets) const;
  ForwardTrace forward_text(const ForwardContext& ctx, std::span<const TokenId> tokens,
                            std::span<const TokenId> targets) const;

  trainer::Checkpoint to_checkpoint() const;
  // Requires the exact name and shape set of this model.
  void load(const trainer::Checkpoint& ckpt);
  void zero_grad();

  const std::vector<EncoderLayer>& speech_upper_layers() const noexcept { return speech_upper_; }
  const std::vector<EncoderLayer>& text_upper_layers() const noexcept { return text_upper_; }

 private:
  JointModel(const ModelConfig& config, Layout layout);
  void declare(Rng& rng);
  void bind();
  ForwardContext with_dropout(const ForwardContext& ctx) const;
  ad::Tensor positions(std::size_t length) const;

  ModelConfig config_;
  Layout layout_;
  ParameterMap params_;

  ad::Tensor position_table_;
  Linear speech_frontend_;
  std::vector<EncoderLayer> speech_lower_;
  std::vector<EncoderLayer> speech_upper_;
  Norm speech_norm_;
  ad::Tensor text_embedding_;
  std::vector<EncoderLayer> text_upper_;
  Norm text_norm_;
  ad::Tensor decoder_embedding_;
  std::vector<DecoderLayer> decoder_;
  Norm decoder_norm_;
  Linear output_projection_;
};

// Stride-2 frame averaging applied ahead of the speech projection.
ad::Tensor subsample_frames(const ad::Tensor& features);

}  // namespace jst::model
