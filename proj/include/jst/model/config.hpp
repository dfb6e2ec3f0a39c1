#pragma once

#include <cstddef>

namespace jst::model {

// Architecture hyperparameters. The text encoder is the top
// n_shared_encoder_layers of the speech encoder when the scheme shares them.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t n_speech_lower_layers = 2;
  std::size_t n_shared_encoder_layers = 2;
  std::size_t n_decoder_layers = 2;
  std::size_t src_vocab_size = 40;
  std::size_t tgt_vocab_size = 44;
  std::size_t speech_feature_dim = 16;
  double dropout = 0.1;
  std::size_t max_positions = 256;

  // Throws ConfigError on the first violated invariant.
  void validate() const;
};

}  // namespace jst::model
