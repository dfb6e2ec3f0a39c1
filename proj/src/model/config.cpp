#include "jst/model/config.hpp"

#include <string>

#include "jst/error.hpp"
#include "jst/vocab.hpp"

namespace jst::model {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(d_model >= 1 && n_heads >= 1 && d_ffn >= 1, "widths and head count must be >= 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_speech_lower_layers >= 1 && n_shared_encoder_layers >= 1 && n_decoder_layers >= 1,
          "layer counts must be >= 1");
  require(src_vocab_size >= static_cast<std::size_t>(vocab::reserved),
          "src_vocab_size must cover the reserved ids");
  require(tgt_vocab_size >= static_cast<std::size_t>(vocab::reserved),
          "tgt_vocab_size must be >= 4 (pad/bos/eos/unk)");
  require(speech_feature_dim >= 1, "speech_feature_dim must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_positions >= 1, "max_positions must be >= 1");
}

}  // namespace jst::model
