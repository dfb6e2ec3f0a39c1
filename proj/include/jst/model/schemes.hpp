#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jst/model/joint_model.hpp"

namespace jst::model {

enum class PretrainedSource { asr, mt };

// Tensors named target_prefix + rest are initialized from the pretrained
// source tensor source_prefix + rest.
struct InitRule {
  std::string target_prefix;
  PretrainedSource source;
  std::string source_prefix;
};

// Name-prefix rules of an initialization scheme:
//   ST        speech encoder <- ASR, decoder <- MT, no text encoder
//   JT        speech encoder <- ASR, text encoder <- MT, nothing tied
//   JT-S-ASR  tied upper encoder <- ASR upper speech layers
//   JT-S-MT,
//   JT-Proposed  tied upper encoder <- MT text encoder
// The decoder and output projection always come from MT.
std::vector<InitRule> scheme_rules(Scheme scheme, const ModelConfig& config);

// Builds the scheme's model and copies every tensor per scheme_rules. A null
// checkpoint is treated as empty. Throws InitError naming the first missing
// or mis-shaped tensor.
JointModel init_from_scheme(Scheme scheme, const ModelConfig& config, const trainer::Checkpoint* asr,
                            const trainer::Checkpoint* mt, std::uint64_t seed = 0);

// Pretrained counterparts of every tensor in names, renamed into the target
// model's namespace; unmatched names are skipped.
trainer::Checkpoint pretrained_reference(const std::vector<InitRule>& rules, const std::vector<std::string>& names,
                                         const trainer::Checkpoint* asr, const trainer::Checkpoint* mt);

// Names of tensors used by both the speech and the text path: the decoder,
// the output projection and, for tied layouts, the upper encoder.
std::vector<std::string> tied_parameters(const JointModel& model);

}  // namespace jst::model
