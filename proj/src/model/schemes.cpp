#include "jst/model/schemes.hpp"

#include "jst/error.hpp"

namespace jst::model {

namespace {

const InitRule* match(const std::vector<InitRule>& rules, const std::string& name) {
  const InitRule* best = nullptr;
  for (const auto& rule : rules) {
    if (name.rfind(rule.target_prefix, 0) == 0 &&
        (best == nullptr || rule.target_prefix.size() > best->target_prefix.size())) {
      best = &rule;
    }
  }
  return best;
}

const char* source_name(PretrainedSource s) { return s == PretrainedSource::asr ? "ASR" : "MT"; }

}  // namespace

std::vector<InitRule> scheme_rules(Scheme scheme, const ModelConfig& config) {
  using S = PretrainedSource;
  const auto lower = config.n_speech_lower_layers;
  const auto upper = config.n_shared_encoder_layers;
  const Layout layout = layout_for(scheme);

  std::vector<InitRule> rules;
  rules.push_back({"speech_frontend.", S::asr, "speech_frontend."});
  for (std::size_t i = 0; i < lower; ++i) {
    const auto p = "speech_encoder." + std::to_string(i) + ".";
    rules.push_back({p, S::asr, p});
  }
  if (layout == Layout::joint_shared) {
    for (std::size_t i = 0; i < upper; ++i) {
      const auto target = "shared_encoder." + std::to_string(i) + ".";
      if (scheme == Scheme::jt_s_asr) {
        rules.push_back({target, S::asr, "speech_encoder." + std::to_string(lower + i) + "."});
      } else {
        rules.push_back({target, S::mt, "text_encoder." + std::to_string(i) + "."});
      }
    }
    if (scheme == Scheme::jt_s_asr) {
      rules.push_back({"shared_encoder.norm.", S::asr, "speech_encoder.norm."});
    } else {
      rules.push_back({"shared_encoder.norm.", S::mt, "text_encoder.norm."});
    }
  } else {
    for (std::size_t i = 0; i < upper; ++i) {
      const auto p = "speech_encoder." + std::to_string(lower + i) + ".";
      rules.push_back({p, S::asr, p});
    }
    rules.push_back({"speech_encoder.norm.", S::asr, "speech_encoder.norm."});
    if (layout == Layout::joint_separate) rules.push_back({"text_encoder.", S::mt, "text_encoder."});
  }
  if (layout != Layout::speech_only) rules.push_back({"text_embedding.", S::mt, "text_embedding."});
  rules.push_back({"decoder.", S::mt, "decoder."});
  rules.push_back({"output_projection.", S::mt, "output_projection."});
  return rules;
}

JointModel init_from_scheme(Scheme scheme, const ModelConfig& config, const trainer::Checkpoint* asr,
                            const trainer::Checkpoint* mt, std::uint64_t seed) {
  JointModel model(config, layout_for(scheme), seed);
  const auto rules = scheme_rules(scheme, config);
  for (auto& [name, tensor] : model.parameters()) {
    const InitRule* rule = match(rules, name);
    if (rule == nullptr) throw InitError("no initialization rule covers " + name);
    const trainer::Checkpoint* source = rule->source == PretrainedSource::asr ? asr : mt;
    const std::string source_tensor = rule->source_prefix + name.substr(rule->target_prefix.size());
    if (source == nullptr || !source->contains(source_tensor)) {
      throw InitError(std::string("scheme ") + to_string(scheme) + ": " + source_name(rule->source) +
                      " checkpoint lacks " + source_tensor + " required for " + name);
    }
    const auto& src = source->tensors.at(source_tensor);
    if (src.shape != tensor.shape()) {
      throw InitError(std::string("scheme ") + to_string(scheme) + ": shape mismatch for " + name + " from " +
                      source_tensor + ": " + ad::shape_string(src.shape) + " vs " +
                      ad::shape_string(tensor.shape()));
    }
    auto dst = tensor.mutable_data();
    std::copy(src.values.begin(), src.values.end(), dst.begin());
  }
  return model;
}

trainer::Checkpoint pretrained_reference(const std::vector<InitRule>& rules, const std::vector<std::string>& names,
                                         const trainer::Checkpoint* asr, const trainer::Checkpoint* mt) {
  trainer::Checkpoint out;
  for (const auto& name : names) {
    const InitRule* rule = match(rules, name);
    if (rule == nullptr) continue;
    const trainer::Checkpoint* source = rule->source == PretrainedSource::asr ? asr : mt;
    if (source == nullptr) continue;
    const std::string source_tensor = rule->source_prefix + name.substr(rule->target_prefix.size());
    auto it = source->tensors.find(source_tensor);
    if (it != source->tensors.end()) out.tensors.emplace(name, it->second);
  }
  return out;
}

std::vector<std::string> tied_parameters(const JointModel& model) {
  std::vector<std::string> out;
  for (const auto& [name, owner] : model.sharing_map()) {
    if (owner == ParamOwner::shared) out.push_back(name);
  }
  return out;
}

}  // namespace jst::model
