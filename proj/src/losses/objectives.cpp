#include "jst/losses/objectives.hpp"

#include "jst/error.hpp"

namespace jst::loss {

namespace {

void add_to(std::optional<double>& into, const std::optional<double>& value) {
  if (!value) return;
  into = into.value_or(0.0) + *value;
}

// Running scalar sum on the graph; starts undefined.
void accumulate(ad::Graph& g, ad::Tensor& total, const ad::Tensor& term, double weight) {
  if (weight == 0.0) return;
  auto scaled = ad::scale(g, term, weight);
  total = total.defined() ? ad::add(g, total, scaled) : scaled;
}

}  // namespace

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& other) {
  add_to(nll_st, other.nll_st);
  add_to(kd, other.kd);
  add_to(car, other.car);
  add_to(nll_mt, other.nll_mt);
  total += other.total;
  return *this;
}

std::vector<TokenId> decoder_targets(const data::TrainingSample& sample, Objective objective) {
  const auto& tokens = objective == Objective::asr ? sample.source : sample.target;
  std::vector<TokenId> out(tokens.begin(), tokens.end());
  out.push_back(vocab::eos);
  return out;
}

Normalizer normalizer_for(const data::Dataset& data, std::span<const data::Batch* const> batches,
                          Objective objective) {
  Normalizer n;
  for (const auto* b : batches) {
    for (auto i : b->indices) {
      const auto& s = data.at(i);
      n.target_tokens += static_cast<double>((objective == Objective::asr ? s.source : s.target).size() + 1);
      n.samples += 1.0;
    }
  }
  return n;
}

StepLoss batch_loss(const model::ForwardContext& ctx, const model::JointModel& model, const data::Dataset& data,
                    std::span<const std::size_t> members, Objective objective, const LossWeights& weights,
                    const Normalizer& norm, Diagnostics* diag) {
  weights.validate();
  if (norm.target_tokens <= 0.0 || norm.samples <= 0.0) throw ContractError("batch_loss: empty normalizer");
  auto& g = ctx.graph;
  const double eps = weights.label_smoothing;
  const bool joint = objective == Objective::joint;
  const bool use_kd = joint && weights.alpha < 1.0;
  const bool use_car = joint && weights.lambda > 0.0;
  if (joint && !(model.has_speech_path() && model.has_text_path())) {
    throw ContractError("joint objective requires both speech and text paths");
  }

  const double per_token = 1.0 / norm.target_tokens;
  const double per_sample = 1.0 / norm.samples;
  const double speech_weight = joint ? weights.alpha : 1.0;

  StepLoss out;
  double nll_st = 0.0, kd = 0.0, car = 0.0, nll_mt = 0.0;
  for (auto index : members) {
    const auto& sample = data.at(index);
    const auto targets = decoder_targets(sample, objective);
    switch (objective) {
      case Objective::asr:
      case Objective::st: {
        const auto trace = model.forward_speech(ctx, sample.feature_tensor(), targets);
        const auto term = nll_loss(g, trace.logits, targets, eps);
        nll_st += term.item();
        accumulate(g, out.total, term, per_token);
        break;
      }
      case Objective::mt: {
        const auto trace = model.forward_text(ctx, sample.source, targets);
        const auto term = nll_loss(g, trace.logits, targets, eps);
        nll_mt += term.item();
        accumulate(g, out.total, term, per_token);
        break;
      }
      case Objective::joint: {
        const auto speech = model.forward_speech(ctx, sample.feature_tensor(), targets);
        const auto text = model.forward_text(ctx, sample.source, targets);
        const auto st_term = nll_loss(g, speech.logits, targets, eps);
        const auto mt_term = nll_loss(g, text.logits, targets, eps);
        nll_st += st_term.item();
        nll_mt += mt_term.item();
        accumulate(g, out.total, st_term, speech_weight * per_token);
        if (use_kd) {
          const auto kd_term = kd_loss(g, speech.logits, text.logits);
          kd += kd_term.item();
          accumulate(g, out.total, kd_term, (1.0 - weights.alpha) * per_token);
        }
        if (use_car) {
          const auto car_term = car_loss(g, ad::transpose(g, speech.encoder_out), ad::transpose(g, text.encoder_out), diag);
          car += car_term.item();
          accumulate(g, out.total, car_term, weights.lambda * per_sample);
        }
        accumulate(g, out.total, mt_term, per_token);
        break;
      }
    }
  }
  if (!out.total.defined()) out.total = ad::Tensor::scalar(0.0);

  auto& b = out.breakdown;
  switch (objective) {
    case Objective::asr:
    case Objective::st: b.nll_st = nll_st * per_token; break;
    case Objective::mt: b.nll_mt = nll_mt * per_token; break;
    case Objective::joint:
      b.nll_st = nll_st * per_token;
      b.nll_mt = nll_mt * per_token;
      if (use_kd) b.kd = kd * per_token;
      if (use_car) b.car = car * per_sample;
      break;
  }
  b.total = out.total.item();
  return out;
}

StepLoss total_loss(const model::ForwardContext& ctx, const model::JointModel& model,
                    const data::TrainingSample& sample, const LossWeights& weights, Diagnostics* diag) {
  if (!sample.has_speech()) throw ContractError("total_loss needs a full (speech, text, target) triplet");
  data::Dataset one{sample};
  const Normalizer norm{static_cast<double>(sample.target.size() + 1), 1.0};
  const std::size_t member = 0;
  return batch_loss(ctx, model, one, std::span<const std::size_t>(&member, 1), Objective::joint, weights, norm, diag);
}

}  // namespace jst::loss
