#pragma once

#include <optional>
#include <span>

#include "jst/data/batching.hpp"
#include "jst/losses/losses.hpp"
#include "jst/model/joint_model.hpp"

namespace jst::loss {

// What a batch trains:
//   asr    speech -> source transcript (pretraining)
//   mt     text -> target (pretraining and text-only joint steps)
//   st     speech -> target, NLL only (single-task ST)
//   joint  alpha*NLL_st + (1-alpha)*KD + lambda*CAR + NLL_mt on paired triplets
enum class Objective { asr, mt, st, joint };

// Per-term values after normalization. Terms that are inactive for the
// objective (or carry zero weight) are left empty.
struct LossBreakdown {
  std::optional<double> nll_st;
  std::optional<double> kd;
  std::optional<double> car;
  std::optional<double> nll_mt;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& other);
};

// Token-sum terms (NLL, KD) are divided by target_tokens, per-sample terms
// (CAR) by samples. Fixing these over a whole accumulation window makes n
// accumulated batches equal one concatenated batch.
struct Normalizer {
  double target_tokens = 0.0;
  double samples = 0.0;
};

// Counts decoder targets (tokens plus eos) for the objective: the transcript
// for asr, the translation otherwise.
Normalizer normalizer_for(const data::Dataset& data, std::span<const data::Batch* const> batches, Objective objective);

struct StepLoss {
  ad::Tensor total;
  LossBreakdown breakdown;
};

StepLoss batch_loss(const model::ForwardContext& ctx, const model::JointModel& model, const data::Dataset& data,
                    std::span<const std::size_t> members, Objective objective, const LossWeights& weights,
                    const Normalizer& norm, Diagnostics* diag = nullptr);

// Combined loss on a single triplet, normalized by its own token count.
StepLoss total_loss(const model::ForwardContext& ctx, const model::JointModel& model,
                    const data::TrainingSample& sample, const LossWeights& weights, Diagnostics* diag = nullptr);

// Target sequence fed to the decoder for an objective: tokens plus eos.
std::vector<TokenId> decoder_targets(const data::TrainingSample& sample, Objective objective);

}  // namespace jst::loss
