#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "jst/data/corpus.hpp"
#include "jst/model/joint_model.hpp"

namespace jst::eval {

// tokens excludes the terminating eos; finished records whether one was
// emitted. score = log_prob / length, where length counts the eos.
struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  double score = 0.0;
  bool finished = false;
};

// Next-token log-probabilities given the tokens emitted so far.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<double> next_log_probs(std::span<const TokenId> prefix) = 0;
};

// Decoder of a trained model over a fixed encoder output, eval mode.
class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const model::JointModel& model, const data::TrainingSample& input, data::Modality modality);
  std::size_t vocab_size() const override;
  std::vector<double> next_log_probs(std::span<const TokenId> prefix) override;
  std::size_t input_length() const noexcept { return input_length_; }

 private:
  const model::JointModel& model_;
  ad::Tensor encoder_out_;
  std::size_t input_length_ = 0;
};

// pad and bos are never proposed. Each step keeps the beam_size best
// extensions by score, ties going to the earlier parent then the lower id;
// extensions ending in eos retire to the finished pool. Stops once
// beam_size hypotheses have finished or after max_len steps.
Hypothesis beam_search(StepScorer& scorer, std::size_t beam_size, std::size_t max_len);
Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len);

std::size_t default_max_len(std::size_t input_length);

// Decodes every sample (speech input when modality is speech). Runs on up to
// `workers` threads; 0 means hardware concurrency. max_len 0 uses the default.
std::vector<std::vector<TokenId>> decode_corpus(const model::JointModel& model, const data::Dataset& data,
                                                data::Modality modality, std::size_t beam_size,
                                                std::size_t max_len = 0, std::size_t workers = 0);

double corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                   const std::vector<std::vector<TokenId>>& references);

// Translations of the test split, BLEU against its targets.
double evaluate_bleu(const model::JointModel& model, const data::Dataset& data, std::size_t beam_size,
                     std::size_t workers = 0);

// One line per sample: id, tab, space-separated token ids.
void write_hypotheses(const std::filesystem::path& path, const std::vector<std::uint64_t>& ids,
                      const std::vector<std::vector<TokenId>>& tokens);
std::map<std::uint64_t, std::vector<TokenId>> read_hypotheses(const std::filesystem::path& path);

}  // namespace jst::eval
