#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "jst/data/corpus.hpp"
#include "jst/error.hpp"

namespace jst::data {

// Speech batches are budgeted in frames, text batches in tokens.
enum class BatchCost { frames, tokens };

std::size_t sample_cost(const TrainingSample& sample, BatchCost cost);

// A padded batch: rows of source/target ids padded with vocab::pad, and 0/1
// masks marking real positions. Targets carry the trailing eos.
struct Batch {
  std::vector<std::size_t> indices;  // into the dataset
  std::size_t max_source = 0;
  std::size_t max_target = 0;
  std::vector<TokenId> source;  // size() x max_source
  std::vector<double> source_mask;
  std::vector<TokenId> target;  // size() x max_target
  std::vector<double> target_mask;
  std::vector<std::size_t> frames;

  std::size_t size() const noexcept { return indices.size(); }
  std::size_t target_tokens() const;
};

// Length-bucketed batches whose padded cost (rows x longest row) stays within
// budget; membership and order are a function of (dataset, seed).
std::vector<Batch> make_batches(const Dataset& data, BatchCost cost, std::size_t budget, std::uint64_t seed);

enum class Task { speech, text };

// Strict alternation S, T, S, T, ... starting with speech; the shorter stream
// cycles until the longer one is exhausted.
template <typename T>
std::vector<std::pair<Task, T>> alternate(const std::vector<T>& speech, const std::vector<T>& text) {
  if (speech.empty() || text.empty()) throw ContractError("alternating scheduler needs two non-empty streams");
  const std::size_t rounds = std::max(speech.size(), text.size());
  std::vector<std::pair<Task, T>> out;
  out.reserve(2 * rounds);
  for (std::size_t i = 0; i < rounds; ++i) {
    out.emplace_back(Task::speech, speech[i % speech.size()]);
    out.emplace_back(Task::text, text[i % text.size()]);
  }
  return out;
}

}  // namespace jst::data
