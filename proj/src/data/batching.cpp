#include "jst/data/batching.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "jst/rng.hpp"

namespace jst::data {

std::size_t sample_cost(const TrainingSample& sample, BatchCost cost) {
  if (cost == BatchCost::frames) return sample.frames;
  return std::max(sample.source.size(), sample.target.size() + 1);
}

std::size_t Batch::target_tokens() const {
  double total = 0.0;
  for (double m : target_mask) total += m;
  return static_cast<std::size_t>(total);
}

namespace {

Batch pad(const Dataset& data, std::vector<std::size_t> members) {
  Batch b;
  b.indices = std::move(members);
  for (auto i : b.indices) {
    b.max_source = std::max(b.max_source, data[i].source.size());
    b.max_target = std::max(b.max_target, data[i].target.size() + 1);
    b.frames.push_back(data[i].frames);
  }
  b.source.assign(b.size() * b.max_source, vocab::pad);
  b.source_mask.assign(b.size() * b.max_source, 0.0);
  b.target.assign(b.size() * b.max_target, vocab::pad);
  b.target_mask.assign(b.size() * b.max_target, 0.0);
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto& s = data[b.indices[r]];
    for (std::size_t j = 0; j < s.source.size(); ++j) {
      b.source[r * b.max_source + j] = s.source[j];
      b.source_mask[r * b.max_source + j] = 1.0;
    }
    for (std::size_t j = 0; j <= s.target.size(); ++j) {
      b.target[r * b.max_target + j] = j < s.target.size() ? s.target[j] : vocab::eos;
      b.target_mask[r * b.max_target + j] = 1.0;
    }
  }
  return b;
}

}  // namespace

std::vector<Batch> make_batches(const Dataset& data, BatchCost cost, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (auto i : order) {
    if (sample_cost(data[i], cost) > budget) {
      throw ConfigError("sample " + std::to_string(data[i].id) + " costs " +
                        std::to_string(sample_cost(data[i], cost)) + ", above the batch budget " +
                        std::to_string(budget));
    }
  }
  Rng rng(mix_seed(seed, 0xBA7C));
  rng.shuffle(order.begin(), order.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sample_cost(data[a], cost) < sample_cost(data[b], cost);
  });

  std::vector<Batch> batches;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (auto i : order) {
    const std::size_t c = sample_cost(data[i], cost);
    const std::size_t widest = std::max(longest, c);
    if (!current.empty() && (current.size() + 1) * widest > budget) {
      batches.push_back(pad(data, std::move(current)));
      current.clear();
      longest = 0;
    }
    current.push_back(i);
    longest = std::max(longest, c);
  }
  if (!current.empty()) batches.push_back(pad(data, std::move(current)));
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

}  // namespace jst::data
