#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jst/autodiff/tensor.hpp"
#include "jst/vocab.hpp"

namespace jst::data {

enum class Modality { speech, text };

// One (X^s, x^t, y) triplet. Text-only samples carry no features.
// features holds frames x feature_dim floats, one frame per row.
struct TrainingSample {
  std::uint64_t id = 0;
  Modality modality = Modality::text;
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::size_t frames = 0;
  std::size_t feature_dim = 0;
  std::vector<float> features;

  bool has_speech() const noexcept { return modality == Modality::speech; }
  ad::Tensor feature_tensor() const;

  bool operator==(const TrainingSample&) const = default;
};

using Dataset = std::vector<TrainingSample>;

// Vocabulary sizes include the reserved ids (pad/bos/eos/unk).
struct CorpusSpec {
  std::size_t src_vocab_size = 40;
  std::size_t tgt_vocab_size = 44;
  std::size_t min_length = 5;
  std::size_t max_length = 20;
  std::size_t min_frames_per_token = 2;
  std::size_t max_frames_per_token = 4;
  double noise_stddev = 0.1;
  std::size_t feature_dim = 16;
  std::size_t train_size = 8000;
  std::size_t dev_size = 500;
  std::size_t test_size = 500;
  std::size_t text_only_size = 8000;
  std::uint64_t seed = 1;

  void validate() const;
};

// Frozen per-source-token prototypes and the source->target token map.
struct Lexicon {
  std::vector<TokenId> translation;          // indexed by source id; reserved ids map to themselves
  std::vector<std::vector<double>> prototypes;  // indexed by source id

  static Lexicon build(const CorpusSpec& spec);
};

struct Corpus {
  Dataset train, dev, test, text_only;
};

// Target rule: map every token through the lexicon, then swap each adjacent
// pair (0,1), (2,3), ...; an odd trailing token stays put.
std::vector<TokenId> translate(const Lexicon& lexicon, std::span<const TokenId> source);

// Each token becomes r in [min, max] copies of its prototype plus i.i.d.
// Gaussian noise; frames are returned row-major, *frames gets the count.
std::vector<float> synthesize_speech_features(std::span<const TokenId> source, const CorpusSpec& spec,
                                              const Lexicon& lexicon, std::uint64_t sample_seed,
                                              std::size_t* frames);

// Splits are disjoint by source sentence; the output is a pure function of spec.
Corpus generate_corpus(const CorpusSpec& spec);

// Manifest: one tab-separated record per line,
//   id  S|T  source ids  target ids  [feature byte offset  frame count]
// Features: raw little-endian f32, frames concatenated row-major.
void write_manifest(const Dataset& data, const std::filesystem::path& manifest,
                    const std::filesystem::path& features);
Dataset read_manifest(const std::filesystem::path& manifest, const std::filesystem::path& features,
                      std::size_t feature_dim);

}  // namespace jst::data
