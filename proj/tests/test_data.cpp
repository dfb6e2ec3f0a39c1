#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "jst/data/batching.hpp"
#include "jst/data/corpus.hpp"
#include "jst/error.hpp"

using namespace jst;
using namespace jst::data;

namespace {

CorpusSpec small_spec(std::uint64_t seed = 3) {
  CorpusSpec s;
  s.src_vocab_size = 14;
  s.tgt_vocab_size = 16;
  s.min_length = 2;
  s.max_length = 7;
  s.feature_dim = 4;
  s.train_size = 60;
  s.dev_size = 10;
  s.test_size = 10;
  s.text_only_size = 40;
  s.noise_stddev = 0.2;
  s.seed = seed;
  return s;
}

// Rule written out position by position: y[k] = L(x[k ^ 1]) unless k is the
// last index of an odd-length sentence.
std::vector<TokenId> rule_oracle(const Lexicon& lex, const std::vector<TokenId>& x) {
  std::vector<TokenId> y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t partner = (k % 2 == 0) ? k + 1 : k - 1;
    const std::size_t from = partner < x.size() ? partner : k;
    y[k] = lex.translation[static_cast<std::size_t>(x[from])];
  }
  return y;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("jst_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("translation rule examples") {
  Lexicon lex;
  lex.translation = {0, 1, 2, 3, 10, 11, 12, 13, 14};
  CHECK(translate(lex, std::vector<TokenId>{4, 5, 6, 7}) == std::vector<TokenId>{11, 10, 13, 12});
  CHECK(translate(lex, std::vector<TokenId>{4, 5, 8}) == std::vector<TokenId>{11, 10, 14});
  CHECK(translate(lex, std::vector<TokenId>{6}) == std::vector<TokenId>{12});
  CHECK(translate(lex, std::vector<TokenId>{}).empty());
  CHECK_THROWS_AS(translate(lex, std::vector<TokenId>{9}), VocabularyError);
}

TEST_CASE("lexicon is an injective map onto real target ids") {
  const auto spec = small_spec();
  const auto lex = Lexicon::build(spec);
  std::set<TokenId> image;
  for (std::size_t s = 0; s < spec.src_vocab_size; ++s) {
    if (s < static_cast<std::size_t>(vocab::first_real)) {
      CHECK(lex.translation[s] == static_cast<TokenId>(s));
    } else {
      CHECK(lex.translation[s] >= vocab::first_real);
      CHECK(lex.translation[s] < static_cast<TokenId>(spec.tgt_vocab_size));
      image.insert(lex.translation[s]);
    }
  }
  CHECK(image.size() == spec.src_vocab_size - vocab::first_real);
}

TEST_CASE("corpus targets follow the rule for every sample") {
  const auto spec = small_spec();
  const auto corpus = generate_corpus(spec);
  const auto lex = Lexicon::build(spec);
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test, &corpus.text_only}) {
    for (const auto& s : *split) {
      CHECK(s.target == rule_oracle(lex, s.source));
      CHECK(s.source.size() >= spec.min_length);
      CHECK(s.source.size() <= spec.max_length);
      for (auto t : s.source) {
        CHECK(t >= vocab::first_real);
        CHECK(t < static_cast<TokenId>(spec.src_vocab_size));
      }
    }
  }
}

TEST_CASE("corpus splits have the requested sizes and are disjoint") {
  const auto spec = small_spec();
  const auto corpus = generate_corpus(spec);
  CHECK(corpus.train.size() == 60);
  CHECK(corpus.dev.size() == 10);
  CHECK(corpus.test.size() == 10);
  CHECK(corpus.text_only.size() == 40);
  std::set<std::vector<TokenId>> sources;
  std::set<std::uint64_t> ids;
  std::size_t total = 0;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test, &corpus.text_only}) {
    for (const auto& s : *split) {
      sources.insert(s.source);
      ids.insert(s.id);
      ++total;
    }
  }
  CHECK(sources.size() == total);
  CHECK(ids.size() == total);
  for (const auto& s : corpus.train) CHECK(s.has_speech());
  for (const auto& s : corpus.text_only) {
    CHECK_FALSE(s.has_speech());
    CHECK(s.features.empty());
  }
}

TEST_CASE("corpus generation is a pure function of its CorpusSpec") {
  const auto a = generate_corpus(small_spec(5));
  const auto b = generate_corpus(small_spec(5));
  const auto c = generate_corpus(small_spec(6));
  CHECK(a.train == b.train);
  CHECK(a.text_only == b.text_only);
  CHECK_FALSE(a.train == c.train);
}

TEST_CASE("feature frame counts stay within the per-token bounds") {
  const auto spec = small_spec();
  for (const auto& s : generate_corpus(spec).train) {
    CHECK(s.frames >= spec.min_frames_per_token * s.source.size());
    CHECK(s.frames <= spec.max_frames_per_token * s.source.size());
    CHECK(s.features.size() == s.frames * spec.feature_dim);
  }
}

TEST_CASE("feature noise matches the configured deviation") {
  auto spec = small_spec();
  spec.noise_stddev = 0.5;
  spec.min_frames_per_token = 3;
  spec.max_frames_per_token = 3;
  const auto lex = Lexicon::build(spec);
  std::vector<TokenId> src(400);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = static_cast<TokenId>(vocab::first_real + i % 10);
  std::size_t frames = 0;
  const auto feats = synthesize_speech_features(src, spec, lex, 99, &frames);
  REQUIRE(frames == 3 * src.size());
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    const auto& proto = lex.prototypes[static_cast<std::size_t>(src[f / 3])];
    for (std::size_t j = 0; j < spec.feature_dim; ++j) {
      const double e = feats[f * spec.feature_dim + j] - proto[j];
      sum += e;
      sq += e * e;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  // n = 4800: the standard error of the mean is 0.5/sqrt(n) ~ 0.0072.
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sd - 0.5) < 0.02);

  spec.noise_stddev = 0.0;
  const auto clean = synthesize_speech_features(src, spec, lex, 99, &frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const auto& proto = lex.prototypes[static_cast<std::size_t>(src[f / 3])];
    for (std::size_t j = 0; j < spec.feature_dim; ++j) {
      CHECK(clean[f * spec.feature_dim + j] == static_cast<float>(proto[j]));
    }
  }
}

TEST_CASE("corpus spec validation") {
  auto s = small_spec();
  s.min_length = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.tgt_vocab_size = 10;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.noise_stddev = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.min_length = 1;
  s.max_length = 1;
  s.train_size = 50;
  CHECK_THROWS_AS(generate_corpus(s), ConfigError);
}

TEST_CASE("batches cover every sample once and respect the budget") {
  const auto corpus = generate_corpus(small_spec());
  for (auto cost : {BatchCost::frames, BatchCost::tokens}) {
    const std::size_t budget = cost == BatchCost::frames ? 120 : 30;
    const auto batches = make_batches(corpus.train, cost, budget, 4);
    std::vector<int> seen(corpus.train.size(), 0);
    std::size_t tokens = 0;
    for (const auto& b : batches) {
      std::size_t widest = 0;
      for (auto i : b.indices) {
        ++seen.at(i);
        widest = std::max(widest, sample_cost(corpus.train[i], cost));
        tokens += corpus.train[i].target.size() + 1;
      }
      CHECK(b.size() * widest <= budget);
      CHECK(b.size() >= 1);
    }
    for (int c : seen) CHECK(c == 1);
    std::size_t masked = 0;
    for (const auto& b : batches) masked += b.target_tokens();
    CHECK(masked == tokens);
  }
}

TEST_CASE("batch padding and masks") {
  Dataset data(2);
  data[0].source = {4, 5, 6};
  data[0].target = {7, 8};
  data[1].source = {9};
  data[1].target = {10, 11, 12};
  const auto batches = make_batches(data, BatchCost::tokens, 100, 1);
  REQUIRE(batches.size() == 1);
  const auto& b = batches[0];
  CHECK(b.max_source == 3);
  CHECK(b.max_target == 4);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto& s = data[b.indices[r]];
    for (std::size_t j = 0; j < b.max_target; ++j) {
      const TokenId expect = j < s.target.size() ? s.target[j] : (j == s.target.size() ? vocab::eos : vocab::pad);
      CHECK(b.target[r * b.max_target + j] == expect);
      CHECK(b.target_mask[r * b.max_target + j] == (j <= s.target.size() ? 1.0 : 0.0));
    }
    for (std::size_t j = 0; j < b.max_source; ++j) {
      CHECK(b.source[r * b.max_source + j] == (j < s.source.size() ? s.source[j] : vocab::pad));
    }
  }
  CHECK(b.target_tokens() == 7);
}

TEST_CASE("batching is deterministic in the seed and rejects oversize samples") {
  const auto corpus = generate_corpus(small_spec());
  auto ids = [](const std::vector<Batch>& bs) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& b : bs) out.push_back(b.indices);
    return out;
  };
  CHECK(ids(make_batches(corpus.train, BatchCost::frames, 120, 8)) ==
        ids(make_batches(corpus.train, BatchCost::frames, 120, 8)));
  CHECK(ids(make_batches(corpus.train, BatchCost::frames, 120, 8)) !=
        ids(make_batches(corpus.train, BatchCost::frames, 120, 9)));
  CHECK_THROWS_AS(make_batches(corpus.train, BatchCost::frames, 5, 1), ConfigError);
}

TEST_CASE("alternating schedule interleaves and cycles the shorter stream") {
  const std::vector<int> s{1, 2, 3};
  const std::vector<int> t{10};
  const auto out = alternate(s, t);
  REQUIRE(out.size() == 6);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].first == (i % 2 == 0 ? Task::speech : Task::text));
  }
  CHECK(out[0].second == 1);
  CHECK(out[2].second == 2);
  CHECK(out[4].second == 3);
  CHECK(out[5].second == 10);
  CHECK_THROWS_AS(alternate(s, std::vector<int>{}), ContractError);
}

TEST_CASE("manifest round trip is exact") {
  const auto corpus = generate_corpus(small_spec());
  const auto dir = scratch_dir("manifest");
  for (const auto* split : {&corpus.train, &corpus.text_only}) {
    write_manifest(*split, dir / "m.tsv", dir / "m.f32");
    CHECK(read_manifest(dir / "m.tsv", dir / "m.f32", 4) == *split);
  }
  write_manifest(corpus.train, dir / "m.tsv", dir / "m.f32");
  std::filesystem::resize_file(dir / "m.f32", std::filesystem::file_size(dir / "m.f32") - 4);
  CHECK_THROWS_AS(read_manifest(dir / "m.tsv", dir / "m.f32", 4), FormatError);
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "0\tX\t4 5\t6 7\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv", dir / "m.f32", 4), FormatError);
  CHECK_THROWS_AS(read_manifest(dir / "missing.tsv", dir / "m.f32", 4), IoError);
  std::filesystem::remove_all(dir);
}
