#include "jst/data/corpus.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "jst/error.hpp"
#include "jst/rng.hpp"

namespace jst::data {

namespace {

constexpr std::uint64_t lexicon_stream = 0x1E1C;
constexpr std::uint64_t sentence_stream = 0x5E47;

std::string join_ids(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<TokenId> parse_ids(const std::string& field, std::size_t line_no) {
  std::vector<TokenId> out;
  std::istringstream in(field);
  long long v = 0;
  while (in >> v) out.push_back(static_cast<TokenId>(v));
  if (!in.eof()) throw FormatError("manifest line " + std::to_string(line_no) + ": bad token list", 0);
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

ad::Tensor TrainingSample::feature_tensor() const {
  if (!has_speech()) throw ContractError("sample " + std::to_string(id) + " has no speech features");
  return ad::Tensor({frames, feature_dim}, std::vector<double>(features.begin(), features.end()));
}

void CorpusSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("corpus spec: " + what);
  };
  require(src_vocab_size >= 8 && tgt_vocab_size >= 8, "vocabulary sizes must be >= 8");
  require(1 <= min_length && min_length <= max_length, "need 1 <= min_length <= max_length");
  require(1 <= min_frames_per_token && min_frames_per_token <= max_frames_per_token,
          "need 1 <= min_frames_per_token <= max_frames_per_token");
  require(noise_stddev >= 0.0, "noise_stddev must be >= 0");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(tgt_vocab_size >= src_vocab_size,
          "target vocabulary too small for an injective map of " + std::to_string(src_vocab_size - vocab::reserved) +
              " source symbols");
}

Lexicon Lexicon::build(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, lexicon_stream));
  Lexicon lex;
  std::vector<TokenId> targets;
  for (auto t = static_cast<TokenId>(vocab::first_real); t < static_cast<TokenId>(spec.tgt_vocab_size); ++t) {
    targets.push_back(t);
  }
  rng.shuffle(targets.begin(), targets.end());
  lex.translation.resize(spec.src_vocab_size);
  lex.prototypes.resize(spec.src_vocab_size);
  for (std::size_t s = 0; s < spec.src_vocab_size; ++s) {
    if (s < static_cast<std::size_t>(vocab::first_real)) {
      lex.translation[s] = static_cast<TokenId>(s);
    } else {
      lex.translation[s] = targets[s - vocab::first_real];
    }
    lex.prototypes[s].resize(spec.feature_dim);
    for (auto& v : lex.prototypes[s]) v = rng.normal();
  }
  return lex;
}

std::vector<TokenId> translate(const Lexicon& lexicon, std::span<const TokenId> source) {
  std::vector<TokenId> out;
  out.reserve(source.size());
  for (TokenId t : source) {
    if (t < 0 || static_cast<std::size_t>(t) >= lexicon.translation.size()) {
      throw VocabularyError("source id " + std::to_string(t) + " outside the lexicon");
    }
    out.push_back(lexicon.translation[static_cast<std::size_t>(t)]);
  }
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  return out;
}

std::vector<float> synthesize_speech_features(std::span<const TokenId> source, const CorpusSpec& spec,
                                              const Lexicon& lexicon, std::uint64_t sample_seed,
                                              std::size_t* frames) {
  Rng rng(sample_seed);
  std::vector<float> out;
  std::size_t count = 0;
  for (TokenId t : source) {
    const auto& proto = lexicon.prototypes.at(static_cast<std::size_t>(t));
    const auto repeats = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.min_frames_per_token), static_cast<std::int64_t>(spec.max_frames_per_token)));
    for (std::size_t r = 0; r < repeats; ++r) {
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        const double noise = spec.noise_stddev > 0.0 ? spec.noise_stddev * rng.normal() : 0.0;
        out.push_back(static_cast<float>(proto[j] + noise));
      }
      ++count;
    }
  }
  if (frames != nullptr) *frames = count;
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Lexicon lexicon = Lexicon::build(spec);
  Rng rng(mix_seed(spec.seed, sentence_stream));
  std::set<std::vector<TokenId>> seen;
  std::uint64_t next_id = 0;
  const auto real_symbols = static_cast<std::int64_t>(spec.src_vocab_size) - vocab::reserved;

  auto fill = [&](Dataset& split, std::size_t count, bool with_speech) {
    split.reserve(count);
    std::size_t attempts = 0;
    while (split.size() < count) {
      if (++attempts > 100 * count + 1000) {
        throw ConfigError("corpus spec admits too few distinct sentences for the requested split sizes");
      }
      const auto len = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(spec.min_length), static_cast<std::int64_t>(spec.max_length)));
      std::vector<TokenId> src(len);
      for (auto& t : src) t = static_cast<TokenId>(vocab::first_real + rng.uniform_int(0, real_symbols - 1));
      if (!seen.insert(src).second) continue;
      TrainingSample s;
      s.id = next_id++;
      s.target = translate(lexicon, src);
      if (with_speech) {
        s.modality = Modality::speech;
        s.feature_dim = spec.feature_dim;
        s.features = synthesize_speech_features(src, spec, lexicon, mix_seed(spec.seed, s.id), &s.frames);
      }
      s.source = std::move(src);
      split.push_back(std::move(s));
    }
  };

  Corpus corpus;
  fill(corpus.train, spec.train_size, true);
  fill(corpus.dev, spec.dev_size, true);
  fill(corpus.test, spec.test_size, true);
  fill(corpus.text_only, spec.text_only_size, false);
  return corpus;
}

void write_manifest(const Dataset& data, const std::filesystem::path& manifest,
                    const std::filesystem::path& features) {
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest.string() + " for writing");
  std::ofstream feat(features, std::ios::binary | std::ios::trunc);
  if (!feat) throw IoError("cannot open " + features.string() + " for writing");
  std::uint64_t offset = 0;
  for (const auto& s : data) {
    out << s.id << '\t' << (s.has_speech() ? 'S' : 'T') << '\t' << join_ids(s.source) << '\t' << join_ids(s.target);
    if (s.has_speech()) {
      out << '\t' << offset << '\t' << s.frames;
      for (float v : s.features) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                               static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
        feat.write(bytes, 4);
      }
      offset += s.features.size() * 4;
    }
    out << '\n';
  }
  if (!out || !feat) throw IoError("failed writing manifest " + manifest.string());
}

Dataset read_manifest(const std::filesystem::path& manifest, const std::filesystem::path& features,
                      std::size_t feature_dim) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::ifstream feat(features, std::ios::binary);
  std::vector<char> blob;
  if (feat) blob.assign(std::istreambuf_iterator<char>(feat), std::istreambuf_iterator<char>());

  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4 && fields.size() != 6) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 4 or 6 fields", 0);
    }
    TrainingSample s;
    s.id = std::stoull(fields[0]);
    s.source = parse_ids(fields[2], line_no);
    s.target = parse_ids(fields[3], line_no);
    if (fields[1] == "S") {
      if (fields.size() != 6) throw FormatError("manifest line " + std::to_string(line_no) + ": speech record lacks features", 0);
      s.modality = Modality::speech;
      const std::size_t offset = std::stoull(fields[4]);
      s.frames = std::stoull(fields[5]);
      s.feature_dim = feature_dim;
      const std::size_t n = s.frames * feature_dim;
      if (offset + n * 4 > blob.size()) throw FormatError("feature file too short for sample " + fields[0], offset);
      s.features.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) {
          bits = (bits << 8) | static_cast<unsigned char>(blob[offset + i * 4 + static_cast<std::size_t>(b)]);
        }
        s.features[i] = std::bit_cast<float>(bits);
      }
    } else if (fields[1] != "T") {
      throw FormatError("manifest line " + std::to_string(line_no) + ": unknown modality " + fields[1], 0);
    }
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace jst::data
