#include "jst/eval/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "jst/error.hpp"

namespace jst::eval {

namespace {

bool proposable(std::size_t v) { return v != static_cast<std::size_t>(vocab::pad) && v != static_cast<std::size_t>(vocab::bos); }

struct Candidate {
  std::size_t parent;
  TokenId token;
  double log_prob;
  double score;
};

Hypothesis make_hypothesis(std::vector<TokenId> tokens, double log_prob, bool finished) {
  Hypothesis h;
  const std::size_t length = tokens.size() + (finished ? 1 : 0);
  h.tokens = std::move(tokens);
  h.log_prob = log_prob;
  h.score = length == 0 ? 0.0 : log_prob / static_cast<double>(length);
  h.finished = finished;
  return h;
}

bool better(const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; }

}  // namespace

ModelScorer::ModelScorer(const model::JointModel& model, const data::TrainingSample& input, data::Modality modality)
    : model_(model) {
  ad::Graph g(ad::Graph::Mode::inference);
  const model::ForwardContext ctx{g, false, nullptr, 0.0};
  if (modality == data::Modality::speech) {
    encoder_out_ = model.encode_speech(ctx, input.feature_tensor());
  } else {
    encoder_out_ = model.encode_text(ctx, input.source);
  }
  input_length_ = encoder_out_.rows();
}

std::size_t ModelScorer::vocab_size() const { return model_.config().tgt_vocab_size; }

std::vector<double> ModelScorer::next_log_probs(std::span<const TokenId> prefix) {
  std::vector<TokenId> targets(prefix.begin(), prefix.end());
  targets.push_back(vocab::eos);  // placeholder; only inputs bos + prefix are read
  ad::Graph g(ad::Graph::Mode::inference);
  const model::ForwardContext ctx{g, false, nullptr, 0.0};
  const auto trace = model_.decode(ctx, encoder_out_, targets);
  const auto lp = ad::log_softmax_rows(g, trace.logits);
  const auto row = lp.data().subspan(prefix.size() * lp.cols(), lp.cols());
  return {row.begin(), row.end()};
}

Hypothesis beam_search(StepScorer& scorer, std::size_t beam_size, std::size_t max_len) {
  if (beam_size < 1) throw ContractError("beam_size must be >= 1");
  if (max_len < 1) throw ContractError("max_len must be >= 1");
  const std::size_t vocab_size = scorer.vocab_size();

  struct Active {
    std::vector<TokenId> tokens;
    double log_prob;
  };
  std::vector<Active> active{{{}, 0.0}};
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < max_len && !active.empty() && finished.size() < beam_size; ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < active.size(); ++p) {
      const auto lp = scorer.next_log_probs(active[p].tokens);
      if (lp.size() != vocab_size) throw DimensionError("scorer returned a distribution of the wrong size");
      const double length = static_cast<double>(active[p].tokens.size() + 1);
      for (std::size_t v = 0; v < vocab_size; ++v) {
        if (!proposable(v) || lp[v] == -std::numeric_limits<double>::infinity()) continue;
        const double total = active[p].log_prob + lp[v];
        candidates.push_back({p, static_cast<TokenId>(v), total, total / length});
      }
    }
    const std::size_t keep = std::min(beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        return std::tie(b.score, a.parent, a.token) < std::tie(a.score, b.parent, b.token);
                      });
    std::vector<Active> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      if (c.token == vocab::eos) {
        finished.push_back(make_hypothesis(active[c.parent].tokens, c.log_prob, true));
      } else {
        auto tokens = active[c.parent].tokens;
        tokens.push_back(c.token);
        next.push_back({std::move(tokens), c.log_prob});
      }
    }
    active = std::move(next);
  }

  if (!finished.empty()) {
    std::stable_sort(finished.begin(), finished.end(), better);
    return finished.front();
  }
  std::vector<Hypothesis> open;
  for (auto& a : active) open.push_back(make_hypothesis(std::move(a.tokens), a.log_prob, false));
  if (open.empty()) return make_hypothesis({}, 0.0, false);
  std::stable_sort(open.begin(), open.end(), better);
  return open.front();
}

Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len) {
  if (max_len < 1) throw ContractError("max_len must be >= 1");
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = scorer.next_log_probs(tokens);
    std::size_t best = lp.size();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (!proposable(v)) continue;
      if (best == lp.size() || lp[v] > lp[best]) best = v;
    }
    if (best == lp.size()) break;
    log_prob += lp[best];
    if (static_cast<TokenId>(best) == vocab::eos) return make_hypothesis(std::move(tokens), log_prob, true);
    tokens.push_back(static_cast<TokenId>(best));
  }
  return make_hypothesis(std::move(tokens), log_prob, false);
}

std::size_t default_max_len(std::size_t input_length) { return 2 * input_length + 8; }

std::vector<std::vector<TokenId>> decode_corpus(const model::JointModel& model, const data::Dataset& data,
                                                data::Modality modality, std::size_t beam_size, std::size_t max_len,
                                                std::size_t workers) {
  std::vector<std::vector<TokenId>> out(data.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, data.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = next++; i < data.size(); i = next++) {
        ModelScorer scorer(model, data[i], modality);
        const auto len = max_len == 0 ? default_max_len(scorer.input_length()) : max_len;
        out[i] = beam_search(scorer, beam_size, len).tokens;
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                   const std::vector<std::vector<TokenId>>& references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw ContractError("corpus_bleu: no references");
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<TokenId>, int> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[std::vector<TokenId>(r.begin() + i, r.begin() + i + n)];
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        auto it = ref_counts.find(std::vector<TokenId>(h.begin() + i, h.begin() + i + n));
        if (it != ref_counts.end() && it->second > 0) {
          --it->second;
          matches[n - 1] += 1.0;
        }
        totals[n - 1] += 1.0;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_precision = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0.0) return 0.0;
    log_precision += std::log(matches[n] / totals[n]) / 4.0;
  }
  const double brevity = std::min(0.0, 1.0 - ref_len / hyp_len);
  return 100.0 * std::exp(log_precision + brevity);
}

double evaluate_bleu(const model::JointModel& model, const data::Dataset& data, std::size_t beam_size,
                     std::size_t workers) {
  const auto hyps = decode_corpus(model, data, data::Modality::speech, beam_size, 0, workers);
  std::vector<std::vector<TokenId>> refs;
  refs.reserve(data.size());
  for (const auto& s : data) refs.push_back(s.target);
  return corpus_bleu(hyps, refs);
}

void write_hypotheses(const std::filesystem::path& path, const std::vector<std::uint64_t>& ids,
                      const std::vector<std::vector<TokenId>>& tokens) {
  if (ids.size() != tokens.size()) throw ContractError("write_hypotheses: id/hypothesis count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << '\t';
    for (std::size_t j = 0; j < tokens[i].size(); ++j) out << (j ? " " : "") << tokens[i][j];
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::map<std::uint64_t, std::vector<TokenId>> read_hypotheses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::uint64_t, std::vector<TokenId>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + " line " + std::to_string(line_no) + ": no tab", 0);
    const auto id = std::stoull(line.substr(0, tab));
    std::istringstream rest(line.substr(tab + 1));
    std::vector<TokenId> tokens;
    long long v = 0;
    while (rest >> v) tokens.push_back(static_cast<TokenId>(v));
    if (!out.emplace(id, std::move(tokens)).second) {
      throw FormatError(path.string() + ": duplicate id " + std::to_string(id), 0);
    }
  }
  return out;
}

}  // namespace jst::eval
