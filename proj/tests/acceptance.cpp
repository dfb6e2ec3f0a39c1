// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr; the report is also written to <scratch dir>/report.txt.
// Usage: acceptance <desk config> <scratch dir>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "jst/analysis/analysis.hpp"
#include "jst/autodiff/grad_check.hpp"
#include "jst/cli/cli.hpp"
#include "jst/data/corpus.hpp"
#include "jst/eval/decode.hpp"
#include "jst/losses/losses.hpp"
#include "jst/losses/objectives.hpp"
#include "jst/model/joint_model.hpp"
#include "jst/model/schemes.hpp"
#include "jst/trainer/checkpoint.hpp"

using namespace jst;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = scale * rng.normal();
  return ad::Tensor(std::move(shape), std::move(v));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

model::ModelConfig small_model() {
  model::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.n_speech_lower_layers = 1;
  c.n_shared_encoder_layers = 2;
  c.n_decoder_layers = 2;
  c.src_vocab_size = 10;
  c.tgt_vocab_size = 12;
  c.speech_feature_dim = 3;
  c.dropout = 0.0;
  return c;
}

data::Dataset small_data(std::size_t n, std::uint64_t seed) {
  data::CorpusSpec spec;
  spec.src_vocab_size = 10;
  spec.tgt_vocab_size = 12;
  spec.min_length = 2;
  spec.max_length = 5;
  spec.feature_dim = 3;
  spec.train_size = n;
  spec.dev_size = 0;
  spec.test_size = 0;
  spec.text_only_size = 0;
  spec.seed = seed;
  return data::generate_corpus(spec).train;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// ---------------------------------------------------------------------------
// 1. Finite differences. Primitive losses use grad_check's elementwise
// relative error. The combined objective is probed through the speech-side
// parameters, the only ones whose influence reaches it without passing a
// stop-gradient; the error there is ||analytic - numeric|| / ||numeric|| over
// up to four sampled coordinates per tensor.
Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_nll = 0, worst_nll_ls = 0, worst_kd = 0, worst_car = 0, worst_total = 0;
  const int instances = 20;
  for (int i = 0; i < instances; ++i) {
    const std::size_t K = 3 + static_cast<std::size_t>(i % 4), V = 5 + static_cast<std::size_t>(i % 5);
    const auto logits = random_tensor({K, V}, rng, 1.5);
    const auto teacher = random_tensor({K, V}, rng, 1.5);
    std::vector<TokenId> y(K);
    for (auto& t : y) t = static_cast<TokenId>(rng.uniform_int(0, static_cast<std::int64_t>(V) - 1));
    worst_nll = std::max(worst_nll, ad::grad_check([&](ad::Graph& g, const ad::Tensor& x) { return loss::nll_loss(g, x, y, 0.0); }, logits, 1e-5));
    worst_nll_ls = std::max(worst_nll_ls, ad::grad_check([&](ad::Graph& g, const ad::Tensor& x) { return loss::nll_loss(g, x, y, 0.1); }, logits, 1e-5));
    worst_kd = std::max(worst_kd, ad::grad_check([&](ad::Graph& g, const ad::Tensor& x) { return loss::kd_loss(g, x, teacher); }, logits, 1e-5));
    const auto hs = random_tensor({4, 2 + static_cast<std::size_t>(i % 5)}, rng);
    const auto ht = random_tensor({4, 2 + static_cast<std::size_t>((i + 2) % 5)}, rng);
    worst_car = std::max(worst_car, ad::grad_check([&](ad::Graph& g, const ad::Tensor& x) { return loss::car_loss(g, x, ht); }, hs, 1e-5));
  }

  const auto cfg = small_model();
  const auto samples = small_data(instances, 7);
  const loss::LossWeights weights{0.8, 0.3, 0.1};
  for (int i = 0; i < instances; ++i) {
    const auto layout = i % 2 == 0 ? model::Layout::joint_shared : model::Layout::joint_separate;
    model::JointModel m(cfg, layout, 500 + static_cast<std::uint64_t>(i));
    const auto& sample = samples[static_cast<std::size_t>(i)];
    {
      ad::Graph g;
      auto out = loss::total_loss(model::ForwardContext{g, false, nullptr, 0.0}, m, sample, weights);
      g.backward(out.total);
    }
    auto value = [&] {
      ad::Graph g(ad::Graph::Mode::inference);
      return loss::total_loss(model::ForwardContext{g, false, nullptr, 0.0}, m, sample, weights).breakdown.total;
    };
    double diff2 = 0.0, num2 = 0.0;
    for (auto& [name, t] : m.parameters()) {
      if (!starts_with(name, "speech_")) continue;
      const std::vector<double> analytic(t.grad().begin(), t.grad().end());
      auto data = t.mutable_data();
      for (int probe = 0; probe < 4; ++probe) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
        const double saved = data[j];
        const double eps = 1e-5;
        data[j] = saved + eps;
        const double up = value();
        data[j] = saved - eps;
        const double down = value();
        data[j] = saved;
        const double numeric = (up - down) / (2 * eps);
        diff2 += (analytic[j] - numeric) * (analytic[j] - numeric);
        num2 += numeric * numeric;
      }
    }
    worst_total = std::max(worst_total, std::sqrt(diff2 / num2));
  }
  const double worst = std::max({worst_nll, worst_nll_ls, worst_kd, worst_car, worst_total});
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          "20 instances each; worst relative error nll " + fmt("%.1e", worst_nll) + ", nll(ls) " +
              fmt("%.1e", worst_nll_ls) + ", kd " + fmt("%.1e", worst_kd) + ", car " + fmt("%.1e", worst_car) +
              ", total " + fmt("%.1e", worst_total) + "; " + fmt("%.1f", secs) + " s"};
}

// 2. CAR gradient reaches only the speech side.
Verdict stop_gradient() {
  const auto cfg = small_model();
  const auto samples = small_data(10, 8);
  std::size_t text_tensors = 0, speech_tensors = 0, text_nonzero = 0, speech_zero = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    model::JointModel m(cfg, model::Layout::joint_separate, 900 + i);
    ad::Graph g;
    const model::ForwardContext ctx{g, false, nullptr, 0.0};
    const auto hs = m.encode_speech(ctx, samples[i].feature_tensor());
    const auto ht = m.encode_text(ctx, samples[i].source);
    auto car = loss::car_loss(g, ad::transpose(g, hs), ad::transpose(g, ht));
    g.backward(car);
    for (const auto& [name, t] : m.parameters()) {
      double mag = 0.0;
      bool all_zero = true;
      for (double v : t.grad()) {
        mag += std::abs(v);
        all_zero = all_zero && v == 0.0;
      }
      if (starts_with(name, "text_")) {
        ++text_tensors;
        text_nonzero += all_zero ? 0 : 1;
      } else if (starts_with(name, "speech_")) {
        ++speech_tensors;
        speech_zero += mag > 0.0 ? 0 : 1;
      }
    }
  }
  return {text_nonzero == 0 && speech_zero == 0 && text_tensors > 0,
          std::to_string(text_tensors) + " text-encoder tensor gradients, " + std::to_string(text_nonzero) +
              " not exactly zero; " + std::to_string(speech_tensors) + " speech-encoder tensor gradients, " +
              std::to_string(speech_zero) + " zero (10 random JT models)"};
}

// 3. Closed-form identities.
Verdict identities() {
  const auto cfg = small_model();
  const auto samples = small_data(20, 9);
  double worst_a = 0.0, worst_b = 0.0, worst_c = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    model::JointModel m(cfg, model::Layout::joint_shared, 40 + i);
    ad::Graph g(ad::Graph::Mode::inference);
    const model::ForwardContext ctx{g, false, nullptr, 0.0};
    const auto out = loss::total_loss(ctx, m, s, {1.0, 0.0, 0.1});
    std::vector<TokenId> y = s.target;
    y.push_back(vocab::eos);
    const double n = static_cast<double>(y.size());
    const double st = loss::nll_loss(g, m.forward_speech(ctx, s.feature_tensor(), y).logits, y, 0.1).item() / n;
    const double mt = loss::nll_loss(g, m.forward_text(ctx, s.source, y).logits, y, 0.1).item() / n;
    worst_a = std::max(worst_a, std::abs(out.breakdown.total - (st + mt)));

    Rng rng(60 + i);
    const auto student = random_tensor({y.size(), cfg.tgt_vocab_size}, rng, 2.0);
    auto onehot = ad::Tensor::filled({y.size(), cfg.tgt_vocab_size}, -1e4);
    for (std::size_t k = 0; k < y.size(); ++k) onehot.mutable_data()[k * cfg.tgt_vocab_size + static_cast<std::size_t>(y[k])] = 0.0;
    worst_b = std::max(worst_b, std::abs(loss::kd_loss(g, student, onehot).item() - loss::nll_loss(g, student, y, 0.0).item()));

    const auto h = random_tensor({8, 2 + i % 6}, rng);
    worst_c = std::max(worst_c, std::abs(loss::car_loss(g, h, h).item()));
  }
  return {worst_a <= 1e-10 && worst_b <= 1e-10 && worst_c <= 1e-10,
          "20 instances; max |total - (nll_s + nll_t)| " + fmt("%.1e", worst_a) + ", max |kd - nll| " +
              fmt("%.1e", worst_b) + ", max |car(H,H)| " + fmt("%.1e", worst_c)};
}

double two_pass_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// 4. Analysis tools on the trained desk ST model of the first seed.
Verdict analysis_tools(const cli::ExperimentConfig& cfg, const fs::path& seed_dir) {
  Rng rng(77);
  double worst_r = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + static_cast<std::size_t>(t) * 11;
    std::vector<double> x(n), y(n);
    const double k = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = 50.0 + rng.normal();
      y[i] = k * x[i] + rng.normal();
    }
    worst_r = std::max(worst_r, std::abs(analysis::pearson(x, y) - two_pass_pearson(x, y)));
  }

  const auto trained = trainer::load_checkpoint(seed_dir / "model_st.bmtc");
  const auto asr = trainer::load_checkpoint(seed_dir / "asr.bmtc");
  const auto mt = trainer::load_checkpoint(seed_dir / "mt.bmtc");
  std::vector<std::string> names;
  for (const auto& [n, _] : trained.tensors) names.push_back(n);
  const auto reference = model::pretrained_reference(model::scheme_rules(model::Scheme::st, cfg.model), names, &asr, &mt);
  bool endpoints = true;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < cfg.model.n_decoder_layers; ++l) {
    const analysis::ModuleSelector sel{"decoder." + std::to_string(l)};
    const auto at0 = analysis::interpolate_module(trained, reference, sel, 0.0);
    const auto at1 = analysis::interpolate_module(trained, reference, sel, 1.0);
    endpoints = endpoints && at0.tensors == trained.tensors;
    for (const auto& [name, t] : at1.tensors) {
      const auto& expect = sel.matches(name) ? reference.at(name) : trained.at(name);
      endpoints = endpoints && t == expect;
      ++checked;
    }
  }

  const auto corpus = data::generate_corpus(cfg.corpus);
  const data::Dataset dev(corpus.dev.begin(), corpus.dev.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(100, corpus.dev.size())));
  std::vector<analysis::ModuleSelector> sels;
  for (std::size_t l = 0; l < cfg.model.n_decoder_layers; ++l) sels.push_back({"decoder." + std::to_string(l)});
  const auto curves = analysis::criticality_sweep(cfg.model, trained, reference, sels, {0.0, 1.0}, dev, {cfg.beam, cfg.workers});
  bool zero_delta = true;
  std::string deltas;
  for (const auto& c : curves) {
    zero_delta = zero_delta && c.bleu_delta[0] == 0.0;
    deltas += " " + c.selector + " " + fmt("%+.2f", c.bleu_delta[1]);
  }
  return {worst_r <= 1e-12 && endpoints && zero_delta,
          "max |pearson - two-pass| " + fmt("%.1e", worst_r) + "; rho 0/1 endpoints exact over " +
              std::to_string(checked) + " tensors: " + (endpoints ? "yes" : "no") + "; delta at rho=0 exactly 0: " +
              (zero_delta ? "yes" : "no") + " (rho=1 deltas on trained ST:" + deltas + ")"};
}

// 7. Checkpoint, averaging, decoding and BLEU exactness.
Verdict infrastructure(const cli::ExperimentConfig& cfg, const fs::path& seed_dir, const fs::path& scratch) {
  const auto path = seed_dir / "model_jt-s-mt+car+kd.bmtc";
  const auto ckpt = trainer::load_checkpoint(path);
  trainer::save_checkpoint(ckpt, scratch / "resaved.bmtc");
  const bool round_trip = slurp(path) == slurp(scratch / "resaved.bmtc") && !slurp(path).empty();

  const std::vector<trainer::Checkpoint> copies(4, ckpt);
  const bool averaging = trainer::average_checkpoints(copies).tensors == ckpt.tensors;

  const auto model = model::JointModel::from_checkpoint(cfg.model, ckpt);
  const auto corpus = data::generate_corpus(cfg.corpus);
  const std::size_t n = std::min<std::size_t>(100, corpus.dev.size());
  std::size_t agree = 0;
  std::vector<std::vector<TokenId>> refs;
  for (std::size_t i = 0; i < n; ++i) {
    eval::ModelScorer a(model, corpus.dev[i], data::Modality::speech);
    eval::ModelScorer b(model, corpus.dev[i], data::Modality::speech);
    const auto max_len = eval::default_max_len(a.input_length());
    agree += eval::beam_search(a, 1, max_len).tokens == eval::greedy_decode(b, max_len).tokens ? 1 : 0;
    refs.push_back(corpus.dev[i].target);
  }
  const double self_bleu = eval::corpus_bleu(refs, refs);
  return {round_trip && averaging && agree == n && self_bleu == 100.0,
          std::string("save/load byte-identical: ") + (round_trip ? "yes" : "no") + "; average of 4 identical = identity: " +
              (averaging ? "yes" : "no") + "; beam 1 == greedy on " + std::to_string(agree) + "/" + std::to_string(n) +
              " dev samples; reference self-BLEU " + fmt("%.4f", self_bleu)};
}

// 8. Every subcommand twice with identical config and seed.
Verdict determinism(const fs::path& scratch) {
  const char* tiny = R"(src_vocab_size = 10
tgt_vocab_size = 12
min_length = 2
max_length = 4
feature_dim = 3
train_size = 24
dev_size = 6
test_size = 6
text_only_size = 24
d_model = 8
n_heads = 2
d_ffn = 12
n_speech_lower_layers = 1
n_shared_encoder_layers = 1
n_decoder_layers = 2
epochs = 2
pretrain_epochs = 2
accumulation = 2
speech_batch_frames = 40
text_batch_tokens = 20
warmup = 4
keep_last = 2
average_last = 2
beam = 2
analysis_samples = 6
ablation_seeds = 2
ratios = 0,0.5,1
)";
  std::ofstream(scratch / "tiny.cfg") << tiny;
  const auto cfg = (scratch / "tiny.cfg").string();
  auto run = [&](const std::string& round) {
    const auto r = scratch / round;
    fs::create_directories(r);
    auto call = [&](std::vector<std::string> args) {
      args.insert(args.begin(), "jst");
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
      if (code != 0) throw std::runtime_error(args[1] + " failed: " + err.str());
      // Output paths name the round directory; everything else must match.
      auto text = out.str();
      for (auto pos = text.find(r.string()); pos != std::string::npos; pos = text.find(r.string(), pos))
        text.replace(pos, r.string().size(), "<run>");
      std::ofstream(r / ("stdout_" + args[1] + ".txt"), std::ios::app) << text;
    };
    const auto d = (r / "data").string();
    const std::string seed = "11";
    call({"gen-data", "--config", cfg, "--seed", seed, "--out", d});
    call({"pretrain-asr", "--config", cfg, "--data", d, "--seed", seed, "--out", (r / "asr").string()});
    call({"pretrain-mt", "--config", cfg, "--data", d, "--seed", seed, "--out", (r / "mt").string()});
    const auto asr = (r / "asr" / "asr.bmtc").string(), mt = (r / "mt" / "mt.bmtc").string();
    call({"train", "--config", cfg, "--data", d, "--seed", seed, "--asr", asr, "--mt", mt, "--out", (r / "train").string()});
    const auto ckpts = (r / "train" / "checkpoints").string();
    call({"evaluate", "--config", cfg, "--data", d, "--seed", seed, "--checkpoints", ckpts, "--out", (r / "eval").string()});
    call({"average-checkpoints", "--config", cfg, "--seed", seed, "--checkpoints", ckpts, "--out", (r / "avg").string()});
    const auto last = (r / "train" / "checkpoints" / "epoch-0002.bmtc").string();
    call({"analyze-criticality", "--config", cfg, "--data", d, "--seed", seed, "--checkpoint", last, "--asr", asr,
          "--mt", mt, "--out", (r / "crit").string()});
    call({"analyze-correlation", "--config", cfg, "--data", d, "--seed", seed, "--checkpoint", last, "--out",
          (r / "corr").string()});
    call({"score", "--seed", seed, "--hyp", (r / "eval" / "hypotheses.txt").string(), "--ref",
          (r / "eval" / "references.txt").string()});
    call({"ablation", "--config", cfg, "--seed", seed, "--out", (r / "ablation").string()});
  };
  run("a");
  run("b");
  std::size_t files = 0, csvs = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(scratch / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), scratch / "a");
    ++files;
    csvs += e.path().extension() == ".csv" ? 1 : 0;
    if (slurp(e.path()) != slurp(scratch / "b" / rel)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  return {differing == 0 && csvs > 0,
          std::to_string(files) + " output files (" + std::to_string(csvs) + " CSVs) across all subcommands; " +
              std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: acceptance <desk config> <scratch dir>\n";
    return 2;
  }
  const fs::path config_path = argv[1];
  const fs::path scratch = argv[2];
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const auto start = std::chrono::steady_clock::now();
  auto log = [&](const std::string& s) { std::cerr << "[" << fmt("%7.1f", seconds_since(start)) << " s] " << s << std::endl; };

  std::vector<Verdict> verdicts(9);
  auto guarded = [&](int id, const std::function<Verdict()>& f) {
    log("criterion " + std::to_string(id));
    try {
      verdicts[static_cast<std::size_t>(id)] = f();
    } catch (const std::exception& e) {
      verdicts[static_cast<std::size_t>(id)] = {false, std::string("exception: ") + e.what()};
    }
  };

  guarded(1, gradient_suite);
  guarded(2, stop_gradient);
  guarded(3, identities);

  const auto cfg = cli::load_config(config_path);
  const auto ablation_dir = scratch / "ablation";
  cli::AblationResult ablation;
  double ablation_secs = 0.0;
  bool ablation_ok = false;
  std::string ablation_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    ablation = cli::run_ablation(cfg, ablation_dir, log);
    ablation_secs = seconds_since(t0);
    ablation_ok = true;
  } catch (const std::exception& e) {
    ablation_error = e.what();
  }

  if (!ablation_ok) {
    verdicts[5] = verdicts[6] = verdicts[4] = verdicts[7] = {false, "ablation failed: " + ablation_error};
  } else {
    guarded(5, [&] {
      const std::vector<std::string> ladder{"st", "jt", "jt-s-mt", "jt-s-mt+car", "jt-s-mt+car+kd"};
      std::vector<double> means;
      std::string detail = "mean test BLEU over " + std::to_string(cfg.ablation_seeds) + " seeds:";
      for (const auto& v : ladder) {
        means.push_back(ablation.mean_bleu(v));
        detail += " " + v + " " + fmt("%.2f", means.back());
      }
      bool ordered = true;
      for (std::size_t i = 1; i < means.size(); ++i) ordered = ordered && means[i - 1] <= means[i];
      const double gain = means.back() - means[1];
      detail += "; ordered: " + std::string(ordered ? "yes" : "no") + "; proposed - jt " + fmt("%+.2f", gain) +
                "; ladder " + fmt("%.0f", ablation_secs) + " s on 1 core";
      return Verdict{ordered && gain >= 0.5, detail};
    });
    guarded(6, [&] {
      std::size_t monotone = 0;
      double top_prop = 0.0, top_jt = 0.0;
      std::string per_seed;
      for (std::size_t s = 0; s < ablation.proposed_correlation.size(); ++s) {
        const auto& r = ablation.proposed_correlation[s].layer_r;
        bool ok = true;
        for (std::size_t l = 1; l < r.size(); ++l) ok = ok && r[l] <= r[l - 1];
        monotone += ok ? 1 : 0;
        top_prop += r.back();
        top_jt += ablation.jt_correlation[s].layer_r.back();
        per_seed += " [";
        for (std::size_t l = 0; l < r.size(); ++l) per_seed += (l ? " " : "") + fmt("%.3f", r[l]);
        per_seed += "]";
      }
      const double n = static_cast<double>(ablation.proposed_correlation.size());
      top_prop /= n;
      top_jt /= n;
      return Verdict{monotone * 3 >= 2 * ablation.proposed_correlation.size() && top_prop >= top_jt,
                     "proposed layer r per seed (bottom to top):" + per_seed + "; non-increasing in " +
                         std::to_string(monotone) + "/" + std::to_string(ablation.proposed_correlation.size()) +
                         " seeds; mean top-layer r proposed " + fmt("%.3f", top_prop) + " vs jt " + fmt("%.3f", top_jt)};
    });
    const auto first_seed = ablation_dir / ("seed-" + std::to_string(cfg.seed));
    guarded(4, [&] { return analysis_tools(cfg, first_seed); });
    guarded(7, [&] { return infrastructure(cfg, first_seed, scratch); });
  }
  guarded(8, [&] {
    const auto dir = scratch / "determinism";
    fs::create_directories(dir);
    return determinism(dir);
  });

  const char* names[] = {"",
                         "gradient suite",
                         "stop-gradient semantics",
                         "loss identities",
                         "analysis-tool correctness",
                         "desk-scale ablation ordering",
                         "directional analysis reproduction",
                         "infrastructure exactness",
                         "determinism"};
  std::ostringstream report;
  int failures = 0;
  for (int id = 1; id <= 8; ++id) {
    const auto& v = verdicts[static_cast<std::size_t>(id)];
    failures += v.pass ? 0 : 1;
    report << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << names[id] << "): " << v.detail << '\n';
  }
  if (ablation_ok && !ablation.st_criticality.empty()) {
    // Supplementary: reverting the top ST decoder layer vs the bottom one.
    double bottom = 0.0, top = 0.0;
    for (const auto& curves : ablation.st_criticality) {
      bottom += curves.front().bleu_delta.back();
      top += curves.back().bleu_delta.back();
    }
    const double n = static_cast<double>(ablation.st_criticality.size());
    report << "INFO ST criticality, mean BLEU delta when reverting to pretrained: bottom decoder layer "
              << fmt("%+.2f", bottom / n) << ", top decoder layer " << fmt("%+.2f", top / n) << '\n';
  }
  report << "total " << fmt("%.0f", seconds_since(start)) << " s; " << (8 - failures) << "/8 criteria passed\n";
  std::cout << report.str();
  std::ofstream(scratch / "report.txt") << report.str();
  return failures == 0 ? 0 : 1;
}
