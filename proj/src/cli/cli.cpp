#include "jst/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "jst/eval/decode.hpp"
#include "jst/model/schemes.hpp"

namespace jst::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string render_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected a number, got '" + v + "'");
  }
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw UsageError(key + ": empty list");
  return out;
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field size_field(T ExperimentConfig::*section, std::size_t T::*member) {
  return {[=](const ExperimentConfig& c) { return std::to_string(c.*section.*member); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*section.*member = parse_size(k, v); }};
}

template <typename T>
Field double_field(T ExperimentConfig::*section, double T::*member) {
  return {[=](const ExperimentConfig& c) { return render_double(c.*section.*member); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*section.*member = parse_double(k, v); }};
}

Field top_size(std::size_t ExperimentConfig::*member) {
  return {[=](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*member = parse_size(k, v); }};
}

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  using data::CorpusSpec;
  using model::ModelConfig;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["seed"] = {[](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); }};
    t["src_vocab_size"] = size_field(&C::corpus, &CorpusSpec::src_vocab_size);
    t["tgt_vocab_size"] = size_field(&C::corpus, &CorpusSpec::tgt_vocab_size);
    t["min_length"] = size_field(&C::corpus, &CorpusSpec::min_length);
    t["max_length"] = size_field(&C::corpus, &CorpusSpec::max_length);
    t["min_frames_per_token"] = size_field(&C::corpus, &CorpusSpec::min_frames_per_token);
    t["max_frames_per_token"] = size_field(&C::corpus, &CorpusSpec::max_frames_per_token);
    t["noise_stddev"] = double_field(&C::corpus, &CorpusSpec::noise_stddev);
    t["feature_dim"] = size_field(&C::corpus, &CorpusSpec::feature_dim);
    t["train_size"] = size_field(&C::corpus, &CorpusSpec::train_size);
    t["dev_size"] = size_field(&C::corpus, &CorpusSpec::dev_size);
    t["test_size"] = size_field(&C::corpus, &CorpusSpec::test_size);
    t["text_only_size"] = size_field(&C::corpus, &CorpusSpec::text_only_size);
    t["d_model"] = size_field(&C::model, &ModelConfig::d_model);
    t["n_heads"] = size_field(&C::model, &ModelConfig::n_heads);
    t["d_ffn"] = size_field(&C::model, &ModelConfig::d_ffn);
    t["n_speech_lower_layers"] = size_field(&C::model, &ModelConfig::n_speech_lower_layers);
    t["n_shared_encoder_layers"] = size_field(&C::model, &ModelConfig::n_shared_encoder_layers);
    t["n_decoder_layers"] = size_field(&C::model, &ModelConfig::n_decoder_layers);
    t["dropout"] = double_field(&C::model, &ModelConfig::dropout);
    t["max_positions"] = size_field(&C::model, &ModelConfig::max_positions);
    t["scheme"] = {[](const C& c) { return model::to_string(c.train.scheme); },
                   [](C& c, const std::string& k, const std::string& v) {
                     try {
                       c.train.scheme = model::parse_scheme(v);
                     } catch (const Error&) {
                       throw UsageError(k + ": unknown scheme '" + v + "'");
                     }
                   }};
    t["alpha"] = {[](const C& c) { return render_double(c.train.weights.alpha); },
                  [](C& c, const std::string& k, const std::string& v) { c.train.weights.alpha = parse_double(k, v); }};
    t["lambda"] = {[](const C& c) { return render_double(c.train.weights.lambda); },
                   [](C& c, const std::string& k, const std::string& v) { c.train.weights.lambda = parse_double(k, v); }};
    t["label_smoothing"] = {
        [](const C& c) { return render_double(c.train.weights.label_smoothing); },
        [](C& c, const std::string& k, const std::string& v) { c.train.weights.label_smoothing = parse_double(k, v); }};
    t["lr"] = {[](const C& c) { return render_double(c.train.adam.lr); },
               [](C& c, const std::string& k, const std::string& v) { c.train.adam.lr = parse_double(k, v); }};
    t["beta1"] = {[](const C& c) { return render_double(c.train.adam.beta1); },
                  [](C& c, const std::string& k, const std::string& v) { c.train.adam.beta1 = parse_double(k, v); }};
    t["beta2"] = {[](const C& c) { return render_double(c.train.adam.beta2); },
                  [](C& c, const std::string& k, const std::string& v) { c.train.adam.beta2 = parse_double(k, v); }};
    t["adam_eps"] = {[](const C& c) { return render_double(c.train.adam.eps); },
                     [](C& c, const std::string& k, const std::string& v) { c.train.adam.eps = parse_double(k, v); }};
    t["warmup"] = {[](const C& c) { return std::to_string(c.train.adam.warmup); },
                   [](C& c, const std::string& k, const std::string& v) { c.train.adam.warmup = parse_size(k, v); }};
    t["epochs"] = size_field(&C::train, &trainer::TrainConfig::epochs);
    t["accumulation"] = size_field(&C::train, &trainer::TrainConfig::accumulation);
    t["keep_last"] = size_field(&C::train, &trainer::TrainConfig::keep_last);
    t["speech_batch_frames"] = size_field(&C::train, &trainer::TrainConfig::speech_batch_frames);
    t["text_batch_tokens"] = size_field(&C::train, &trainer::TrainConfig::text_batch_tokens);
    t["dev_limit"] = size_field(&C::train, &trainer::TrainConfig::dev_limit);
    t["pretrain_epochs"] = top_size(&C::pretrain_epochs);
    t["joint_text_pool"] = top_size(&C::joint_text_pool);
    t["beam"] = top_size(&C::beam);
    t["average_last"] = top_size(&C::average_last);
    t["workers"] = top_size(&C::workers);
    t["analysis_samples"] = top_size(&C::analysis_samples);
    t["ablation_seeds"] = top_size(&C::ablation_seeds);
    t["ratios"] = {[](const C& c) {
                     std::string out;
                     for (std::size_t i = 0; i < c.ratios.size(); ++i) out += (i ? "," : "") + render_double(c.ratios[i]);
                     return out;
                   },
                   [](C& c, const std::string& k, const std::string& v) { c.ratios = parse_list(k, v); }};
    return t;
  }();
  return table;
}

const std::vector<std::string> corpus_keys = {"src_vocab_size",       "tgt_vocab_size", "min_length",  "max_length",
                                              "min_frames_per_token", "max_frames_per_token", "noise_stddev",
                                              "feature_dim",          "train_size",     "dev_size",    "test_size",
                                              "text_only_size"};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("failed writing " + path.string());
}

void fresh_dir(const fs::path& dir) {
  if (fs::exists(dir)) throw IoError("refusing to overwrite existing run directory " + dir.string());
  fs::create_directories(dir);
}

// Split manifests live as <dir>/<split>.tsv with features in <split>.f32.
const char* const split_names[] = {"train", "dev", "test", "text_only"};

void save_corpus(const data::Corpus& corpus, const fs::path& dir) {
  const data::Dataset* splits[] = {&corpus.train, &corpus.dev, &corpus.test, &corpus.text_only};
  for (int i = 0; i < 4; ++i) {
    data::write_manifest(*splits[i], dir / (std::string(split_names[i]) + ".tsv"),
                         dir / (std::string(split_names[i]) + ".f32"));
  }
}

data::Dataset load_split(const fs::path& dir, const std::string& split, const ExperimentConfig& cfg) {
  const auto manifest = dir / (split + ".tsv");
  if (!fs::exists(manifest)) throw IoError("missing split manifest " + manifest.string());
  return data::read_manifest(manifest, dir / (split + ".f32"), cfg.corpus.feature_dim);
}

data::Dataset head(const data::Dataset& d, std::size_t n) {
  if (n == 0 || d.size() <= n) return d;
  return data::Dataset(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
}

// Decoder layer selectors, bottom and top.
std::vector<analysis::ModuleSelector> decoder_extremes(const model::ModelConfig& m) {
  return {{"decoder.0"}, {"decoder." + std::to_string(m.n_decoder_layers - 1)}};
}

trainer::Checkpoint average_tail(const std::vector<trainer::Checkpoint>& ckpts, std::size_t k) {
  if (ckpts.empty()) throw ContractError("no checkpoints to average");
  const std::size_t n = std::min(std::max<std::size_t>(k, 1), ckpts.size());
  std::vector<trainer::Checkpoint> tail(ckpts.end() - static_cast<std::ptrdiff_t>(n), ckpts.end());
  return trainer::average_checkpoints(tail);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Variant {
  std::string name;
  model::Scheme scheme;
  bool kd;
  bool car;
};

}  // namespace

void ExperimentConfig::sync() {
  corpus.seed = seed;
  train.seed = seed;
  model.src_vocab_size = corpus.src_vocab_size;
  model.tgt_vocab_size = corpus.tgt_vocab_size;
  model.speech_feature_dim = corpus.feature_dim;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw UsageError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
  }
  return out;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw UsageError("unknown config key '" + key + "'");
  it->second.set(config, key, value);
}

void apply_settings(ExperimentConfig& config, const std::map<std::string, std::string>& settings) {
  for (const auto& [k, v] : settings) apply_setting(config, k, v);
}

std::string render_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(config) + "\n";
  return out;
}

ExperimentConfig load_config(const fs::path& path) {
  ExperimentConfig cfg;
  apply_settings(cfg, parse_config_text(read_text(path)));
  cfg.sync();
  return cfg;
}

double AblationResult::mean_bleu(const std::string& variant) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (r.variant == variant) sum += r.bleu, ++n;
  }
  if (n == 0) throw ContractError("no ablation runs for variant " + variant);
  return sum / static_cast<double>(n);
}

AblationResult run_ablation(const ExperimentConfig& base, const fs::path& out_dir,
                            const trainer::ProgressFn& progress) {
  if (base.ablation_seeds < 1) throw ConfigError("ablation_seeds must be >= 1");
  const std::vector<Variant> variants = {{"st", model::Scheme::st, false, false},
                                         {"jt", model::Scheme::jt, false, false},
                                         {"jt-s-mt", model::Scheme::jt_s_mt, false, false},
                                         {"jt-s-mt+car", model::Scheme::jt_s_mt, false, true},
                                         {"jt-s-mt+car+kd", model::Scheme::jt_proposed, true, true}};
  AblationResult result;
  for (const auto& v : variants) result.variants.push_back(v.name);
  fs::create_directories(out_dir);

  for (std::size_t s = 0; s < base.ablation_seeds; ++s) {
    ExperimentConfig cfg = base;
    cfg.seed = base.seed + s;
    cfg.sync();
    const auto seed_dir = out_dir / ("seed-" + std::to_string(cfg.seed));
    fs::create_directories(seed_dir);
    write_text(seed_dir / "resolved.cfg", render_config(cfg));

    const auto corpus = data::generate_corpus(cfg.corpus);
    const auto dev = head(corpus.dev, cfg.analysis_samples);
    auto pre = cfg.train;
    pre.epochs = cfg.pretrain_epochs;
    auto asr = trainer::pretrain(trainer::PretrainTask::asr, cfg.model, pre, corpus.train, corpus.dev, progress);
    asr.log.write_csv(seed_dir / "metrics_asr.csv");
    trainer::save_checkpoint(asr.checkpoint, seed_dir / "asr.bmtc");
    auto mt = trainer::pretrain(trainer::PretrainTask::mt, cfg.model, pre, corpus.text_only, corpus.dev, progress);
    mt.log.write_csv(seed_dir / "metrics_mt.csv");
    trainer::save_checkpoint(mt.checkpoint, seed_dir / "mt.bmtc");
    const auto text_pool = head(corpus.text_only, cfg.joint_text_pool);

    for (const auto& v : variants) {
      auto tc = cfg.train;
      tc.scheme = v.scheme;
      tc.weights.alpha = v.kd ? cfg.train.weights.alpha : 1.0;
      tc.weights.lambda = v.car ? cfg.train.weights.lambda : 0.0;
      auto run = trainer::train_joint(tc, cfg.model, corpus.train, text_pool, corpus.dev, &asr.checkpoint,
                                      &mt.checkpoint, progress);
      run.log.write_csv(seed_dir / ("metrics_" + v.name + ".csv"));
      const auto averaged = average_tail(run.checkpoints, cfg.average_last);
      trainer::save_checkpoint(averaged, seed_dir / ("model_" + v.name + ".bmtc"));
      const auto model = model::JointModel::from_checkpoint(cfg.model, averaged);
      const double bleu = eval::evaluate_bleu(model, corpus.test, cfg.beam, cfg.workers);
      result.runs.push_back({cfg.seed, v.name, bleu});
      if (progress) progress("seed " + std::to_string(cfg.seed) + " " + v.name + " test BLEU " + fixed(bleu, 2));

      if (v.name == "st") {
        const auto rules = model::scheme_rules(v.scheme, cfg.model);
        std::vector<std::string> names;
        for (const auto& [n, t] : averaged.tensors) names.push_back(n);
        const auto reference = model::pretrained_reference(rules, names, &asr.checkpoint, &mt.checkpoint);
        analysis::SweepOptions opt{cfg.beam, cfg.workers};
        auto curves = analysis::criticality_sweep(cfg.model, averaged, reference, decoder_extremes(cfg.model),
                                                  {0.0, 1.0}, dev, opt);
        analysis::emit_criticality_report(curves, seed_dir / "criticality_st");
        result.st_criticality.push_back(std::move(curves));
      } else if (v.name == "jt") {
        result.jt_correlation.push_back(analysis::modality_correlation(model, dev));
      } else if (v.name == "jt-s-mt+car+kd") {
        result.proposed_correlation.push_back(analysis::modality_correlation(model, dev));
        analysis::emit_correlation_report(
            {{"jt", result.jt_correlation.back()}, {"jt-proposed", result.proposed_correlation.back()}},
            seed_dir / "correlation");
      }
    }
  }

  std::string runs_csv = "seed,variant,bleu\n";
  for (const auto& r : result.runs) runs_csv += std::to_string(r.seed) + "," + r.variant + "," + fixed(r.bleu, 4) + "\n";
  write_text(out_dir / "ablation_runs.csv", runs_csv);

  // The ladder table starts at JT; the single-task baseline is reported beside it.
  std::string table = "variant,mean_bleu,delta_vs_jt\n";
  std::string md = "| variant | mean BLEU | vs JT |\n|---|---|---|\n";
  const double jt = result.mean_bleu("jt");
  for (std::size_t i = 1; i < variants.size(); ++i) {
    const double m = result.mean_bleu(variants[i].name);
    table += variants[i].name + "," + fixed(m, 4) + "," + fixed(m - jt, 4) + "\n";
    md += "| " + variants[i].name + " | " + fixed(m, 2) + " | " + (m - jt >= 0 ? "+" : "") + fixed(m - jt, 2) + " |\n";
  }
  md += "\nSingle-task ST baseline: " + fixed(result.mean_bleu("st"), 2) + " mean BLEU over " +
        std::to_string(base.ablation_seeds) + " seeds.\n";
  write_text(out_dir / "ablation.csv", table);
  write_text(out_dir / "ablation.md", md);
  return result;
}

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
};

void add_common(CLI::App* sub, Common& c, bool needs_out, bool needs_data) {
  sub->add_option("--config", c.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  sub->add_option("--seed", c.seed, "random seed");
  if (needs_out) sub->add_option("--out", c.out, "fresh run directory")->required();
  if (needs_data) sub->add_option("--data", c.data, "directory written by gen-data")->required()->check(CLI::ExistingDirectory);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_file.empty()) apply_settings(cfg, parse_config_text(read_text(c.config_file)));
  if (!c.data.empty()) {
    // The corpus shape is fixed by the data directory.
    const auto recorded = parse_config_text(read_text(fs::path(c.data) / "resolved.cfg"));
    for (const auto& key : corpus_keys) {
      if (auto it = recorded.find(key); it != recorded.end()) apply_setting(cfg, key, it->second);
    }
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.sync();
  return cfg;
}

fs::path start_run(const Common& c, const ExperimentConfig& cfg) {
  const fs::path dir = c.out;
  fresh_dir(dir);
  write_text(dir / "resolved.cfg", render_config(cfg));
  return dir;
}

std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& items) {
  std::vector<fs::path> out;
  for (const auto& item : items) {
    const fs::path p = item;
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".bmtc") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  if (out.empty()) throw IoError("no checkpoints found");
  return out;
}

trainer::ProgressFn progress_to(std::ostream& err) {
  return [&err](const std::string& line) { err << line << '\n' << std::flush; };
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint speech-text translation experiments on synthetic data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common gen_c, asr_c, mt_c, train_c, eval_c, crit_c, corr_c, avg_c, abl_c, score_c;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen, gen_c, true, false);

  auto* pre_asr = app.add_subcommand("pretrain-asr", "pretrain the speech encoder on transcripts");
  add_common(pre_asr, asr_c, true, true);
  auto* pre_mt = app.add_subcommand("pretrain-mt", "pretrain the text encoder and decoder");
  add_common(pre_mt, mt_c, true, true);

  std::string asr_path, mt_path, scheme_name;
  std::optional<double> alpha, lambda;
  auto* train = app.add_subcommand("train", "joint fine-tuning from pretrained checkpoints");
  add_common(train, train_c, true, true);
  train->add_option("--asr", asr_path, "ASR checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("--mt", mt_path, "MT checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("--scheme", scheme_name, "st, jt, jt-s-asr, jt-s-mt or jt-proposed");
  train->add_option("--alpha", alpha, "NLL/KD mixing weight");
  train->add_option("--lambda", lambda, "CAR weight");

  std::vector<std::string> eval_ckpts;
  std::optional<std::size_t> beam, average_last;
  std::string split = "test";
  auto* evaluate = app.add_subcommand("evaluate", "decode a split and score BLEU");
  add_common(evaluate, eval_c, true, true);
  evaluate->add_option("--checkpoints", eval_ckpts, "checkpoint files or directories")->required();
  evaluate->add_option("--beam", beam, "beam size");
  evaluate->add_option("--average-last", average_last, "average the last k checkpoints");
  evaluate->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));

  std::string crit_ckpt, crit_asr, crit_mt, crit_selectors, crit_scheme;
  auto* crit = app.add_subcommand("analyze-criticality", "interpolate modules back toward pretrained values");
  add_common(crit, crit_c, true, true);
  crit->add_option("--checkpoint", crit_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  crit->add_option("--asr", crit_asr, "ASR checkpoint")->check(CLI::ExistingFile);
  crit->add_option("--mt", crit_mt, "MT checkpoint")->check(CLI::ExistingFile);
  crit->add_option("--scheme", crit_scheme, "initialization scheme (default: from checkpoint metadata)");
  crit->add_option("--selectors", crit_selectors, "comma-separated name prefixes (default: every decoder layer)");

  std::vector<std::string> corr_ckpts;
  auto* corr = app.add_subcommand("analyze-correlation", "per-layer speech/text decoder state correlation");
  add_common(corr, corr_c, true, true);
  corr->add_option("--checkpoint", corr_ckpts, "checkpoint(s); one profile each")->required()->check(CLI::ExistingFile);

  std::vector<std::string> avg_ckpts;
  auto* avg = app.add_subcommand("average-checkpoints", "elementwise mean of checkpoints");
  add_common(avg, avg_c, true, false);
  avg->add_option("--checkpoints", avg_ckpts, "checkpoint files or directories")->required();
  avg->add_option("--average-last", average_last, "use only the last k");

  auto* abl = app.add_subcommand("ablation", "train and compare the scheme ladder over several seeds");
  add_common(abl, abl_c, true, false);

  std::string hyp_file, ref_file;
  auto* score = app.add_subcommand("score", "BLEU between two hypothesis dumps");
  score->add_option("--hyp", hyp_file)->required()->check(CLI::ExistingFile);
  score->add_option("--ref", ref_file)->required()->check(CLI::ExistingFile);
  score->add_option("--seed", score_c.seed, "accepted for uniformity; unused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nrun with --help for usage\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      const auto cfg = resolve(gen_c);
      const auto dir = start_run(gen_c, cfg);
      const auto corpus = data::generate_corpus(cfg.corpus);
      save_corpus(corpus, dir);
      out << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size() << "/"
          << corpus.text_only.size() << " train/dev/test/text-only samples to " << dir.string() << '\n';
    } else if (pre_asr->parsed() || pre_mt->parsed()) {
      const bool asr = pre_asr->parsed();
      const auto& c = asr ? asr_c : mt_c;
      const auto cfg = resolve(c);
      const fs::path data_dir = c.data;
      const auto train_data = load_split(data_dir, asr ? "train" : "text_only", cfg);
      const auto dev = load_split(data_dir, "dev", cfg);
      const auto dir = start_run(c, cfg);
      auto tc = cfg.train;
      tc.epochs = cfg.pretrain_epochs;
      const auto result = trainer::pretrain(asr ? trainer::PretrainTask::asr : trainer::PretrainTask::mt, cfg.model,
                                            tc, train_data, dev, progress_to(err));
      result.log.write_csv(dir / "metrics.csv");
      const auto path = dir / (asr ? "asr.bmtc" : "mt.bmtc");
      trainer::save_checkpoint(result.checkpoint, path);
      out << "wrote " << path.string() << '\n';
    } else if (train->parsed()) {
      if (!scheme_name.empty()) train_c.sets.push_back("scheme=" + scheme_name);
      if (alpha) train_c.sets.push_back("alpha=" + render_double(*alpha));
      if (lambda) train_c.sets.push_back("lambda=" + render_double(*lambda));
      const auto cfg = resolve(train_c);
      const fs::path data_dir = train_c.data;
      const auto speech = load_split(data_dir, "train", cfg);
      const auto text = head(load_split(data_dir, "text_only", cfg), cfg.joint_text_pool);
      const auto dev = load_split(data_dir, "dev", cfg);
      const auto asr = trainer::load_checkpoint(asr_path);
      const auto mt = trainer::load_checkpoint(mt_path);
      const auto dir = start_run(train_c, cfg);
      auto tc = cfg.train;
      tc.checkpoint_dir = dir / "checkpoints";
      const auto result = trainer::train_joint(tc, cfg.model, speech, text, dev, &asr, &mt, progress_to(err));
      result.log.write_csv(dir / "metrics.csv");
      out << "wrote " << result.files.size() << " checkpoints to " << tc.checkpoint_dir.string() << '\n';
    } else if (evaluate->parsed()) {
      if (beam) eval_c.sets.push_back("beam=" + std::to_string(*beam));
      if (average_last) eval_c.sets.push_back("average_last=" + std::to_string(*average_last));
      const auto cfg = resolve(eval_c);
      const auto data = load_split(eval_c.data, split, cfg);
      auto paths = expand_checkpoints(eval_ckpts);
      if (average_last && *average_last < paths.size()) {
        paths.erase(paths.begin(), paths.end() - static_cast<std::ptrdiff_t>(*average_last));
      }
      const auto ckpt = paths.size() == 1 ? trainer::load_checkpoint(paths.front()) : trainer::average_checkpoints(paths);
      const auto dir = start_run(eval_c, cfg);
      const auto model = model::JointModel::from_checkpoint(cfg.model, ckpt);
      const auto hyps = eval::decode_corpus(model, data, data::Modality::speech, cfg.beam, 0, cfg.workers);
      std::vector<std::uint64_t> ids;
      std::vector<std::vector<TokenId>> refs;
      for (const auto& s : data) ids.push_back(s.id), refs.push_back(s.target);
      eval::write_hypotheses(dir / "hypotheses.txt", ids, hyps);
      eval::write_hypotheses(dir / "references.txt", ids, refs);
      const double bleu = eval::corpus_bleu(hyps, refs);
      write_text(dir / "bleu.txt", fixed(bleu, 4) + "\n");
      out << "BLEU " << fixed(bleu, 2) << " on " << data.size() << " " << split << " samples from " << paths.size()
          << " checkpoint(s)\n";
    } else if (crit->parsed()) {
      const auto cfg = resolve(crit_c);
      const auto dev = head(load_split(crit_c.data, "dev", cfg), cfg.analysis_samples);
      const auto trained = trainer::load_checkpoint(crit_ckpt);
      std::string scheme_text = crit_scheme;
      if (scheme_text.empty()) {
        auto it = trained.metadata.find("scheme");
        if (it == trained.metadata.end()) throw UsageError("checkpoint has no scheme metadata; pass --scheme");
        scheme_text = it->second;
      }
      const auto scheme = model::parse_scheme(scheme_text);
      const auto asr = crit_asr.empty() ? trainer::Checkpoint{} : trainer::load_checkpoint(crit_asr);
      const auto mt = crit_mt.empty() ? trainer::Checkpoint{} : trainer::load_checkpoint(crit_mt);
      std::vector<std::string> names;
      for (const auto& [n, t] : trained.tensors) names.push_back(n);
      const auto reference =
          model::pretrained_reference(model::scheme_rules(scheme, cfg.model), names, &asr, &mt);
      std::vector<analysis::ModuleSelector> selectors;
      if (crit_selectors.empty()) {
        for (std::size_t l = 0; l < cfg.model.n_decoder_layers; ++l) selectors.push_back({"decoder." + std::to_string(l)});
      } else {
        for (const auto& s : split_commas(crit_selectors)) selectors.push_back({s});
      }
      const auto dir = start_run(crit_c, cfg);
      const auto curves = analysis::criticality_sweep(cfg.model, trained, reference, selectors, cfg.ratios, dev,
                                                      {cfg.beam, cfg.workers});
      analysis::emit_criticality_report(curves, dir);
      for (const auto& c : curves) {
        out << c.selector << ":";
        for (std::size_t i = 0; i < c.ratios.size(); ++i) out << " " << c.ratios[i] << "->" << fixed(c.bleu_delta[i], 2);
        out << '\n';
      }
    } else if (corr->parsed()) {
      const auto cfg = resolve(corr_c);
      const auto dev = head(load_split(corr_c.data, "dev", cfg), cfg.analysis_samples);
      std::vector<std::pair<std::string, analysis::CorrelationProfile>> profiles;
      for (const auto& p : corr_ckpts) {
        const auto model = model::JointModel::from_checkpoint(cfg.model, trainer::load_checkpoint(p));
        profiles.emplace_back(corr_ckpts.size() == 1 ? "" : fs::path(p).stem().string(),
                              analysis::modality_correlation(model, dev));
      }
      const auto dir = start_run(corr_c, cfg);
      analysis::emit_correlation_report(profiles, dir);
      for (const auto& [label, p] : profiles) {
        out << (label.empty() ? "r" : label) << ":";
        for (double r : p.layer_r) out << " " << fixed(r, 4);
        out << '\n';
      }
    } else if (avg->parsed()) {
      const auto cfg = resolve(avg_c);
      auto paths = expand_checkpoints(avg_ckpts);
      if (average_last && *average_last < paths.size()) {
        paths.erase(paths.begin(), paths.end() - static_cast<std::ptrdiff_t>(*average_last));
      }
      const auto averaged = trainer::average_checkpoints(paths);
      const auto dir = start_run(avg_c, cfg);
      trainer::save_checkpoint(averaged, dir / "averaged.bmtc");
      out << "averaged " << paths.size() << " checkpoints into " << (dir / "averaged.bmtc").string() << '\n';
    } else if (abl->parsed()) {
      const auto cfg = resolve(abl_c);
      const auto dir = start_run(abl_c, cfg);
      const auto result = run_ablation(cfg, dir, progress_to(err));
      out << read_text(dir / "ablation.md");
    } else if (score->parsed()) {
      const auto hyps = eval::read_hypotheses(hyp_file);
      const auto refs = eval::read_hypotheses(ref_file);
      std::vector<std::vector<TokenId>> h, r;
      for (const auto& [id, tokens] : refs) {
        auto it = hyps.find(id);
        if (it == hyps.end()) throw ContractError("no hypothesis for id " + std::to_string(id));
        h.push_back(it->second);
        r.push_back(tokens);
      }
      if (hyps.size() != refs.size()) throw ContractError("hypothesis and reference ids differ");
      out << "BLEU " << fixed(eval::corpus_bleu(h, r), 2) << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace jst::cli
