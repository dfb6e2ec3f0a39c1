#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "jst/analysis/analysis.hpp"
#include "jst/data/corpus.hpp"
#include "jst/error.hpp"
#include "jst/model/config.hpp"
#include "jst/trainer/trainer.hpp"

namespace jst::cli {

// Bad flag, unknown config key or malformed value; maps to exit code 2.
class UsageError : public Error {
  using Error::Error;
};

// Everything a run depends on, as one flat key = value namespace. The model
// vocabularies and feature width always follow the corpus.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  data::CorpusSpec corpus;
  model::ModelConfig model;
  trainer::TrainConfig train;
  std::size_t pretrain_epochs = 20;
  std::size_t joint_text_pool = 0;  // text-only samples used in joint training; 0 = all
  std::size_t beam = 5;
  std::size_t average_last = 10;
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::vector<double> ratios = analysis::default_ratios();
  std::size_t analysis_samples = 200;  // dev samples used by analyses
  std::size_t ablation_seeds = 3;

  // Propagates seed and corpus shape into the model and trainer sections.
  void sync();
};

std::vector<std::string> config_keys();
// "key = value" lines; '#' starts a comment. Duplicate keys are rejected.
std::map<std::string, std::string> parse_config_text(const std::string& text);
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
void apply_settings(ExperimentConfig& config, const std::map<std::string, std::string>& settings);
// Every key, sorted, one per line; doubles render with round-trip precision.
std::string render_config(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct AblationRun {
  std::uint64_t seed = 0;
  std::string variant;
  double bleu = 0.0;
};

// Variants in ladder order: st, jt, jt-s-mt, jt-s-mt+car, jt-s-mt+car+kd.
struct AblationResult {
  std::vector<std::string> variants;
  std::vector<AblationRun> runs;
  std::vector<analysis::CorrelationProfile> jt_correlation;        // per seed
  std::vector<analysis::CorrelationProfile> proposed_correlation;  // per seed
  std::vector<std::vector<analysis::CriticalityCurve>> st_criticality;  // per seed: bottom, top decoder layer

  double mean_bleu(const std::string& variant) const;
};

AblationResult run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                            const trainer::ProgressFn& progress = {});

// Entry point: returns 0 on success, 1 on runtime failure, 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jst::cli
