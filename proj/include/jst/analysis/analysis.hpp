#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jst/data/corpus.hpp"
#include "jst/model/joint_model.hpp"
#include "jst/trainer/checkpoint.hpp"

namespace jst::analysis {

// Selects tensors whose name equals the prefix or continues it after a dot,
// so "decoder.1" matches decoder.1.ffn.w1 but not decoder.10.ffn.w1.
struct ModuleSelector {
  std::string prefix;

  bool matches(const std::string& name) const;
  std::vector<std::string> match(const trainer::Checkpoint& ckpt) const;
};

// Matched tensors become (1 - rho) * trained + rho * pretrained; everything
// else is copied from trained.
trainer::Checkpoint interpolate_module(const trainer::Checkpoint& trained, const trainer::Checkpoint& pretrained,
                                       const ModuleSelector& selector, double rho);

struct CriticalityCurve {
  std::string selector;
  std::vector<double> ratios;
  std::vector<double> bleu;
  std::vector<double> bleu_delta;  // bleu - bleu of the untouched model
};

std::vector<double> default_ratios();

struct SweepOptions {
  std::size_t beam_size = 5;
  std::size_t workers = 0;  // 0: hardware concurrency
};

// pretrained holds the pretrained counterpart of each tensor under the
// trained model's names (see model::pretrained_reference).
std::vector<CriticalityCurve> criticality_sweep(const model::ModelConfig& config, const trainer::Checkpoint& trained,
                                                const trainer::Checkpoint& pretrained,
                                                const std::vector<ModuleSelector>& selectors,
                                                const std::vector<double>& ratios, const data::Dataset& dev,
                                                const SweepOptions& options = {});

// Streaming bivariate moments (Welford). Zero-variance series yield r = 0.
class PearsonAccumulator {
 public:
  void add(double x, double y);
  std::size_t count() const noexcept { return n_; }
  bool degenerate() const noexcept;
  double r() const;

 private:
  std::size_t n_ = 0;
  double mean_x_ = 0.0, mean_y_ = 0.0;
  double m2_x_ = 0.0, m2_y_ = 0.0, c_xy_ = 0.0;
};

double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationProfile {
  std::vector<double> layer_r;                    // mean over all components
  std::vector<std::vector<double>> component_r;   // [layer][component]
  std::vector<std::vector<bool>> degenerate;      // [layer][component]
  std::size_t n_points = 0;                       // (sample, position) pairs
};

// Pools (sample, position) pairs of aligned decoder states per layer and
// component.
class CorrelationAccumulator {
 public:
  CorrelationAccumulator(std::size_t layers, std::size_t width);
  // One sample: per-layer [positions x width] states from each path.
  void add(const std::vector<ad::Tensor>& speech_states, const std::vector<ad::Tensor>& text_states);
  CorrelationProfile profile() const;

 private:
  std::size_t layers_, width_;
  std::size_t points_ = 0;
  std::vector<PearsonAccumulator> acc_;  // layer-major
};

// Teacher-forced on each sample's target through both encoders, eval mode.
CorrelationProfile modality_correlation(const model::JointModel& model, const data::Dataset& paired);

// criticality.csv and criticality.svg under out_dir.
void emit_criticality_report(const std::vector<CriticalityCurve>& curves, const std::filesystem::path& out_dir);
// One CSV per profile (correlation.csv when the label is empty, else
// correlation_<label>.csv) and correlation.svg with one line per profile.
void emit_correlation_report(const std::vector<std::pair<std::string, CorrelationProfile>>& profiles,
                             const std::filesystem::path& out_dir);

}  // namespace jst::analysis
