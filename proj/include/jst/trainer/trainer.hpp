#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "jst/data/batching.hpp"
#include "jst/losses/objectives.hpp"
#include "jst/model/joint_model.hpp"
#include "jst/trainer/adam.hpp"
#include "jst/trainer/checkpoint.hpp"

namespace jst::trainer {

struct TrainConfig {
  model::Scheme scheme = model::Scheme::jt_proposed;
  loss::LossWeights weights;
  AdamConfig adam;
  std::size_t epochs = 40;
  std::size_t accumulation = 4;  // batches per optimizer update
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // empty: nothing written to disk
  std::size_t keep_last = 10;
  std::size_t speech_batch_frames = 800;
  std::size_t text_batch_tokens = 240;
  std::size_t dev_limit = 200;  // dev samples scored per epoch; 0 = all

  // Epoch count is checked by train_joint; pretraining accepts zero.
  void validate() const;
};

// Canonical one-line rendering of everything that affects training output.
std::string describe(const TrainConfig& train, const model::ModelConfig& model);
std::string config_digest(const TrainConfig& train, const model::ModelConfig& model);

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string task;  // asr, mt, st, speech, text, dev
  loss::LossBreakdown loss;
  double lr = 0.0;
};

class MetricsLog {
 public:
  void add(MetricsRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricsRow>& rows() const noexcept { return rows_; }
  // Columns step,epoch,task,nll_st,kd,car,nll_mt,total,lr; inactive terms
  // are empty cells.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricsRow> rows_;
};

using ProgressFn = std::function<void(const std::string&)>;

enum class PretrainTask { asr, mt };

struct PretrainResult {
  Checkpoint checkpoint;
  MetricsLog log;
  std::vector<double> dev_loss;  // one entry per epoch
};

// The ASR-analog model maps speech to its source transcript, so its decoder
// vocabulary is the source vocabulary. MT trains on (source, target) text.
model::ModelConfig pretrain_config(PretrainTask task, model::ModelConfig config);

PretrainResult pretrain(PretrainTask task, const model::ModelConfig& config, const TrainConfig& train,
                        const data::Dataset& train_data, const data::Dataset& dev, const ProgressFn& progress = {});

struct JointResult {
  model::JointModel model;              // state after the last update
  std::vector<Checkpoint> checkpoints;  // last keep_last epochs, oldest first
  std::vector<std::filesystem::path> files;
  MetricsLog log;
};

// Speech windows optimize the joint objective on paired triplets (NLL only
// for ST); text windows optimize the MT NLL. Windows hold `accumulation`
// batches of one modality and alternate S, T, S, T.
JointResult train_joint(const TrainConfig& train, const model::ModelConfig& config, const data::Dataset& speech,
                        const data::Dataset& text, const data::Dataset& dev, const Checkpoint* asr,
                        const Checkpoint* mt, const ProgressFn& progress = {});

// Mean per-token loss of the objective on data in eval mode.
loss::LossBreakdown evaluate_loss(const model::JointModel& model, const data::Dataset& data,
                                  loss::Objective objective, const loss::LossWeights& weights);

}  // namespace jst::trainer
