#include "jst/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "jst/error.hpp"
#include "jst/model/schemes.hpp"
#include "jst/rng.hpp"

namespace jst::trainer {

namespace {

constexpr std::uint64_t dropout_stream = 0xD409;
constexpr std::uint64_t init_stream = 0x1417;

using Window = std::vector<const data::Batch*>;

std::vector<Window> windows(const std::vector<data::Batch>& batches, std::size_t accumulation) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < batches.size(); i += accumulation) {
    Window w;
    for (std::size_t j = i; j < std::min(i + accumulation, batches.size()); ++j) w.push_back(&batches[j]);
    out.push_back(std::move(w));
  }
  return out;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", *v);
  return buf;
}

std::string cell(double v) { return cell(std::optional<double>(v)); }

data::Dataset head(const data::Dataset& data, std::size_t limit) {
  if (limit == 0 || data.size() <= limit) return data;
  return data::Dataset(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(limit));
}

// One optimizer update over a single-modality window.
struct Updater {
  model::JointModel& model;
  Adam& adam;
  Rng& rng;
  const loss::LossWeights& weights;

  MetricsRow run(const data::Dataset& data, const Window& window, loss::Objective objective, std::size_t epoch,
                 std::string task) {
    const auto norm = loss::normalizer_for(data, window, objective);
    loss::LossBreakdown sum;
    for (const auto* batch : window) {
      ad::Graph g;
      const model::ForwardContext ctx{g, true, &rng, model.config().dropout};
      auto step = loss::batch_loss(ctx, model, data, batch->indices, objective, weights, norm);
      if (!std::isfinite(step.breakdown.total)) {
        throw DivergenceError("non-finite " + task + " loss at update " + std::to_string(adam.steps() + 1) +
                              " (epoch " + std::to_string(epoch) + ")");
      }
      g.backward(step.total);
      sum += step.breakdown;
    }
    MetricsRow row;
    row.lr = adam.step(model.parameters());
    row.step = adam.steps();
    row.epoch = epoch;
    row.task = std::move(task);
    row.loss = sum;
    return row;
  }
};

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  adam.validate();
  if (accumulation < 1) throw ConfigError("accumulation factor must be >= 1");
  if (keep_last < 1) throw ConfigError("keep_last must be >= 1");
  if (speech_batch_frames < 1 || text_batch_tokens < 1) throw ConfigError("batch budgets must be >= 1");
}

std::string describe(const TrainConfig& t, const model::ModelConfig& m) {
  std::ostringstream out;
  out.precision(17);
  out << "scheme=" << model::to_string(t.scheme) << " alpha=" << t.weights.alpha << " lambda=" << t.weights.lambda
      << " smoothing=" << t.weights.label_smoothing << " lr=" << t.adam.lr << " beta1=" << t.adam.beta1
      << " beta2=" << t.adam.beta2 << " adam_eps=" << t.adam.eps << " warmup=" << t.adam.warmup
      << " epochs=" << t.epochs << " accumulation=" << t.accumulation << " seed=" << t.seed
      << " speech_batch_frames=" << t.speech_batch_frames << " text_batch_tokens=" << t.text_batch_tokens
      << " dev_limit=" << t.dev_limit << " d_model=" << m.d_model << " n_heads=" << m.n_heads
      << " d_ffn=" << m.d_ffn << " lower=" << m.n_speech_lower_layers << " shared=" << m.n_shared_encoder_layers
      << " decoder=" << m.n_decoder_layers << " src_vocab=" << m.src_vocab_size << " tgt_vocab=" << m.tgt_vocab_size
      << " feature_dim=" << m.speech_feature_dim << " dropout=" << m.dropout << " max_positions=" << m.max_positions;
  return out.str();
}

std::string config_digest(const TrainConfig& train, const model::ModelConfig& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : describe(train, model)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string MetricsLog::csv() const {
  std::string out = "step,epoch,task,nll_st,kd,car,nll_mt,total,lr\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.step) + ',' + std::to_string(r.epoch) + ',' + r.task + ',' + cell(r.loss.nll_st) + ',' +
           cell(r.loss.kd) + ',' + cell(r.loss.car) + ',' + cell(r.loss.nll_mt) + ',' + cell(r.loss.total) + ',' +
           cell(r.lr) + '\n';
  }
  return out;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  out << csv();
  if (!out) throw IoError("failed writing metrics log " + path.string());
}

loss::LossBreakdown evaluate_loss(const model::JointModel& model, const data::Dataset& data,
                                  loss::Objective objective, const loss::LossWeights& weights) {
  if (data.empty()) throw ContractError("evaluate_loss: empty dataset");
  data::Batch all;
  all.indices.resize(data.size());
  std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
  const data::Batch* ptr = &all;
  const auto norm = loss::normalizer_for(data, std::span<const data::Batch* const>(&ptr, 1), objective);
  ad::Graph g(ad::Graph::Mode::inference);
  const model::ForwardContext ctx{g, false, nullptr, 0.0};
  return loss::batch_loss(ctx, model, data, all.indices, objective, weights, norm).breakdown;
}

model::ModelConfig pretrain_config(PretrainTask task, model::ModelConfig config) {
  if (task == PretrainTask::asr) config.tgt_vocab_size = config.src_vocab_size;
  return config;
}

PretrainResult pretrain(PretrainTask task, const model::ModelConfig& base, const TrainConfig& train,
                        const data::Dataset& train_data, const data::Dataset& dev, const ProgressFn& progress) {
  train.validate();
  const auto config = pretrain_config(task, base);
  const bool asr = task == PretrainTask::asr;
  const auto objective = asr ? loss::Objective::asr : loss::Objective::mt;
  const std::string task_name = asr ? "asr" : "mt";
  if (train_data.empty()) throw ContractError(task_name + " pretraining needs training data");
  for (const auto& s : train_data) {
    if (asr && !s.has_speech()) throw ContractError("asr pretraining sample " + std::to_string(s.id) + " lacks speech");
  }

  model::JointModel model(config, asr ? model::Layout::speech_only : model::Layout::text_only,
                          mix_seed(train.seed, init_stream + (asr ? 0 : 1)));
  Adam adam(train.adam);
  Rng rng(mix_seed(train.seed, dropout_stream));
  Updater updater{model, adam, rng, train.weights};
  const auto dev_subset = head(dev, train.dev_limit);

  PretrainResult result;
  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    const auto batches = data::make_batches(train_data, asr ? data::BatchCost::frames : data::BatchCost::tokens,
                                            asr ? train.speech_batch_frames : train.text_batch_tokens,
                                            mix_seed(train.seed, epoch));
    double lr = 0.0;
    for (const auto& w : windows(batches, train.accumulation)) {
      auto row = updater.run(train_data, w, objective, epoch, task_name);
      lr = row.lr;
      result.log.add(std::move(row));
    }
    if (!dev_subset.empty()) {
      MetricsRow row{adam.steps(), epoch, "dev", evaluate_loss(model, dev_subset, objective, train.weights), lr};
      result.dev_loss.push_back(row.loss.total);
      if (progress) {
        progress(task_name + " epoch " + std::to_string(epoch) + "/" + std::to_string(train.epochs) + " dev " +
                 cell(row.loss.total));
      }
      result.log.add(std::move(row));
    }
  }
  result.checkpoint = model.to_checkpoint();
  result.checkpoint.metadata["step"] = std::to_string(adam.steps());
  result.checkpoint.metadata["epoch"] = std::to_string(train.epochs);
  result.checkpoint.metadata["task"] = task_name;
  result.checkpoint.metadata["config_digest"] = config_digest(train, config);
  return result;
}

JointResult train_joint(const TrainConfig& train, const model::ModelConfig& config, const data::Dataset& speech,
                        const data::Dataset& text, const data::Dataset& dev, const Checkpoint* asr,
                        const Checkpoint* mt, const ProgressFn& progress) {
  train.validate();
  if (train.epochs < 1) throw ConfigError("epochs must be >= 1");
  const bool single_task = train.scheme == model::Scheme::st;
  if (speech.empty()) throw ContractError("joint training needs paired speech data");
  if (!single_task && text.empty()) throw ContractError("joint training needs a text-only pool");

  JointResult result{model::init_from_scheme(train.scheme, config, asr, mt, mix_seed(train.seed, init_stream)),
                     {}, {}, {}};
  auto& model = result.model;
  Adam adam(train.adam);
  Rng rng(mix_seed(train.seed, dropout_stream));
  Updater updater{model, adam, rng, train.weights};
  const auto speech_objective = single_task ? loss::Objective::st : loss::Objective::joint;
  const auto dev_subset = head(dev, train.dev_limit);
  const auto digest = config_digest(train, config);
  if (!train.checkpoint_dir.empty()) std::filesystem::create_directories(train.checkpoint_dir);

  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    const auto speech_batches = data::make_batches(speech, data::BatchCost::frames, train.speech_batch_frames,
                                                   mix_seed(train.seed, 2 * epoch));
    const auto speech_windows = windows(speech_batches, train.accumulation);
    std::vector<data::Batch> text_batches;
    std::vector<std::pair<data::Task, Window>> schedule;
    if (single_task) {
      for (const auto& w : speech_windows) schedule.emplace_back(data::Task::speech, w);
    } else {
      text_batches = data::make_batches(text, data::BatchCost::tokens, train.text_batch_tokens,
                                        mix_seed(train.seed, 2 * epoch + 1));
      schedule = data::alternate(speech_windows, windows(text_batches, train.accumulation));
    }

    double lr = 0.0;
    for (const auto& [task, window] : schedule) {
      auto row = task == data::Task::speech
                     ? updater.run(speech, window, speech_objective, epoch, single_task ? "st" : "speech")
                     : updater.run(text, window, loss::Objective::mt, epoch, "text");
      lr = row.lr;
      result.log.add(std::move(row));
    }
    if (!dev_subset.empty()) {
      MetricsRow row{adam.steps(), epoch, "dev", evaluate_loss(model, dev_subset, speech_objective, train.weights), lr};
      if (progress) {
        progress(model::to_string(train.scheme) + " epoch " + std::to_string(epoch) + "/" +
                 std::to_string(train.epochs) + " dev " + cell(row.loss.total));
      }
      result.log.add(std::move(row));
    }

    auto ckpt = model.to_checkpoint();
    ckpt.metadata["step"] = std::to_string(adam.steps());
    ckpt.metadata["epoch"] = std::to_string(epoch);
    ckpt.metadata["scheme"] = model::to_string(train.scheme);
    ckpt.metadata["config_digest"] = digest;
    if (!train.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%04zu.bmtc", epoch);
      const auto path = train.checkpoint_dir / name;
      save_checkpoint(ckpt, path);
      result.files.push_back(path);
      if (result.files.size() > train.keep_last) {
        std::filesystem::remove(result.files.front());
        std::filesystem::remove(result.files.front().string() + ".meta");
        result.files.erase(result.files.begin());
      }
    }
    result.checkpoints.push_back(std::move(ckpt));
    if (result.checkpoints.size() > train.keep_last) result.checkpoints.erase(result.checkpoints.begin());
  }
  return result;
}

}  // namespace jst::trainer
