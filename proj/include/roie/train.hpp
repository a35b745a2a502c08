#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "roie/checkpoint.hpp"
#include "roie/composer.hpp"
#include "roie/data.hpp"
#include "roie/metrics.hpp"

namespace roie {

struct OptimConfig {
  double learning_rate = 1e-5;
  double weight_decay = 5e-4;
  double lr_gamma = 0.98;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t batch_size = 16;
  int64_t epochs = 100;
  // false: L2 term added to the gradient; true: decay applied to the weights
  // directly, outside the moment estimates.
  bool decoupled_weight_decay = false;

  void validate() const;
};

nlohmann::json to_json(const OptimConfig& o);
OptimConfig optim_config_from_json(const nlohmann::json& j);

// learning_rate · lr_gamma^epoch.
double lr_at(const OptimConfig& config, int64_t epoch);

// Unweighted sum of bce_loss over every score map.
template <typename T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& score_maps, const Tensor<T>& y);

// Adam with bias correction. Moment buffers are created lazily on the first
// step and keyed by parameter position.
template <typename T>
class Adam {
 public:
  explicit Adam(OptimConfig config);

  // Throws ContractError when a parameter has no gradient.
  void step(const std::vector<Parameter<T>>& params, double lr);

  int64_t steps() const { return steps_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_state(int64_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  OptimConfig config_;
  int64_t steps_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

struct EpochRecord {
  int64_t epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
  std::optional<double> val_dice;
  std::optional<double> val_miou;
  std::optional<double> val_accuracy;
};

struct StepRecord {
  int64_t epoch = 0;
  int64_t step = 0;  // global, 1-based
  double loss = 0;
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

// Eval mode, no graph, no parameter or running-statistic mutation. Metrics
// come from the final score map binarized at `threshold`; loss is its BCE.
// When `predictions` is given it receives each binarized map (H×W, {0,1}).
MetricsReport evaluate(MultiUNet<float>& model, const std::vector<SamplePair>& pairs,
                       double threshold, std::vector<std::vector<uint8_t>>* predictions = nullptr);

// Stateful epoch loop over an in-memory model. Batch order and augmentation
// draws are keyed by (seed, epoch), so a trainer restored from a checkpoint
// continues exactly as an uninterrupted one would.
class Trainer {
 public:
  Trainer(MultiUNet<float>& model, OptimConfig optim, uint64_t seed,
          std::optional<AugmentConfig> augment = std::nullopt);

  // One pass over `train`, then validation on `val` when non-empty. Throws
  // TrainingError naming the batch on a non-finite loss.
  EpochRecord run_epoch(const std::vector<SamplePair>& train, const std::vector<SamplePair>& val,
                        double threshold);

  int64_t completed_epochs() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  const Adam<float>& optimizer() const { return adam_; }

  // Model values, optimizer moments, and history.
  Checkpoint capture() const;
  void restore(const Checkpoint& ckpt);

  std::function<void(const StepRecord&)> on_step;

 private:
  MultiUNet<float>& model_;
  OptimConfig optim_;
  uint64_t seed_;
  std::optional<AugmentConfig> augment_;
  Adam<float> adam_;
  int64_t epoch_ = 0;
  std::vector<EpochRecord> history_;
  std::vector<StepRecord> steps_;
};

struct DataConfig {
  std::filesystem::path root;  // holds images/ and masks/
  std::string images_subdir = "images";
  std::string masks_subdir = "masks";
  int input_size = 256;
  SplitSpec split;
  AugmentConfig augment;
  bool augment_training = true;
  bool augment_validation = false;
};

// Everything needed to reproduce a run. Serialized as run_config.json.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;
  ModelConfig model;
  DataConfig data;
  OptimConfig optim;
  uint64_t seed = 0;
  int threads = 1;
  double threshold = 0.5;
  std::filesystem::path out_dir = "runs/default";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown schema versions are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);

struct RunManifest {
  nlohmann::json run_config;
  uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> checkpoints;
  std::optional<int64_t> best_epoch;
  std::optional<double> best_val_dice;
  std::string best_checkpoint;
  std::string final_checkpoint;
};

nlohmann::json to_json(const RunManifest& m);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint manifest or stem
  std::function<void(const EpochRecord&)> on_epoch;
};

// Resized and split dataset per the data config.
DatasetSplit prepare_data(const DataConfig& config);

// Writes into out_dir: run_config.json, manifest.json, metrics.csv,
// steps.csv, checkpoints/epoch_NNNN.{json,bin} and checkpoints/best.{json,bin}.
RunManifest train_run(const RunConfig& config, const DatasetSplit& data,
                      const TrainOptions& options = {});
RunManifest train_run(const RunConfig& config, const TrainOptions& options = {});

}  // namespace roie
