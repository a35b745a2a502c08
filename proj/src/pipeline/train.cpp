#include "roie/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "roie/error.hpp"
#include "roie/parallel.hpp"

namespace roie {
namespace fs = std::filesystem;

void OptimConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (!(lr_gamma > 0 && lr_gamma <= 1)) throw ConfigError("lr_gamma must be in (0, 1]");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

nlohmann::json to_json(const OptimConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay},
          {"lr_gamma", o.lr_gamma},           {"beta1", o.beta1},
          {"beta2", o.beta2},                 {"epsilon", o.epsilon},
          {"batch_size", o.batch_size},       {"epochs", o.epochs},
          {"decoupled_weight_decay", o.decoupled_weight_decay}};
}

OptimConfig optim_config_from_json(const nlohmann::json& j) {
  OptimConfig o;
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.lr_gamma = j.value("lr_gamma", o.lr_gamma);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.epochs = j.value("epochs", o.epochs);
  o.decoupled_weight_decay = j.value("decoupled_weight_decay", o.decoupled_weight_decay);
  o.validate();
  return o;
}

double lr_at(const OptimConfig& config, int64_t epoch) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  return config.learning_rate * std::pow(config.lr_gamma, static_cast<double>(epoch));
}

template <typename T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& score_maps, const Tensor<T>& y) {
  if (score_maps.empty()) throw ContractError("total_loss needs at least one score map");
  Tensor<T> total;
  for (const auto& x : score_maps) {
    if (x.shape() != y.shape()) {
      throw ShapeError("score map " + x.shape().str() + " vs mask " + y.shape().str());
    }
    Tensor<T> l = bce_loss(x, y);
    total = total.defined() ? ew_add(total, l) : l;
  }
  return total;
}

template <typename T>
Adam<T>::Adam(OptimConfig config) : config_(config) {
  config_.validate();
}

template <typename T>
void Adam<T>::step(const std::vector<Parameter<T>>& params, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ContractError("no gradient for parameter " + p.name);
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), T(0));
      v_.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (m_.size() != params.size()) throw ContractError("optimizer state does not match parameters");

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double wd = config_.weight_decay;
  const bool decoupled = config_.decoupled_weight_decay;

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> t = params[k].tensor;
    auto w = t.data();
    auto g = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != w.size()) throw ContractError("optimizer state shape mismatch for " + params[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g[i];
      if (!decoupled) gi += wd * w[i];
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      if (decoupled) update += wd * w[i];
      w[i] = static_cast<T>(w[i] - lr * update);
    }
  }
}

template <typename T>
void Adam<T>::set_state(int64_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
  if (m.size() != v.size()) throw ContractError("optimizer moment lists differ in length");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}};
  auto opt = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  opt("val_loss", r.val_loss);
  opt("val_dice", r.val_dice);
  opt("val_miou", r.val_miou);
  opt("val_accuracy", r.val_accuracy);
  return j;
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int64_t>();
  r.lr = j.at("lr").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.val_loss = opt("val_loss");
  r.val_dice = opt("val_dice");
  r.val_miou = opt("val_miou");
  r.val_accuracy = opt("val_accuracy");
  return r;
}

MetricsReport evaluate(MultiUNet<float>& model, const std::vector<SamplePair>& pairs,
                       double threshold, std::vector<std::vector<uint8_t>>* predictions) {
  if (pairs.empty()) throw ContractError("evaluate needs at least one sample");
  constexpr std::size_t kChunk = 8;
  NoGradGuard no_grad;
  MetricsReport report;
  report.config = to_json(model.config());
  double loss_sum = 0;
  if (predictions) predictions->clear();

  for (std::size_t begin = 0; begin < pairs.size(); begin += kChunk) {
    const std::size_t end = std::min(pairs.size(), begin + kChunk);
    std::vector<const SamplePair*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&pairs[i]);
    Batch batch = stack_samples(chunk);
    const Tensor<float> final_map = model.forward(batch.images, Mode::eval).back();
    loss_sum += bce_loss(final_map, batch.masks).item() * static_cast<double>(chunk.size());

    const auto scores = final_map.values();
    const std::size_t hw = static_cast<std::size_t>(final_map.shape().plane());
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::vector<uint8_t> pred(hw), gt(hw);
      for (std::size_t i = 0; i < hw; ++i) {
        pred[i] = scores[b * hw + i] >= threshold ? 1 : 0;
        gt[i] = chunk[b]->mask[i] >= 0.5f ? 1 : 0;
      }
      report.images.push_back(ImageMetrics::from_counts(chunk[b]->id, confusion(pred, gt)));
      if (predictions) predictions->push_back(std::move(pred));
    }
  }
  report.loss = loss_sum / static_cast<double>(pairs.size());
  return report;
}

Trainer::Trainer(MultiUNet<float>& model, OptimConfig optim, uint64_t seed,
                 std::optional<AugmentConfig> augment)
    : model_(model), optim_(optim), seed_(seed), augment_(std::move(augment)), adam_(optim) {}

EpochRecord Trainer::run_epoch(const std::vector<SamplePair>& train,
                               const std::vector<SamplePair>& val, double threshold) {
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.lr = lr_at(optim_, epoch_);

  BatchSequence seq(train, static_cast<std::size_t>(optim_.batch_size), seed_,
                    epoch_, augment_ ? &*augment_ : nullptr);
  double loss_sum = 0;
  std::size_t samples = 0;
  for (std::size_t b = 0; b < seq.size(); ++b) {
    Batch batch = seq.get(b);
    const auto maps = model_.forward(batch.images, Mode::train);
    Tensor<float> loss = total_loss(maps, batch.masks);
    const double value = loss.item();
    const auto fail = [&](const char* what) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
      throw TrainingError(std::string("non-finite ") + what + " at epoch " +
                          std::to_string(rec.epoch) + " batch " + std::to_string(b) +
                          " (samples " + ids + ")");
    };
    if (!std::isfinite(value)) fail("loss");
    backward(loss);
    // ReLU and max pooling can mask a NaN input in the forward pass while
    // batch-norm gradients still carry it.
    for (const auto& p : model_.parameters()) {
      for (float g : p.tensor.grad()) {
        if (!std::isfinite(g)) fail("gradient");
      }
    }
    adam_.step(model_.parameters(), rec.lr);
    StepRecord s{rec.epoch, adam_.steps(), value};
    steps_.push_back(s);
    if (on_step) on_step(s);
    loss_sum += value * static_cast<double>(batch.ids.size());
    samples += batch.ids.size();
  }
  rec.train_loss = loss_sum / static_cast<double>(samples);

  if (!val.empty()) {
    const MetricsReport r = evaluate(model_, val, threshold);
    const auto mean = r.mean();
    rec.val_loss = r.loss;
    rec.val_dice = mean->dice;
    rec.val_miou = mean->miou;
    rec.val_accuracy = mean->accuracy;
  }
  ++epoch_;
  history_.push_back(rec);
  return rec;
}

Checkpoint Trainer::capture() const {
  Checkpoint ck = capture_model(model_, epoch_);
  const auto& params = model_.parameters();
  const auto& m = adam_.first_moments();
  const auto& v = adam_.second_moments();
  for (std::size_t k = 0; k < m.size(); ++k) {
    ck.tensors.push_back({params[k].name, "adam_m", params[k].tensor.shape(), m[k]});
    ck.tensors.push_back({params[k].name, "adam_v", params[k].tensor.shape(), v[k]});
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history_) hist.push_back(to_json(r));
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : steps_) steps.push_back({s.epoch, s.step, s.loss});
  ck.extra = {{"adam_steps", adam_.steps()},
              {"optim", to_json(optim_)},
              {"history", hist},
              {"steps", steps}};
  return ck;
}

void Trainer::restore(const Checkpoint& ckpt) {
  restore_model(model_, ckpt);
  const auto& params = model_.parameters();
  std::vector<std::vector<float>> m, v;
  const int64_t adam_steps = ckpt.extra.value("adam_steps", int64_t{0});
  if (adam_steps > 0) {
    for (const auto& p : params) {
      const CheckpointTensor* tm = ckpt.find(p.name, "adam_m");
      const CheckpointTensor* tv = ckpt.find(p.name, "adam_v");
      if (!tm || !tv) throw LoadError("checkpoint lacks optimizer state for " + p.name);
      m.push_back(tm->values);
      v.push_back(tv->values);
    }
  }
  adam_.set_state(adam_steps, std::move(m), std::move(v));
  epoch_ = ckpt.epoch;
  history_.clear();
  steps_.clear();
  if (ckpt.extra.contains("history")) {
    for (const auto& r : ckpt.extra.at("history")) history_.push_back(epoch_record_from_json(r));
  }
  if (ckpt.extra.contains("steps")) {
    for (const auto& s : ckpt.extra.at("steps")) {
      steps_.push_back({s.at(0).get<int64_t>(), s.at(1).get<int64_t>(), s.at(2).get<double>()});
    }
  }
  if (static_cast<int64_t>(history_.size()) != epoch_) {
    throw LoadError("checkpoint history has " + std::to_string(history_.size()) +
                    " epochs, expected " + std::to_string(epoch_));
  }
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& r : m.epochs) epochs.push_back(to_json(r));
  nlohmann::json j = {{"run_config", m.run_config},
                      {"seed", m.seed},
                      {"epochs", epochs},
                      {"checkpoints", m.checkpoints},
                      {"best_checkpoint", m.best_checkpoint},
                      {"final_checkpoint", m.final_checkpoint}};
  j["best_epoch"] = m.best_epoch ? nlohmann::json(*m.best_epoch) : nlohmann::json(nullptr);
  j["best_val_dice"] = m.best_val_dice ? nlohmann::json(*m.best_val_dice) : nlohmann::json(nullptr);
  return j;
}

DatasetSplit prepare_data(const DataConfig& config) {
  auto pairs = load_dataset(config.root / config.images_subdir, config.root / config.masks_subdir);
  if (pairs.empty()) {
    throw IngestionError("no images found in " + (config.root / config.images_subdir).string());
  }
  for (auto& p : pairs) p = resize(p, config.input_size);
  return split(std::move(pairs), config.split);
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::string s = "epoch,lr,train_loss,val_loss,val_dice,val_miou,val_accuracy\n";
  for (const auto& r : history) {
    s += std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.train_loss) + "," +
         opt_num(r.val_loss) + "," + opt_num(r.val_dice) + "," + opt_num(r.val_miou) + "," +
         opt_num(r.val_accuracy) + "\n";
  }
  return s;
}

std::string steps_csv(const std::vector<StepRecord>& steps) {
  std::string s = "epoch,step,loss\n";
  for (const auto& r : steps) {
    s += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.loss) + "\n";
  }
  return s;
}

std::string epoch_stem(int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld", static_cast<long long>(epoch));
  return buf;
}

std::vector<SamplePair> augmented_copy(const std::vector<SamplePair>& pairs,
                                       const AugmentConfig& cfg, uint64_t seed, int64_t epoch) {
  std::vector<SamplePair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::mt19937_64 rng(mix_seed(seed ^ 0x7A11DA7Eu, static_cast<uint64_t>(epoch), i));
    out.push_back(augment(pairs[i], cfg, rng));
  }
  return out;
}

}  // namespace

RunManifest train_run(const RunConfig& config, const DatasetSplit& data,
                      const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw ContractError("training split is empty");
  set_thread_count(config.threads);

  const fs::path out = config.out_dir;
  const fs::path ckpt_dir = out / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw IoError("cannot create " + ckpt_dir.string() + ": " + ec.message());

  auto model = build_model<float>(config.model, config.seed);
  std::optional<AugmentConfig> train_aug;
  if (config.data.augment_training) train_aug = config.data.augment;
  Trainer trainer(*model, config.optim, config.seed, train_aug);

  RunManifest manifest;
  manifest.run_config = to_json(config);
  manifest.seed = config.seed;

  if (options.resume) {
    const Checkpoint ck = read_checkpoint(*options.resume);
    const auto diffs = config_differences(config.model, ck.config);
    if (!diffs.empty()) {
      std::string msg = "config/checkpoint mismatch:";
      for (const auto& d : diffs) msg += " " + d + ";";
      throw LoadError(msg);
    }
    trainer.restore(ck);
    if (ck.extra.contains("best_epoch") && !ck.extra.at("best_epoch").is_null()) {
      manifest.best_epoch = ck.extra.at("best_epoch").get<int64_t>();
      if (!ck.extra.at("best_val_dice").is_null()) {
        manifest.best_val_dice = ck.extra.at("best_val_dice").get<double>();
      }
    }
  }

  if (fs::exists(ckpt_dir / "best.json")) manifest.best_checkpoint = (ckpt_dir / "best.json").string();
  write_text(out / "run_config.json", manifest.run_config.dump(2) + "\n");

  while (trainer.completed_epochs() < config.optim.epochs) {
    const int64_t epoch_index = trainer.completed_epochs();
    const std::vector<SamplePair>* val = &data.val;
    std::vector<SamplePair> val_aug;
    if (config.data.augment_validation && !data.val.empty()) {
      val_aug = augmented_copy(data.val, config.data.augment, config.seed, epoch_index);
      val = &val_aug;
    }
    const EpochRecord rec = trainer.run_epoch(data.train, *val, config.threshold);

    // Without a validation split the latest epoch is kept as "best".
    bool improved = !rec.val_dice.has_value();
    if (rec.val_dice && (!manifest.best_val_dice || *rec.val_dice > *manifest.best_val_dice)) {
      improved = true;
      manifest.best_val_dice = rec.val_dice;
    }
    if (improved) manifest.best_epoch = rec.epoch;

    Checkpoint ck = trainer.capture();
    ck.extra["best_epoch"] = manifest.best_epoch ? nlohmann::json(*manifest.best_epoch)
                                                  : nlohmann::json(nullptr);
    ck.extra["best_val_dice"] = manifest.best_val_dice ? nlohmann::json(*manifest.best_val_dice)
                                                        : nlohmann::json(nullptr);
    const fs::path written = write_checkpoint(ckpt_dir / epoch_stem(rec.epoch), ck);
    manifest.final_checkpoint = written.string();
    if (improved) manifest.best_checkpoint = write_checkpoint(ckpt_dir / "best", ck).string();

    manifest.epochs = trainer.history();
    manifest.checkpoints.clear();
    for (const auto& r : manifest.epochs) {
      const fs::path p = ckpt_dir / (epoch_stem(r.epoch) + ".json");
      if (fs::exists(p)) manifest.checkpoints.push_back(p.string());
    }
    write_text(out / "metrics.csv", metrics_csv(trainer.history()));
    write_text(out / "steps.csv", steps_csv(trainer.steps()));
    write_text(out / "manifest.json", to_json(manifest).dump(2) + "\n");
    if (options.on_epoch) options.on_epoch(rec);
  }
  manifest.epochs = trainer.history();
  return manifest;
}

RunManifest train_run(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  return train_run(config, prepare_data(config.data), options);
}

template Tensor<float> total_loss(const std::vector<Tensor<float>>&, const Tensor<float>&);
template Tensor<double> total_loss(const std::vector<Tensor<double>>&, const Tensor<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace roie
