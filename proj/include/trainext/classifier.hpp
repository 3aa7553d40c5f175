#pragma once

// Classifier training from a declarative configuration: optional head-only
// warm-up phase, cross-entropy objective, optional class-balanced
// oversampling, step learning-rate schedule, per-epoch log and single-file
// checkpoints.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trainext/augment.hpp"
#include "trainext/backbones.hpp"
#include "trainext/catalog.hpp"
#include "trainext/common.hpp"
#include "trainext/ensemble.hpp"
#include "trainext/image.hpp"
#include "trainext/metrics.hpp"
#include "trainext/nn.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct TrainingConfig {
  std::string backbone = "efficientnet-b0";
  int epochs_warmup = 0;
  std::optional<double> lr_warmup;
  int epochs_train = 1;
  double lr_train = 1e-4;
  int batch_size = 32;
  bool oversampling = false;
  AugmentationSpec::Kind augmentation = AugmentationSpec::Kind::baseline;
  enum class Optimizer { adam, rmsprop };
  Optimizer optimizer = Optimizer::adam;
  enum class Scheduler { none, step };
  Scheduler scheduler = Scheduler::none;
  std::optional<int> step_size;
  std::optional<double> gamma;
  double dropout = 0.3;
  int image_size = 224;
  bool mixed_precision = false;  // accepted and recorded; the CPU backend computes fp32
  std::uint64_t seed = 0;
  bool pretrained = false;
  std::optional<std::string> pretrained_weights;  // checkpoint asset to start from

  void check() const {
    resolve_backbone(backbone);
    if (epochs_warmup < 0 || epochs_train < 0)
      throw ValidationError("training config: negative epoch count");
    if (epochs_warmup > 0 && !lr_warmup)
      throw ValidationError("training config: warm-up epochs need lr_warmup");
    if (lr_warmup && *lr_warmup <= 0) throw ValidationError("training config: lr_warmup must be > 0");
    if (lr_train <= 0) throw ValidationError("training config: lr_train must be > 0");
    if (batch_size < 1) throw ValidationError("training config: batch_size must be >= 1");
    if (scheduler == Scheduler::step && (!step_size || !gamma))
      throw ValidationError("training config: step scheduler needs step_size and gamma");
    if (step_size && *step_size < 1) throw ValidationError("training config: step_size must be >= 1");
    if (gamma && !(*gamma > 0 && *gamma < 1))
      throw ValidationError("training config: gamma must be in (0,1)");
    if (!(dropout >= 0 && dropout < 1))
      throw ValidationError("training config: dropout must be in [0,1)");
    if (image_size < 4) throw ValidationError("training config: image_size too small");
    if (pretrained && !pretrained_weights)
      throw ValidationError("training config: pretrained requires a weights path");
  }
};

// Warm-up epochs run at lr_warmup; training epoch t then follows
// lr_train * gamma^floor(t / step_size) under the step scheduler.
inline double lr_schedule(const TrainingConfig& config, int epoch) {
  config.check();
  const int total = config.epochs_warmup + config.epochs_train;
  if (epoch < 0 || epoch >= total)
    throw ValidationError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(total) + ")");
  if (epoch < config.epochs_warmup) return *config.lr_warmup;
  if (config.scheduler == TrainingConfig::Scheduler::none) return config.lr_train;
  const int t = epoch - config.epochs_warmup;
  return config.lr_train * std::pow(*config.gamma, t / *config.step_size);
}

// The four stock model configurations (all dropout 0.3, 224 px inputs).
inline std::map<std::string, TrainingConfig> default_model_presets() {
  std::map<std::string, TrainingConfig> presets;
  {
    TrainingConfig c;
    c.backbone = "efficientnet-b1";
    c.epochs_train = 30;
    c.batch_size = 225;
    presets["b1"] = c;
  }
  {
    TrainingConfig c;
    c.backbone = "efficientnet-b0";
    c.epochs_train = 100;
    c.batch_size = 300;
    c.oversampling = true;
    c.augmentation = AugmentationSpec::Kind::extended;
    presets["b2"] = c;
  }
  {
    TrainingConfig c;
    c.backbone = "efficientnet-b2";
    c.epochs_train = 30;
    c.batch_size = 225;
    c.scheduler = TrainingConfig::Scheduler::step;
    c.step_size = 10;
    c.gamma = 0.1;
    presets["b3"] = c;
  }
  {
    TrainingConfig c;
    c.backbone = "efficientnet-b1";
    c.epochs_warmup = 3;
    c.lr_warmup = 1e-2;
    c.epochs_train = 47;
    c.batch_size = 225;
    c.optimizer = TrainingConfig::Optimizer::rmsprop;
    c.scheduler = TrainingConfig::Scheduler::step;
    c.step_size = 10;
    c.gamma = 0.1;
    presets["b4"] = c;
  }
  return presets;
}

// ---------------------------------------------------------------------------
// Sampling index generation (exposed for the oversampling property test)
// ---------------------------------------------------------------------------

// Resampling with replacement to uniform class frequency: every epoch
// presents n samples with per-class counts within one of n/k.
inline std::vector<std::size_t> oversampled_indices(const std::vector<int>& labels, Rng& rng) {
  const std::size_t n = labels.size();
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty())
      throw ValidationError(std::string("oversampling: class ") +
                            to_string(class_from_index(c)) + " has no records");
    const std::size_t quota = n / kNumClasses + (static_cast<std::size_t>(c) < n % kNumClasses ? 1 : 0);
    for (std::size_t i = 0; i < quota; ++i)
      out.push_back(members[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1))]);
  }
  rng.shuffle(out);
  return out;
}

// ---------------------------------------------------------------------------
// Model handle, training log
// ---------------------------------------------------------------------------

struct TrainingLogEntry {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_macro_f1;
};

struct TrainingLog {
  std::vector<TrainingLogEntry> entries;
  std::vector<std::string> warnings;

  void write_csv(const std::string& path) const {
    csv::Writer w(path);
    w.row({"epoch", "lr", "mean_loss", "val_macro_f1"});
    for (const auto& e : entries) {
      std::ostringstream lr_s, loss_s, f1_s;
      lr_s << std::setprecision(17) << e.lr;
      loss_s << std::setprecision(17) << e.mean_loss;
      if (e.val_macro_f1) f1_s << std::setprecision(17) << *e.val_macro_f1;
      w.row({std::to_string(e.epoch), lr_s.str(), loss_s.str(), f1_s.str()});
    }
  }
};

class ModelHandle {
 public:
  ModelHandle(TrainingConfig config, std::shared_ptr<ClassifierNet<float>> net)
      : config_(std::move(config)), net_(std::move(net)) {}

  const TrainingConfig& config() const { return config_; }
  ClassifierNet<float>& net() { return *net_; }

  // deterministic inference: dropout off, direct resize to the input size
  std::vector<ProbabilityVector> predict(const std::vector<Image>& images) const {
    std::vector<ProbabilityVector> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(predict_one(img));
    return out;
  }

  ProbabilityVector predict_one(const Image& img) const {
    if (img.empty()) throw ValidationError("predict: empty image");
    auto spec = build_augmentation(config_.augmentation, config_.image_size);
    const Image resized = resize_bilinear(img, config_.image_size, config_.image_size);
    auto chw = normalize_to_tensor(spec, resized);
    TensorT<float> batch({1, 3, config_.image_size, config_.image_size});
    std::copy_n(chw.data(), chw.numel(), batch.data());
    Rng rng(0);  // unused in eval mode
    auto logits = net_->forward(nn::Var<float>(std::move(batch)), false, rng);
    auto probs = nn::softmax_rows(logits.value());
    ProbabilityVector v;
    for (int c = 0; c < kNumClasses; ++c) v[c] = probs[c];
    return v;
  }

  struct ItemError {
    std::size_t index = 0;
    std::string id;
    std::string message;
  };

  // per-item decode failures are collected and the batch continues
  PredictionSet predict_records(const std::vector<const ImageRecord*>& records,
                                std::vector<ItemError>* errors = nullptr) const {
    PredictionSet out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      try {
        Image img = read_png(records[i]->path);
        out.ids.push_back(records[i]->id);
        out.probabilities.push_back(predict_one(img));
      } catch (const Error& e) {
        if (errors) errors->push_back({i, records[i]->id, e.what()});
      }
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    nlohmann::json meta{{"backbone", config_.backbone},
                        {"image_size", config_.image_size},
                        {"dropout", config_.dropout},
                        {"augmentation", to_string(config_.augmentation)}};
    const std::string meta_str = meta.dump();
    const std::uint32_t len = static_cast<std::uint32_t>(meta_str.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(meta_str.data(), len);
    auto params = net_->named_parameters();
    nn::save_parameters(out, params);
  }

  static ModelHandle load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing checkpoint " + path);
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 20)) throw ParseError("checkpoint " + path + ": bad metadata header");
    std::string meta_str(len, '\0');
    in.read(meta_str.data(), len);
    nlohmann::json meta = nlohmann::json::parse(meta_str);

    TrainingConfig config;
    config.backbone = meta.at("backbone").get<std::string>();
    config.image_size = meta.at("image_size").get<int>();
    config.dropout = meta.at("dropout").get<double>();
    config.augmentation = meta.at("augmentation").get<std::string>() == "extended"
                              ? AugmentationSpec::Kind::extended
                              : AugmentationSpec::Kind::baseline;
    Rng init_rng(0);
    auto net = std::make_shared<ClassifierNet<float>>(resolve_backbone(config.backbone),
                                                      config.dropout, init_rng);
    auto params = net->named_parameters();
    nn::load_parameters(in, params);
    return ModelHandle(std::move(config), std::move(net));
  }

 private:
  TrainingConfig config_;
  std::shared_ptr<ClassifierNet<float>> net_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  ModelHandle model;
  TrainingLog log;
};

namespace detail_train {

inline std::unique_ptr<nn::Optimizer<float>> make_optimizer(const TrainingConfig& config,
                                                            std::vector<nn::Var<float>*> params,
                                                            double lr) {
  if (config.optimizer == TrainingConfig::Optimizer::rmsprop)
    return std::make_unique<nn::RmsProp<float>>(std::move(params), lr);
  return std::make_unique<nn::Adam<float>>(std::move(params), lr);
}

}  // namespace detail_train

// Trains on every labeled record of the catalog (all provenances). With a
// fold assignment, the held-out fold is excluded from training and scored
// after each epoch.
inline TrainResult train(const TrainingConfig& config, const Catalog& catalog,
                         const std::optional<FoldAssignment>& folds = std::nullopt,
                         int held_out_fold = -1,
                         const ImageLoader& loader = load_record_image) {
  config.check();

  std::vector<const ImageRecord*> train_records, val_records;
  for (const auto* rec : catalog.labeled_records()) {
    if (folds && held_out_fold >= 0) {
      auto it = folds->assignment.find(rec->id);
      if (it != folds->assignment.end() && it->second == held_out_fold) {
        val_records.push_back(rec);
        continue;
      }
    }
    train_records.push_back(rec);
  }

  ClassDistribution dist;
  for (const auto* r : train_records) ++dist[*r->label];
  for (int c = 0; c < kNumClasses; ++c)
    if (dist.counts[static_cast<std::size_t>(c)] == 0)
      throw ValidationError(std::string("train: class ") + to_string(class_from_index(c)) +
                            " has no labeled records");

  TrainingLog log;
  int batch_size = config.batch_size;
  if (batch_size > static_cast<int>(train_records.size())) {
    batch_size = static_cast<int>(train_records.size());
    log.warnings.push_back("batch_size " + std::to_string(config.batch_size) +
                           " exceeds training set size " + std::to_string(train_records.size()) +
                           ", clamped");
  }

  Rng init_rng(derive_seed(config.seed, "classifier_init"));
  auto net = std::make_shared<ClassifierNet<float>>(resolve_backbone(config.backbone),
                                                    config.dropout, init_rng);
  if (config.pretrained_weights) {
    std::ifstream in(*config.pretrained_weights, std::ios::binary);
    if (!in) throw DependencyError("missing pretrained weights " + *config.pretrained_weights);
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string skip(len, '\0');
    in.read(skip.data(), len);
    auto params = net->named_parameters();
    nn::load_parameters(in, params);
  }

  const auto spec = build_augmentation(config.augmentation, config.image_size);
  std::vector<int> labels;
  labels.reserve(train_records.size());
  for (const auto* r : train_records) labels.push_back(index_of(*r->label));

  auto load_batch = [&](const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                        std::uint64_t epoch_seed) {
    const int n = static_cast<int>(end - begin);
    TensorT<float> batch({n, 3, config.image_size, config.image_size});
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      const std::size_t idx = order[begin + static_cast<std::size_t>(b)];
      const auto* rec = train_records[idx];
      Image img = loader(*rec);
      const std::uint64_t item_seed =
          derive_seed(epoch_seed, rec->id + "#" + std::to_string(begin + static_cast<std::size_t>(b)));
      Image augmented = apply_augmentation(spec, img, item_seed);
      auto chw = normalize_to_tensor(spec, augmented);
      std::copy_n(chw.data(), chw.numel(),
                  batch.data() + static_cast<std::size_t>(b) * chw.numel());
      targets[static_cast<std::size_t>(b)] = index_of(*rec->label);
    }
    return std::make_pair(std::move(batch), std::move(targets));
  };

  const int total_epochs = config.epochs_warmup + config.epochs_train;
  std::unique_ptr<nn::Optimizer<float>> optimizer;
  bool in_warmup_phase = false;
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool warmup = epoch < config.epochs_warmup;
    const double lr = lr_schedule(config, epoch);

    // the warm-up phase owns a head-only optimizer; the main phase starts
    // fresh over all parameters
    if (!optimizer || warmup != in_warmup_phase) {
      optimizer = detail_train::make_optimizer(
          config, warmup ? net->head_parameters() : net->all_parameters(), lr);
      in_warmup_phase = warmup;
    }
    optimizer->set_lr(lr);

    Rng epoch_rng(derive_seed(config.seed, "epoch" + std::to_string(epoch)));
    const std::vector<std::size_t> order =
        config.oversampling ? oversampled_indices(labels, epoch_rng)
                            : shuffled_indices(train_records.size(), epoch_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    const std::uint64_t epoch_seed = derive_seed(config.seed, "aug_epoch" + std::to_string(epoch));
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
      auto [batch, targets] = load_batch(order, begin, end, epoch_seed);
      optimizer->zero_grad();
      auto logits = net->forward(nn::Var<float>(std::move(batch)), true, dropout_rng);
      auto loss = nn::cross_entropy(logits, targets);
      loss.backward();
      optimizer->step();
      loss_sum += loss.value()[0];
      ++batches;
    }

    TrainingLogEntry entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;

    if (!val_records.empty()) {
      ModelHandle handle(config, net);
      std::vector<ClassLabel> truth, predicted;
      for (const auto* rec : val_records) {
        truth.push_back(*rec->label);
        predicted.push_back(decide(handle.predict_one(loader(*rec))).label);
      }
      entry.val_macro_f1 = evaluate(truth, predicted).macro_f1;
    }
    log.entries.push_back(entry);
  }

  return {ModelHandle(config, net), std::move(log)};
}

// ---------------------------------------------------------------------------
// TrainingConfig <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainingConfig& c) {
  nlohmann::json j{{"backbone", c.backbone},
                   {"epochs_warmup", c.epochs_warmup},
                   {"epochs_train", c.epochs_train},
                   {"lr_train", c.lr_train},
                   {"batch_size", c.batch_size},
                   {"oversampling", c.oversampling},
                   {"augmentation", to_string(c.augmentation)},
                   {"optimizer",
                    c.optimizer == TrainingConfig::Optimizer::adam ? "adam" : "rmsprop"},
                   {"scheduler",
                    c.scheduler == TrainingConfig::Scheduler::none ? "none" : "step"},
                   {"dropout", c.dropout},
                   {"image_size", c.image_size},
                   {"mixed_precision", c.mixed_precision},
                   {"seed", c.seed},
                   {"pretrained", c.pretrained}};
  if (c.lr_warmup) j["lr_warmup"] = *c.lr_warmup;
  if (c.step_size) j["step_size"] = *c.step_size;
  if (c.gamma) j["gamma"] = *c.gamma;
  if (c.pretrained_weights) j["pretrained_weights"] = *c.pretrained_weights;
  return j;
}

inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.backbone = j.value("backbone", c.backbone);
  c.epochs_warmup = j.value("epochs_warmup", c.epochs_warmup);
  c.epochs_train = j.value("epochs_train", c.epochs_train);
  c.lr_train = j.value("lr_train", c.lr_train);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.oversampling = j.value("oversampling", c.oversampling);
  if (j.contains("augmentation"))
    c.augmentation = j.at("augmentation").get<std::string>() == "extended"
                         ? AugmentationSpec::Kind::extended
                         : AugmentationSpec::Kind::baseline;
  if (j.contains("optimizer"))
    c.optimizer = j.at("optimizer").get<std::string>() == "rmsprop"
                      ? TrainingConfig::Optimizer::rmsprop
                      : TrainingConfig::Optimizer::adam;
  if (j.contains("scheduler"))
    c.scheduler = j.at("scheduler").get<std::string>() == "step"
                      ? TrainingConfig::Scheduler::step
                      : TrainingConfig::Scheduler::none;
  if (j.contains("lr_warmup")) c.lr_warmup = j.at("lr_warmup").get<double>();
  if (j.contains("step_size")) c.step_size = j.at("step_size").get<int>();
  if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
  c.dropout = j.value("dropout", c.dropout);
  c.image_size = j.value("image_size", c.image_size);
  c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
  c.seed = j.value("seed", c.seed);
  c.pretrained = j.value("pretrained", c.pretrained);
  if (j.contains("pretrained_weights"))
    c.pretrained_weights = j.at("pretrained_weights").get<std::string>();
  return c;
}

}  // namespace trainext
