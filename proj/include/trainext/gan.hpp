#pragma once

// Edge-conditioned image synthesis: one generator per class trained in
// zero-class mode (the 1-channel edge mask is the only conditioning input)
// against multi-scale patch discriminators with a least-squares adversarial
// objective plus discriminator feature matching.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/image.hpp"
#include "trainext/nn.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct GanConfig {
  ClassLabel class_label = ClassLabel::none;
  int num_classes = 0;  // 0 = zero-class mode; label-map conditioning is not supported
  int batch_size = 48;
  double lr = 3e-4;
  int epochs_initial = 50;
  int epochs_decay = 100;
  int load_size = 224;
  bool resize_crop = false;   // resize incoming pairs to load_size instead of requiring it
  bool instance_maps = false; // unsupported; zero-class mode has no instance channels
  bool mixed_precision = false;  // recorded only; the CPU backend computes fp32
  int num_discriminator_scales = 2;
  double lambda_feature_matching = 10.0;
  std::uint64_t seed = 0;

  // capacity knobs; defaults follow the reference global generator
  int generator_base_channels = 64;
  int generator_downsamples = 4;
  int generator_resnet_blocks = 9;
  int discriminator_base_channels = 64;
  int discriminator_layers = 3;

  // a sample grid is written every this many epochs (0 disables)
  int sample_interval_epochs = 10;

  void check() const {
    if (num_classes != 0)
      throw ValidationError("gan config: only zero-class mode (num_classes=0) is supported");
    if (instance_maps)
      throw ValidationError("gan config: instance maps are not supported in zero-class mode");
    if (batch_size < 1) throw ValidationError("gan config: batch_size must be >= 1");
    if (lr <= 0) throw ValidationError("gan config: lr must be > 0");
    if (epochs_initial < 0 || epochs_decay < 0)
      throw ValidationError("gan config: negative epoch count");
    if (load_size < 8) throw ValidationError("gan config: load_size too small");
    if (num_discriminator_scales < 1)
      throw ValidationError("gan config: need at least one discriminator scale");
    if (lambda_feature_matching < 0)
      throw ValidationError("gan config: lambda_feature_matching must be >= 0");
    if (generator_base_channels < 1 || discriminator_base_channels < 1 ||
        generator_downsamples < 0 || generator_resnet_blocks < 0 || discriminator_layers < 1)
      throw ValidationError("gan config: bad capacity parameters");
  }
};

// Stock per-class configurations: shared batch/lr/size, long schedules for
// the rare classes.
inline GanConfig default_gan_config(ClassLabel c) {
  GanConfig config;
  config.class_label = c;
  if (c == ClassLabel::ischaemia || c == ClassLabel::both) {
    config.epochs_initial = 200;
    config.epochs_decay = 400;
  }
  return config;
}

// Constant for epochs_initial, then linear decay to zero across epochs_decay.
inline double lr_decay(const GanConfig& config, int epoch) {
  const int total = config.epochs_initial + config.epochs_decay;
  if (epoch < 0 || epoch >= total)
    throw ValidationError("lr_decay: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(total) + ")");
  if (epoch < config.epochs_initial) return config.lr;
  const int t = epoch - config.epochs_initial;
  return config.lr * (1.0 - static_cast<double>(t) / config.epochs_decay);
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

// c7s1 stem, strided downsampling, resnet blocks, transposed-conv upsampling,
// c7s1 + tanh output. Weight init N(0, 0.02).
template <typename T>
class Generator {
 public:
  Generator(int base, int downs, int blocks, Rng& rng) : downs_(downs), blocks_(blocks) {
    stem_ = nn::Conv2d<T>(1, base, 7, 1, 0, rng, 0.02);
    stem_norm_ = nn::InstanceNorm2d<T>(base);
    int ch = base;
    for (int i = 0; i < downs; ++i) {
      down_convs_.emplace_back(ch, ch * 2, 3, 2, 1, rng, 0.02);
      down_norms_.emplace_back(ch * 2);
      ch *= 2;
    }
    for (int b = 0; b < blocks; ++b) {
      block_conv1_.emplace_back(ch, ch, 3, 1, 0, rng, 0.02);
      block_norm1_.emplace_back(ch);
      block_conv2_.emplace_back(ch, ch, 3, 1, 0, rng, 0.02);
      block_norm2_.emplace_back(ch);
    }
    for (int i = 0; i < downs; ++i) {
      up_convs_.emplace_back(ch, ch / 2, 3, 2, 1, 1, rng, 0.02);
      up_norms_.emplace_back(ch / 2);
      ch /= 2;
    }
    out_conv_ = nn::Conv2d<T>(ch, 3, 7, 1, 0, rng, 0.02);
  }

  // mask [N,1,H,W] in [0,1] -> image [N,3,H,W] in [-1,1]
  nn::Var<T> forward(const nn::Var<T>& mask) const {
    auto x = nn::relu(stem_norm_.forward(stem_.forward(nn::reflection_pad2d(mask, 3))));
    for (std::size_t i = 0; i < down_convs_.size(); ++i)
      x = nn::relu(down_norms_[i].forward(down_convs_[i].forward(x)));
    for (std::size_t b = 0; b < block_conv1_.size(); ++b) {
      auto y = nn::relu(
          block_norm1_[b].forward(block_conv1_[b].forward(nn::reflection_pad2d(x, 1))));
      y = block_norm2_[b].forward(block_conv2_[b].forward(nn::reflection_pad2d(y, 1)));
      x = nn::add(x, y);
    }
    for (std::size_t i = 0; i < up_convs_.size(); ++i)
      x = nn::relu(up_norms_[i].forward(up_convs_[i].forward(x)));
    return nn::tanh_op(out_conv_.forward(nn::reflection_pad2d(x, 3)));
  }

  nn::NamedParams<T> named_parameters() {
    nn::NamedParams<T> out;
    stem_.collect("g.stem", out);
    stem_norm_.collect("g.stem_norm", out);
    for (std::size_t i = 0; i < down_convs_.size(); ++i) {
      down_convs_[i].collect("g.down" + std::to_string(i), out);
      down_norms_[i].collect("g.down_norm" + std::to_string(i), out);
    }
    for (std::size_t b = 0; b < block_conv1_.size(); ++b) {
      block_conv1_[b].collect("g.block" + std::to_string(b) + ".conv1", out);
      block_norm1_[b].collect("g.block" + std::to_string(b) + ".norm1", out);
      block_conv2_[b].collect("g.block" + std::to_string(b) + ".conv2", out);
      block_norm2_[b].collect("g.block" + std::to_string(b) + ".norm2", out);
    }
    for (std::size_t i = 0; i < up_convs_.size(); ++i) {
      up_convs_[i].collect("g.up" + std::to_string(i), out);
      up_norms_[i].collect("g.up_norm" + std::to_string(i), out);
    }
    out_conv_.collect("g.out", out);
    return out;
  }

  std::vector<nn::Var<T>*> parameters() {
    std::vector<nn::Var<T>*> out;
    for (auto& [name, var] : named_parameters()) out.push_back(var);
    return out;
  }

 private:
  int downs_, blocks_;
  nn::Conv2d<T> stem_;
  nn::InstanceNorm2d<T> stem_norm_;
  std::vector<nn::Conv2d<T>> down_convs_;
  std::vector<nn::InstanceNorm2d<T>> down_norms_;
  std::vector<nn::Conv2d<T>> block_conv1_, block_conv2_;
  std::vector<nn::InstanceNorm2d<T>> block_norm1_, block_norm2_;
  std::vector<nn::ConvTranspose2d<T>> up_convs_;
  std::vector<nn::InstanceNorm2d<T>> up_norms_;
  nn::Conv2d<T> out_conv_;
};

// 70x70-style patch discriminator over concat(mask, image); exposes the
// intermediate activations for the feature-matching loss.
template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator(int in_ch, int base, int n_layers, Rng& rng) {
    int prev = in_ch;
    int ch = base;
    convs_.emplace_back(prev, ch, 4, 2, 2, rng, 0.02);
    has_norm_.push_back(false);
    norms_.emplace_back();  // placeholder, unused for the first layer
    prev = ch;
    for (int n = 1; n < n_layers; ++n) {
      ch = std::min(base * (1 << n), 512);
      convs_.emplace_back(prev, ch, 4, 2, 2, rng, 0.02);
      norms_.emplace_back(ch);
      has_norm_.push_back(true);
      prev = ch;
    }
    ch = std::min(ch * 2, 512);
    convs_.emplace_back(prev, ch, 4, 1, 2, rng, 0.02);
    norms_.emplace_back(ch);
    has_norm_.push_back(true);
    prev = ch;
    final_ = nn::Conv2d<T>(prev, 1, 4, 1, 2, rng, 0.02);
  }

  struct Output {
    std::vector<nn::Var<T>> features;  // per intermediate layer
    nn::Var<T> score;                  // 1-channel patch map
  };

  Output forward(const nn::Var<T>& x) const {
    Output out;
    nn::Var<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h);
      if (has_norm_[i]) h = norms_[i].forward(h);
      h = nn::leaky_relu(h, T(0.2));
      out.features.push_back(h);
    }
    out.score = final_.forward(h);
    return out;
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
      if (has_norm_[i]) norms_[i].collect(prefix + ".norm" + std::to_string(i), out);
    }
    final_.collect(prefix + ".final", out);
  }

 private:
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::InstanceNorm2d<T>> norms_;
  std::vector<bool> has_norm_;
  nn::Conv2d<T> final_;
};

// Scale k sees the input average-pooled k times (3x3, stride 2, pad 1).
template <typename T>
class MultiScaleDiscriminator {
 public:
  MultiScaleDiscriminator(int in_ch, int base, int n_layers, int num_scales, Rng& rng) {
    for (int s = 0; s < num_scales; ++s) scales_.emplace_back(in_ch, base, n_layers, rng);
  }

  std::vector<typename PatchDiscriminator<T>::Output> forward(const nn::Var<T>& x) const {
    std::vector<typename PatchDiscriminator<T>::Output> outs;
    nn::Var<T> cur = x;
    for (std::size_t s = 0; s < scales_.size(); ++s) {
      outs.push_back(scales_[s].forward(cur));
      if (s + 1 < scales_.size()) cur = nn::avg_pool2d(cur, 3, 2, 1);
    }
    return outs;
  }

  nn::NamedParams<T> named_parameters() {
    nn::NamedParams<T> out;
    for (std::size_t s = 0; s < scales_.size(); ++s)
      scales_[s].collect("d.scale" + std::to_string(s), out);
    return out;
  }

  std::vector<nn::Var<T>*> parameters() {
    std::vector<nn::Var<T>*> out;
    for (auto& [name, var] : named_parameters()) out.push_back(var);
    return out;
  }

  std::size_t num_scales() const { return scales_.size(); }

 private:
  std::vector<PatchDiscriminator<T>> scales_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// mean((pred - target)^2): 0 when the discriminator hits its target label
// exactly, 1 per element when it outputs the opposite label.
template <typename T>
nn::Var<T> lsgan_loss(const nn::Var<T>& prediction, T target) {
  return nn::mse_to_const(prediction, target);
}

// mean L1 distance between corresponding discriminator activations,
// averaged over layers and scales.
template <typename T>
nn::Var<T> feature_matching_loss(
    const std::vector<typename PatchDiscriminator<T>::Output>& real,
    const std::vector<typename PatchDiscriminator<T>::Output>& fake) {
  if (real.size() != fake.size())
    throw ValidationError("feature_matching_loss: scale count mismatch");
  nn::Var<T> total;
  int terms = 0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].features.size() != fake[s].features.size())
      throw ValidationError("feature_matching_loss: layer count mismatch");
    for (std::size_t l = 0; l < real[s].features.size(); ++l) {
      auto term = nn::l1_diff(fake[s].features[l], nn::detach(real[s].features[l]));
      total = total.defined() ? nn::add(total, term) : term;
      ++terms;
    }
  }
  if (!terms) throw ValidationError("feature_matching_loss: no features");
  return nn::scale(total, T(1) / static_cast<T>(terms));
}

// ---------------------------------------------------------------------------
// Tensor conversion
// ---------------------------------------------------------------------------

inline void mask_into_tensor(const Bitmap& mask, TensorT<float>& batch, int n) {
  const std::int64_t plane = static_cast<std::int64_t>(mask.height) * mask.width;
  for (std::int64_t i = 0; i < plane; ++i)
    batch[static_cast<std::int64_t>(n) * plane + i] = mask.data[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
}

inline void image_into_tensor(const Image& img, TensorT<float>& batch, int n) {
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 3 ? c : 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        batch[((static_cast<std::int64_t>(n) * 3 + c) * img.height + y) * img.width + x] =
            static_cast<float>(img.at(y, x, src_c)) / 127.5f - 1.0f;
  }
}

inline Image tensor_to_image(const TensorT<float>& batch, int n, int height, int width) {
  Image out(width, height, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const float v = batch[((static_cast<std::int64_t>(n) * 3 + c) * height + y) * width + x];
        out.at(y, x, c) = clamp_u8((static_cast<double>(v) + 1.0) * 127.5);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Model + training
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const GanConfig& c) {
  return {{"class_label", to_string(c.class_label)},
          {"num_classes", c.num_classes},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"epochs_initial", c.epochs_initial},
          {"epochs_decay", c.epochs_decay},
          {"load_size", c.load_size},
          {"resize_crop", c.resize_crop},
          {"instance_maps", c.instance_maps},
          {"mixed_precision", c.mixed_precision},
          {"num_discriminator_scales", c.num_discriminator_scales},
          {"lambda_feature_matching", c.lambda_feature_matching},
          {"seed", c.seed},
          {"generator_base_channels", c.generator_base_channels},
          {"generator_downsamples", c.generator_downsamples},
          {"generator_resnet_blocks", c.generator_resnet_blocks},
          {"discriminator_base_channels", c.discriminator_base_channels},
          {"discriminator_layers", c.discriminator_layers},
          {"sample_interval_epochs", c.sample_interval_epochs}};
}

// Overlay semantics: fields present in `j` replace the base values.
inline GanConfig gan_config_from_json(const nlohmann::json& j, GanConfig base = {}) {
  GanConfig c = base;
  if (j.contains("class_label")) {
    const auto l = parse_class_label(j.at("class_label").get<std::string>());
    if (!l) throw ParseError("gan config: unknown class_label");
    c.class_label = *l;
  }
  c.num_classes = j.value("num_classes", c.num_classes);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.epochs_initial = j.value("epochs_initial", c.epochs_initial);
  c.epochs_decay = j.value("epochs_decay", c.epochs_decay);
  c.load_size = j.value("load_size", c.load_size);
  c.resize_crop = j.value("resize_crop", c.resize_crop);
  c.instance_maps = j.value("instance_maps", c.instance_maps);
  c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
  c.num_discriminator_scales = j.value("num_discriminator_scales", c.num_discriminator_scales);
  c.lambda_feature_matching = j.value("lambda_feature_matching", c.lambda_feature_matching);
  c.seed = j.value("seed", c.seed);
  c.generator_base_channels = j.value("generator_base_channels", c.generator_base_channels);
  c.generator_downsamples = j.value("generator_downsamples", c.generator_downsamples);
  c.generator_resnet_blocks = j.value("generator_resnet_blocks", c.generator_resnet_blocks);
  c.discriminator_base_channels =
      j.value("discriminator_base_channels", c.discriminator_base_channels);
  c.discriminator_layers = j.value("discriminator_layers", c.discriminator_layers);
  c.sample_interval_epochs = j.value("sample_interval_epochs", c.sample_interval_epochs);
  return c;
}

struct GanLossEntry {
  int iteration = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss_g_adversarial = 0.0;
  double loss_g_feature_matching = 0.0;
  double loss_d = 0.0;
};

struct GanLossLog {
  std::vector<GanLossEntry> entries;

  void write_csv(const std::string& path) const {
    csv::Writer w(path);
    w.row({"iteration", "epoch", "lr", "loss_g_adv", "loss_g_fm", "loss_d"});
    for (const auto& e : entries) {
      std::ostringstream lr_s, ga, gf, d;
      lr_s << std::setprecision(17) << e.lr;
      ga << std::setprecision(17) << e.loss_g_adversarial;
      gf << std::setprecision(17) << e.loss_g_feature_matching;
      d << std::setprecision(17) << e.loss_d;
      w.row({std::to_string(e.iteration), std::to_string(e.epoch), lr_s.str(), ga.str(), gf.str(),
             d.str()});
    }
  }
};

struct MaskImagePair {
  Bitmap mask;
  Image image;
};

class GanModel {
 public:
  GanModel(GanConfig config)
      : config_(std::move(config)),
        init_rng_(derive_seed(config_.seed, "gan_init")),
        generator_(std::make_shared<Generator<float>>(config_.generator_base_channels,
                                                      config_.generator_downsamples,
                                                      config_.generator_resnet_blocks, init_rng_)),
        discriminator_(std::make_shared<MultiScaleDiscriminator<float>>(
            4, config_.discriminator_base_channels, config_.discriminator_layers,
            config_.num_discriminator_scales, init_rng_)) {
    config_.check();
  }

  const GanConfig& config() const { return config_; }
  Generator<float>& generator() { return *generator_; }
  MultiScaleDiscriminator<float>& discriminator() { return *discriminator_; }

  // One RGB image per mask at the mask's size; deterministic for a fixed
  // (mask, seed) pair (the generator is noise-free, the seed is kept for
  // interface stability).
  std::vector<Image> synthesize(const std::vector<Bitmap>& masks, std::uint64_t /*seed*/) const {
    std::vector<Image> out;
    out.reserve(masks.size());
    for (const auto& mask : masks) {
      if (mask.width != config_.load_size || mask.height != config_.load_size)
        throw ValidationError("synthesize: mask is " + std::to_string(mask.width) + "x" +
                              std::to_string(mask.height) + ", model trained at " +
                              std::to_string(config_.load_size));
      TensorT<float> input({1, 1, mask.height, mask.width});
      mask_into_tensor(mask, input, 0);
      auto fake = generator_->forward(nn::Var<float>(std::move(input)));
      out.push_back(tensor_to_image(fake.value(), 0, mask.height, mask.width));
    }
    return out;
  }

  void save(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    nlohmann::json meta = to_json(config_);
    const std::string meta_str = meta.dump();
    const std::uint32_t len = static_cast<std::uint32_t>(meta_str.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(meta_str.data(), len);
    auto params = named_parameters();
    nn::save_parameters(out, params);
  }

  static GanModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing checkpoint " + path);
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 20)) throw ParseError("checkpoint " + path + ": bad metadata header");
    std::string meta_str(len, '\0');
    in.read(meta_str.data(), len);
    GanModel model(gan_config_from_json(nlohmann::json::parse(meta_str)));
    auto params = model.named_parameters();
    nn::load_parameters(in, params);
    return model;
  }

  nn::NamedParams<float> named_parameters() {
    auto out = generator_->named_parameters();
    for (auto& p : discriminator_->named_parameters()) out.push_back(p);
    return out;
  }

 private:
  GanConfig config_;
  Rng init_rng_;
  std::shared_ptr<Generator<float>> generator_;
  std::shared_ptr<MultiScaleDiscriminator<float>> discriminator_;
};

// Writes a (mask | synthesized | real) strip per pair, up to `max_rows`.
inline void write_sample_grid(const std::string& path, const GanModel& model,
                              const std::vector<MaskImagePair>& pairs, std::size_t max_rows = 4);

struct GanTrainHooks {
  // called after each epoch, e.g. for checkpoints and sample grids
  std::function<void(int epoch, GanModel& model)> on_epoch_end;
};

inline GanModel train_gan(const GanConfig& config, const std::vector<MaskImagePair>& pairs,
                          GanLossLog* log = nullptr, const GanTrainHooks& hooks = {}) {
  config.check();
  if (pairs.empty()) throw ValidationError("train_gan: no training pairs");

  std::vector<MaskImagePair> prepared;
  prepared.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.mask.width != p.image.width || p.mask.height != p.image.height)
      throw ValidationError("train_gan: mask/image size mismatch");
    if (p.mask.width != config.load_size || p.mask.height != config.load_size) {
      if (!config.resize_crop)
        throw ValidationError("train_gan: pair size " + std::to_string(p.mask.width) + "x" +
                              std::to_string(p.mask.height) + " differs from load_size " +
                              std::to_string(config.load_size) +
                              " (enable resize_crop to rescale)");
      MaskImagePair q;
      q.image = resize_bilinear(p.image, config.load_size, config.load_size);
      Image m3(p.mask.width, p.mask.height, 1);
      for (std::size_t i = 0; i < p.mask.data.size(); ++i)
        m3.data[i] = p.mask.data[i] ? 255 : 0;
      Image mr = resize_bilinear(m3, config.load_size, config.load_size);
      q.mask = Bitmap(config.load_size, config.load_size);
      for (std::size_t i = 0; i < q.mask.data.size(); ++i)
        q.mask.data[i] = mr.data[i] >= 128 ? 1 : 0;
      prepared.push_back(std::move(q));
    } else {
      prepared.push_back(p);
    }
  }

  GanModel model(config);
  auto& g = model.generator();
  auto& d = model.discriminator();

  // the reference setup trains both nets with Adam(beta1=0.5)
  nn::Adam<float> opt_g(g.parameters(), config.lr, 0.5, 0.999);
  nn::Adam<float> opt_d(d.parameters(), config.lr, 0.5, 0.999);

  const int batch = std::min<int>(config.batch_size, static_cast<int>(prepared.size()));
  const int size = config.load_size;
  const int total_epochs = config.epochs_initial + config.epochs_decay;
  Rng order_rng(derive_seed(config.seed, "gan_batches"));
  int iteration = 0;

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const double lr = lr_decay(config, epoch);
    opt_g.set_lr(lr);
    opt_d.set_lr(lr);

    auto order = shuffled_indices(prepared.size(), order_rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
      const int n = static_cast<int>(end - begin);

      TensorT<float> masks({n, 1, size, size});
      TensorT<float> reals({n, 3, size, size});
      for (int b = 0; b < n; ++b) {
        const auto& pair = prepared[order[begin + static_cast<std::size_t>(b)]];
        mask_into_tensor(pair.mask, masks, b);
        image_into_tensor(pair.image, reals, b);
      }
      nn::Var<float> mask_var(masks);
      nn::Var<float> real_var(reals);

      auto fake = g.forward(mask_var);

      // discriminator step on detached fakes
      opt_d.zero_grad();
      auto d_real = d.forward(nn::concat_channels(mask_var, real_var));
      auto d_fake = d.forward(nn::concat_channels(mask_var, nn::detach(fake)));
      nn::Var<float> loss_d;
      for (std::size_t s = 0; s < d_real.size(); ++s) {
        auto term = nn::add(lsgan_loss(d_real[s].score, 1.0f), lsgan_loss(d_fake[s].score, 0.0f));
        loss_d = loss_d.defined() ? nn::add(loss_d, term) : term;
      }
      loss_d = nn::scale(loss_d, 0.5f / static_cast<float>(d_real.size()));
      loss_d.backward();
      opt_d.step();

      // generator step: adversarial + feature matching against fresh real features
      opt_g.zero_grad();
      auto d_fake_g = d.forward(nn::concat_channels(mask_var, fake));
      auto d_real_ref = d.forward(nn::concat_channels(mask_var, real_var));
      nn::Var<float> loss_g_adv;
      for (std::size_t s = 0; s < d_fake_g.size(); ++s) {
        auto term = lsgan_loss(d_fake_g[s].score, 1.0f);
        loss_g_adv = loss_g_adv.defined() ? nn::add(loss_g_adv, term) : term;
      }
      loss_g_adv = nn::scale(loss_g_adv, 1.0f / static_cast<float>(d_fake_g.size()));
      auto loss_fm = feature_matching_loss<float>(d_real_ref, d_fake_g);
      auto loss_g = nn::add(loss_g_adv,
                            nn::scale(loss_fm, static_cast<float>(config.lambda_feature_matching)));
      loss_g.backward();
      opt_g.step();

      ++iteration;
      if (log)
        log->entries.push_back({iteration, epoch, lr, static_cast<double>(loss_g_adv.value()[0]),
                                static_cast<double>(loss_fm.value()[0]),
                                static_cast<double>(loss_d.value()[0])});
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
  }
  return model;
}

inline void write_sample_grid(const std::string& path, const GanModel& model,
                              const std::vector<MaskImagePair>& pairs, std::size_t max_rows) {
  if (pairs.empty()) throw ValidationError("write_sample_grid: no pairs");
  const std::size_t rows = std::min(max_rows, pairs.size());
  const int size = model.config().load_size;
  Image grid(3 * size, static_cast<int>(rows) * size, 3);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Image> synth = model.synthesize({pairs[r].mask}, 0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const std::uint8_t m = pairs[r].mask.at(y, x) ? 255 : 0;
        for (int c = 0; c < 3; ++c) {
          grid.at(static_cast<int>(r) * size + y, x, c) = m;
          grid.at(static_cast<int>(r) * size + y, size + x, c) = synth[0].at(y, x, c);
          grid.at(static_cast<int>(r) * size + y, 2 * size + x, c) =
              pairs[r].image.channels == 3 ? pairs[r].image.at(y, x, c) : pairs[r].image.at(y, x, 0);
        }
      }
  }
  write_png(path, grid);
}

}  // namespace trainext
