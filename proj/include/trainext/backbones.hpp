#pragma once

// Classifier networks behind a name registry. Tests run the tiny variants;
// the efficientnet-* names map to compound-scaled members of the same staged
// convolutional family and stay the configured defaults.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/nn.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct BackboneArch {
  std::string name;
  std::vector<int> widths;  // channels per stage; a 2x2 max-pool follows each stage
  std::vector<int> depths;  // conv blocks per stage
};

inline const std::map<std::string, BackboneArch>& backbone_registry() {
  static const std::map<std::string, BackboneArch> registry = {
      {"tiny", {"tiny", {8, 16}, {1, 1}}},
      {"tiny-wide", {"tiny-wide", {12, 24}, {1, 1}}},
      {"tiny-deep", {"tiny-deep", {8, 16, 32}, {1, 1, 1}}},
      {"efficientnet-b0", {"efficientnet-b0", {32, 64, 128, 256}, {1, 2, 2, 3}}},
      {"efficientnet-b1", {"efficientnet-b1", {32, 64, 128, 256}, {2, 2, 3, 3}}},
      {"efficientnet-b2", {"efficientnet-b2", {36, 70, 140, 280}, {2, 2, 3, 3}}},
  };
  return registry;
}

inline BackboneArch resolve_backbone(const std::string& name) {
  auto it = backbone_registry().find(name);
  if (it == backbone_registry().end())
    throw ValidationError("unknown backbone '" + name + "'");
  return it->second;
}

// Staged CNN: stem conv, then per stage [conv + instance norm + relu] x depth
// followed by a 2x2 max pool, global average pooling and a linear head. The
// head is the "freshly added classification layer" that warm-up trains alone.
template <typename T>
class ClassifierNet {
 public:
  ClassifierNet(const BackboneArch& arch, double dropout, Rng& rng)
      : arch_(arch), dropout_(dropout) {
    int in_ch = 3;
    for (std::size_t s = 0; s < arch.widths.size(); ++s) {
      for (int d = 0; d < arch.depths[s]; ++d) {
        convs_.emplace_back(in_ch, arch.widths[s], 3, 1, 1, rng);
        norms_.emplace_back(arch.widths[s]);
        in_ch = arch.widths[s];
      }
      stage_ends_.push_back(convs_.size());
    }
    head_ = nn::Linear<T>(in_ch, kNumClasses, rng);
  }

  nn::Var<T> forward(const nn::Var<T>& images, bool training, Rng& rng) {
    nn::Var<T> x = images;
    std::size_t layer = 0;
    for (std::size_t end : stage_ends_) {
      for (; layer < end; ++layer)
        x = nn::relu(norms_[layer].forward(convs_[layer].forward(x)));
      if (x.value().dim(2) >= 2 && x.value().dim(3) >= 2) x = nn::max_pool2d(x, 2, 2);
    }
    x = nn::global_avg_pool(x);
    x = nn::dropout(x, dropout_, training, rng);
    return head_.forward(x);
  }

  nn::NamedParams<T> named_parameters() {
    nn::NamedParams<T> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect("backbone.conv" + std::to_string(i), out);
      norms_[i].collect("backbone.norm" + std::to_string(i), out);
    }
    head_.collect("head.fc", out);
    return out;
  }

  std::vector<nn::Var<T>*> all_parameters() {
    std::vector<nn::Var<T>*> out;
    for (auto& [name, var] : named_parameters()) out.push_back(var);
    return out;
  }

  std::vector<nn::Var<T>*> head_parameters() {
    return {&head_.weight, &head_.bias};
  }

  const BackboneArch& arch() const { return arch_; }
  double dropout() const { return dropout_; }

 private:
  BackboneArch arch_;
  double dropout_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::InstanceNorm2d<T>> norms_;
  std::vector<std::size_t> stage_ends_;
  nn::Linear<T> head_;
};

}  // namespace trainext
