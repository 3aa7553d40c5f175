#pragma once

// Bundled desk-scale dataset: four visually distinct lesion-style classes
// rendered onto a skin-like background. Used by the end-to-end smoke run and
// regenerable through the CLI.

#include <cmath>
#include <filesystem>
#include <string>

#include "trainext/catalog.hpp"
#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/image.hpp"
#include "trainext/types.hpp"

namespace trainext::toydata {

inline Image make_image(ClassLabel label, Rng& rng, int size = 64) {
  Image img(size, size, 3);
  // skin-like base with smooth shading
  const double base_r = rng.uniform(195, 215);
  const double base_g = rng.uniform(150, 170);
  const double base_b = rng.uniform(130, 150);
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
  const double phase = rng.uniform(0, 6.28);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double shade = 12.0 * std::sin(fx * x + fy * y + phase);
      img.at(y, x, 0) = clamp_u8(base_r + shade + rng.uniform(-6, 6));
      img.at(y, x, 1) = clamp_u8(base_g + shade + rng.uniform(-6, 6));
      img.at(y, x, 2) = clamp_u8(base_b + shade + rng.uniform(-6, 6));
    }
  if (label == ClassLabel::none) return img;

  // lesion ellipse; coloring differs per class
  const double cx = rng.uniform(size * 0.3, size * 0.7);
  const double cy = rng.uniform(size * 0.3, size * 0.7);
  const double rx = rng.uniform(size * 0.15, size * 0.3);
  const double ry = rng.uniform(size * 0.15, size * 0.3);
  const double tilt = rng.uniform(0, 3.14159);
  const double ct = std::cos(tilt), st = std::sin(tilt);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = (dx * ct + dy * st) / rx;
      const double v = (-dx * st + dy * ct) / ry;
      const double d = u * u + v * v;
      if (d >= 1.0) continue;
      const double edge = std::min(1.0, (1.0 - d) * 3.0);  // soft rim
      double r, g, b;
      const bool dark_half = (label == ClassLabel::both) && u > 0;
      if (label == ClassLabel::infection || (label == ClassLabel::both && !dark_half)) {
        r = 185 + rng.uniform(-12, 12);
        g = 55 + rng.uniform(-12, 12);
        b = 50 + rng.uniform(-12, 12);
      } else {
        // ischaemic tissue: dark, slightly blue
        r = 60 + rng.uniform(-10, 10);
        g = 50 + rng.uniform(-10, 10);
        b = 85 + rng.uniform(-10, 10);
      }
      for (int c = 0; c < 3; ++c) {
        const double target = c == 0 ? r : (c == 1 ? g : b);
        img.at(y, x, c) = clamp_u8((1.0 - edge) * img.at(y, x, c) + edge * target);
      }
    }
  return img;
}

struct GenerateOptions {
  int labeled_per_class = 10;
  int unlabeled = 20;
  int validation_per_class = 3;
  int image_size = 64;
};

// Writes images/, manifest.csv (paths relative to the manifest) and
// validation_labels.csv for the held-back validation labels.
inline void generate(const std::string& out_dir, std::uint64_t seed,
                     const GenerateOptions& opts = {}) {
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  Rng rng(derive_seed(seed, "toydata"));

  csv::Writer manifest((root / "manifest.csv").string());
  manifest.row(manifest_header());
  csv::Writer truth((root / "validation_labels.csv").string());
  truth.row({"id", "label"});

  int counter = 0;
  auto emit = [&](ClassLabel label, Split split, bool with_label, const std::string& prefix) {
    const std::string id = prefix + "_" + std::to_string(counter++);
    const std::string rel = "images/" + id + ".png";
    write_png((root / rel).string(), make_image(label, rng, opts.image_size));
    manifest.row({id, rel, to_string(split), with_label ? to_string(label) : "", "real", "", ""});
    return id;
  };

  for (auto label : kAllClasses)
    for (int i = 0; i < opts.labeled_per_class; ++i)
      emit(label, Split::train_labeled, true, "train");
  for (int i = 0; i < opts.unlabeled; ++i)
    emit(kAllClasses[static_cast<std::size_t>(i % kNumClasses)], Split::train_unlabeled, false,
         "unlabeled");
  for (auto label : kAllClasses)
    for (int i = 0; i < opts.validation_per_class; ++i) {
      const auto id = emit(label, Split::validation, false, "val");
      truth.row({id, to_string(label)});
    }
}

}  // namespace trainext::toydata
