#pragma once

// The two augmentation pipelines (baseline and extended) as declarative,
// serializable step lists, plus their deterministic application to images.
// Parameter magnitudes are config defaults and always serialized with the
// spec so they show up in run reports.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/image.hpp"
#include "trainext/tensor.hpp"

namespace trainext {

struct TransformStep {
  std::string name;
  std::map<std::string, double> params;

  double param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end())
      throw ValidationError("transform '" + name + "' missing parameter '" + key + "'");
    return it->second;
  }
};

struct AugmentationSpec {
  enum class Kind { baseline, extended };
  Kind kind = Kind::baseline;
  std::vector<TransformStep> steps;

  std::vector<std::string> step_names() const {
    std::vector<std::string> names;
    names.reserve(steps.size());
    for (const auto& s : steps) names.push_back(s.name);
    return names;
  }

  bool has_step(const std::string& name) const {
    for (const auto& s : steps)
      if (s.name == name) return true;
    return false;
  }
};

inline const char* to_string(AugmentationSpec::Kind k) {
  return k == AugmentationSpec::Kind::baseline ? "baseline" : "extended";
}

// crop size 224 pairs with resize 256; other sizes keep the same 8:7 ratio
inline int resize_for_crop(int crop_size) {
  return std::max(crop_size, static_cast<int>(std::lround(crop_size * 8.0 / 7.0)));
}

inline AugmentationSpec build_augmentation(AugmentationSpec::Kind kind, int image_size = 224) {
  if (image_size < 2) throw ValidationError("build_augmentation: image size too small");
  const double load = resize_for_crop(image_size);
  const double size = image_size;

  AugmentationSpec spec;
  spec.kind = kind;
  auto step = [&](std::string name, std::map<std::string, double> params) {
    spec.steps.push_back({std::move(name), std::move(params)});
  };

  step("resize", {{"height", load}, {"width", load}});
  step("random-crop", {{"height", size}, {"width", size}});
  step("vertical-flip", {{"p", 0.5}});
  step("horizontal-flip", {{"p", 0.5}});
  step("shift-scale-rotate",
       {{"p", 0.5}, {"shift_limit", 0.0625}, {"scale_limit", 0.1}, {"rotate_limit", 45}});
  if (kind == AugmentationSpec::Kind::baseline) {
    step("rgb-shift",
         {{"p", 0.5}, {"r_shift_limit", 20}, {"g_shift_limit", 20}, {"b_shift_limit", 20}});
    step("random-brightness-contrast",
         {{"p", 0.5}, {"brightness_limit", 0.2}, {"contrast_limit", 0.2}});
  } else {
    step("random-brightness-contrast",
         {{"p", 0.5}, {"brightness_limit", 0.2}, {"contrast_limit", 0.2}});
    step("blur", {{"p", 0.5}, {"blur_limit", 7}});
    step("median-blur", {{"p", 0.5}, {"blur_limit", 7}});
    step("downscale", {{"p", 0.5}, {"scale_min", 0.25}, {"scale_max", 0.9}});
    step("elastic-transform", {{"p", 0.5}, {"alpha", 40}, {"sigma", 6}});
    step("optical-distortion", {{"p", 0.5}, {"distort_limit", 0.05}, {"shift_limit", 0.05}});
    step("grid-distortion", {{"p", 0.5}, {"num_steps", 5}, {"distort_limit", 0.3}});
  }
  step("normalize", {{"mean_r", 0.485},
                     {"mean_g", 0.456},
                     {"mean_b", 0.406},
                     {"std_r", 0.229},
                     {"std_g", 0.224},
                     {"std_b", 0.225}});
  return spec;
}

// ---------------------------------------------------------------------------
// Individual transforms
// ---------------------------------------------------------------------------

namespace detail_augment {

inline Image flip_vertical(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(src.height - 1 - y, x, c);
  return out;
}

inline Image flip_horizontal(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

inline Image shift_scale_rotate(const Image& src, double shift_x, double shift_y, double scl,
                                double angle_deg, Rng&) {
  const double a = angle_deg * 3.14159265358979323846 / 180.0;
  const double cos_a = std::cos(a) / scl, sin_a = std::sin(a) / scl;
  const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
  const double tx = shift_x * src.width, ty = shift_y * src.height;
  std::vector<float> map_x(static_cast<std::size_t>(src.width) * src.height);
  std::vector<float> map_y(map_x.size());
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      // inverse map: undo shift, then rotate/scale about the center
      const double dx = (x - tx) - cx;
      const double dy = (y - ty) - cy;
      const std::size_t i = static_cast<std::size_t>(y) * src.width + x;
      map_x[i] = static_cast<float>(cx + cos_a * dx + sin_a * dy);
      map_y[i] = static_cast<float>(cy - sin_a * dx + cos_a * dy);
    }
  return remap(src, src.width, src.height, map_y, map_x);
}

inline Image rgb_shift(const Image& src, const std::array<int, 3>& shifts) {
  Image out = src;
  if (src.channels != 3) return out;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = clamp_u8(src.at(y, x, c) + shifts[static_cast<std::size_t>(c)]);
  return out;
}

inline Image brightness_contrast(const Image& src, double alpha, double beta) {
  Image out = src;
  for (std::size_t i = 0; i < src.data.size(); ++i)
    out.data[i] = clamp_u8(alpha * src.data[i] + beta * 255.0);
  return out;
}

inline Image box_blur(const Image& src, int k) {
  const int r = k / 2;
  Image out(src.width, src.height, src.channels);
  const double inv = 1.0 / (k * k);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += src.at(reflect101(y + dy, src.height), reflect101(x + dx, src.width), c);
        out.at(y, x, c) = clamp_u8(acc * inv);
      }
  return out;
}

inline Image median_blur(const Image& src, int k) {
  const int r = k / 2;
  Image out(src.width, src.height, src.channels);
  std::vector<std::uint8_t> window;
  window.reserve(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        window.clear();
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            window.push_back(
                src.at(reflect101(y + dy, src.height), reflect101(x + dx, src.width), c));
        auto mid = window.begin() + window.size() / 2;
        std::nth_element(window.begin(), mid, window.end());
        out.at(y, x, c) = *mid;
      }
  return out;
}

inline Image downscale_upscale(const Image& src, double scale) {
  const int w = std::max(1, static_cast<int>(std::lround(src.width * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(src.height * scale)));
  Image small = resize_bilinear(src, w, h);
  // nearest-neighbor upscale keeps the characteristic blockiness
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const int sy = std::min(h - 1, static_cast<int>(static_cast<double>(y) * h / src.height));
      const int sx = std::min(w - 1, static_cast<int>(static_cast<double>(x) * w / src.width));
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = small.at(sy, sx, c);
    }
  return out;
}

inline Image elastic_transform(const Image& src, double alpha, double sigma, Rng& rng) {
  const std::size_t plane = static_cast<std::size_t>(src.width) * src.height;
  std::vector<double> dx(plane), dy(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    dx[i] = rng.uniform(-1.0, 1.0);
    dy[i] = rng.uniform(-1.0, 1.0);
  }
  // smooth the displacement fields with a gaussian
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        std::exp(-(static_cast<double>(i) * i) / (2 * sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : kernel) v /= ksum;
  auto smooth = [&](std::vector<double>& field) {
    std::vector<double> tmp(field.size());
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 field[static_cast<std::size_t>(y) * src.width + reflect101(x + i, src.width)];
        tmp[static_cast<std::size_t>(y) * src.width + x] = acc;
      }
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(reflect101(y + i, src.height)) * src.width + x];
        field[static_cast<std::size_t>(y) * src.width + x] = acc;
      }
  };
  smooth(dx);
  smooth(dy);

  std::vector<float> map_x(plane), map_y(plane);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * src.width + x;
      map_x[i] = static_cast<float>(x + alpha * dx[i]);
      map_y[i] = static_cast<float>(y + alpha * dy[i]);
    }
  return remap(src, src.width, src.height, map_y, map_x);
}

inline Image optical_distortion(const Image& src, double k, double shift_x, double shift_y) {
  const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
  const double max_r = std::hypot(cx, cy);
  const std::size_t plane = static_cast<std::size_t>(src.width) * src.height;
  std::vector<float> map_x(plane), map_y(plane);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const double ndx = (x - cx) / max_r, ndy = (y - cy) / max_r;
      const double r2 = ndx * ndx + ndy * ndy;
      const double factor = 1.0 + k * r2;
      const std::size_t i = static_cast<std::size_t>(y) * src.width + x;
      map_x[i] = static_cast<float>(cx + (x - cx) * factor + shift_x * src.width);
      map_y[i] = static_cast<float>(cy + (y - cy) * factor + shift_y * src.height);
    }
  return remap(src, src.width, src.height, map_y, map_x);
}

// independent piecewise-linear stretching of the x and y axes: each grid
// cell's width is scaled by its factor, then the knots are rescaled so the
// axis still covers the full extent
inline Image grid_distortion(const Image& src, int num_steps, const std::vector<double>& fx,
                             const std::vector<double>& fy) {
  auto build_axis = [&](int size, const std::vector<double>& factors) {
    const double step = static_cast<double>(size) / num_steps;
    std::vector<double> dst_knots(static_cast<std::size_t>(num_steps) + 1, 0.0);
    for (int cell = 0; cell < num_steps; ++cell)
      dst_knots[static_cast<std::size_t>(cell) + 1] =
          dst_knots[static_cast<std::size_t>(cell)] + step * factors[static_cast<std::size_t>(cell)];
    const double total = dst_knots.back();
    for (auto& d : dst_knots) d *= size / total;

    std::vector<float> map(static_cast<std::size_t>(size));
    int cell = 0;
    for (int p = 0; p < size; ++p) {
      while (cell + 1 < num_steps && p >= dst_knots[static_cast<std::size_t>(cell) + 1]) ++cell;
      const double d0 = dst_knots[static_cast<std::size_t>(cell)];
      const double d1 = dst_knots[static_cast<std::size_t>(cell) + 1];
      const double t = d1 > d0 ? (p - d0) / (d1 - d0) : 0.0;
      map[static_cast<std::size_t>(p)] = static_cast<float>((cell + t) * step);
    }
    return map;
  };
  auto ax = build_axis(src.width, fx);
  auto ay = build_axis(src.height, fy);
  const std::size_t plane = static_cast<std::size_t>(src.width) * src.height;
  std::vector<float> map_x(plane), map_y(plane);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * src.width + x;
      map_x[i] = ax[static_cast<std::size_t>(x)];
      map_y[i] = ay[static_cast<std::size_t>(y)];
    }
  return remap(src, src.width, src.height, map_y, map_x);
}

}  // namespace detail_augment

// Applies every step except the trailing normalization (which produces the
// float training tensor, see normalize_to_tensor). Deterministic for a fixed
// (spec, image, seed) triple.
inline Image apply_augmentation(const AugmentationSpec& spec, const Image& image,
                                std::uint64_t seed) {
  if (image.empty()) throw ValidationError("apply_augmentation: empty image");
  using namespace detail_augment;
  Rng rng(derive_seed(seed, "augment"));
  Image img = image;
  for (const auto& step : spec.steps) {
    if (step.name == "resize") {
      img = resize_bilinear(img, static_cast<int>(step.param("width")),
                            static_cast<int>(step.param("height")));
    } else if (step.name == "random-crop") {
      const int ch = static_cast<int>(step.param("height"));
      const int cw = static_cast<int>(step.param("width"));
      if (ch > img.height || cw > img.width)
        throw ValidationError("random-crop: crop larger than image");
      const int oy = static_cast<int>(rng.uniform_int(0, img.height - ch));
      const int ox = static_cast<int>(rng.uniform_int(0, img.width - cw));
      Image out(cw, ch, img.channels);
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y + oy, x + ox, c);
      img = std::move(out);
    } else if (step.name == "vertical-flip") {
      if (rng.bernoulli(step.param("p"))) img = flip_vertical(img);
    } else if (step.name == "horizontal-flip") {
      if (rng.bernoulli(step.param("p"))) img = flip_horizontal(img);
    } else if (step.name == "shift-scale-rotate") {
      if (rng.bernoulli(step.param("p"))) {
        const double sl = step.param("shift_limit");
        const double sc = step.param("scale_limit");
        const double rl = step.param("rotate_limit");
        img = shift_scale_rotate(img, rng.uniform(-sl, sl), rng.uniform(-sl, sl),
                                 1.0 + rng.uniform(-sc, sc), rng.uniform(-rl, rl), rng);
      }
    } else if (step.name == "rgb-shift") {
      if (rng.bernoulli(step.param("p"))) {
        std::array<int, 3> shifts{};
        shifts[0] = static_cast<int>(rng.uniform_int(
            -static_cast<std::int64_t>(step.param("r_shift_limit")),
            static_cast<std::int64_t>(step.param("r_shift_limit"))));
        shifts[1] = static_cast<int>(rng.uniform_int(
            -static_cast<std::int64_t>(step.param("g_shift_limit")),
            static_cast<std::int64_t>(step.param("g_shift_limit"))));
        shifts[2] = static_cast<int>(rng.uniform_int(
            -static_cast<std::int64_t>(step.param("b_shift_limit")),
            static_cast<std::int64_t>(step.param("b_shift_limit"))));
        img = rgb_shift(img, shifts);
      }
    } else if (step.name == "random-brightness-contrast") {
      if (rng.bernoulli(step.param("p"))) {
        const double cl = step.param("contrast_limit");
        const double bl = step.param("brightness_limit");
        img = brightness_contrast(img, 1.0 + rng.uniform(-cl, cl), rng.uniform(-bl, bl));
      }
    } else if (step.name == "blur") {
      if (rng.bernoulli(step.param("p"))) {
        const int limit = static_cast<int>(step.param("blur_limit"));
        const int k = 3 + 2 * static_cast<int>(rng.uniform_int(0, std::max(0, (limit - 3) / 2)));
        img = box_blur(img, k);
      }
    } else if (step.name == "median-blur") {
      if (rng.bernoulli(step.param("p"))) {
        const int limit = static_cast<int>(step.param("blur_limit"));
        const int k = 3 + 2 * static_cast<int>(rng.uniform_int(0, std::max(0, (limit - 3) / 2)));
        img = median_blur(img, k);
      }
    } else if (step.name == "downscale") {
      if (rng.bernoulli(step.param("p")))
        img = downscale_upscale(img, rng.uniform(step.param("scale_min"), step.param("scale_max")));
    } else if (step.name == "elastic-transform") {
      if (rng.bernoulli(step.param("p")))
        img = elastic_transform(img, step.param("alpha"), step.param("sigma"), rng);
    } else if (step.name == "optical-distortion") {
      if (rng.bernoulli(step.param("p"))) {
        const double dl = step.param("distort_limit");
        const double sl = step.param("shift_limit");
        img = optical_distortion(img, rng.uniform(-dl, dl), rng.uniform(-sl, sl),
                                 rng.uniform(-sl, sl));
      }
    } else if (step.name == "grid-distortion") {
      if (rng.bernoulli(step.param("p"))) {
        const int steps = static_cast<int>(step.param("num_steps"));
        const double dl = step.param("distort_limit");
        std::vector<double> fx(static_cast<std::size_t>(steps)), fy(static_cast<std::size_t>(steps));
        for (auto& f : fx) f = 1.0 + rng.uniform(-dl, dl);
        for (auto& f : fy) f = 1.0 + rng.uniform(-dl, dl);
        img = detail_augment::grid_distortion(img, steps, fx, fy);
      }
    } else if (step.name == "normalize") {
      // terminal step; produces the float tensor via normalize_to_tensor
    } else {
      throw ValidationError("apply_augmentation: unknown transform '" + step.name + "'");
    }
  }
  return img;
}

// The trailing normalize step: 8-bit RGB -> float CHW tensor.
inline TensorT<float> normalize_to_tensor(const AugmentationSpec& spec, const Image& img) {
  const TransformStep* norm = nullptr;
  for (const auto& s : spec.steps)
    if (s.name == "normalize") norm = &s;
  if (!norm) throw ValidationError("normalize_to_tensor: spec has no normalize step");
  const double means[3] = {norm->param("mean_r"), norm->param("mean_g"), norm->param("mean_b")};
  const double stds[3] = {norm->param("std_r"), norm->param("std_g"), norm->param("std_b")};
  TensorT<float> out({3, img.height, img.width});
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 3 ? c : 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out[(static_cast<std::int64_t>(c) * img.height + y) * img.width + x] =
            static_cast<float>((img.at(y, x, src_c) / 255.0 - means[c]) / stds[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: ordered step list in a JSON document
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const AugmentationSpec& spec) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : spec.steps) {
    nlohmann::json params;
    for (const auto& [k, v] : s.params) params[k] = v;
    steps.push_back({{"name", s.name}, {"params", params}});
  }
  return {{"kind", to_string(spec.kind)}, {"steps", steps}};
}

inline AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
  AugmentationSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "baseline")
    spec.kind = AugmentationSpec::Kind::baseline;
  else if (kind == "extended")
    spec.kind = AugmentationSpec::Kind::extended;
  else
    throw ParseError("augmentation spec: unknown kind '" + kind + "'");
  for (const auto& s : j.at("steps")) {
    TransformStep step;
    step.name = s.at("name").get<std::string>();
    for (const auto& [k, v] : s.at("params").items()) step.params[k] = v.get<double>();
    spec.steps.push_back(std::move(step));
  }
  return spec;
}

}  // namespace trainext
