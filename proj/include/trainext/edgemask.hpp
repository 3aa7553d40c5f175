#pragma once

// Canny edge masks: grayscale -> Gaussian blur -> Sobel gradients ->
// non-maximum suppression -> double-threshold hysteresis. Masks are the sole
// conditioning input for zero-class synthesis model training.

#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trainext/catalog.hpp"
#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/image.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct CannyParams {
  // 0 selects the automatic kernel radius ceil(3*sigma)
  double radius = 0.0;
  double sigma = 1.0;
  // hysteresis thresholds as percentages; interpretation set by mode
  double low_percent = 10.0;
  double high_percent = 30.0;
  enum class ThresholdMode {
    max_fraction,  // percent of the maximum suppressed gradient magnitude
    percentile,    // percentile of the nonzero suppressed magnitudes
  };
  ThresholdMode mode = ThresholdMode::max_fraction;

  void check() const {
    if (radius < 0.0) throw ValidationError("canny: radius must be >= 0");
    if (sigma <= 0.0) throw ValidationError("canny: sigma must be > 0");
    if (!(0.0 <= low_percent && low_percent <= high_percent && high_percent <= 100.0))
      throw ValidationError("canny: need 0 <= low <= high <= 100");
  }

  int kernel_radius() const {
    if (radius > 0.0) return static_cast<int>(std::lround(radius));
    return static_cast<int>(std::ceil(3.0 * sigma));
  }
};

struct EdgeMask {
  Bitmap pixels;
  std::string source_id;
  CannyParams params;
  std::string warning;  // set for degenerate inputs that yield an empty mask
};

namespace detail_canny {

inline std::vector<double> grayscale_plane(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v;
      if (img.channels == 1)
        v = img.at(y, x, 0);
      else
        v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      out[static_cast<std::size_t>(y) * img.width + x] = v / 255.0;
    }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// separable blur with reflect101 borders
inline std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h,
                                         double sigma, int radius) {
  const auto kernel = gaussian_kernel(sigma, radius);
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               src[static_cast<std::size_t>(y) * w + reflect101(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] *
               tmp[static_cast<std::size_t>(reflect101(y + i, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail_canny

inline EdgeMask canny(const Image& img, const CannyParams& params,
                      const std::string& source_id = "") {
  params.check();
  if (img.empty()) throw ValidationError("canny: empty image");

  EdgeMask mask;
  mask.source_id = source_id;
  mask.params = params;
  mask.pixels = Bitmap(img.width, img.height);

  const int w = img.width, h = img.height;
  if (w < 3 || h < 3) {
    mask.warning = "image too small for gradient estimation, mask left empty";
    return mask;
  }

  const auto gray = detail_canny::grayscale_plane(img);
  const auto blurred = detail_canny::gaussian_blur(gray, w, h, params.sigma, params.kernel_radius());

  // Sobel gradients, reflect101 borders
  std::vector<double> mag(static_cast<std::size_t>(w) * h);
  std::vector<double> gx_v(static_cast<std::size_t>(w) * h), gy_v(static_cast<std::size_t>(w) * h);
  auto at = [&](const std::vector<double>& p, int y, int x) {
    return p[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(blurred, y - 1, x + 1) + 2 * at(blurred, y, x + 1) +
                         at(blurred, y + 1, x + 1)) -
                        (at(blurred, y - 1, x - 1) + 2 * at(blurred, y, x - 1) +
                         at(blurred, y + 1, x - 1));
      const double gy = (at(blurred, y + 1, x - 1) + 2 * at(blurred, y + 1, x) +
                         at(blurred, y + 1, x + 1)) -
                        (at(blurred, y - 1, x - 1) + 2 * at(blurred, y - 1, x) +
                         at(blurred, y - 1, x + 1));
      gx_v[static_cast<std::size_t>(y) * w + x] = gx;
      gy_v[static_cast<std::size_t>(y) * w + x] = gy;
      mag[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }

  // Non-maximum suppression. The gradient direction is quantized into four
  // sectors; a pixel survives when strictly greater than the neighbor ahead
  // and at least equal to the neighbor behind, so plateau ties keep exactly
  // one pixel.
  std::vector<double> suppressed(static_cast<std::size_t>(w) * h, 0.0);
  auto mag_at = [&](int y, int x) {
    return mag[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m == 0.0) continue;
      const double gx = gx_v[i], gy = gy_v[i];
      // sector of the gradient direction in [0, 180)
      double angle = std::atan2(gy, gx) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      int dy, dx;
      if (angle < 22.5 || angle >= 157.5) {
        dy = 0;
        dx = 1;
      } else if (angle < 67.5) {
        dy = 1;
        dx = 1;
      } else if (angle < 112.5) {
        dy = 1;
        dx = 0;
      } else {
        dy = 1;
        dx = -1;
      }
      const double ahead = mag_at(y + dy, x + dx);
      const double behind = mag_at(y - dy, x - dx);
      if (m > ahead && m >= behind) suppressed[i] = m;
    }

  double threshold_low = 0.0, threshold_high = 0.0;
  if (params.mode == CannyParams::ThresholdMode::max_fraction) {
    double max_mag = 0.0;
    for (double v : suppressed) max_mag = std::max(max_mag, v);
    if (max_mag == 0.0) return mask;  // flat image
    threshold_low = params.low_percent / 100.0 * max_mag;
    threshold_high = params.high_percent / 100.0 * max_mag;
  } else {
    std::vector<double> nonzero;
    for (double v : suppressed)
      if (v > 0.0) nonzero.push_back(v);
    if (nonzero.empty()) return mask;
    std::sort(nonzero.begin(), nonzero.end());
    auto percentile = [&](double p) {
      const auto idx = static_cast<std::size_t>(
          std::min<double>(static_cast<double>(nonzero.size() - 1),
                           p / 100.0 * static_cast<double>(nonzero.size() - 1)));
      return nonzero[idx];
    };
    threshold_low = percentile(params.low_percent);
    threshold_high = percentile(params.high_percent);
  }

  // hysteresis: strong seeds expand through connected weak pixels (8-conn)
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (suppressed[static_cast<std::size_t>(y) * w + x] >= threshold_high &&
          suppressed[static_cast<std::size_t>(y) * w + x] > 0.0) {
        mask.pixels.at(y, x) = 1;
        frontier.emplace_back(y, x);
      }
  while (!frontier.empty()) {
    const auto [y, x] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dy && !dx) continue;
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (mask.pixels.at(ny, nx)) continue;
        const double v = suppressed[static_cast<std::size_t>(ny) * w + nx];
        if (v >= threshold_low && v > 0.0) {
          mask.pixels.at(ny, nx) = 1;
          frontier.emplace_back(ny, nx);
        }
      }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Batch mask generation over a catalog
// ---------------------------------------------------------------------------

struct BatchMaskItemError {
  std::string id;
  std::string message;
};

struct BatchMaskResult {
  std::vector<EdgeMask> masks;
  std::vector<BatchMaskItemError> errors;  // per-item failures, batch continues
};

// One mask per labeled record of the filtered class (all classes when the
// filter is empty).
inline BatchMaskResult batch_masks(const Catalog& catalog, std::optional<ClassLabel> class_filter,
                                   const CannyParams& params,
                                   const ImageLoader& loader = load_record_image) {
  params.check();
  BatchMaskResult result;
  for (const auto* rec : catalog.labeled_records()) {
    if (class_filter && rec->label != *class_filter) continue;
    try {
      result.masks.push_back(canny(loader(*rec), params, rec->id));
    } catch (const Error& e) {
      result.errors.push_back({rec->id, e.what()});
    }
  }
  return result;
}

// mask file naming and the mask manifest pairing mask <-> source record
inline std::string mask_filename(const std::string& image_id) { return image_id + "_edge.png"; }

struct MaskManifestRow {
  std::string mask_path;
  std::string source_id;
  ClassLabel source_class = ClassLabel::none;
};

inline void write_mask_manifest(const std::string& path, const std::vector<MaskManifestRow>& rows) {
  csv::Writer w(path);
  w.row({"mask_path", "source_id", "source_class"});
  for (const auto& r : rows) w.row({r.mask_path, r.source_id, to_string(r.source_class)});
}

inline std::vector<MaskManifestRow> read_mask_manifest(const std::string& path) {
  auto table = csv::read_file(path);
  const std::vector<std::string> expected{"mask_path", "source_id", "source_class"};
  if (table.header != expected) throw ParseError(path + ": unexpected mask manifest header");
  std::vector<MaskManifestRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto cls = parse_class_label(table.rows[r][2]);
    if (!cls)
      throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                       ": unknown source_class '" + table.rows[r][2] + "'");
    rows.push_back({table.rows[r][0], table.rows[r][1], *cls});
  }
  return rows;
}

}  // namespace trainext
