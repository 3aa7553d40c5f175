#pragma once

// Perturbation-based local explanations: SLIC-style superpixels, random
// on/off segment masks with mean-color fill, a distance-kernel-weighted
// ridge fit of the predicted-class probability, and green/red overlays for
// the most influential segments.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/ensemble.hpp"
#include "trainext/image.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct ExplainConfig {
  int num_superpixels = 50;
  double slic_compactness = 10.0;
  int slic_iterations = 10;
  int num_samples = 3000;
  int top_k = 10;
  double kernel_width = 0.25;
  double ridge_lambda = 1.0;

  void check() const {
    if (num_superpixels < 2) throw ValidationError("explain: need at least 2 superpixels");
    if (num_samples < 1) throw ValidationError("explain: num_samples must be >= 1");
    if (top_k < 1) throw ValidationError("explain: top_k must be >= 1");
    if (kernel_width <= 0) throw ValidationError("explain: kernel_width must be > 0");
    if (ridge_lambda < 0) throw ValidationError("explain: ridge_lambda must be >= 0");
  }
};

using Predictor = std::function<ProbabilityVector(const Image&)>;

// ---------------------------------------------------------------------------
// SLIC superpixels
// ---------------------------------------------------------------------------

namespace detail_slic {

struct LabPixel {
  double l, a, b;
};

inline LabPixel rgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  auto inv_gamma = [](double c) {
    c /= 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  const double r = inv_gamma(r8), g = inv_gamma(g8), b = inv_gamma(b8);
  // sRGB D65
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  auto f = [](double t) {
    return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0;
  };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

}  // namespace detail_slic

struct Segmentation {
  std::vector<int> labels;  // row-major raster of segment ids 0..count-1
  int count = 0;
  int width = 0;
  int height = 0;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

// Grid-seeded local k-means over (L,a,b,x,y) with connectivity enforcement;
// small fragments merge into an adjacent segment.
inline Segmentation slic_segments(const Image& img, int num_segments, double compactness,
                                  int iterations = 10) {
  if (img.empty()) throw ValidationError("slic: empty image");
  if (num_segments < 2) throw ValidationError("slic: need at least 2 segments");
  const int w = img.width, h = img.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;

  std::vector<detail_slic::LabPixel> lab(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (img.channels == 3)
        lab[i] = detail_slic::rgb_to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      else
        lab[i] = detail_slic::rgb_to_lab(img.at(y, x, 0), img.at(y, x, 0), img.at(y, x, 0));
    }

  const double grid = std::sqrt(static_cast<double>(n) / num_segments);
  struct Center {
    double l, a, b, x, y;
  };
  std::vector<Center> centers;
  for (double cy = grid / 2.0; cy < h; cy += grid)
    for (double cx = grid / 2.0; cx < w; cx += grid) {
      const int px = std::min(w - 1, static_cast<int>(cx));
      const int py = std::min(h - 1, static_cast<int>(cy));
      const auto& p = lab[static_cast<std::size_t>(py) * w + px];
      centers.push_back({p.l, p.a, p.b, static_cast<double>(px), static_cast<double>(py)});
    }
  if (centers.size() < 2) {
    // degenerate geometry; split the image in half vertically
    Segmentation seg;
    seg.width = w;
    seg.height = h;
    seg.count = 2;
    seg.labels.resize(n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        seg.labels[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? 0 : 1;
    return seg;
  }

  std::vector<int> labels(n, -1);
  std::vector<double> best(n, 0.0);
  const double inv_grid2 = (compactness * compactness) / (grid * grid);
  for (int iter = 0; iter < iterations; ++iter) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const auto& ctr = centers[c];
      const int x0 = std::max(0, static_cast<int>(ctr.x - 2 * grid));
      const int x1 = std::min(w - 1, static_cast<int>(ctr.x + 2 * grid));
      const int y0 = std::max(0, static_cast<int>(ctr.y - 2 * grid));
      const int y1 = std::min(h - 1, static_cast<int>(ctr.y + 2 * grid));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const auto& p = lab[i];
          const double dl = p.l - ctr.l, da = p.a - ctr.a, db = p.b - ctr.b;
          const double dx = x - ctr.x, dy = y - ctr.y;
          const double d = dl * dl + da * da + db * db + (dx * dx + dy * dy) * inv_grid2;
          if (d < best[i]) {
            best[i] = d;
            labels[i] = static_cast<int>(c);
          }
        }
    }
    // recompute centers
    std::vector<Center> sums(centers.size(), {0, 0, 0, 0, 0});
    std::vector<std::int64_t> counts(centers.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (labels[i] < 0) continue;
        auto& s = sums[static_cast<std::size_t>(labels[i])];
        s.l += lab[i].l;
        s.a += lab[i].a;
        s.b += lab[i].b;
        s.x += x;
        s.y += y;
        ++counts[static_cast<std::size_t>(labels[i])];
      }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (counts[c]) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        centers[c] = {sums[c].l * inv, sums[c].a * inv, sums[c].b * inv, sums[c].x * inv,
                      sums[c].y * inv};
      }
  }

  // connectivity: flood-fill components, absorb fragments below min_size
  // into the previously visited neighbor
  const std::int64_t min_size = std::max<std::int64_t>(1, static_cast<std::int64_t>(n) /
                                                              (num_segments * 4));
  std::vector<int> final_labels(n, -1);
  int next_label = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (final_labels[start] >= 0) continue;
    const int orig = labels[start];
    int adjacent = -1;
    stack.assign(1, start);
    std::vector<std::size_t> component;
    final_labels[start] = next_label;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      component.push_back(i);
      const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
      const int dys[] = {-1, 1, 0, 0}, dxs[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dys[k], nx = x + dxs[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
        if (final_labels[j] < 0 && labels[j] == orig) {
          final_labels[j] = next_label;
          stack.push_back(j);
        } else if (final_labels[j] >= 0 && final_labels[j] != next_label) {
          adjacent = final_labels[j];
        }
      }
    }
    if (static_cast<std::int64_t>(component.size()) < min_size && adjacent >= 0) {
      for (auto i : component) final_labels[i] = adjacent;
    } else {
      ++next_label;
    }
  }

  Segmentation seg;
  seg.labels = std::move(final_labels);
  seg.count = next_label;
  seg.width = w;
  seg.height = h;
  return seg;
}

// ---------------------------------------------------------------------------
// Explanation
// ---------------------------------------------------------------------------

struct Explanation {
  std::string image_id;
  ClassLabel predicted_class = ClassLabel::none;
  double confidence = 0.0;
  Segmentation segments;
  std::vector<double> weights;  // per segment id; regression coefficients

  struct TopSegment {
    int segment = 0;
    double weight = 0.0;  // sign: + raises the predicted-class probability
  };
  std::vector<TopSegment> top;
};

inline Explanation explain(const Predictor& predictor, const Image& image,
                           const ExplainConfig& config, const std::string& image_id = "",
                           std::uint64_t seed = 0) {
  config.check();
  if (image.empty()) throw ValidationError("explain: empty image");

  Explanation exp;
  exp.image_id = image_id;
  exp.segments = slic_segments(image, config.num_superpixels, config.slic_compactness,
                               config.slic_iterations);
  const int n_seg = exp.segments.count;
  if (n_seg < 2) throw ValidationError("explain: degenerate segmentation (" +
                                       std::to_string(n_seg) + " segments)");

  const auto base = predictor(image);
  const Decision base_decision = decide(base);
  exp.predicted_class = base_decision.label;
  exp.confidence = base_decision.confidence;
  const int target = index_of(exp.predicted_class);

  // mean color fill for switched-off segments
  double mean_rgb[3] = {0, 0, 0};
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) mean_rgb[c] += image.at(y, x, c);
  const double inv_n = 1.0 / (static_cast<double>(image.width) * image.height);
  for (int c = 0; c < 3; ++c) mean_rgb[c] *= inv_n;
  Image fill = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        fill.at(y, x, c) = clamp_u8(mean_rgb[std::min(c, 2)]);

  Rng rng(derive_seed(seed, "explain"));
  const int m = config.num_samples;
  Eigen::MatrixXd X(m, n_seg);
  Eigen::VectorXd y(m), sample_weight(m);

  Image perturbed = image;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_seg));
  for (int s = 0; s < m; ++s) {
    std::int64_t on_count = 0;
    for (int g = 0; g < n_seg; ++g) {
      mask[static_cast<std::size_t>(g)] = rng.bernoulli(0.5) ? 1 : 0;
      on_count += mask[static_cast<std::size_t>(g)];
      X(s, g) = mask[static_cast<std::size_t>(g)];
    }
    for (int yy = 0; yy < image.height; ++yy)
      for (int xx = 0; xx < image.width; ++xx) {
        const bool on = mask[static_cast<std::size_t>(exp.segments.at(yy, xx))] != 0;
        for (int c = 0; c < image.channels; ++c)
          perturbed.at(yy, xx, c) = on ? image.at(yy, xx, c) : fill.at(yy, xx, c);
      }
    y(s) = predictor(perturbed)[target];
    // exponential kernel over the cosine distance to the all-on mask;
    // for binary vectors that distance is 1 - sqrt(on/n)
    const double cos_dist =
        1.0 - std::sqrt(static_cast<double>(on_count) / static_cast<double>(n_seg));
    sample_weight(s) =
        std::exp(-(cos_dist * cos_dist) / (config.kernel_width * config.kernel_width));
  }

  // segments that never toggled carry no signal; their coefficient is 0
  std::vector<int> active;
  for (int g = 0; g < n_seg; ++g) {
    const double first = X(0, g);
    for (int s = 1; s < m; ++s)
      if (X(s, g) != first) {
        active.push_back(g);
        break;
      }
  }

  exp.weights.assign(static_cast<std::size_t>(n_seg), 0.0);
  if (!active.empty()) {
    const int k = static_cast<int>(active.size());
    Eigen::MatrixXd Xa(m, k);
    for (int j = 0; j < k; ++j) Xa.col(j) = X.col(active[static_cast<std::size_t>(j)]);

    // weighted ridge with an unpenalized intercept via weighted centering
    const double wsum = sample_weight.sum();
    Eigen::VectorXd xmean = (Xa.transpose() * sample_weight) / wsum;
    const double ymean = y.dot(sample_weight) / wsum;
    Eigen::MatrixXd Xc = Xa.rowwise() - xmean.transpose();
    Eigen::VectorXd yc = y.array() - ymean;
    Eigen::MatrixXd XtW = Xc.transpose() * sample_weight.asDiagonal();
    Eigen::MatrixXd A = XtW * Xc;
    A.diagonal().array() += config.ridge_lambda;
    Eigen::VectorXd beta = A.ldlt().solve(XtW * yc);
    for (int j = 0; j < k; ++j)
      exp.weights[static_cast<std::size_t>(active[static_cast<std::size_t>(j)])] = beta(j);
  }

  // rank by |coefficient| descending, ties by segment id
  std::vector<int> order(static_cast<std::size_t>(n_seg));
  for (int g = 0; g < n_seg; ++g) order[static_cast<std::size_t>(g)] = g;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double wa = std::fabs(exp.weights[static_cast<std::size_t>(a)]);
    const double wb = std::fabs(exp.weights[static_cast<std::size_t>(b)]);
    if (wa != wb) return wa > wb;
    return a < b;
  });
  const int keep = std::min(config.top_k, n_seg);
  for (int i = 0; i < keep; ++i)
    exp.top.push_back({order[static_cast<std::size_t>(i)],
                       exp.weights[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]});
  return exp;
}

// Green tint for probability-raising segments, red for lowering ones.
inline Image render_overlay(const Image& image, const Explanation& exp) {
  Image out = image;
  if (out.channels == 1) {
    Image rgb(out.width, out.height, 3);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = out.at(y, x, 0);
    out = std::move(rgb);
  }
  std::vector<int> tint(static_cast<std::size_t>(exp.segments.count), 0);
  for (const auto& t : exp.top)
    tint[static_cast<std::size_t>(t.segment)] = t.weight >= 0 ? 1 : -1;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const int t = tint[static_cast<std::size_t>(exp.segments.at(y, x))];
      if (!t) continue;
      const int channel = t > 0 ? 1 : 0;  // green vs red
      out.at(y, x, channel) = clamp_u8(0.5 * out.at(y, x, channel) + 0.5 * 255.0);
      const int other = t > 0 ? 0 : 1;
      out.at(y, x, other) = clamp_u8(0.5 * out.at(y, x, other));
      out.at(y, x, 2) = clamp_u8(0.5 * out.at(y, x, 2));
    }
  return out;
}

inline void write_explanation_csv(const std::string& path, const Explanation& exp) {
  csv::Writer w(path);
  w.row({"superpixel", "coefficient"});
  for (std::size_t g = 0; g < exp.weights.size(); ++g) {
    std::ostringstream s;
    s << std::setprecision(17) << exp.weights[g];
    w.row({std::to_string(g), s.str()});
  }
}

}  // namespace trainext
