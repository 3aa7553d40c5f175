#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "trainext/explain.hpp"

using namespace trainext;

namespace {

Image textured_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 3);
  for (int c = 0; c < 3; ++c) {
    const double fx = rng.uniform(0.1, 0.5), fy = rng.uniform(0.1, 0.5);
    const double base = rng.uniform(60, 180);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        img.at(y, x, c) = clamp_u8(base + 70 * std::sin(fx * x) * std::cos(fy * y));
  }
  return img;
}

ExplainConfig fast_config() {
  ExplainConfig c;
  c.num_superpixels = 16;
  c.num_samples = 400;
  c.top_k = 5;
  return c;
}

ProbabilityVector constant_vector() {
  ProbabilityVector v;
  v[0] = 0.6;
  v[1] = 0.2;
  v[2] = 0.15;
  v[3] = 0.05;
  return v;
}

}  // namespace

TEST_CASE("slic produces a contiguous labeling of the requested scale") {
  auto img = textured_image(48, 1);
  auto seg = slic_segments(img, 16, 10.0);
  REQUIRE(seg.count >= 2);
  REQUIRE(seg.count <= 40);  // fragments may merge or split a little
  // labels are dense 0..count-1
  std::set<int> seen(seg.labels.begin(), seg.labels.end());
  REQUIRE(static_cast<int>(seen.size()) == seg.count);
  REQUIRE(*seen.begin() == 0);
  REQUIRE(*seen.rbegin() == seg.count - 1);

  // every segment is 4-connected
  for (int target = 0; target < seg.count; ++target) {
    std::size_t first = 0;
    while (first < seg.labels.size() && seg.labels[first] != target) ++first;
    REQUIRE(first < seg.labels.size());
    std::vector<std::size_t> stack{first};
    std::set<std::size_t> reached{first};
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(i) / seg.width, x = static_cast<int>(i) % seg.width;
      const int dys[] = {-1, 1, 0, 0}, dxs[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dys[k], nx = x + dxs[k];
        if (ny < 0 || ny >= seg.height || nx < 0 || nx >= seg.width) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * seg.width + nx;
        if (seg.labels[j] == target && !reached.count(j)) {
          reached.insert(j);
          stack.push_back(j);
        }
      }
    }
    std::size_t total = 0;
    for (int l : seg.labels)
      if (l == target) ++total;
    REQUIRE(reached.size() == total);
  }
}

TEST_CASE("slic determinism") {
  auto img = textured_image(40, 9);
  auto a = slic_segments(img, 12, 10.0);
  auto b = slic_segments(img, 12, 10.0);
  REQUIRE(a.labels == b.labels);
}

TEST_CASE("constant predictor yields all-zero coefficients") {
  auto img = textured_image(48, 3);
  Predictor constant = [](const Image&) { return constant_vector(); };
  auto exp = explain(constant, img, fast_config(), "img", 5);
  for (double w : exp.weights) REQUIRE(std::fabs(w) < 1e-6);
  REQUIRE(exp.predicted_class == ClassLabel::none);
  REQUIRE_THAT(exp.confidence, Catch::Matchers::WithinAbs(0.6, 1e-12));
}

TEST_CASE("linear black box signs are recovered") {
  auto img = textured_image(64, 7);
  auto config = fast_config();
  config.num_samples = 3000;
  config.num_superpixels = 16;
  config.slic_compactness = 40;  // strongly spatial segments for a stable grid

  // segment the image once so the black box can share the segmentation
  auto seg = slic_segments(img, config.num_superpixels, config.slic_compactness,
                           config.slic_iterations);
  REQUIRE(seg.count >= 4);

  // ground-truth linear coefficients per segment
  Rng truth_rng(123);
  std::vector<double> truth(static_cast<std::size_t>(seg.count));
  for (auto& t : truth) {
    t = truth_rng.uniform(-1.0, 1.0);
    if (std::fabs(t) < 0.15) t = t < 0 ? -0.15 : 0.15;  // stay away from 0
  }

  // the black box reads which segments are "on" (unchanged vs mean-filled)
  double mean_rgb = 0;
  for (auto v : img.data) mean_rgb += v;
  mean_rgb /= static_cast<double>(img.data.size());

  Predictor linear_box = [&](const Image& q) {
    // recover the binary mask by comparing against the original image
    std::vector<std::int64_t> diff(static_cast<std::size_t>(seg.count), 0);
    std::vector<std::int64_t> size(static_cast<std::size_t>(seg.count), 0);
    for (int y = 0; y < q.height; ++y)
      for (int x = 0; x < q.width; ++x) {
        const auto s = static_cast<std::size_t>(seg.at(y, x));
        ++size[s];
        for (int c = 0; c < 3; ++c)
          if (q.at(y, x, c) != img.at(y, x, c)) {
            ++diff[s];
            break;
          }
      }
    double score = 0;
    for (std::size_t s = 0; s < truth.size(); ++s) {
      const bool off = size[s] > 0 && diff[s] * 2 > size[s];
      if (!off) score += truth[s];
    }
    const double p = 1.0 / (1.0 + std::exp(-score / 4.0));
    ProbabilityVector v;
    v[0] = p;
    const double rest = (1.0 - p) / 3.0;
    v[1] = v[2] = v[3] = rest;
    return v;
  };

  auto exp = explain(linear_box, img, config, "img", 11);
  REQUIRE(exp.segments.count == seg.count);

  int agree = 0, considered = 0;
  for (int g = 0; g < seg.count; ++g) {
    ++considered;
    if ((exp.weights[static_cast<std::size_t>(g)] >= 0) == (truth[static_cast<std::size_t>(g)] >= 0))
      ++agree;
  }
  REQUIRE(considered >= 4);
  REQUIRE(static_cast<double>(agree) / considered >= 0.95);
}

TEST_CASE("explanations are deterministic under a fixed seed") {
  auto img = textured_image(48, 15);
  Rng noise(1);
  Predictor box = [&](const Image& q) {
    double s = 0;
    for (std::size_t i = 0; i < q.data.size(); i += 97) s += q.data[i];
    const double p = 0.2 + 0.6 * (std::sin(s * 1e-4) * 0.5 + 0.5);
    ProbabilityVector v;
    v[0] = p;
    v[1] = (1 - p) * 0.5;
    v[2] = (1 - p) * 0.3;
    v[3] = (1 - p) * 0.2;
    return v;
  };
  auto a = explain(box, img, fast_config(), "x", 21);
  auto b = explain(box, img, fast_config(), "x", 21);
  REQUIRE(a.weights == b.weights);
  REQUIRE(a.segments.labels == b.segments.labels);
  auto c = explain(box, img, fast_config(), "x", 22);
  REQUIRE(a.weights != c.weights);
}

TEST_CASE("top list is capped and ranked by magnitude with id tie-break") {
  auto img = textured_image(48, 2);
  Predictor box = [](const Image& q) {
    double s = 0;
    for (std::size_t i = 0; i < q.data.size(); i += 31) s += q.data[i];
    const double p = std::clamp(s / (255.0 * static_cast<double>(q.data.size() / 31)), 0.05, 0.95);
    ProbabilityVector v;
    v[0] = p;
    v[1] = (1 - p) * 0.5;
    v[2] = (1 - p) * 0.3;
    v[3] = (1 - p) * 0.2;
    return v;
  };
  auto config = fast_config();
  config.top_k = 1000;  // more than the segment count
  auto exp = explain(box, img, config, "img", 1);
  REQUIRE(static_cast<int>(exp.top.size()) == exp.segments.count);
  for (std::size_t i = 1; i < exp.top.size(); ++i) {
    const double prev = std::fabs(exp.top[i - 1].weight);
    const double cur = std::fabs(exp.top[i].weight);
    REQUIRE(prev >= cur);
    if (prev == cur) REQUIRE(exp.top[i - 1].segment < exp.top[i].segment);
  }

  config.top_k = 3;
  auto capped = explain(box, img, config, "img", 1);
  REQUIRE(capped.top.size() == 3);
  REQUIRE(capped.top[0].segment == exp.top[0].segment);
}

TEST_CASE("defaults match the documented protocol") {
  ExplainConfig c;
  REQUIRE(c.num_samples == 3000);
  REQUIRE(c.top_k == 10);
  REQUIRE(c.num_superpixels == 50);
  REQUIRE(c.kernel_width == 0.25);
  REQUIRE(c.ridge_lambda == 1.0);
}

TEST_CASE("degenerate segmentation is an error") {
  Image solid(6, 6, 3, 100);
  Predictor constant = [](const Image&) { return constant_vector(); };
  ExplainConfig config = fast_config();
  config.num_superpixels = 2;
  // a tiny uniform image usually still yields >= 2 grid segments; force the
  // degenerate path through the config check instead
  ExplainConfig bad = config;
  bad.num_superpixels = 1;
  REQUIRE_THROWS_AS(explain(constant, solid, bad, "img", 0), ValidationError);
}

TEST_CASE("overlay and csv outputs") {
  namespace fs = std::filesystem;
  auto img = textured_image(48, 31);
  Predictor box = [&](const Image& q) {
    double bright = 0;
    for (std::size_t i = 0; i < q.data.size(); i += 13) bright += q.data[i];
    bright /= static_cast<double>(q.data.size() / 13);
    ProbabilityVector v;
    const double p = std::clamp(bright / 255.0, 0.05, 0.95);
    v[0] = p;
    v[1] = (1 - p) * 0.4;
    v[2] = (1 - p) * 0.35;
    v[3] = (1 - p) * 0.25;
    return v;
  };
  auto exp = explain(box, img, fast_config(), "img9", 3);
  auto overlay = render_overlay(img, exp);
  REQUIRE(overlay.width == img.width);
  REQUIRE(overlay.height == img.height);
  REQUIRE_FALSE(overlay == img);  // some segments got tinted

  const auto dir = fs::temp_directory_path() / "trainext_test_explain";
  fs::create_directories(dir);
  const auto path = (dir / "weights.csv").string();
  write_explanation_csv(path, exp);
  auto table = csv::read_file(path);
  REQUIRE(table.rows.size() == exp.weights.size());
  fs::remove_all(dir);
}
