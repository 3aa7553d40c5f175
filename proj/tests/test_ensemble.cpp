#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <vector>

#include "trainext/ensemble.hpp"

using namespace trainext;

namespace {

ProbabilityVector random_simplex(Rng& rng) {
  ProbabilityVector v;
  double sum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    v[c] = -std::log(1.0 - rng.uniform());
    sum += v[c];
  }
  for (int c = 0; c < kNumClasses; ++c) v[c] /= sum;
  return v;
}

}  // namespace

TEST_CASE("single member is the identity") {
  Rng rng(1);
  std::vector<ProbabilityVector> preds{random_simplex(rng), random_simplex(rng)};
  auto out = average_probabilities({preds});
  REQUIRE(out.size() == preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c) REQUIRE(out[i][c] == preds[i][c]);
}

TEST_CASE("two-model arithmetic mean") {
  ProbabilityVector a{{0.6, 0.2, 0.1, 0.1}};
  ProbabilityVector b{{0.2, 0.6, 0.1, 0.1}};
  auto out = average_probabilities({{a}, {b}});
  REQUIRE_THAT(out[0][0], Catch::Matchers::WithinAbs(0.4, 1e-15));
  REQUIRE_THAT(out[0][1], Catch::Matchers::WithinAbs(0.4, 1e-15));
  REQUIRE_THAT(out[0][2], Catch::Matchers::WithinAbs(0.1, 1e-15));
  REQUIRE_THAT(out[0][3], Catch::Matchers::WithinAbs(0.1, 1e-15));
}

TEST_CASE("matches elementwise summation oracle and stays convex") {
  Rng rng(42);
  for (int round = 0; round < 30; ++round) {
    const int models = static_cast<int>(rng.uniform_int(1, 7));
    const int items = static_cast<int>(rng.uniform_int(1, 40));
    std::vector<std::vector<ProbabilityVector>> per_model(static_cast<std::size_t>(models));
    for (auto& m : per_model) {
      m.resize(static_cast<std::size_t>(items));
      for (auto& v : m) v = random_simplex(rng);
    }
    auto out = average_probabilities(per_model);
    for (int i = 0; i < items; ++i) {
      double sum_check = 0;
      for (int c = 0; c < kNumClasses; ++c) {
        // oracle: plain summation loop
        double s = 0, lo = 1.0, hi = 0.0;
        for (const auto& m : per_model) {
          s += m[static_cast<std::size_t>(i)][c];
          lo = std::min(lo, m[static_cast<std::size_t>(i)][c]);
          hi = std::max(hi, m[static_cast<std::size_t>(i)][c]);
        }
        const double mean = s / models;
        REQUIRE_THAT(out[static_cast<std::size_t>(i)][c], Catch::Matchers::WithinAbs(mean, 1e-9));
        REQUIRE(out[static_cast<std::size_t>(i)][c] >= lo - 1e-12);
        REQUIRE(out[static_cast<std::size_t>(i)][c] <= hi + 1e-12);
        sum_check += out[static_cast<std::size_t>(i)][c];
      }
      REQUIRE_THAT(sum_check, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
  }
}

TEST_CASE("member permutation invariance") {
  Rng rng(5);
  std::vector<std::vector<ProbabilityVector>> per_model(4);
  for (auto& m : per_model) m = {random_simplex(rng), random_simplex(rng)};
  auto base = average_probabilities(per_model);
  std::vector<std::vector<ProbabilityVector>> reversed(per_model.rbegin(), per_model.rend());
  auto flipped = average_probabilities(reversed);
  for (std::size_t i = 0; i < base.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c) REQUIRE(base[i][c] == flipped[i][c]);
}

TEST_CASE("ensemble of identical members equals the single model exactly") {
  Rng rng(9);
  std::vector<ProbabilityVector> preds{random_simplex(rng), random_simplex(rng)};
  auto out = average_probabilities({preds, preds, preds});
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      REQUIRE_THAT(out[i][c], Catch::Matchers::WithinAbs(preds[i][c], 1e-15));
}

TEST_CASE("length mismatch raises an alignment error") {
  Rng rng(3);
  std::vector<ProbabilityVector> a{random_simplex(rng)};
  std::vector<ProbabilityVector> b{random_simplex(rng), random_simplex(rng)};
  REQUIRE_THROWS_AS(average_probabilities({a, b}), ValidationError);
}

TEST_CASE("decide picks argmax, tie-breaks to lowest index") {
  SECTION("uniform tie") {
    auto d = decide({{0.25, 0.25, 0.25, 0.25}});
    REQUIRE(d.label == ClassLabel::none);
    REQUIRE(d.confidence == 0.25);
  }
  SECTION("plain argmax") {
    auto d = decide({{0.1, 0.2, 0.3, 0.4}});
    REQUIRE(d.label == ClassLabel::both);
    REQUIRE(d.confidence == 0.4);
  }
  SECTION("partial tie") {
    auto d = decide({{0.1, 0.4, 0.4, 0.1}});
    REQUIRE(d.label == ClassLabel::infection);
  }
}

TEST_CASE("prediction csv round-trip and file ensembling") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "trainext_test_ensemble";
  fs::create_directories(dir);

  Rng rng(11);
  PredictionSet a, b;
  for (int i = 0; i < 5; ++i) {
    a.ids.push_back("img_" + std::to_string(i));
    a.probabilities.push_back(random_simplex(rng));
    b.ids.push_back("img_" + std::to_string(i));
    b.probabilities.push_back(random_simplex(rng));
  }
  const auto pa = (dir / "a.csv").string();
  const auto pb = (dir / "b.csv").string();
  write_predictions_csv(pa, a);
  write_predictions_csv(pb, b);

  auto round = read_predictions_csv(pa);
  REQUIRE(round.ids == a.ids);
  for (std::size_t i = 0; i < a.probabilities.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      REQUIRE(round.probabilities[i][c] == a.probabilities[i][c]);

  auto fused = ensemble_from_files({pa, pb});
  REQUIRE(fused.ids == a.ids);
  for (std::size_t i = 0; i < a.probabilities.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      REQUIRE_THAT(fused.probabilities[i][c],
                   Catch::Matchers::WithinAbs((a.probabilities[i][c] + b.probabilities[i][c]) / 2,
                                              1e-12));

  // mismatched id lists must be rejected
  PredictionSet c = b;
  c.ids[2] = "other";
  const auto pc = (dir / "c.csv").string();
  write_predictions_csv(pc, c);
  REQUIRE_THROWS_AS(ensemble_from_files({pa, pc}), ValidationError);

  fs::remove_all(dir);
}
