#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <set>
#include <vector>

#include "trainext/pseudolabel.hpp"

using namespace trainext;

namespace {

// vector with a prescribed max probability on a prescribed class
ProbabilityVector with_max(double max_p, int cls) {
  ProbabilityVector v;
  const double rest = (1.0 - max_p) / 3.0;
  for (int c = 0; c < kNumClasses; ++c) v[c] = rest;
  v[cls] = max_p;
  return v;
}

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

PredictionSet random_predictions(std::size_t n, Rng& rng) {
  PredictionSet p;
  for (std::size_t i = 0; i < n; ++i) {
    p.ids.push_back("u" + std::to_string(i));
    p.probabilities.push_back(random_simplex(rng));
  }
  return p;
}

Catalog catalog_with_unlabeled(std::size_t n, Split split = Split::train_unlabeled) {
  Catalog c;
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.id = "u" + std::to_string(i);
    r.path = "u" + std::to_string(i) + ".png";
    r.split = split;
    r.provenance = Provenance::real;
    c.add(r);
  }
  return c;
}

}  // namespace

TEST_CASE("boundary max exactly at threshold is accepted") {
  PredictionSet p;
  p.ids = {"a"};
  p.probabilities = {with_max(0.70, 1)};
  auto batch = filter_confident(p, 0.70);
  REQUIRE(batch.accepted.size() == 1);
  REQUIRE(batch.accepted[0].label == ClassLabel::infection);
  REQUIRE(batch.rejected_count == 0);
}

TEST_CASE("threshold 1.0 rejects any non-degenerate softmax") {
  PredictionSet p;
  p.ids = {"a", "b"};
  p.probabilities = {with_max(0.99, 0), with_max(0.97, 3)};
  auto batch = filter_confident(p, 1.0);
  REQUIRE(batch.accepted.empty());
  REQUIRE(batch.rejected_count == 2);
}

TEST_CASE("accounting fields add up") {
  Rng rng(17);
  auto preds = random_predictions(500, rng);
  auto batch = filter_confident(preds, 0.5);
  REQUIRE(batch.accepted.size() + static_cast<std::size_t>(batch.rejected_count) == 500);
  REQUIRE(batch.per_class_accepted.total() == static_cast<std::int64_t>(batch.accepted.size()));
  for (const auto& a : batch.accepted) REQUIRE(a.confidence >= 0.5);
}

TEST_CASE("duplicate prediction id is an integrity error") {
  PredictionSet p;
  p.ids = {"a", "a"};
  p.probabilities = {with_max(0.8, 0), with_max(0.8, 1)};
  REQUIRE_THROWS_AS(filter_confident(p, 0.5), IntegrityError);
}

TEST_CASE("accepted sets are nested over increasing thresholds") {
  Rng rng(29);
  auto preds = random_predictions(2000, rng);
  const double thresholds[] = {0.5, 0.7, 0.9};
  std::vector<std::set<std::string>> accepted_sets;
  for (double t : thresholds) {
    auto batch = filter_confident(preds, t);
    std::set<std::string> ids;
    for (const auto& a : batch.accepted) ids.insert(a.id);
    accepted_sets.push_back(std::move(ids));
  }
  for (std::size_t i = 1; i < accepted_sets.size(); ++i)
    REQUIRE(std::includes(accepted_sets[i - 1].begin(), accepted_sets[i - 1].end(),
                          accepted_sets[i].begin(), accepted_sets[i].end()));
}

TEST_CASE("accepted count equals brute-force count and labels equal argmax") {
  Rng rng(31);
  auto preds = random_predictions(2000, rng);
  const double threshold = 0.6;
  auto batch = filter_confident(preds, threshold);

  std::size_t brute = 0;
  for (const auto& v : preds.probabilities) {
    double mx = v[0];
    for (int c = 1; c < kNumClasses; ++c) mx = std::max(mx, v[c]);
    if (mx >= threshold) ++brute;
  }
  REQUIRE(batch.accepted.size() == brute);

  for (const auto& a : batch.accepted) {
    const auto it = std::find(preds.ids.begin(), preds.ids.end(), a.id);
    const auto idx = static_cast<std::size_t>(it - preds.ids.begin());
    REQUIRE(index_of(a.label) == preds.probabilities[idx].argmax());
  }
}

TEST_CASE("paper-shaped batch accounting") {
  // 9,728 inputs, threshold 0.70, per-class accepted {4348, 2103, 189, 321}
  PredictionSet preds;
  const std::int64_t accepted_per_class[] = {4348, 2103, 189, 321};
  std::size_t next = 0;
  for (int c = 0; c < kNumClasses; ++c)
    for (std::int64_t i = 0; i < accepted_per_class[c]; ++i) {
      preds.ids.push_back("u" + std::to_string(next++));
      preds.probabilities.push_back(with_max(0.85, c));
    }
  while (next < 9728) {
    preds.ids.push_back("u" + std::to_string(next++));
    preds.probabilities.push_back(with_max(0.5, static_cast<int>(next % 4)));
  }
  auto batch = filter_confident(preds, 0.70);
  REQUIRE(batch.accepted.size() == 6961);
  REQUIRE(batch.rejected_count == 9728 - 6961);
  REQUIRE(batch.per_class_accepted[ClassLabel::none] == 4348);
  REQUIRE(batch.per_class_accepted[ClassLabel::infection] == 2103);
  REQUIRE(batch.per_class_accepted[ClassLabel::ischaemia] == 189);
  REQUIRE(batch.per_class_accepted[ClassLabel::both] == 321);
}

TEST_CASE("extend_with_pseudo grows the distribution and keeps originals") {
  Catalog base;
  // labeled baseline {2, 1, 1, 1}
  int id = 0;
  auto add_labeled = [&](ClassLabel l) {
    ImageRecord r;
    r.id = "l" + std::to_string(id++);
    r.path = r.id + ".png";
    r.split = Split::train_labeled;
    r.provenance = Provenance::real;
    r.label = l;
    base.add(r);
  };
  add_labeled(ClassLabel::none);
  add_labeled(ClassLabel::none);
  add_labeled(ClassLabel::infection);
  add_labeled(ClassLabel::ischaemia);
  add_labeled(ClassLabel::both);
  for (int i = 0; i < 3; ++i) {
    ImageRecord r;
    r.id = "u" + std::to_string(i);
    r.path = r.id + ".png";
    r.split = Split::train_unlabeled;
    r.provenance = Provenance::real;
    base.add(r);
  }

  PseudoLabelBatch batch;
  batch.threshold = 0.7;
  batch.accepted = {{"u0", ClassLabel::ischaemia, 0.9}, {"u1", ClassLabel::both, 0.8}};
  batch.per_class_accepted[ClassLabel::ischaemia] = 1;
  batch.per_class_accepted[ClassLabel::both] = 1;

  auto extended = extend_with_pseudo(base, batch);
  REQUIRE(extended.size() == base.size() + 2);

  auto dist = class_distribution(extended, Split::train_labeled);
  REQUIRE(dist[ClassLabel::none] == 2);
  REQUIRE(dist[ClassLabel::ischaemia] == 2);
  REQUIRE(dist[ClassLabel::both] == 2);

  // real records untouched, originals still unlabeled
  for (const auto& r : base.records()) {
    const auto* found = extended.find(r.id, r.provenance);
    REQUIRE(found != nullptr);
    REQUIRE(found->split == r.split);
    REQUIRE(found->label == r.label);
  }
  const auto* pseudo = extended.find("u0", Provenance::pseudo);
  REQUIRE(pseudo != nullptr);
  REQUIRE(pseudo->confidence == 0.9);

  SECTION("re-applying the same batch is rejected") {
    REQUIRE_THROWS_AS(extend_with_pseudo(extended, batch), IntegrityError);
  }
  SECTION("empty batch leaves the catalog unchanged") {
    PseudoLabelBatch empty;
    auto same = extend_with_pseudo(base, empty);
    REQUIRE(same.size() == base.size());
  }
  SECTION("unknown id") {
    PseudoLabelBatch bad;
    bad.accepted = {{"nope", ClassLabel::none, 0.9}};
    REQUIRE_THROWS_AS(extend_with_pseudo(base, bad), IntegrityError);
  }
}

TEST_CASE("test-split sources are gated behind a flag") {
  auto base = catalog_with_unlabeled(2, Split::test);
  PseudoLabelBatch batch;
  batch.threshold = 0.7;
  batch.accepted = {{"u0", ClassLabel::none, 0.95}};
  batch.per_class_accepted[ClassLabel::none] = 1;

  REQUIRE_THROWS_AS(extend_with_pseudo(base, batch), ValidationError);

  PseudoExtendOptions opts;
  opts.allow_test_sources = true;
  auto extended = extend_with_pseudo(base, batch, opts);
  REQUIRE(extended.find("u0", Provenance::pseudo) != nullptr);
}

TEST_CASE("paper-shaped extension arithmetic") {
  ClassDistribution before{{2552, 2555, 227, 621}};
  ClassDistribution after{{6900, 4658, 416, 942}};
  REQUIRE(after.total() == 12916);

  auto stats = extension_stats(before, after);
  REQUIRE(stats[0].absolute_increase == 4348);
  REQUIRE(*stats[0].percent_increase == 170.38);
  REQUIRE(stats[1].absolute_increase == 2103);
  REQUIRE(*stats[1].percent_increase == 82.31);
  REQUIRE(stats[2].absolute_increase == 189);
  REQUIRE(*stats[2].percent_increase == 83.26);
  REQUIRE(stats[3].absolute_increase == 321);
  REQUIRE(*stats[3].percent_increase == 51.69);
}

TEST_CASE("extension_stats edge cases") {
  SECTION("unchanged class reports +0.00") {
    ClassDistribution d{{10, 20, 30, 40}};
    auto stats = extension_stats(d, d);
    for (const auto& s : stats) REQUIRE(*s.percent_increase == 0.0);
  }
  SECTION("growth from zero is reported as new") {
    ClassDistribution before{{0, 1, 1, 1}};
    ClassDistribution after{{5, 1, 1, 1}};
    auto stats = extension_stats(before, after);
    REQUIRE_FALSE(stats[0].percent_increase.has_value());
    REQUIRE(stats[0].absolute_increase == 5);
  }
  SECTION("shrinkage is an accounting error") {
    ClassDistribution before{{5, 1, 1, 1}};
    ClassDistribution after{{4, 1, 1, 1}};
    REQUIRE_THROWS_AS(extension_stats(before, after), IntegrityError);
  }
}

TEST_CASE("pseudo batch csv round-trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "trainext_test_pseudo";
  fs::create_directories(dir);
  PseudoLabelBatch batch;
  batch.threshold = 0.7;
  batch.accepted = {{"x1", ClassLabel::both, 0.77}, {"x2", ClassLabel::none, 0.91}};
  const auto path = (dir / "pseudo_batch.csv").string();
  write_pseudo_batch_csv(path, batch);
  auto round = read_pseudo_batch_csv(path, 0.7);
  REQUIRE(round.accepted.size() == 2);
  REQUIRE(round.accepted[0].id == "x1");
  REQUIRE(round.accepted[0].label == ClassLabel::both);
  REQUIRE(round.accepted[0].confidence == 0.77);
  REQUIRE(round.per_class_accepted[ClassLabel::none] == 1);
  fs::remove_all(dir);
}
