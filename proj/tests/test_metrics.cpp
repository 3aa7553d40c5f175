#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <vector>

#include "trainext/metrics.hpp"

using namespace trainext;

namespace {

// Independent brute-force recount used as the oracle: recompute every score
// from scratch with the textbook definitions, no shared code with evaluate().
struct BruteForceScores {
  double per_class_f1[4];
  double macro_f1;
  double weighted_f1;
  double accuracy;
  long confusion[4][4];
};

BruteForceScores brute_force(const std::vector<ClassLabel>& truth,
                             const std::vector<ClassLabel>& pred) {
  BruteForceScores s{};
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 4; ++p) {
      long n = 0;
      for (std::size_t i = 0; i < truth.size(); ++i)
        if (index_of(truth[i]) == t && index_of(pred[i]) == p) ++n;
      s.confusion[t][p] = n;
    }
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == pred[i]) ++correct;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

  double weighted = 0;
  long support_total = 0;
  for (int c = 0; c < 4; ++c) {
    long tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool is_truth = index_of(truth[i]) == c;
      const bool is_pred = index_of(pred[i]) == c;
      if (is_truth) ++support;
      if (is_truth && is_pred) ++tp;
      if (!is_truth && is_pred) ++fp;
      if (is_truth && !is_pred) ++fn;
    }
    s.per_class_f1[c] = (2 * tp + fp + fn) == 0
                            ? 0.0
                            : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    weighted += s.per_class_f1[c] * support;
    support_total += support;
  }
  s.macro_f1 = (s.per_class_f1[0] + s.per_class_f1[1] + s.per_class_f1[2] + s.per_class_f1[3]) / 4;
  s.weighted_f1 = support_total ? weighted / support_total : 0.0;
  return s;
}

std::vector<ClassLabel> random_labels(std::size_t n, Rng& rng) {
  std::vector<ClassLabel> out(n);
  for (auto& l : out) l = class_from_index(static_cast<int>(rng.uniform_int(0, 3)));
  return out;
}

}  // namespace

TEST_CASE("perfect prediction scores 1 everywhere") {
  std::vector<ClassLabel> truth{ClassLabel::none, ClassLabel::infection, ClassLabel::ischaemia,
                                ClassLabel::both, ClassLabel::none};
  auto r = evaluate(truth, truth);
  for (double f : r.per_class_f1) REQUIRE(f == 1.0);
  REQUIRE(r.accuracy == 1.0);
  REQUIRE(r.macro_f1 == 1.0);
  REQUIRE(r.weighted_f1 == 1.0);
  REQUIRE(r.warnings.empty());
}

TEST_CASE("hand-computed four-item example") {
  using enum ClassLabel;
  // truth [0,0,1,1], predicted [0,1,1,1]
  std::vector<ClassLabel> truth{none, none, infection, infection};
  std::vector<ClassLabel> pred{none, infection, infection, infection};
  auto r = evaluate(truth, pred);
  // none: TP=1 FP=0 FN=1 -> 2/3; infection: TP=2 FP=1 FN=0 -> 4/5
  REQUIRE_THAT(r.per_class_f1[0], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  REQUIRE_THAT(r.per_class_f1[1], Catch::Matchers::WithinAbs(4.0 / 5.0, 1e-12));
  // absent classes score 0 with a warning
  REQUIRE(r.per_class_f1[2] == 0.0);
  REQUIRE(r.per_class_f1[3] == 0.0);
  REQUIRE(r.warnings.size() == 2);
  REQUIRE_THAT(r.macro_f1, Catch::Matchers::WithinAbs((2.0 / 3.0 + 4.0 / 5.0) / 4.0, 1e-12));
  REQUIRE_THAT(r.accuracy, Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("matches the brute-force recount on random data") {
  Rng rng(99);
  for (int round = 0; round < 50; ++round) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(10, 500));
    auto truth = random_labels(n, rng);
    auto pred = random_labels(n, rng);
    auto r = evaluate(truth, pred);
    auto o = brute_force(truth, pred);
    for (int t = 0; t < 4; ++t)
      for (int p = 0; p < 4; ++p) REQUIRE(r.confusion[t][p] == o.confusion[t][p]);
    for (int c = 0; c < 4; ++c)
      REQUIRE_THAT(r.per_class_f1[c], Catch::Matchers::WithinAbs(o.per_class_f1[c], 1e-9));
    REQUIRE_THAT(r.macro_f1, Catch::Matchers::WithinAbs(o.macro_f1, 1e-9));
    REQUIRE_THAT(r.weighted_f1, Catch::Matchers::WithinAbs(o.weighted_f1, 1e-9));
    REQUIRE_THAT(r.accuracy, Catch::Matchers::WithinAbs(o.accuracy, 1e-9));
  }
}

TEST_CASE("joint permutation leaves the report unchanged") {
  Rng rng(123);
  auto truth = random_labels(200, rng);
  auto pred = random_labels(200, rng);
  auto base = evaluate(truth, pred);

  std::vector<std::size_t> perm(truth.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<ClassLabel> truth2(truth.size()), pred2(truth.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    truth2[i] = truth[perm[i]];
    pred2[i] = pred[perm[i]];
  }
  auto shuffled = evaluate(truth2, pred2);
  REQUIRE(shuffled.confusion == base.confusion);
  REQUIRE(shuffled.macro_f1 == base.macro_f1);
  REQUIRE(shuffled.weighted_f1 == base.weighted_f1);
}

TEST_CASE("accuracy equals support-weighted recall") {
  Rng rng(7);
  auto truth = random_labels(333, rng);
  auto pred = random_labels(333, rng);
  auto r = evaluate(truth, pred);
  double weighted_recall = 0;
  for (int c = 0; c < 4; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (r.support[cu] == 0) continue;
    const double recall =
        static_cast<double>(r.confusion[cu][cu]) / static_cast<double>(r.support[cu]);
    weighted_recall += recall * static_cast<double>(r.support[cu]);
  }
  weighted_recall /= static_cast<double>(truth.size());
  REQUIRE_THAT(r.accuracy, Catch::Matchers::WithinAbs(weighted_recall, 1e-12));
}

TEST_CASE("all predictions collapsed to one class") {
  Rng rng(31);
  auto truth = random_labels(100, rng);
  std::vector<ClassLabel> pred(truth.size(), ClassLabel::ischaemia);
  auto r = evaluate(truth, pred);
  const auto support_c = r.support[2];
  const double expected =
      2.0 * static_cast<double>(support_c) / static_cast<double>(100 + support_c);
  REQUIRE_THAT(r.per_class_f1[2], Catch::Matchers::WithinAbs(expected, 1e-12));
  REQUIRE(r.per_class_f1[0] == 0.0);
  REQUIRE(r.per_class_f1[1] == 0.0);
  REQUIRE(r.per_class_f1[3] == 0.0);
}

TEST_CASE("evaluate input validation") {
  std::vector<ClassLabel> a{ClassLabel::none};
  std::vector<ClassLabel> b{ClassLabel::none, ClassLabel::both};
  REQUIRE_THROWS_AS(evaluate(a, b), ValidationError);
  REQUIRE_THROWS_AS(evaluate({}, {}), ValidationError);
}

TEST_CASE("improvement deltas") {
  SECTION("reported comparison") {
    auto d = improvement(0.6077, 0.55);
    REQUIRE_THAT(round_half_up(d.percentage_points, 2), Catch::Matchers::WithinAbs(5.77, 1e-12));
    REQUIRE(d.relative_percent.has_value());
    REQUIRE_THAT(round_half_up(*d.relative_percent, 2), Catch::Matchers::WithinAbs(10.49, 1e-12));
  }
  SECTION("equal scores") {
    auto d = improvement(0.5, 0.5);
    REQUIRE(d.percentage_points == 0.0);
    REQUIRE(*d.relative_percent == 0.0);
  }
  SECTION("exact arithmetic") {
    auto d = improvement(0.75, 0.50);
    REQUIRE_THAT(d.percentage_points, Catch::Matchers::WithinAbs(25.0, 1e-12));
    REQUIRE_THAT(*d.relative_percent, Catch::Matchers::WithinAbs(50.0, 1e-12));
  }
  SECTION("zero baseline leaves relative undefined") {
    auto d = improvement(0.4, 0.0);
    REQUIRE_THAT(d.percentage_points, Catch::Matchers::WithinAbs(40.0, 1e-12));
    REQUIRE_FALSE(d.relative_percent.has_value());
  }
  SECTION("range check") { REQUIRE_THROWS_AS(improvement(1.2, 0.5), ValidationError); }
}

TEST_CASE("csv and table export") {
  std::vector<ClassLabel> truth{ClassLabel::none, ClassLabel::infection};
  auto r = evaluate(truth, truth);
  auto row = evaluation_csv_row("model_a", r);
  REQUIRE(row[0] == "model_a");
  REQUIRE(row[1] == "100.00");
  REQUIRE(row[7] == "50.00");  // two absent classes pull macro to 0.5

  std::ostringstream table;
  print_evaluation_table(table, {{"model_a", r}});
  REQUIRE(table.str().find("model_a") != std::string::npos);
  REQUIRE(table.str().find("macro F1%") != std::string::npos);
}
