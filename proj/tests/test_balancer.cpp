#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "trainext/balancer.hpp"

using namespace trainext;

TEST_CASE("reference balance arithmetic") {
  ClassDistribution baseline{{2552, 2555, 227, 621}};
  ClassDistribution after_pseudo{{6900, 4658, 416, 942}};
  auto plan = plan_balance(after_pseudo, baseline);

  REQUIRE(plan.target_per_class == 12916);
  REQUIRE(plan.quotas[0] == 6016);
  REQUIRE(plan.quotas[1] == 8258);
  REQUIRE(plan.quotas[2] == 12500);
  REQUIRE(plan.quotas[3] == 11974);
  REQUIRE(plan.grand_total == 51664);
  REQUIRE(plan.real_total == 12916);
  REQUIRE(plan.synthetic_total == 38748);
  REQUIRE(plan.synthetic_total == 3 * plan.real_total);  // exactly 1:3
  REQUIRE_THAT(plan.multiplier_over_baseline, Catch::Matchers::WithinAbs(8.676, 0.001));

  // the none model consumes every other class's masks once each
  REQUIRE(plan.mask_sources[0].size() == 3);
  std::int64_t mask_sum = 0;
  for (const auto& src : plan.mask_sources[0]) {
    REQUIRE(src.source_class != ClassLabel::none);
    mask_sum += src.count;
  }
  REQUIRE(mask_sum == plan.quotas[0]);
}

TEST_CASE("balanced input yields symmetric quotas") {
  ClassDistribution d{{7, 7, 7, 7}};
  auto plan = plan_balance(d, d);
  REQUIRE(plan.target_per_class == 28);
  for (int c = 0; c < kNumClasses; ++c) REQUIRE(plan.quotas[static_cast<std::size_t>(c)] == 21);
}

TEST_CASE("hand-enumerated small case") {
  ClassDistribution d{{3, 1, 1, 1}};
  auto plan = plan_balance(d, d);
  REQUIRE(plan.target_per_class == 6);
  REQUIRE(plan.quotas[0] == 3);
  REQUIRE(plan.quotas[1] == 5);
  REQUIRE(plan.quotas[2] == 5);
  REQUIRE(plan.quotas[3] == 5);
  REQUIRE(plan.mask_sources[0].size() == 3);
  for (const auto& src : plan.mask_sources[0]) REQUIRE(src.count == 1);
}

TEST_CASE("plan invariants on random inputs") {
  Rng rng(77);
  for (int round = 0; round < 100; ++round) {
    ClassDistribution d;
    for (int c = 0; c < kNumClasses; ++c)
      d.counts[static_cast<std::size_t>(c)] = rng.uniform_int(1, 5000);
    auto plan = plan_balance(d, d);

    // executing the plan drives every class to the target exactly
    for (int c = 0; c < kNumClasses; ++c)
      REQUIRE(d.counts[static_cast<std::size_t>(c)] + plan.quotas[static_cast<std::size_t>(c)] ==
              plan.target_per_class);
    // conservation and the exact 1:(k-1) ratio
    REQUIRE(plan.grand_total == plan.real_total + plan.synthetic_total);
    REQUIRE(plan.grand_total == kNumClasses * plan.target_per_class);
    REQUIRE(plan.synthetic_total == (kNumClasses - 1) * plan.real_total);
    // mask sources cover the quota exactly
    for (int c = 0; c < kNumClasses; ++c) {
      std::int64_t sum = 0;
      for (const auto& src : plan.mask_sources[static_cast<std::size_t>(c)]) sum += src.count;
      REQUIRE(sum == plan.quotas[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("degenerate single-class input is rejected") {
  ClassDistribution d{{5, 0, 0, 0}};
  REQUIRE_THROWS_AS(plan_balance(d, d), ValidationError);
  ClassDistribution ok{{5, 1, 0, 0}};
  REQUIRE_NOTHROW(plan_balance(ok, ok));
}

TEST_CASE("verification against an executed extension") {
  ClassDistribution baseline{{2552, 2555, 227, 621}};
  ClassDistribution after_pseudo{{6900, 4658, 416, 942}};
  auto plan = plan_balance(after_pseudo, baseline);

  SyntheticCensus census;
  for (int c = 0; c < kNumClasses; ++c)
    for (const auto& src : plan.mask_sources[static_cast<std::size_t>(c)])
      census.by_label_and_source[static_cast<std::size_t>(c)]
                                [static_cast<std::size_t>(index_of(src.source_class))] = src.count;

  SECTION("exact match has no discrepancies") {
    auto v = verify_extension(plan, census);
    REQUIRE(v.ok());
  }
  SECTION("one missing synthetic image is a single shortfall") {
    --census.by_label_and_source[2][0];
    auto v = verify_extension(plan, census);
    REQUIRE_FALSE(v.ok());
    bool found_shortfall = false;
    for (const auto& d : v.discrepancies)
      if (d.label == ClassLabel::ischaemia && d.message.find("shortfall 1") != std::string::npos)
        found_shortfall = true;
    REQUIRE(found_shortfall);
  }
  SECTION("self-sourced synthetic records are flagged") {
    ++census.by_label_and_source[1][1];
    auto v = verify_extension(plan, census);
    REQUIRE_FALSE(v.ok());
  }
}

TEST_CASE("all-zero plan against an untouched catalog verifies clean") {
  ExtensionPlan plan;  // quotas all zero, no mask sources
  SyntheticCensus census;
  auto v = verify_extension(plan, census);
  REQUIRE(v.ok());
}

TEST_CASE("plan csv mirrors the accounting table with computed percentages") {
  namespace fs = std::filesystem;
  ClassDistribution baseline{{2552, 2555, 227, 621}};
  ClassDistribution after_pseudo{{6900, 4658, 416, 942}};
  auto plan = plan_balance(after_pseudo, baseline);

  const auto dir = fs::temp_directory_path() / "trainext_test_balancer";
  fs::create_directories(dir);
  const auto path = (dir / "plan.csv").string();
  write_plan_csv(path, plan);

  auto table = csv::read_file(path);
  REQUIRE(table.rows.size() == 5);  // four classes + sum row
  const int cls = table.column("class");
  const int base_pct = table.column("baseline_pct");
  const int total = table.column("total");
  const int total_pct = table.column("total_pct");

  // percentages are computed from the counts; shares of 51,664
  REQUIRE(table.rows[0][static_cast<std::size_t>(cls)] == "none");
  REQUIRE(table.rows[0][static_cast<std::size_t>(base_pct)] == "4.94");
  REQUIRE(table.rows[2][static_cast<std::size_t>(base_pct)] == "0.44");   // 227/51664
  REQUIRE(table.rows[3][static_cast<std::size_t>(base_pct)] == "1.20");   // 621/51664
  for (int c = 0; c < kNumClasses; ++c) {
    REQUIRE(table.rows[static_cast<std::size_t>(c)][static_cast<std::size_t>(total)] == "12916");
    REQUIRE(table.rows[static_cast<std::size_t>(c)][static_cast<std::size_t>(total_pct)] == "25.00");
  }
  REQUIRE(table.rows[4][static_cast<std::size_t>(total)] == "51664");

  std::ostringstream text;
  print_plan_table(text, plan);
  REQUIRE(text.str().find("1:3") != std::string::npos);
  REQUIRE(text.str().find("8.676") != std::string::npos);

  fs::remove_all(dir);
}

TEST_CASE("plan is independent of class enumeration order") {
  // permuting the class counts permutes the quotas identically
  ClassDistribution d{{100, 200, 300, 400}};
  auto plan = plan_balance(d, d);
  ClassDistribution perm{{400, 300, 200, 100}};
  auto plan2 = plan_balance(perm, perm);
  REQUIRE(plan.target_per_class == plan2.target_per_class);
  for (int c = 0; c < kNumClasses; ++c)
    REQUIRE(plan.quotas[static_cast<std::size_t>(c)] ==
            plan2.quotas[static_cast<std::size_t>(3 - c)]);
}
