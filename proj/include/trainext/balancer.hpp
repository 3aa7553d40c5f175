#pragma once

// Cross-class synthesis planning: every class is topped up with synthetic
// images generated from the edge masks of all other classes, which drives
// each class count to the post-pseudo grand total and yields an exact
// 1:(k-1) real-to-synthetic ratio.

#include <array>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct MaskSource {
  ClassLabel source_class = ClassLabel::none;
  std::int64_t count = 0;
};

struct ExtensionPlan {
  std::int64_t target_per_class = 0;
  // synthetic images still required per class
  std::array<std::int64_t, kNumClasses> quotas{};
  // per target class: how many masks of each other class feed its generator
  std::array<std::vector<MaskSource>, kNumClasses> mask_sources;
  ClassDistribution baseline;
  ClassDistribution after_pseudo;
  std::int64_t grand_total = 0;
  std::int64_t real_total = 0;       // baseline + pseudo records
  std::int64_t synthetic_total = 0;  // sum of quotas
  double multiplier_over_baseline = 0.0;
};

inline ExtensionPlan plan_balance(const ClassDistribution& after_pseudo,
                                  const ClassDistribution& baseline) {
  int nonzero = 0;
  for (auto c : after_pseudo.counts) {
    if (c < 0) throw ValidationError("plan_balance: negative class count");
    if (c > 0) ++nonzero;
  }
  if (nonzero < 2)
    throw ValidationError(
        "plan_balance: fewer than two populated classes, no cross-class masks exist");
  if (baseline.total() <= 0) throw ValidationError("plan_balance: empty baseline");

  ExtensionPlan plan;
  plan.baseline = baseline;
  plan.after_pseudo = after_pseudo;
  plan.real_total = after_pseudo.total();
  plan.target_per_class = plan.real_total;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    plan.quotas[cu] = plan.target_per_class - after_pseudo.counts[cu];
    for (int s = 0; s < kNumClasses; ++s) {
      if (s == c) continue;
      plan.mask_sources[cu].push_back(
          {class_from_index(s), after_pseudo.counts[static_cast<std::size_t>(s)]});
    }
    plan.synthetic_total += plan.quotas[cu];
  }
  plan.grand_total = plan.real_total + plan.synthetic_total;  // == kNumClasses * target
  plan.multiplier_over_baseline =
      static_cast<double>(plan.grand_total) / static_cast<double>(baseline.total());
  return plan;
}

// ---------------------------------------------------------------------------
// Verification of an executed extension against its plan
// ---------------------------------------------------------------------------

struct PlanDiscrepancy {
  ClassLabel label = ClassLabel::none;
  std::string message;
};

struct PlanVerification {
  std::vector<PlanDiscrepancy> discrepancies;
  bool ok() const { return discrepancies.empty(); }
};

// `synthetic_by_class[c]` counts synthetic records labeled c, broken down by
// the class of the mask that produced them.
struct SyntheticCensus {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> by_label_and_source{};
  std::int64_t self_sourced = 0;  // synthetic records whose mask came from their own class
};

inline PlanVerification verify_extension(const ExtensionPlan& plan, const SyntheticCensus& census) {
  PlanVerification v;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    std::int64_t have = 0;
    for (int s = 0; s < kNumClasses; ++s) have += census.by_label_and_source[cu][static_cast<std::size_t>(s)];
    if (have != plan.quotas[cu]) {
      std::ostringstream msg;
      msg << "class " << to_string(class_from_index(c)) << ": " << have
          << " synthetic records, plan requires " << plan.quotas[cu] << " (";
      msg << (have < plan.quotas[cu] ? "shortfall " : "surplus ")
          << std::llabs(plan.quotas[cu] - have) << ")";
      v.discrepancies.push_back({class_from_index(c), msg.str()});
    }
    if (census.by_label_and_source[cu][cu] != 0)
      v.discrepancies.push_back(
          {class_from_index(c),
           std::string("class ") + to_string(class_from_index(c)) + ": " +
               std::to_string(census.by_label_and_source[cu][cu]) +
               " synthetic records sourced from their own class"});
    for (const auto& src : plan.mask_sources[cu]) {
      const auto su = static_cast<std::size_t>(index_of(src.source_class));
      if (census.by_label_and_source[cu][su] != src.count) {
        std::ostringstream msg;
        msg << "class " << to_string(class_from_index(c)) << ": "
            << census.by_label_and_source[cu][su] << " records from "
            << to_string(src.source_class) << " masks, plan requires " << src.count;
        v.discrepancies.push_back({class_from_index(c), msg.str()});
      }
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Plan serialization: one row per class with baseline / pseudo extension /
// synthetic extension / total counts, each with its share of the grand total.
// ---------------------------------------------------------------------------

inline std::string percent_of(std::int64_t part, std::int64_t whole) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2)
    << round_half_up(100.0 * static_cast<double>(part) / static_cast<double>(whole), 2);
  return s.str();
}

inline void write_plan_csv(const std::string& path, const ExtensionPlan& plan) {
  csv::Writer w(path);
  w.row({"class", "baseline", "baseline_pct", "pseudo_extension", "pseudo_pct",
         "synthetic_extension", "synthetic_pct", "total", "total_pct"});
  const std::int64_t grand = plan.grand_total;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const std::int64_t base = plan.baseline.counts[cu];
    const std::int64_t pseudo = plan.after_pseudo.counts[cu] - base;
    const std::int64_t syn = plan.quotas[cu];
    const std::int64_t row_total = base + pseudo + syn;
    w.row({to_string(class_from_index(c)), std::to_string(base), percent_of(base, grand),
           std::to_string(pseudo), percent_of(pseudo, grand), std::to_string(syn),
           percent_of(syn, grand), std::to_string(row_total), percent_of(row_total, grand)});
  }
  const std::int64_t base_sum = plan.baseline.total();
  const std::int64_t pseudo_sum = plan.after_pseudo.total() - base_sum;
  w.row({"sum", std::to_string(base_sum), percent_of(base_sum, grand),
         std::to_string(pseudo_sum), percent_of(pseudo_sum, grand),
         std::to_string(plan.synthetic_total), percent_of(plan.synthetic_total, grand),
         std::to_string(grand), percent_of(grand, grand)});
}

inline void print_plan_table(std::ostream& out, const ExtensionPlan& plan) {
  const std::int64_t grand = plan.grand_total;
  auto cell = [&](std::int64_t n) {
    std::ostringstream s;
    s << n << " (" << percent_of(n, grand) << "%)";
    return s.str();
  };
  out << std::left << std::setw(11) << "Class" << std::right << std::setw(18) << "Baseline"
      << std::setw(18) << "Pseudo ext." << std::setw(20) << "Synthetic ext." << std::setw(20)
      << "Total" << "\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const std::int64_t base = plan.baseline.counts[cu];
    const std::int64_t pseudo = plan.after_pseudo.counts[cu] - base;
    out << std::left << std::setw(11) << to_string(class_from_index(c)) << std::right
        << std::setw(18) << cell(base) << std::setw(18) << cell(pseudo) << std::setw(20)
        << cell(plan.quotas[cu]) << std::setw(20) << cell(base + pseudo + plan.quotas[cu]) << "\n";
  }
  const std::int64_t base_sum = plan.baseline.total();
  out << std::left << std::setw(11) << "sum" << std::right << std::setw(18) << cell(base_sum)
      << std::setw(18) << cell(plan.after_pseudo.total() - base_sum) << std::setw(20)
      << cell(plan.synthetic_total) << std::setw(20) << cell(grand) << "\n";
  out << "real:synthetic ratio 1:"
      << (plan.real_total ? plan.synthetic_total / plan.real_total : 0) << ", multiplier over baseline "
      << std::fixed << std::setprecision(3) << round_half_up(plan.multiplier_over_baseline, 3)
      << "\n";
}

}  // namespace trainext
