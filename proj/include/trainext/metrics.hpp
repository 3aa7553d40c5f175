#pragma once

// Confusion matrix, per-class / macro / weighted F1 and accuracy, plus the
// improvement deltas used when comparing two evaluation runs.

#include <array>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct EvaluationReport {
  // rows = truth, cols = prediction
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> confusion{};
  std::array<double, kNumClasses> per_class_f1{};
  std::array<std::int64_t, kNumClasses> support{};
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<std::string> warnings;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& row : confusion)
      for (auto v : row) t += v;
    return t;
  }
};

inline EvaluationReport evaluate(const std::vector<ClassLabel>& truth,
                                 const std::vector<ClassLabel>& predicted) {
  if (truth.size() != predicted.size())
    throw ValidationError("evaluate: truth has " + std::to_string(truth.size()) +
                          " items, predictions " + std::to_string(predicted.size()));
  if (truth.empty()) throw ValidationError("evaluate: empty input");

  EvaluationReport r;
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++r.confusion[static_cast<std::size_t>(index_of(truth[i]))]
                 [static_cast<std::size_t>(index_of(predicted[i]))];

  std::int64_t trace = 0;
  double weighted_sum = 0.0;
  std::int64_t support_sum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    std::int64_t tp = r.confusion[cu][cu];
    std::int64_t fn = 0, fp = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fn += r.confusion[cu][static_cast<std::size_t>(o)];
      fp += r.confusion[static_cast<std::size_t>(o)][cu];
    }
    r.support[cu] = tp + fn;
    const std::int64_t denom = 2 * tp + fp + fn;
    if (denom == 0) {
      // class absent from both truth and predictions; scored as 0 so the
      // fixed four-class macro average stays defined
      r.per_class_f1[cu] = 0.0;
      r.warnings.push_back(std::string("class ") + to_string(class_from_index(c)) +
                           ": no true or predicted samples, F1 set to 0");
    } else {
      r.per_class_f1[cu] = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    trace += tp;
    weighted_sum += static_cast<double>(r.support[cu]) * r.per_class_f1[cu];
    support_sum += r.support[cu];
  }

  double macro = 0.0;
  for (double f : r.per_class_f1) macro += f;
  r.macro_f1 = macro / kNumClasses;
  r.weighted_f1 = support_sum ? weighted_sum / static_cast<double>(support_sum) : 0.0;
  r.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());
  return r;
}

struct Improvement {
  double percentage_points = 0.0;          // 100 * (a - b)
  std::optional<double> relative_percent;  // 100 * (a - b) / b, undefined if b == 0
};

inline Improvement improvement(double score_a, double score_b) {
  if (score_a < 0.0 || score_a > 1.0 || score_b < 0.0 || score_b > 1.0)
    throw ValidationError("improvement: scores must be in [0,1]");
  Improvement d;
  d.percentage_points = 100.0 * (score_a - score_b);
  if (score_b != 0.0) d.relative_percent = 100.0 * (score_a - score_b) / score_b;
  return d;
}

// ---------------------------------------------------------------------------
// Export: CSV and a fixed-width text table (per-class F1, accuracy, weighted
// and macro F1 as columns, one row per evaluated model).
// ---------------------------------------------------------------------------

inline std::vector<std::string> evaluation_csv_header() {
  return {"model",  "f1_none", "f1_infection", "f1_ischaemia", "f1_both",
          "accuracy", "wa_f1",  "macro_f1"};
}

inline std::vector<std::string> evaluation_csv_row(const std::string& name,
                                                   const EvaluationReport& r) {
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << round_half_up(100.0 * v, 2);
    return s.str();
  };
  return {name,
          pct(r.per_class_f1[0]),
          pct(r.per_class_f1[1]),
          pct(r.per_class_f1[2]),
          pct(r.per_class_f1[3]),
          pct(r.accuracy),
          pct(r.weighted_f1),
          pct(r.macro_f1)};
}

inline void write_evaluation_csv(const std::string& path,
                                 const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  csv::Writer w(path);
  w.row(evaluation_csv_header());
  for (const auto& [name, rep] : rows) w.row(evaluation_csv_row(name, rep));
}

inline void write_confusion_csv(const std::string& path, const EvaluationReport& r) {
  csv::Writer w(path);
  std::vector<std::string> header{"truth\\pred"};
  for (auto c : kAllClasses) header.push_back(to_string(c));
  w.row(header);
  for (int t = 0; t < kNumClasses; ++t) {
    std::vector<std::string> row{to_string(class_from_index(t))};
    for (int p = 0; p < kNumClasses; ++p)
      row.push_back(std::to_string(r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]));
    w.row(row);
  }
}

inline void print_evaluation_table(std::ostream& out,
                                   const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << round_half_up(100.0 * v, 2);
    return s.str();
  };
  out << std::left << std::setw(18) << "Model";
  for (auto c : kAllClasses) out << std::right << std::setw(12) << (std::string(to_string(c)) + " F1%");
  out << std::right << std::setw(9) << "Acc%" << std::setw(9) << "WA F1%" << std::setw(11)
      << "macro F1%" << "\n";
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(18) << name;
    for (int c = 0; c < kNumClasses; ++c)
      out << std::right << std::setw(12) << pct(r.per_class_f1[static_cast<std::size_t>(c)]);
    out << std::right << std::setw(9) << pct(r.accuracy) << std::setw(9) << pct(r.weighted_f1)
        << std::setw(11) << pct(r.macro_f1) << "\n";
  }
}

}  // namespace trainext
