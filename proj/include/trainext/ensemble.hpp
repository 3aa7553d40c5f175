#pragma once

// Unweighted probability averaging over model outputs and the argmax
// decision rule. Per-model predictions persist as CSV so ensembles can be
// built from any number of prediction files.

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/types.hpp"

namespace trainext {

// Elementwise arithmetic mean over models. Outer index: model; inner index:
// image. All models must cover the same ordered image list.
inline std::vector<ProbabilityVector> average_probabilities(
    const std::vector<std::vector<ProbabilityVector>>& vectors_per_model) {
  if (vectors_per_model.empty())
    throw ValidationError("average_probabilities: no models");
  const std::size_t n = vectors_per_model.front().size();
  for (std::size_t m = 1; m < vectors_per_model.size(); ++m)
    if (vectors_per_model[m].size() != n)
      throw ValidationError("average_probabilities: model " + std::to_string(m) + " supplies " +
                            std::to_string(vectors_per_model[m].size()) + " vectors, expected " +
                            std::to_string(n));
  std::vector<ProbabilityVector> out(n);
  const double inv_m = 1.0 / static_cast<double>(vectors_per_model.size());
  std::vector<double> column(vectors_per_model.size());
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < kNumClasses; ++c) {
      for (std::size_t m = 0; m < vectors_per_model.size(); ++m) column[m] = vectors_per_model[m][i][c];
      // summing in sorted order makes the mean exactly invariant under
      // member permutations
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      out[i][c] = s * inv_m;
    }
  return out;
}

struct Decision {
  ClassLabel label = ClassLabel::none;
  double confidence = 0.0;
};

// argmax with ties broken toward the lowest class index
inline Decision decide(const ProbabilityVector& v) {
  const int idx = v.argmax();
  return {class_from_index(idx), v[idx]};
}

// ---------------------------------------------------------------------------
// Prediction CSV: id,p_none,p_infection,p_ischaemia,p_both
// ---------------------------------------------------------------------------

struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<ProbabilityVector> probabilities;
};

inline void write_predictions_csv(const std::string& path, const PredictionSet& preds) {
  if (preds.ids.size() != preds.probabilities.size())
    throw ValidationError("write_predictions_csv: id/probability count mismatch");
  csv::Writer w(path);
  w.row({"id", "p_none", "p_infection", "p_ischaemia", "p_both"});
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    std::vector<std::string> row{preds.ids[i]};
    for (int c = 0; c < kNumClasses; ++c) {
      std::ostringstream s;
      s << std::setprecision(17) << preds.probabilities[i][c];
      row.push_back(s.str());
    }
    w.row(row);
  }
}

inline PredictionSet read_predictions_csv(const std::string& path) {
  auto table = csv::read_file(path);
  const std::vector<std::string> expected{"id", "p_none", "p_infection", "p_ischaemia", "p_both"};
  if (table.header != expected)
    throw ParseError(path + ": unexpected prediction header");
  PredictionSet out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    out.ids.push_back(row[0]);
    ProbabilityVector v;
    for (int c = 0; c < kNumClasses; ++c) {
      try {
        v[c] = std::stod(row[static_cast<std::size_t>(c) + 1]);
      } catch (const std::exception&) {
        throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                         ": bad probability '" + row[static_cast<std::size_t>(c) + 1] + "'");
      }
    }
    if (!v.valid(1e-5))
      throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                       ": probabilities do not form a softmax vector");
    out.probabilities.push_back(v);
  }
  return out;
}

// Fuse prediction files; ids must agree pairwise in content and order.
inline PredictionSet ensemble_from_files(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ValidationError("ensemble_from_files: no prediction files");
  std::vector<PredictionSet> sets;
  sets.reserve(paths.size());
  for (const auto& p : paths) sets.push_back(read_predictions_csv(p));
  for (std::size_t m = 1; m < sets.size(); ++m)
    if (sets[m].ids != sets[0].ids)
      throw ValidationError(paths[m] + ": image id list differs from " + paths[0]);
  std::vector<std::vector<ProbabilityVector>> per_model;
  per_model.reserve(sets.size());
  for (auto& s : sets) per_model.push_back(std::move(s.probabilities));
  PredictionSet out;
  out.ids = sets[0].ids;
  out.probabilities = average_probabilities(per_model);
  return out;
}

}  // namespace trainext
