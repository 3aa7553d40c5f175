#pragma once

// Confidence-thresholded pseudo-label filter and the per-class accounting of
// how much each extension step grew the training set.

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "trainext/catalog.hpp"
#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/ensemble.hpp"
#include "trainext/types.hpp"

namespace trainext {

struct AcceptedPseudoLabel {
  std::string id;
  ClassLabel label = ClassLabel::none;
  double confidence = 0.0;
};

struct PseudoLabelBatch {
  double threshold = 0.0;
  std::vector<AcceptedPseudoLabel> accepted;
  std::int64_t rejected_count = 0;
  ClassDistribution per_class_accepted;
};

// An item is accepted iff its max probability is >= threshold (inclusive
// boundary); its label is the argmax with low-index tie-break.
inline PseudoLabelBatch filter_confident(const PredictionSet& predictions, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw ValidationError("filter_confident: threshold must be in [0,1]");
  std::unordered_set<std::string> seen;
  PseudoLabelBatch batch;
  batch.threshold = threshold;
  for (std::size_t i = 0; i < predictions.ids.size(); ++i) {
    const auto& id = predictions.ids[i];
    if (!seen.insert(id).second)
      throw IntegrityError("filter_confident: duplicate prediction id '" + id + "'");
    const Decision d = decide(predictions.probabilities[i]);
    if (d.confidence >= threshold) {
      batch.accepted.push_back({id, d.label, d.confidence});
      ++batch.per_class_accepted[d.label];
    } else {
      ++batch.rejected_count;
    }
  }
  return batch;
}

struct PseudoExtendOptions {
  // The test split is a viable pseudo-label source but risks leakage;
  // using it must be switched on explicitly.
  bool allow_test_sources = false;
};

// Accepted items re-enter the catalog as labeled training records with
// pseudo provenance; the original unlabeled records stay untouched.
// Re-applying the same batch trips the duplicate-record guard.
inline Catalog extend_with_pseudo(const Catalog& catalog, const PseudoLabelBatch& batch,
                                  const PseudoExtendOptions& opts = {}) {
  std::vector<ImageRecord> additions;
  additions.reserve(batch.accepted.size());
  for (const auto& a : batch.accepted) {
    const ImageRecord* source = catalog.find(a.id, Provenance::real);
    if (!source)
      throw IntegrityError("extend_with_pseudo: id '" + a.id + "' not found in catalog");
    if (source->split != Split::train_unlabeled && source->split != Split::test)
      throw IntegrityError("extend_with_pseudo: id '" + a.id +
                           "' is not an unlabeled or test record");
    if (source->split == Split::test && !opts.allow_test_sources)
      throw ValidationError("extend_with_pseudo: id '" + a.id +
                            "' comes from the test split; enable allow_test_sources to use it");
    if (a.confidence < batch.threshold)
      throw IntegrityError("extend_with_pseudo: id '" + a.id + "' confidence " +
                           std::to_string(a.confidence) + " below threshold " +
                           std::to_string(batch.threshold));
    ImageRecord rec = *source;
    rec.split = Split::train_labeled;
    rec.label = a.label;
    rec.provenance = Provenance::pseudo;
    rec.confidence = a.confidence;
    additions.push_back(std::move(rec));
  }
  return extended_with(catalog, additions);
}

struct ClassExtensionStat {
  std::int64_t before = 0;
  std::int64_t after = 0;
  std::int64_t absolute_increase = 0;
  // percent increase rounded half-up to 2 decimals; empty when before == 0
  std::optional<double> percent_increase;
};

using ExtensionStats = std::array<ClassExtensionStat, kNumClasses>;

inline ExtensionStats extension_stats(const ClassDistribution& before,
                                      const ClassDistribution& after) {
  ExtensionStats stats;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    auto& s = stats[cu];
    s.before = before.counts[cu];
    s.after = after.counts[cu];
    if (s.after < s.before)
      throw IntegrityError(std::string("extension_stats: class ") +
                           to_string(class_from_index(c)) + " shrank from " +
                           std::to_string(s.before) + " to " + std::to_string(s.after));
    s.absolute_increase = s.after - s.before;
    if (s.before > 0)
      s.percent_increase = round_half_up(
          100.0 * static_cast<double>(s.absolute_increase) / static_cast<double>(s.before), 2);
    // before == 0 classes are reported as "new" at the presentation layer
  }
  return stats;
}

inline void write_pseudo_batch_csv(const std::string& path, const PseudoLabelBatch& batch) {
  csv::Writer w(path);
  w.row({"id", "label", "confidence"});
  for (const auto& a : batch.accepted) {
    std::ostringstream conf;
    conf << std::setprecision(17) << a.confidence;
    w.row({a.id, to_string(a.label), conf.str()});
  }
}

inline PseudoLabelBatch read_pseudo_batch_csv(const std::string& path, double threshold) {
  auto table = csv::read_file(path);
  const std::vector<std::string> expected{"id", "label", "confidence"};
  if (table.header != expected) throw ParseError(path + ": unexpected pseudo batch header");
  PseudoLabelBatch batch;
  batch.threshold = threshold;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto label = parse_class_label(row[1]);
    if (!label)
      throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                       ": unknown label '" + row[1] + "'");
    double conf = 0;
    try {
      conf = std::stod(row[2]);
    } catch (const std::exception&) {
      throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                       ": bad confidence '" + row[2] + "'");
    }
    batch.accepted.push_back({row[0], *label, conf});
    ++batch.per_class_accepted[*label];
  }
  return batch;
}

}  // namespace trainext
