#pragma once

// Core domain types: the four-class label set, dataset records with
// provenance, class count distributions and softmax probability vectors.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "trainext/common.hpp"

namespace trainext {

// Ordinal indices are fixed; argmax ties break toward the lowest index.
enum class ClassLabel : int { none = 0, infection = 1, ischaemia = 2, both = 3 };

inline constexpr int kNumClasses = 4;

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::none, ClassLabel::infection, ClassLabel::ischaemia, ClassLabel::both};

inline const char* to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::none: return "none";
    case ClassLabel::infection: return "infection";
    case ClassLabel::ischaemia: return "ischaemia";
    case ClassLabel::both: return "both";
  }
  return "?";
}

inline std::optional<ClassLabel> parse_class_label(std::string_view s) {
  if (s == "none") return ClassLabel::none;
  if (s == "infection") return ClassLabel::infection;
  if (s == "ischaemia") return ClassLabel::ischaemia;
  if (s == "both") return ClassLabel::both;
  return std::nullopt;
}

inline int index_of(ClassLabel c) { return static_cast<int>(c); }

inline ClassLabel class_from_index(int i) {
  if (i < 0 || i >= kNumClasses)
    throw ValidationError("class index out of range: " + std::to_string(i));
  return static_cast<ClassLabel>(i);
}

enum class Split { train_labeled, train_unlabeled, test, validation };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train_labeled: return "train_labeled";
    case Split::train_unlabeled: return "train_unlabeled";
    case Split::test: return "test";
    case Split::validation: return "validation";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train_labeled") return Split::train_labeled;
  if (s == "train_unlabeled") return Split::train_unlabeled;
  if (s == "test") return Split::test;
  if (s == "validation") return Split::validation;
  return std::nullopt;
}

enum class Provenance { real, pseudo, synthetic };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::real: return "real";
    case Provenance::pseudo: return "pseudo";
    case Provenance::synthetic: return "synthetic";
  }
  return "?";
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
  if (s == "real") return Provenance::real;
  if (s == "pseudo") return Provenance::pseudo;
  if (s == "synthetic") return Provenance::synthetic;
  return std::nullopt;
}

// One image in the dataset. A record is labeled iff it is real labeled
// training data or it entered through a pseudo/synthetic extension.
struct ImageRecord {
  std::string id;
  std::string path;
  int width = 0;
  int height = 0;
  Split split = Split::train_labeled;
  std::optional<ClassLabel> label;
  Provenance provenance = Provenance::real;
  // for synthetic records: class of the image whose edge mask conditioned
  // the generator (cross-class synthesis makes source_class != label common)
  std::optional<ClassLabel> source_class;
  // for pseudo records: ensemble confidence that passed the filter
  std::optional<double> confidence;

  void check() const {
    const bool label_expected =
        split == Split::train_labeled || provenance == Provenance::pseudo ||
        provenance == Provenance::synthetic;
    if (label.has_value() != label_expected)
      throw IntegrityError("record '" + id + "': label " +
                           (label ? "present" : "missing") + " but split=" +
                           to_string(split) + " provenance=" + to_string(provenance));
    if (provenance == Provenance::synthetic && !source_class)
      throw IntegrityError("synthetic record '" + id + "' missing source_class");
    if (provenance == Provenance::pseudo && !confidence)
      throw IntegrityError("pseudo record '" + id + "' missing confidence");
    if (confidence && (*confidence < 0.0 || *confidence > 1.0))
      throw IntegrityError("record '" + id + "': confidence out of [0,1]");
  }
};

// Per-class counts over the four-class label set.
struct ClassDistribution {
  std::array<std::int64_t, kNumClasses> counts{0, 0, 0, 0};

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  std::int64_t& operator[](ClassLabel c) { return counts[index_of(c)]; }
  std::int64_t operator[](ClassLabel c) const { return counts[index_of(c)]; }

  ClassDistribution operator+(const ClassDistribution& o) const {
    ClassDistribution r;
    for (int i = 0; i < kNumClasses; ++i) r.counts[i] = counts[i] + o.counts[i];
    return r;
  }

  bool operator==(const ClassDistribution& o) const { return counts == o.counts; }
};

// Softmax output over the four classes.
struct ProbabilityVector {
  std::array<double, kNumClasses> p{0, 0, 0, 0};

  double& operator[](int i) { return p[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return p[static_cast<std::size_t>(i)]; }

  bool valid(double tol = 1e-6) const {
    double sum = 0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
      sum += v;
    }
    return std::fabs(sum - 1.0) <= tol;
  }

  int argmax() const {
    int best = 0;
    for (int i = 1; i < kNumClasses; ++i)
      if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
    return best;  // ties keep the lowest index
  }

  double max() const { return p[static_cast<std::size_t>(argmax())]; }
};

}  // namespace trainext
