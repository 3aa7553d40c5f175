#pragma once

// Dataset manifest layer: ingestion, provenance tracking, class counts and
// stratified cross-validation folds. A catalog is immutable after load;
// extensions produce a new catalog value.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/csv.hpp"
#include "trainext/image.hpp"
#include "trainext/types.hpp"

namespace trainext {

class Catalog {
 public:
  const std::vector<ImageRecord>& records() const { return records_; }

  static std::string key_of(const std::string& id, Provenance prov) {
    return std::string(to_string(prov)) + "|" + id;
  }

  bool contains(const std::string& id, Provenance prov) const {
    return index_.count(key_of(id, prov)) > 0;
  }

  const ImageRecord* find(const std::string& id, Provenance prov) const {
    auto it = index_.find(key_of(id, prov));
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  // Records are unique per (id, provenance): the same image id may appear as
  // a real unlabeled record and again as its pseudo-labeled extension.
  void add(ImageRecord rec) {
    rec.check();
    const std::string key = key_of(rec.id, rec.provenance);
    if (!index_.emplace(key, records_.size()).second)
      throw IntegrityError("duplicate record: id '" + rec.id + "' provenance " +
                           to_string(rec.provenance));
    records_.push_back(std::move(rec));
  }

  std::vector<const ImageRecord*> labeled_records() const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : records_)
      if (r.label) out.push_back(&r);
    return out;
  }

  std::vector<const ImageRecord*> select(std::optional<Split> split,
                                         std::optional<Provenance> prov) const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : records_) {
      if (split && r.split != *split) continue;
      if (prov && r.provenance != *prov) continue;
      out.push_back(&r);
    }
    return out;
  }

  std::size_t size() const { return records_.size(); }

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Pluggable image access so tests can feed in-memory images; the default
// reads the record's PNG from disk.
using ImageLoader = std::function<Image(const ImageRecord&)>;

inline Image load_record_image(const ImageRecord& rec) { return read_png(rec.path); }

// Extension never mutates the input catalog: the result is a copy with the
// new records appended (duplicate (id, provenance) pairs are rejected).
inline Catalog extended_with(const Catalog& catalog, const std::vector<ImageRecord>& additions) {
  Catalog out = catalog;
  for (const auto& rec : additions) out.add(rec);
  return out;
}

// Counts labeled records matching the filters; unlabeled records never count.
inline ClassDistribution class_distribution(const Catalog& catalog,
                                            std::optional<Split> split = std::nullopt,
                                            std::optional<Provenance> prov = std::nullopt) {
  ClassDistribution dist;
  for (const auto* r : catalog.select(split, prov))
    if (r->label) ++dist[*r->label];
  return dist;
}

// ---------------------------------------------------------------------------
// Manifest CSV: id,path,split,label,provenance,source_class,confidence
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> header{"id",         "path",         "split", "label",
                                               "provenance", "source_class", "confidence"};
  return header;
}

// Relative image paths in a manifest resolve against the manifest's own
// directory, so datasets stay relocatable.
inline Catalog load_manifest(const std::string& path) {
  auto table = csv::read_file(path);
  if (table.header != manifest_header())
    throw ParseError(path + ": unexpected manifest header");
  const auto base_dir = std::filesystem::path(path).parent_path();
  Catalog catalog;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto line = table.line_numbers[r];
    const auto& row = table.rows[r];
    auto fail = [&](const std::string& why) {
      throw ParseError(path + " line " + std::to_string(line) + ": " + why);
    };

    ImageRecord rec;
    rec.id = row[0];
    rec.path = row[1];
    if (rec.id.empty()) fail("empty id");
    if (!rec.path.empty() && std::filesystem::path(rec.path).is_relative())
      rec.path = (base_dir / rec.path).lexically_normal().string();

    const auto split = parse_split(row[2]);
    if (!split) fail("unknown split '" + row[2] + "'");
    rec.split = *split;

    if (!row[3].empty()) {
      const auto label = parse_class_label(row[3]);
      if (!label) fail("unknown label '" + row[3] + "'");
      rec.label = label;
    }

    const auto prov = parse_provenance(row[4]);
    if (!prov) fail("unknown provenance '" + row[4] + "'");
    rec.provenance = *prov;

    if (!row[5].empty()) {
      const auto src = parse_class_label(row[5]);
      if (!src) fail("unknown source_class '" + row[5] + "'");
      rec.source_class = src;
    }

    if (!row[6].empty()) {
      try {
        rec.confidence = std::stod(row[6]);
      } catch (const std::exception&) {
        fail("bad confidence '" + row[6] + "'");
      }
    }

    try {
      catalog.add(std::move(rec));
    } catch (const IntegrityError& e) {
      // keep duplicate-id failures as integrity errors, surface everything
      // else as a parse error naming the line
      if (std::string(e.what()).find("duplicate record") != std::string::npos) throw;
      fail(e.what());
    }
  }
  return catalog;
}

inline void write_manifest(const std::string& path, const Catalog& catalog) {
  csv::Writer w(path);
  w.row(manifest_header());
  for (const auto& r : catalog.records()) {
    std::string conf;
    if (r.confidence) {
      std::ostringstream s;
      s << std::setprecision(17) << *r.confidence;
      conf = s.str();
    }
    w.row({r.id, r.path, to_string(r.split), r.label ? to_string(*r.label) : "",
           to_string(r.provenance), r.source_class ? to_string(*r.source_class) : "", conf});
  }
}

// ---------------------------------------------------------------------------
// Stratified k-fold assignment
// ---------------------------------------------------------------------------

struct FoldAssignment {
  int k = 0;
  std::unordered_map<std::string, int> assignment;  // labeled record id -> fold

  std::vector<std::int64_t> fold_sizes() const {
    std::vector<std::int64_t> sizes(static_cast<std::size_t>(k), 0);
    for (const auto& [id, fold] : assignment) ++sizes[static_cast<std::size_t>(fold)];
    return sizes;
  }
};

// Per class: members are dealt into folds in seeded-shuffle order, base
// share first, the remainder going to the currently least-loaded folds so
// total fold sizes stay within one record of each other.
inline FoldAssignment split_cv(const Catalog& catalog, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("split_cv: k must be >= 2");
  std::array<std::vector<std::string>, kNumClasses> per_class;
  for (const auto* r : catalog.labeled_records())
    per_class[static_cast<std::size_t>(index_of(*r->label))].push_back(r->id);

  for (int c = 0; c < kNumClasses; ++c) {
    const auto n = per_class[static_cast<std::size_t>(c)].size();
    if (n > 0 && n < static_cast<std::size_t>(k))
      throw ValidationError(std::string("split_cv: class ") + to_string(class_from_index(c)) +
                            " has " + std::to_string(n) + " records, fewer than k=" +
                            std::to_string(k));
  }

  FoldAssignment folds;
  folds.k = k;
  std::vector<std::int64_t> load(static_cast<std::size_t>(k), 0);
  Rng rng(derive_seed(seed, "split_cv"));

  for (int c = 0; c < kNumClasses; ++c) {
    auto& ids = per_class[static_cast<std::size_t>(c)];
    rng.shuffle(ids);
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    const std::int64_t base = n / k;
    const int remainder = static_cast<int>(n % k);

    // folds ranked by current load, ties by index; the first `remainder`
    // folds receive one extra record of this class
    std::vector<int> order(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) order[static_cast<std::size_t>(f)] = f;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return load[static_cast<std::size_t>(a)] < load[static_cast<std::size_t>(b)]; });

    std::size_t next = 0;
    for (int rank = 0; rank < k; ++rank) {
      const int fold = order[static_cast<std::size_t>(rank)];
      const std::int64_t take = base + (rank < remainder ? 1 : 0);
      for (std::int64_t i = 0; i < take; ++i)
        folds.assignment[ids[next++]] = fold;
      load[static_cast<std::size_t>(fold)] += take;
    }
  }
  return folds;
}

}  // namespace trainext
