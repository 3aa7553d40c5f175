#pragma once

// Three-phase workflow orchestration: baseline training + ensemble, data
// extension (pseudo-labels, masks, per-class synthesis, balance plan), and
// extended training + final ensemble. Every phase writes an artifact
// manifest; later phases locate their inputs through those manifests and
// never mutate earlier artifacts.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trainext/balancer.hpp"
#include "trainext/catalog.hpp"
#include "trainext/classifier.hpp"
#include "trainext/common.hpp"
#include "trainext/edgemask.hpp"
#include "trainext/ensemble.hpp"
#include "trainext/explain.hpp"
#include "trainext/gan.hpp"
#include "trainext/metrics.hpp"
#include "trainext/pseudolabel.hpp"

namespace trainext {

enum class Phase { baseline, extend, extended };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::baseline: return "baseline";
    case Phase::extend: return "extend";
    case Phase::extended: return "extended";
  }
  return "?";
}

inline std::optional<Phase> parse_phase(std::string_view s) {
  if (s == "baseline") return Phase::baseline;
  if (s == "extend") return Phase::extend;
  if (s == "extended") return Phase::extended;
  return std::nullopt;
}

struct PipelineConfig {
  std::string manifest_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::map<std::string, TrainingConfig> classifiers;
  std::vector<std::string> baseline_members;
  double pseudo_threshold = 0.70;
  bool pseudo_include_test = false;
  CannyParams canny;
  // raw override blocks; fields present here replace the stock per-class
  // configuration (shared defaults first, then the per-class block)
  nlohmann::json gan_defaults_json = nlohmann::json::object();
  std::map<int, nlohmann::json> gan_overrides;
  std::string extended_base;                  // classifier config the extended phase reuses
  std::vector<std::string> extended_backbones{"efficientnet-b0", "efficientnet-b1",
                                              "efficientnet-b2"};
  std::optional<std::string> evaluation_truth_csv;  // id,label rows for the validation split

  void check() const {
    if (manifest_path.empty()) throw ValidationError("pipeline config: manifest path missing");
    if (output_dir.empty()) throw ValidationError("pipeline config: output_dir missing");
    if (baseline_members.empty())
      throw ValidationError("pipeline config: baseline needs at least one member");
    for (const auto& name : baseline_members)
      if (!classifiers.count(name))
        throw ValidationError("pipeline config: unknown classifier '" + name + "'");
    if (!classifiers.count(extended_base))
      throw ValidationError("pipeline config: unknown extended base config '" + extended_base +
                            "'");
    if (extended_backbones.empty())
      throw ValidationError("pipeline config: extended phase needs backbones");
    for (const auto& [name, cfg] : classifiers) cfg.check();
    if (pseudo_threshold < 0 || pseudo_threshold > 1)
      throw ValidationError("pipeline config: pseudo threshold must be in [0,1]");
    canny.check();
  }

  GanConfig gan_config_for(ClassLabel c) const {
    GanConfig base = gan_config_from_json(gan_defaults_json, default_gan_config(c));
    base.seed = derive_seed(seed, std::string("gan_") + to_string(c));
    auto it = gan_overrides.find(index_of(c));
    if (it != gan_overrides.end()) base = gan_config_from_json(it->second, base);
    return base;
  }
};

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  const auto& data = j.at("data");
  c.manifest_path = data.at("manifest").get<std::string>();
  c.output_dir = data.at("output_dir").get<std::string>();
  c.seed = j.value("seed", 0ull);
  for (const auto& [name, cfg] : j.at("classifiers").items())
    c.classifiers[name] = training_config_from_json(cfg);
  for (const auto& m : j.at("baseline").at("members"))
    c.baseline_members.push_back(m.get<std::string>());
  if (j.contains("pseudo")) {
    c.pseudo_threshold = j.at("pseudo").value("threshold", c.pseudo_threshold);
    c.pseudo_include_test = j.at("pseudo").value("include_test", c.pseudo_include_test);
  }
  if (j.contains("canny")) {
    const auto& cj = j.at("canny");
    c.canny.radius = cj.value("radius", c.canny.radius);
    c.canny.sigma = cj.value("sigma", c.canny.sigma);
    c.canny.low_percent = cj.value("low_percent", c.canny.low_percent);
    c.canny.high_percent = cj.value("high_percent", c.canny.high_percent);
  }
  if (j.contains("gan")) {
    if (j.at("gan").contains("defaults")) c.gan_defaults_json = j.at("gan").at("defaults");
    if (j.at("gan").contains("per_class"))
      for (const auto& [cls, override_json] : j.at("gan").at("per_class").items()) {
        const auto label = parse_class_label(cls);
        if (!label) throw ParseError("pipeline config: unknown gan class '" + cls + "'");
        c.gan_overrides[index_of(*label)] = override_json;
      }
  }
  const auto& ext = j.at("extended");
  c.extended_base = ext.at("base").get<std::string>();
  if (ext.contains("backbones")) {
    c.extended_backbones.clear();
    for (const auto& b : ext.at("backbones")) c.extended_backbones.push_back(b.get<std::string>());
  }
  if (j.contains("evaluate") && j.at("evaluate").contains("truth"))
    c.evaluation_truth_csv = j.at("evaluate").at("truth").get<std::string>();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open pipeline config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    auto config = pipeline_config_from_json(j);
    config.check();
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// The only execution backend is the host CPU; the env var is honored as an
// interface and anything else is reported, not silently accepted.
inline std::string select_device() {
  const char* dev = std::getenv("TRAINEXT_DEVICE");
  if (!dev || std::string_view(dev).empty() || std::string_view(dev) == "cpu") return "cpu";
  throw ValidationError(std::string("TRAINEXT_DEVICE=") + dev +
                        " is not available; this build supports cpu only");
}

// ---------------------------------------------------------------------------
// Artifact manifests
// ---------------------------------------------------------------------------

struct ArtifactManifest {
  std::vector<std::array<std::string, 3>> rows;  // kind, name, path

  void add(const std::string& kind, const std::string& name, const std::string& path) {
    rows.push_back({kind, name, path});
  }

  void write(const std::string& path) const {
    csv::Writer w(path);
    w.row({"kind", "name", "path"});
    for (const auto& r : rows) w.row({r[0], r[1], r[2]});
  }

  static ArtifactManifest read(const std::string& path) {
    if (!std::filesystem::exists(path))
      throw DependencyError("missing phase manifest " + path);
    auto table = csv::read_file(path);
    ArtifactManifest m;
    for (const auto& row : table.rows) m.add(row[0], row[1], row[2]);
    return m;
  }

  std::optional<std::string> find(const std::string& kind, const std::string& name = "") const {
    for (const auto& r : rows)
      if (r[0] == kind && (name.empty() || r[1] == name)) return r[2];
    return std::nullopt;
  }

  std::vector<std::array<std::string, 3>> find_all(const std::string& kind) const {
    std::vector<std::array<std::string, 3>> out;
    for (const auto& r : rows)
      if (r[0] == kind) out.push_back(r);
    return out;
  }
};

inline std::string phase_manifest_path(const std::string& output_dir, Phase phase) {
  return (std::filesystem::path(output_dir) / (std::string(to_string(phase)) + "_manifest.csv"))
      .string();
}

inline ArtifactManifest require_phase_manifest(const std::string& output_dir, Phase phase) {
  const auto path = phase_manifest_path(output_dir, phase);
  if (!std::filesystem::exists(path))
    throw DependencyError("phase '" + std::string(to_string(phase)) +
                          "' has not produced its manifest yet: " + path);
  return ArtifactManifest::read(path);
}

// ---------------------------------------------------------------------------
// Truth labels for evaluation (id,label)
// ---------------------------------------------------------------------------

inline std::map<std::string, ClassLabel> read_truth_csv(const std::string& path) {
  auto table = csv::read_file(path);
  const std::vector<std::string> expected{"id", "label"};
  if (table.header != expected) throw ParseError(path + ": expected header id,label");
  std::map<std::string, ClassLabel> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto label = parse_class_label(table.rows[r][1]);
    if (!label)
      throw ParseError(path + " line " + std::to_string(table.line_numbers[r]) +
                       ": unknown label '" + table.rows[r][1] + "'");
    if (!out.emplace(table.rows[r][0], *label).second)
      throw IntegrityError(path + ": duplicate truth id '" + table.rows[r][0] + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phase implementations
// ---------------------------------------------------------------------------

namespace detail_pipeline {

namespace fs = std::filesystem;

inline TrainingConfig seeded_config(TrainingConfig cfg, std::uint64_t global_seed,
                                    const std::string& stage) {
  cfg.seed = derive_seed(global_seed, stage);
  return cfg;
}

inline SyntheticCensus census_of(const Catalog& catalog) {
  SyntheticCensus census;
  for (const auto* rec : catalog.select(std::nullopt, Provenance::synthetic)) {
    if (!rec->label || !rec->source_class) continue;
    ++census.by_label_and_source[static_cast<std::size_t>(index_of(*rec->label))]
                                [static_cast<std::size_t>(index_of(*rec->source_class))];
    if (*rec->label == *rec->source_class) ++census.self_sourced;
  }
  return census;
}

inline void write_accounting_csv(const std::string& path, const ClassDistribution& before,
                                 const ClassDistribution& after) {
  auto stats = extension_stats(before, after);
  csv::Writer w(path);
  w.row({"class", "before", "after", "absolute_increase", "percent_increase"});
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& s = stats[static_cast<std::size_t>(c)];
    std::string pct = "new";
    if (s.percent_increase) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(2) << *s.percent_increase;
      pct = os.str();
    }
    w.row({to_string(class_from_index(c)), std::to_string(s.before), std::to_string(s.after),
           std::to_string(s.absolute_increase), pct});
  }
}

}  // namespace detail_pipeline

// Baseline phase: train the configured members, persist checkpoints and
// logs, predict the pseudo-label source records, build the ensemble file.
inline ArtifactManifest run_baseline_phase(const PipelineConfig& config) {
  namespace fs = std::filesystem;
  config.check();
  select_device();
  const fs::path out_root = fs::path(config.output_dir) / "baseline";
  fs::create_directories(out_root);

  Catalog catalog = load_manifest(config.manifest_path);
  ArtifactManifest manifest;
  manifest.add("input", "manifest", config.manifest_path);

  // pseudo-label sources: the unlabeled training part, plus the test part
  // only when explicitly enabled
  std::vector<const ImageRecord*> targets;
  for (const auto* rec : catalog.select(Split::train_unlabeled, Provenance::real))
    targets.push_back(rec);
  if (config.pseudo_include_test)
    for (const auto* rec : catalog.select(Split::test, Provenance::real)) targets.push_back(rec);

  std::vector<std::string> prediction_files;
  for (const auto& name : config.baseline_members) {
    auto cfg = detail_pipeline::seeded_config(config.classifiers.at(name), config.seed,
                                              "baseline_" + name);
    auto result = train(cfg, catalog);
    const fs::path model_dir = out_root / name;
    fs::create_directories(model_dir);
    const auto ckpt =
        (model_dir / ("epoch_" + std::to_string(cfg.epochs_warmup + cfg.epochs_train) + ".ckpt"))
            .string();
    result.model.save(ckpt);
    manifest.add("checkpoint", name, ckpt);
    const auto log_path = (model_dir / "training_log.csv").string();
    result.log.write_csv(log_path);
    manifest.add("training_log", name, log_path);

    std::vector<ModelHandle::ItemError> errors;
    auto preds = result.model.predict_records(targets, &errors);
    const auto pred_path = (out_root / (name + "_predictions.csv")).string();
    write_predictions_csv(pred_path, preds);
    manifest.add("predictions", name, pred_path);
    prediction_files.push_back(pred_path);
  }

  auto fused = ensemble_from_files(prediction_files);
  const auto ens_path = (out_root / "ensemble_predictions.csv").string();
  write_predictions_csv(ens_path, fused);
  manifest.add("ensemble_predictions", "baseline", ens_path);

  const auto manifest_path = phase_manifest_path(config.output_dir, Phase::baseline);
  manifest.write(manifest_path);
  return manifest;
}

// Extend phase: pseudo-label filter, per-class edge masks, balance plan,
// per-class generator training, cross-class synthesis, verification.
inline ArtifactManifest run_extend_phase(const PipelineConfig& config) {
  namespace fs = std::filesystem;
  config.check();
  select_device();
  auto baseline_manifest = require_phase_manifest(config.output_dir, Phase::baseline);
  const auto ens_path = baseline_manifest.find("ensemble_predictions");
  if (!ens_path)
    throw DependencyError("baseline manifest lists no ensemble_predictions artifact");

  const fs::path out_root = fs::path(config.output_dir) / "extend";
  fs::create_directories(out_root);

  Catalog catalog = load_manifest(config.manifest_path);
  ArtifactManifest manifest;

  // 1. pseudo-label filter + catalog extension
  auto predictions = read_predictions_csv(*ens_path);
  auto batch = filter_confident(predictions, config.pseudo_threshold);
  const auto batch_path = (out_root / "pseudo_batch.csv").string();
  write_pseudo_batch_csv(batch_path, batch);
  manifest.add("pseudo_batch", "accepted", batch_path);

  PseudoExtendOptions opts;
  opts.allow_test_sources = config.pseudo_include_test;
  Catalog after_pseudo_catalog = extend_with_pseudo(catalog, batch, opts);

  const ClassDistribution baseline_dist =
      class_distribution(catalog, Split::train_labeled, Provenance::real);
  const ClassDistribution after_pseudo_dist =
      class_distribution(after_pseudo_catalog, Split::train_labeled);
  const auto accounting_path = (out_root / "pseudo_accounting.csv").string();
  detail_pipeline::write_accounting_csv(accounting_path, baseline_dist, after_pseudo_dist);
  manifest.add("pseudo_accounting", "accounting", accounting_path);

  // 2. edge masks for every labeled training record
  const fs::path mask_dir = out_root / "masks";
  fs::create_directories(mask_dir);
  std::vector<MaskManifestRow> mask_rows;
  auto mask_result = batch_masks(after_pseudo_catalog, std::nullopt, config.canny);
  for (const auto& m : mask_result.masks) {
    const auto path = (mask_dir / mask_filename(m.source_id)).string();
    write_png_1bit(path, m.pixels);
    const auto* rec = after_pseudo_catalog.find(m.source_id, Provenance::pseudo);
    if (!rec) rec = after_pseudo_catalog.find(m.source_id, Provenance::real);
    mask_rows.push_back({path, m.source_id, *rec->label});
  }
  if (!mask_result.errors.empty()) {
    const auto err_path = (out_root / "mask_errors.csv").string();
    csv::Writer w(err_path);
    w.row({"id", "error"});
    for (const auto& e : mask_result.errors) w.row({e.id, e.message});
    manifest.add("mask_errors", "errors", err_path);
  }
  const auto mask_manifest_path = (out_root / "mask_manifest.csv").string();
  write_mask_manifest(mask_manifest_path, mask_rows);
  manifest.add("mask_manifest", "masks", mask_manifest_path);

  // 3. balance plan
  auto plan = plan_balance(after_pseudo_dist, baseline_dist);
  const auto plan_path = (out_root / "balance_plan.csv").string();
  write_plan_csv(plan_path, plan);
  manifest.add("balance_plan", "plan", plan_path);

  // 4. per-class generator training on (mask, image) pairs of that class
  std::map<int, GanModel> models;
  for (auto label : kAllClasses) {
    std::vector<MaskImagePair> pairs;
    for (const auto& row : mask_rows) {
      if (row.source_class != label) continue;
      const auto* rec = after_pseudo_catalog.find(row.source_id, Provenance::pseudo);
      if (!rec) rec = after_pseudo_catalog.find(row.source_id, Provenance::real);
      MaskImagePair pair;
      pair.mask = read_png_mask(row.mask_path);
      pair.image = read_png(rec->path);
      if (pair.image.width != pair.mask.width || pair.image.height != pair.mask.height)
        continue;
      pairs.push_back(std::move(pair));
    }
    auto gan_cfg = config.gan_config_for(label);
    const fs::path gan_dir = out_root / "gan" / to_string(label);
    fs::create_directories(gan_dir);

    GanLossLog loss_log;
    GanTrainHooks hooks;
    std::vector<MaskImagePair> sample_pairs(pairs.begin(),
                                            pairs.begin() + std::min<std::size_t>(4, pairs.size()));
    if (gan_cfg.sample_interval_epochs > 0) {
      hooks.on_epoch_end = [&, gan_dir](int epoch, GanModel& model) {
        if ((epoch + 1) % gan_cfg.sample_interval_epochs) return;
        write_sample_grid((gan_dir / ("samples_epoch_" + std::to_string(epoch + 1) + ".png")).string(),
                          model, sample_pairs);
      };
    }
    auto model = train_gan(gan_cfg, pairs, &loss_log, hooks);
    const auto ckpt =
        (gan_dir /
         ("gan_epoch_" + std::to_string(gan_cfg.epochs_initial + gan_cfg.epochs_decay) + ".ckpt"))
            .string();
    models.emplace(index_of(label), std::move(model));
    models.at(index_of(label)).save(ckpt);
    manifest.add("gan_checkpoint", to_string(label), ckpt);
    const auto loss_path = (gan_dir / "loss_log.csv").string();
    loss_log.write_csv(loss_path);
    manifest.add("gan_loss_log", to_string(label), loss_path);
  }

  // 5. cross-class synthesis: class c consumes every other class's masks
  const fs::path syn_root = out_root / "synthetic";
  std::vector<ImageRecord> synthetic_records;
  csv::Writer syn_manifest((syn_root.string() + "_manifest.csv"));
  syn_manifest.row({"id", "path", "label", "source_class"});
  for (auto label : kAllClasses) {
    const fs::path class_dir = syn_root / to_string(label);
    fs::create_directories(class_dir);
    auto& model = models.at(index_of(label));
    for (const auto& row : mask_rows) {
      if (row.source_class == label) continue;
      Bitmap mask = read_png_mask(row.mask_path);
      if (mask.width != model.config().load_size || mask.height != model.config().load_size)
        continue;
      auto images = model.synthesize({mask}, derive_seed(config.seed, "synthesize"));
      const std::string syn_id = std::string(to_string(label)) + "_syn_" + row.source_id;
      const auto path = (class_dir / ("syn_" + row.source_id + ".png")).string();
      write_png(path, images[0]);
      syn_manifest.row({syn_id, path, to_string(label), to_string(row.source_class)});

      ImageRecord rec;
      rec.id = syn_id;
      rec.path = path;
      rec.width = images[0].width;
      rec.height = images[0].height;
      rec.split = Split::train_labeled;
      rec.label = label;
      rec.provenance = Provenance::synthetic;
      rec.source_class = row.source_class;
      synthetic_records.push_back(std::move(rec));
    }
  }
  manifest.add("synthetic_manifest", "synthetic", syn_root.string() + "_manifest.csv");

  // 6. extended catalog + verification
  Catalog extended_catalog = extended_with(after_pseudo_catalog, synthetic_records);
  const auto extended_manifest_csv = (out_root / "extended_manifest.csv").string();
  write_manifest(extended_manifest_csv, extended_catalog);
  manifest.add("extended_manifest", "catalog", extended_manifest_csv);

  auto verification = verify_extension(plan, detail_pipeline::census_of(extended_catalog));
  const auto verification_path = (out_root / "plan_verification.csv").string();
  {
    csv::Writer w(verification_path);
    w.row({"class", "discrepancy"});
    for (const auto& d : verification.discrepancies) w.row({to_string(d.label), d.message});
  }
  manifest.add("plan_verification", "verification", verification_path);

  const auto manifest_path = phase_manifest_path(config.output_dir, Phase::extend);
  manifest.write(manifest_path);
  return manifest;
}

// Extended phase: the base configuration re-trained across the configured
// backbone variants on the extended catalog, final ensemble, evaluation.
inline ArtifactManifest run_extended_phase(const PipelineConfig& config) {
  namespace fs = std::filesystem;
  config.check();
  select_device();
  auto extend_manifest = require_phase_manifest(config.output_dir, Phase::extend);
  const auto extended_manifest_csv = extend_manifest.find("extended_manifest");
  if (!extended_manifest_csv)
    throw DependencyError("extend manifest lists no extended_manifest artifact");

  const fs::path out_root = fs::path(config.output_dir) / "extended";
  fs::create_directories(out_root);

  Catalog catalog = load_manifest(*extended_manifest_csv);
  ArtifactManifest manifest;
  manifest.add("input", "extended_manifest", *extended_manifest_csv);

  std::vector<const ImageRecord*> eval_records;
  for (const auto* rec : catalog.select(Split::validation, Provenance::real))
    eval_records.push_back(rec);

  std::vector<std::string> prediction_files;
  const TrainingConfig base = config.classifiers.at(config.extended_base);
  for (const auto& backbone : config.extended_backbones) {
    TrainingConfig cfg = base;
    cfg.backbone = backbone;
    cfg = detail_pipeline::seeded_config(cfg, config.seed, "extended_" + backbone);
    auto result = train(cfg, catalog);
    const fs::path model_dir = out_root / backbone;
    fs::create_directories(model_dir);
    const auto ckpt =
        (model_dir / ("epoch_" + std::to_string(cfg.epochs_warmup + cfg.epochs_train) + ".ckpt"))
            .string();
    result.model.save(ckpt);
    manifest.add("checkpoint", backbone, ckpt);
    const auto log_path = (model_dir / "training_log.csv").string();
    result.log.write_csv(log_path);
    manifest.add("training_log", backbone, log_path);

    if (!eval_records.empty()) {
      std::vector<ModelHandle::ItemError> errors;
      auto preds = result.model.predict_records(eval_records, &errors);
      const auto pred_path = (out_root / (backbone + "_predictions.csv")).string();
      write_predictions_csv(pred_path, preds);
      manifest.add("predictions", backbone, pred_path);
      prediction_files.push_back(pred_path);
    }
  }

  if (!prediction_files.empty()) {
    auto fused = ensemble_from_files(prediction_files);
    const auto ens_path = (out_root / "ensemble_predictions.csv").string();
    write_predictions_csv(ens_path, fused);
    manifest.add("ensemble_predictions", "extended", ens_path);

    if (config.evaluation_truth_csv) {
      auto truth_map = read_truth_csv(*config.evaluation_truth_csv);
      std::vector<ClassLabel> truth, predicted;
      for (std::size_t i = 0; i < fused.ids.size(); ++i) {
        auto it = truth_map.find(fused.ids[i]);
        if (it == truth_map.end()) continue;
        truth.push_back(it->second);
        predicted.push_back(decide(fused.probabilities[i]).label);
      }
      if (!truth.empty()) {
        auto report = evaluate(truth, predicted);
        const auto eval_path = (out_root / "evaluation.csv").string();
        write_evaluation_csv(eval_path, {{"extended_ensemble", report}});
        manifest.add("evaluation", "extended_ensemble", eval_path);
        const auto confusion_path = (out_root / "confusion.csv").string();
        write_confusion_csv(confusion_path, report);
        manifest.add("confusion", "extended_ensemble", confusion_path);
      }
    }
  }

  const auto manifest_path = phase_manifest_path(config.output_dir, Phase::extended);
  manifest.write(manifest_path);
  return manifest;
}

inline ArtifactManifest run_phase(const PipelineConfig& config, Phase phase) {
  std::filesystem::create_directories(config.output_dir);
  {
    // config echo per phase, so reports can show what actually ran
    std::ofstream echo((std::filesystem::path(config.output_dir) /
                        (std::string(to_string(phase)) + "_config_echo.json"))
                           .string());
    nlohmann::json j;
    j["manifest"] = config.manifest_path;
    j["output_dir"] = config.output_dir;
    j["seed"] = config.seed;
    j["pseudo"] = {{"threshold", config.pseudo_threshold},
                   {"include_test", config.pseudo_include_test}};
    j["canny"] = {{"radius", config.canny.radius},
                  {"sigma", config.canny.sigma},
                  {"low_percent", config.canny.low_percent},
                  {"high_percent", config.canny.high_percent}};
    for (const auto& [name, cfg] : config.classifiers) j["classifiers"][name] = to_json(cfg);
    for (auto c : kAllClasses)
      j["gan"][to_string(c)] = to_json(config.gan_config_for(c));
    j["extended"] = {{"base", config.extended_base}, {"backbones", config.extended_backbones}};
    echo << j.dump(2) << "\n";
  }
  switch (phase) {
    case Phase::baseline: return run_baseline_phase(config);
    case Phase::extend: return run_extend_phase(config);
    case Phase::extended: return run_extended_phase(config);
  }
  throw ValidationError("unknown phase");
}

// ---------------------------------------------------------------------------
// Consolidated report
// ---------------------------------------------------------------------------

inline std::string consolidated_report(const std::string& output_dir) {
  namespace fs = std::filesystem;
  std::ostringstream out;
  bool any = false;

  for (Phase phase : {Phase::baseline, Phase::extend, Phase::extended}) {
    const auto path = phase_manifest_path(output_dir, phase);
    if (!fs::exists(path)) continue;
    any = true;
    auto manifest = ArtifactManifest::read(path);
    out << "== phase " << to_string(phase) << " ==\n";
    for (const auto& row : manifest.rows)
      out << "  " << row[0] << " (" << row[1] << "): " << row[2] << "\n";

    if (phase == Phase::extend) {
      {
        // rebuild the accounting table from the extended manifest counts
        if (auto ext = manifest.find("extended_manifest")) {
          Catalog catalog = load_manifest(*ext);
          const auto baseline =
              class_distribution(catalog, Split::train_labeled, Provenance::real);
          ClassDistribution after_pseudo = baseline;
          for (const auto* rec :
               catalog.select(Split::train_labeled, Provenance::pseudo))
            ++after_pseudo[*rec->label];
          auto plan = plan_balance(after_pseudo, baseline);
          out << "\nExtension accounting:\n";
          print_plan_table(out, plan);
          auto verification = verify_extension(plan, detail_pipeline::census_of(catalog));
          if (verification.ok()) {
            out << "plan verification: clean\n";
          } else {
            out << "plan verification: " << verification.discrepancies.size()
                << " discrepancies\n";
            for (const auto& d : verification.discrepancies) out << "  " << d.message << "\n";
          }
          out << "note: cross-validation folds may share near-duplicate images when the "
                 "source dataset ships pre-augmented variants; fold scores can be "
                 "optimistic\n";
        }
      }
      if (auto acc = manifest.find("pseudo_accounting")) {
        out << "\nPseudo-label accounting (" << *acc << "):\n";
        auto table = csv::read_file(*acc);
        for (const auto& row : table.rows) {
          out << "  " << row[0] << ": " << row[1] << " -> " << row[2] << " (+" << row[3]
              << ", " << (row[4] == "new" ? std::string("new") : "+" + row[4] + "%") << ")\n";
        }
      }
    }

    if (phase == Phase::extended) {
      for (const auto& row : manifest.find_all("evaluation")) {
        auto table = csv::read_file(row[2]);
        out << "\nEvaluation (" << row[2] << "):\n";
        for (std::size_t col = 0; col < table.header.size(); ++col)
          out << (col ? "," : "  ") << table.header[col];
        out << "\n";
        for (const auto& data_row : table.rows) {
          for (std::size_t col = 0; col < data_row.size(); ++col)
            out << (col ? "," : "  ") << data_row[col];
          out << "\n";
        }
      }
    }
    out << "\n";
  }
  if (!any)
    throw DependencyError("no phase manifests found under " + output_dir +
                          " (expected baseline_manifest.csv, extend_manifest.csv or "
                          "extended_manifest.csv)");
  return out.str();
}

// Side-by-side comparison of two evaluation CSVs with improvement deltas.
inline std::string compare_evaluations(const std::string& eval_a, const std::string& eval_b) {
  auto ta = csv::read_file(eval_a);
  auto tb = csv::read_file(eval_b);
  if (ta.rows.empty() || tb.rows.empty())
    throw ValidationError("compare_evaluations: empty evaluation file");
  const int macro_col = ta.column("macro_f1");
  if (macro_col < 0 || tb.column("macro_f1") != macro_col)
    throw ParseError("compare_evaluations: evaluation files lack a macro_f1 column");
  const double a = std::stod(ta.rows[0][static_cast<std::size_t>(macro_col)]) / 100.0;
  const double b = std::stod(tb.rows[0][static_cast<std::size_t>(macro_col)]) / 100.0;
  auto delta = improvement(a, b);
  std::ostringstream out;
  out << ta.rows[0][0] << " macro F1 " << std::fixed << std::setprecision(2) << 100.0 * a
      << "% vs " << tb.rows[0][0] << " " << 100.0 * b << "%: " << std::showpos
      << round_half_up(delta.percentage_points, 2) << " pp";
  if (delta.relative_percent)
    out << " (" << round_half_up(*delta.relative_percent, 2) << "% relative)";
  out << std::noshowpos << "\n";
  return out.str();
}

}  // namespace trainext
