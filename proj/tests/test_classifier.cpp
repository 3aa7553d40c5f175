#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "trainext/classifier.hpp"

using namespace trainext;

namespace {

// four visually distinct class prototypes: saturated base color + a class
// specific pattern, mild per-image jitter
Image toy_image(ClassLabel label, int variant, int size = 16) {
  static const std::uint8_t colors[4][3] = {
      {230, 40, 40}, {40, 230, 40}, {40, 40, 230}, {230, 230, 40}};
  Image img(size, size, 3);
  Rng rng(derive_seed(1000 + static_cast<std::uint64_t>(variant), to_string(label)));
  const auto* base = colors[static_cast<std::size_t>(index_of(label))];
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool stripe = ((x + y * (index_of(label) + 1)) / 3) % 2 == 0;
      for (int c = 0; c < 3; ++c) {
        double v = base[c] * (stripe ? 1.0 : 0.55) + rng.uniform(-10, 10);
        img.at(y, x, c) = clamp_u8(v);
      }
    }
  return img;
}

struct ToySet {
  Catalog catalog;
  std::map<std::string, Image> images;

  ImageLoader loader() const {
    return [this](const ImageRecord& rec) { return images.at(rec.id); };
  }
};

ToySet make_toy_set(int per_class, int size = 16) {
  ToySet set;
  int id = 0;
  for (auto label : kAllClasses)
    for (int i = 0; i < per_class; ++i) {
      ImageRecord rec;
      rec.id = "toy" + std::to_string(id++);
      rec.path = rec.id + ".png";
      rec.split = Split::train_labeled;
      rec.label = label;
      set.images[rec.id] = toy_image(label, i, size);
      set.catalog.add(rec);
    }
  return set;
}

TrainingConfig toy_config(int epochs, std::uint64_t seed = 7) {
  TrainingConfig c;
  c.backbone = "tiny";
  c.epochs_train = epochs;
  c.lr_train = 1e-3;
  c.batch_size = 12;
  c.image_size = 16;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("lr_schedule follows the step contract") {
  auto presets = default_model_presets();

  SECTION("b3: training epoch 10 drops one gamma step") {
    REQUIRE_THAT(lr_schedule(presets.at("b3"), 10), Catch::Matchers::WithinRel(1e-5, 1e-12));
    REQUIRE_THAT(lr_schedule(presets.at("b3"), 9), Catch::Matchers::WithinRel(1e-4, 1e-12));
    REQUIRE_THAT(lr_schedule(presets.at("b3"), 20), Catch::Matchers::WithinRel(1e-6, 1e-12));
  }
  SECTION("b4: warm-up epochs run at the warm-up rate") {
    REQUIRE_THAT(lr_schedule(presets.at("b4"), 0), Catch::Matchers::WithinRel(1e-2, 1e-12));
    REQUIRE_THAT(lr_schedule(presets.at("b4"), 1), Catch::Matchers::WithinRel(1e-2, 1e-12));
    REQUIRE_THAT(lr_schedule(presets.at("b4"), 2), Catch::Matchers::WithinRel(1e-2, 1e-12));
    // first training epoch back at lr_train
    REQUIRE_THAT(lr_schedule(presets.at("b4"), 3), Catch::Matchers::WithinRel(1e-4, 1e-12));
    REQUIRE_THAT(lr_schedule(presets.at("b4"), 13), Catch::Matchers::WithinRel(1e-5, 1e-12));
  }
  SECTION("no scheduler means constant lr") {
    REQUIRE(lr_schedule(presets.at("b1"), 0) == 1e-4);
    REQUIRE(lr_schedule(presets.at("b1"), 29) == 1e-4);
  }
  SECTION("pure and non-increasing after warm-up") {
    const auto& c = presets.at("b4");
    double prev = lr_schedule(c, c.epochs_warmup);
    for (int e = c.epochs_warmup; e < c.epochs_warmup + c.epochs_train; ++e) {
      const double lr = lr_schedule(c, e);
      REQUIRE(lr == lr_schedule(c, e));
      REQUIRE(lr <= prev);
      prev = lr;
    }
  }
  SECTION("out of range epochs are rejected") {
    REQUIRE_THROWS_AS(lr_schedule(presets.at("b1"), -1), ValidationError);
    REQUIRE_THROWS_AS(lr_schedule(presets.at("b1"), 30), ValidationError);
  }
}

TEST_CASE("config validation") {
  TrainingConfig c;
  c.backbone = "tiny";
  REQUIRE_NOTHROW(c.check());

  SECTION("step scheduler needs its parameters") {
    c.scheduler = TrainingConfig::Scheduler::step;
    REQUIRE_THROWS_AS(c.check(), ValidationError);
    c.step_size = 10;
    c.gamma = 0.1;
    REQUIRE_NOTHROW(c.check());
  }
  SECTION("warm-up needs lr_warmup") {
    c.epochs_warmup = 2;
    REQUIRE_THROWS_AS(c.check(), ValidationError);
    c.lr_warmup = 1e-2;
    REQUIRE_NOTHROW(c.check());
  }
  SECTION("unknown backbone") {
    c.backbone = "resnet-900";
    REQUIRE_THROWS_AS(c.check(), ValidationError);
  }
  SECTION("gamma range") {
    c.scheduler = TrainingConfig::Scheduler::step;
    c.step_size = 5;
    c.gamma = 1.5;
    REQUIRE_THROWS_AS(c.check(), ValidationError);
  }
}

TEST_CASE("training config json round-trip") {
  auto presets = default_model_presets();
  for (const auto& [name, config] : presets) {
    auto j = to_json(config);
    auto round = training_config_from_json(j);
    REQUIRE(round.backbone == config.backbone);
    REQUIRE(round.epochs_warmup == config.epochs_warmup);
    REQUIRE(round.epochs_train == config.epochs_train);
    REQUIRE(round.batch_size == config.batch_size);
    REQUIRE(round.oversampling == config.oversampling);
    REQUIRE(round.optimizer == config.optimizer);
    REQUIRE(round.scheduler == config.scheduler);
    REQUIRE(round.step_size == config.step_size);
    REQUIRE(round.gamma == config.gamma);
    REQUIRE(round.lr_warmup == config.lr_warmup);
  }
}

TEST_CASE("oversampling balances every epoch") {
  Rng rng(5);
  // 40/10/5/25 imbalanced labels
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(0);
  for (int i = 0; i < 10; ++i) labels.push_back(1);
  for (int i = 0; i < 5; ++i) labels.push_back(2);
  for (int i = 0; i < 25; ++i) labels.push_back(3);

  for (int epoch = 0; epoch < 5; ++epoch) {
    auto idx = oversampled_indices(labels, rng);
    REQUIRE(idx.size() == labels.size());
    std::array<int, 4> counts{};
    for (auto i : idx) ++counts[static_cast<std::size_t>(labels[i])];
    for (int c = 0; c < 4; ++c) {
      REQUIRE(counts[static_cast<std::size_t>(c)] >= static_cast<int>(labels.size()) / 4);
      REQUIRE(counts[static_cast<std::size_t>(c)] <= static_cast<int>(labels.size()) / 4 + 1);
    }
  }
}

TEST_CASE("zero-epoch training returns the untouched initialization") {
  auto set = make_toy_set(1);
  auto config = toy_config(0);
  auto result = train(config, set.catalog, std::nullopt, -1, set.loader());
  REQUIRE(result.log.entries.empty());

  // equal to a freshly initialized net under the same seed
  Rng init_rng(derive_seed(config.seed, "classifier_init"));
  ClassifierNet<float> fresh(resolve_backbone("tiny"), config.dropout, init_rng);
  auto trained_params = result.model.net().named_parameters();
  auto fresh_params = fresh.named_parameters();
  REQUIRE(trained_params.size() == fresh_params.size());
  for (std::size_t i = 0; i < trained_params.size(); ++i)
    for (std::int64_t j = 0; j < trained_params[i].second->value().numel(); ++j)
      REQUIRE(trained_params[i].second->value()[j] == fresh_params[i].second->value()[j]);
}

TEST_CASE("tiny backbone memorizes the toy set") {
  auto set = make_toy_set(3);  // 12 images, 3 per class
  auto result = train(toy_config(200), set.catalog, std::nullopt, -1, set.loader());

  int correct = 0, total = 0;
  for (const auto* rec : set.catalog.labeled_records()) {
    const auto probs = result.model.predict_one(set.images.at(rec->id));
    ProbabilityVector v = probs;
    double sum = 0;
    for (int c = 0; c < kNumClasses; ++c) sum += v[c];
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
    if (class_from_index(v.argmax()) == *rec->label) ++correct;
    ++total;
  }
  REQUIRE(total == 12);
  REQUIRE(correct == total);  // training accuracy 1.0

  SECTION("losses decrease over training") {
    REQUIRE(result.log.entries.front().mean_loss > result.log.entries.back().mean_loss);
  }
  SECTION("inference is deterministic") {
    const auto& img = set.images.begin()->second;
    auto a = result.model.predict({img, img});
    REQUIRE(a[0].p == a[1].p);
  }
}

TEST_CASE("training is reproducible under a fixed seed") {
  auto set = make_toy_set(2);
  auto a = train(toy_config(3, 42), set.catalog, std::nullopt, -1, set.loader());
  auto b = train(toy_config(3, 42), set.catalog, std::nullopt, -1, set.loader());
  REQUIRE(a.log.entries.size() == b.log.entries.size());
  for (std::size_t i = 0; i < a.log.entries.size(); ++i)
    REQUIRE(a.log.entries[i].mean_loss == b.log.entries[i].mean_loss);

  auto c = train(toy_config(3, 43), set.catalog, std::nullopt, -1, set.loader());
  REQUIRE(a.log.entries[2].mean_loss != c.log.entries[2].mean_loss);
}

TEST_CASE("warm-up trains only the classification head") {
  auto set = make_toy_set(2);
  auto config = toy_config(0, 11);
  config.epochs_warmup = 2;
  config.lr_warmup = 1e-2;
  auto warmed = train(config, set.catalog, std::nullopt, -1, set.loader());

  Rng init_rng(derive_seed(config.seed, "classifier_init"));
  ClassifierNet<float> fresh(resolve_backbone("tiny"), config.dropout, init_rng);
  auto warmed_params = warmed.model.net().named_parameters();
  auto fresh_params = fresh.named_parameters();

  bool head_changed = false;
  for (std::size_t i = 0; i < warmed_params.size(); ++i) {
    const bool is_head = warmed_params[i].first.rfind("head.", 0) == 0;
    bool identical = true;
    for (std::int64_t j = 0; j < warmed_params[i].second->value().numel(); ++j)
      if (warmed_params[i].second->value()[j] != fresh_params[i].second->value()[j])
        identical = false;
    if (is_head) {
      if (!identical) head_changed = true;
    } else {
      REQUIRE(identical);  // backbone frozen during warm-up
    }
  }
  REQUIRE(head_changed);
}

TEST_CASE("fold-held-out training logs validation scores") {
  auto set = make_toy_set(3);
  auto folds = split_cv(set.catalog, 3, 1);
  auto config = toy_config(2);
  auto result = train(config, set.catalog, folds, 0, set.loader());
  REQUIRE(result.log.entries.size() == 2);
  for (const auto& e : result.log.entries) {
    REQUIRE(e.val_macro_f1.has_value());
    REQUIRE(*e.val_macro_f1 >= 0.0);
    REQUIRE(*e.val_macro_f1 <= 1.0);
  }
}

TEST_CASE("oversized batch is clamped with a warning") {
  auto set = make_toy_set(1);
  auto config = toy_config(1);
  config.batch_size = 500;
  auto result = train(config, set.catalog, std::nullopt, -1, set.loader());
  REQUIRE(result.log.warnings.size() == 1);
  REQUIRE(result.log.warnings[0].find("clamped") != std::string::npos);
}

TEST_CASE("empty class is a training error") {
  Catalog catalog;
  ImageRecord r;
  r.id = "only";
  r.path = "only.png";
  r.split = Split::train_labeled;
  r.label = ClassLabel::none;
  catalog.add(r);
  REQUIRE_THROWS_AS(train(toy_config(1), catalog), ValidationError);
}

TEST_CASE("checkpoint round-trip preserves predictions") {
  namespace fs = std::filesystem;
  auto set = make_toy_set(1);
  auto result = train(toy_config(2), set.catalog, std::nullopt, -1, set.loader());

  const auto dir = fs::temp_directory_path() / "trainext_test_classifier";
  fs::create_directories(dir);
  const auto path = (dir / "epoch_2.ckpt").string();
  result.model.save(path);

  auto loaded = ModelHandle::load(path);
  const auto& img = set.images.begin()->second;
  auto a = result.model.predict_one(img);
  auto b = loaded.predict_one(img);
  REQUIRE(a.p == b.p);
  fs::remove_all(dir);
}

TEST_CASE("predict_records collects per-item decode errors and continues") {
  auto set = make_toy_set(1);
  auto result = train(toy_config(1), set.catalog, std::nullopt, -1, set.loader());

  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "trainext_test_classifier_pred";
  fs::create_directories(dir);

  // one real png, one missing file
  ImageRecord good;
  good.id = "good";
  good.path = (dir / "good.png").string();
  good.split = Split::train_unlabeled;
  write_png(good.path, toy_image(ClassLabel::none, 0));
  ImageRecord bad;
  bad.id = "bad";
  bad.path = (dir / "missing.png").string();
  bad.split = Split::train_unlabeled;

  std::vector<ModelHandle::ItemError> errors;
  auto preds = result.model.predict_records({&good, &bad}, &errors);
  REQUIRE(preds.ids == std::vector<std::string>{"good"});
  REQUIRE(errors.size() == 1);
  REQUIRE(errors[0].id == "bad");
  fs::remove_all(dir);
}

TEST_CASE("training log csv export") {
  namespace fs = std::filesystem;
  auto set = make_toy_set(1);
  auto result = train(toy_config(2), set.catalog, std::nullopt, -1, set.loader());
  const auto dir = fs::temp_directory_path() / "trainext_test_classifier_log";
  fs::create_directories(dir);
  const auto path = (dir / "log.csv").string();
  result.log.write_csv(path);
  auto table = csv::read_file(path);
  REQUIRE(table.rows.size() == 2);
  REQUIRE(table.header == std::vector<std::string>{"epoch", "lr", "mean_loss", "val_macro_f1"});
  fs::remove_all(dir);
}
