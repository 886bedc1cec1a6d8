#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "spur/datagen.hpp"
#include "spur/eval.hpp"
#include "spur/train.hpp"

using namespace spur;

TEST_CASE("identical parameters and seed give bitwise-identical datasets") {
  for (const char* gen : {"colored_mnist", "shapes_on_textures"}) {
    auto a = generate_dataset(gen, 4, 4, 4, 0.9, 77);
    auto b = generate_dataset(gen, 4, 4, 4, 0.9, 77);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].image.data == b.samples[i].image.data);
      CHECK(a.samples[i].label == b.samples[i].label);
      CHECK(a.samples[i].group == b.samples[i].group);
      CHECK(a.samples[i].planted_bits == b.samples[i].planted_bits);
    }
    CHECK(a.train_idx == b.train_idx);
    CHECK(a.test_idx == b.test_idx);
  }
}

TEST_CASE("rho=1 pins every train background to its class color") {
  auto ds = generate_colored_mnist(10, 8, 20, 1.0, 3);
  for (int i : ds.train_idx) CHECK(ds.samples[i].planted_bits == 1);
  // test colors stay uniform regardless of label: some must miss their class
  int missing = 0;
  for (int i : ds.test_idx)
    if (ds.samples[i].planted_bits == 0) ++missing;
  CHECK(missing > 0);
}

TEST_CASE("rho=0 gives the class color at the uniform 1/classes rate") {
  auto ds = generate_colored_mnist(10, 100, 1, 0.0, 13);
  int matched = 0;
  for (int i : ds.train_idx) matched += ds.samples[i].planted_bits;
  double p = static_cast<double>(matched) / ds.train_idx.size();
  REQUIRE(ds.train_idx.size() >= 1000);
  CHECK(p == doctest::Approx(0.1).epsilon(0.5));  // 0.1 +- 0.05
  CHECK(std::abs(p - 0.1) < 0.05);
}

TEST_CASE("rho=0.95 train correlation lands in [0.92, 0.98] on average") {
  // Monte Carlo over the generator: 100 resamples of 16 shots x 10 classes
  double total = 0.0;
  int n = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto ds = generate_colored_mnist(10, 16, 1, 0.95, 1000 + seed);
    for (int i : ds.train_idx) {
      total += ds.samples[i].planted_bits;
      ++n;
    }
  }
  double p = total / n;
  CHECK(p >= 0.92);
  CHECK(p <= 0.98);
}

TEST_CASE("more classes than palette hues is a configuration error") {
  CHECK_THROWS_AS(generate_colored_mnist(11, 1, 1, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(generate_shapes_on_textures(21, 1, 1, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(generate_dataset("mystery", 2, 1, 1, 0.5, 1), ConfigError);
}

TEST_CASE("base/new split divides categories evenly and deterministically") {
  SUBCASE("10 categories split 5/5") {
    auto ds = generate_colored_mnist(10, 1, 1, 0.5, 7);
    base_new_split(ds, 42);
    CHECK(ds.base_categories.size() == 5);
    CHECK(ds.new_categories.size() == 5);
  }
  SUBCASE("11 categories split 6/5 with base taking the extra") {
    auto ds = generate_shapes_on_textures(11, 1, 1, 0.5, 7);
    base_new_split(ds, 42);
    CHECK(ds.base_categories.size() == 6);
    CHECK(ds.new_categories.size() == 5);
    // partition: disjoint and exhaustive
    std::set<int> all(ds.base_categories.begin(), ds.base_categories.end());
    all.insert(ds.new_categories.begin(), ds.new_categories.end());
    CHECK(all.size() == 11);
  }
  SUBCASE("same seed gives the identical partition") {
    auto a = generate_colored_mnist(10, 1, 1, 0.5, 7);
    auto b = generate_colored_mnist(10, 1, 1, 0.5, 7);
    base_new_split(a, 9);
    base_new_split(b, 9);
    CHECK(a.base_categories == b.base_categories);
    CHECK(a.new_categories == b.new_categories);
  }
  SUBCASE("fewer than 2 categories is an input error") {
    auto ds = generate_colored_mnist(1, 1, 1, 0.5, 7);
    CHECK_THROWS_AS(base_new_split(ds, 1), InputError);
  }
}

TEST_CASE("groups partition the samples and encode attribute presence") {
  auto ds = generate_shapes_on_textures(6, 6, 6, 0.7, 21);
  std::map<int, int> counts;
  for (const auto& s : ds.samples) {
    CHECK(s.group >= 0);
    counts[s.group]++;
  }
  size_t total = 0;
  for (auto& [g, n] : counts) total += n;
  CHECK(total == ds.samples.size());
  // train/test splits are disjoint and cover all samples
  std::set<int> train(ds.train_idx.begin(), ds.train_idx.end());
  std::set<int> test(ds.test_idx.begin(), ds.test_idx.end());
  CHECK(train.size() + test.size() == ds.samples.size());
  for (int i : ds.test_idx) CHECK(!train.count(i));
}

TEST_CASE("ground-truth tables carry the planted attributes verbatim") {
  auto cm = generate_colored_mnist(10, 1, 1, 0.95, 2);
  REQUIRE(cm.categories.size() == 10);
  for (size_t c = 0; c < cm.categories.size(); ++c) {
    CHECK(cm.categories[c].core.size() == 2);  // stroke descriptors
    REQUIRE(cm.categories[c].spurious.size() == 1);
    CHECK(cm.categories[c].spurious[0] ==
          color_names()[c] + " background");
  }
  auto st = generate_shapes_on_textures(8, 1, 1, 0.95, 2);
  for (size_t c = 0; c < st.categories.size(); ++c) {
    REQUIRE(st.categories[c].spurious.size() == 2);  // texture + border
    CHECK(st.categories[c].spurious[0].find("texture") != std::string::npos);
    CHECK(st.categories[c].spurious[1].find("border") != std::string::npos);
  }
  // truth_pool mirrors the tables with kinds assigned
  auto pool = truth_pool(cm);
  REQUIRE(pool.categories.size() == cm.categories.size());
  for (size_t c = 0; c < pool.attrs.size(); ++c) {
    std::vector<std::string> core, non_core;
    for (const auto& a : pool.attrs[c])
      (a.kind == AttrKind::core ? core : non_core).push_back(a.text);
    CHECK(core == cm.categories[c].core);
    CHECK(non_core == cm.categories[c].spurious);
  }
}

TEST_CASE("dataset export and load round-trip") {
  namespace fs = std::filesystem;
  auto dir = (fs::temp_directory_path() / "spur_test_datagen").string();
  auto ds = generate_colored_mnist(3, 2, 2, 0.9, 33);
  export_dataset(ds, dir);
  auto loaded = load_dataset(dir);
  CHECK(loaded.generator == ds.generator);
  CHECK(loaded.rho == ds.rho);
  REQUIRE(loaded.samples.size() == ds.samples.size());
  CHECK(loaded.train_idx == ds.train_idx);
  CHECK(loaded.test_idx == ds.test_idx);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].label == ds.samples[i].label);
    CHECK(loaded.samples[i].group == ds.samples[i].group);
    // pixels pass through 8-bit PNG quantization
    double max_err = 0.0;
    for (size_t k = 0; k < ds.samples[i].image.data.size(); ++k)
      max_err = std::max(max_err, std::abs(loaded.samples[i].image.data[k] -
                                           ds.samples[i].image.data[k]));
    CHECK(max_err < 1.0 / 255.0);
  }
  REQUIRE(loaded.categories.size() == ds.categories.size());
  for (size_t c = 0; c < ds.categories.size(); ++c) {
    CHECK(loaded.categories[c].name == ds.categories[c].name);
    CHECK(loaded.categories[c].core == ds.categories[c].core);
    CHECK(loaded.categories[c].spurious == ds.categories[c].spurious);
  }
  CHECK_THROWS_AS(load_dataset(dir + "_missing"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("render_attribute produces the named color and rejects unknowns") {
  Image img;
  REQUIRE(render_attribute("green background", 0, 5, img));
  double r = 0, g = 0, b = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      r += img.at(0, y, x);
      g += img.at(1, y, x);
      b += img.at(2, y, x);
    }
  CHECK(g > r);
  CHECK(g > b);
  Image none;
  CHECK(!render_attribute("quantum flux", 0, 5, none));
}

TEST_CASE("core strokes alone separate the classes at rho=0") {
  // acceptance-style recipe: contrastive warm-up then prompt/adapter tuning
  uint64_t seed = 2;
  auto ds0 = generate_colored_mnist(10, 16, 50, 0.0, sub_seed(seed, "d0"));
  auto vocab = build_vocab("colored_mnist", 10);
  std::vector<std::string> names;
  for (const auto& c : ds0.categories) names.push_back(c.name);
  auto model =
      DualEncoderModel::create(ModelConfig{}, vocab, names, sub_seed(seed, "init"));
  auto corpus =
      generate_pretrain_corpus("colored_mnist", 10, 50, sub_seed(seed, "corpus"));
  TrainConfig pre;
  pre.lr = 0.05;
  pre.epochs = 20;
  pre.batch = 16;
  pre.seed = sub_seed(seed, "pretrain");
  pretrain_contrastive(model, corpus, pre);
  TrainConfig ft;
  ft.lr = 0.05;
  ft.epochs = 10;
  ft.batch = 16;
  ft.seed = sub_seed(seed, "fit");
  auto prompts = build_prompts(truth_pool(ds0), false);
  fit_main(model, ds0, prompts, ft);
  auto acc = evaluate_accuracy(model, ds0, ds0.test_idx, prompts);
  CHECK(acc.accuracy >= 0.95);
}
