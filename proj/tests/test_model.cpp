#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/train.hpp"

using namespace spur;

namespace {

DualEncoderModel small_model(uint64_t seed = 7) {
  auto vocab = build_vocab("colored_mnist", 10);
  std::vector<std::string> names;
  auto ds = generate_colored_mnist(10, 1, 1, 0.95, 11);
  for (const auto& c : ds.categories) names.push_back(c.name);
  return DualEncoderModel::create(ModelConfig{}, vocab, names, seed);
}

Image test_image(uint64_t seed = 3) {
  auto ds = generate_colored_mnist(2, 1, 1, 0.95, seed);
  return ds.samples[ds.train_idx[0]].image;
}

double cosine(const Vec& a, const Vec& b) { return dot(a, b); }

}  // namespace

TEST_CASE("encode_image with zeroed towers reduces to the projection bias") {
  auto m = small_model();
  std::fill(m.params.begin(), m.params.end(), 0.0);
  // projection bias = an arbitrary vector b; adapter = identity
  for (int i = 0; i < m.cfg.embed_dim; ++i) {
    m.params[m.proj_b() + i] = 0.25 * (i % 5) - 0.5;
    m.params[m.adapt_w() + static_cast<size_t>(i) * m.cfg.embed_dim + i] = 1.0;
  }
  Vec b(m.cfg.embed_dim);
  for (int i = 0; i < m.cfg.embed_dim; ++i) b[i] = m.params[m.proj_b() + i];
  Vec expect = normalized(b);
  Vec e = m.encode_image(test_image());
  REQUIRE(e.size() == expect.size());
  for (size_t i = 0; i < e.size(); ++i) CHECK(e[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("image embeddings are unit norm and bitwise deterministic") {
  auto m = small_model();
  Image img = test_image();
  Vec a = m.encode_image(img);
  Vec b = m.encode_image(img);
  CHECK(a == b);  // bitwise
  CHECK(std::abs(norm(a) - 1.0) < 1e-6);
  CHECK(std::abs(norm(m.encode_image_base(img)) - 1.0) < 1e-6);
}

TEST_CASE("encode_image rejects images of the wrong shape") {
  auto m = small_model();
  Image bad(16, 16);
  CHECK_THROWS_AS(m.encode_image(bad), InputError);
}

TEST_CASE("distinct training images stay distinct after fitting") {
  auto ds = generate_colored_mnist(2, 2, 2, 0.0, 5);
  auto vocab = build_vocab("colored_mnist", 10);
  std::vector<std::string> names;
  for (const auto& c : ds.categories) names.push_back(c.name);
  auto m = DualEncoderModel::create(ModelConfig{}, vocab, names, 9);
  auto prompts = build_prompts(truth_pool(ds), false);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.05;
  cfg.seed = 1;
  fit_main(m, ds, prompts, cfg);
  Vec a = m.encode_image(ds.samples[ds.train_idx[0]].image);
  Vec b = m.encode_image(ds.samples[ds.train_idx[1]].image);
  CHECK(cosine(a, b) < 1.0);
}

TEST_CASE("encode_text determinism, unit norm, and bounded cosine") {
  auto m = small_model();
  ClassPrompt p{0, "a photo of a zero"};
  Vec a = m.encode_text(p);
  CHECK(a == m.encode_text(p));  // bitwise
  CHECK(std::abs(norm(a) - 1.0) < 1e-6);
  ClassPrompt q{0, "a photo of a zero, which has one closed loop"};
  double c = cosine(a, m.encode_text(q));
  CHECK(c >= -1.0 - 1e-9);
  CHECK(c <= 1.0 + 1e-9);
}

TEST_CASE("same-category prompts with disjoint attributes embed differently") {
  auto m = small_model();
  Vec a = m.encode_text({0, "a photo of a zero, which has one closed loop"});
  Vec b = m.encode_text({0, "a photo of a zero, which has red background"});
  CHECK(cosine(a, b) < 1.0 - 1e-9);
}

TEST_CASE("encode_text rejects unknown tokens (closed vocabulary)") {
  auto m = small_model();
  CHECK_THROWS_AS(m.encode_text({0, "a photo of a zeppelin"}), InputError);
  CHECK_THROWS_AS(m.encode_text({0, "   "}), InputError);
}

TEST_CASE("predict_distribution normalizes and covers the degenerate cases") {
  auto m = small_model();
  Image img = test_image();
  SUBCASE("single prompt gives [1.0]") {
    Vec p = m.predict_distribution(img, {{0, "a photo of a zero"}});
    REQUIRE(p.size() == 1);
    CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("two identical prompts split evenly") {
    Vec p = m.predict_distribution(
        img, {{0, "a photo of a zero"}, {0, "a photo of a zero"}});
    REQUIRE(p.size() == 2);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("entries positive and summing to one") {
    std::vector<ClassPrompt> prompts;
    for (const auto& c : m.categories) prompts.push_back({-1, "a photo of a " + c});
    Vec p = m.predict_distribution(img, prompts);
    double s = 0.0;
    for (double v : p) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  SUBCASE("empty prompt list is an input error") {
    CHECK_THROWS_AS(m.predict_distribution(img, {}), InputError);
  }
}

TEST_CASE("softmax over scores [2,1] at tau=1 matches the hand value") {
  DualEncoderModel m;
  m.cfg.tau = 1.0;
  Vec p = m.predict_from_scores({2.0, 1.0});
  REQUIRE(p.size() == 2);
  CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK_THROWS_AS(m.predict_from_scores({}), InputError);
}

TEST_CASE("scaling similarities and tau together leaves the distribution fixed") {
  DualEncoderModel m;
  m.cfg.tau = 0.07;
  Vec sims = {0.31, -0.12, 0.55, 0.02};
  Vec p = m.predict_from_scores(sims);
  for (double k : {0.5, 3.0, 17.0}) {
    DualEncoderModel scaled;
    scaled.cfg.tau = 0.07 * k;
    Vec sims_k = sims;
    for (double& v : sims_k) v *= k;
    Vec q = scaled.predict_from_scores(sims_k);
    for (size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-6);
  }
}

TEST_CASE("nonpositive temperature is rejected at model creation") {
  ModelConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(
      DualEncoderModel::create(cfg, Vocab{}, {}, 1), ConfigError);
}

TEST_CASE("checkpoint save/load round-trips the model") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "spur_test_model";
  fs::create_directories(dir);
  auto path = (dir / "m.ckpt").string();
  auto m = small_model(21);
  m.save(path);
  auto loaded = DualEncoderModel::load(path);
  CHECK(loaded.vocab.words == m.vocab.words);
  CHECK(loaded.categories == m.categories);
  REQUIRE(loaded.params.size() == m.params.size());
  // parameters are stored as 32-bit floats; a second round trip is lossless
  for (size_t i = 0; i < m.params.size(); ++i)
    CHECK(loaded.params[i] == doctest::Approx(m.params[i]).epsilon(1e-6));
  auto path2 = (dir / "m2.ckpt").string();
  loaded.save(path2);
  auto again = DualEncoderModel::load(path2);
  CHECK(again == loaded);
  Image img = test_image();
  CHECK(again.encode_image(img) == loaded.encode_image(img));
  CHECK_THROWS_AS(DualEncoderModel::load((dir / "missing.ckpt").string()),
                  InputError);
  fs::remove_all(dir);
}

TEST_CASE("trainable mask covers adapter and prompt blocks only by default") {
  auto m = small_model();
  auto mask = m.trainable_mask(AdaptMode::prompt_adapter);
  REQUIRE(mask.size() == m.param_count());
  for (size_t i = 0; i < m.adapt_w(); ++i) CHECK(mask[i] == 0);
  for (size_t i = m.adapt_w(); i < m.param_count(); ++i) CHECK(mask[i] == 1);
  auto full = m.trainable_mask(AdaptMode::full);
  for (char v : full) CHECK(v == 1);
}
