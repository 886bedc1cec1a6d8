#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <map>

#include "doctest.h"
#include "spur/pool.hpp"

using namespace spur;

namespace {

Attribute attr(const std::string& text, AttrKind kind = AttrKind::non_core) {
  return Attribute{text, kind, std::nullopt, "manual"};
}

// Fixture similarity backend: symmetric lookup table, default 0.1.
SimilarityFn fixture_similarity(
    std::map<std::pair<std::string, std::string>, double> table) {
  return [table = std::move(table)](const std::string& a,
                                    const std::string& b) {
    auto it = table.find({a, b});
    if (it != table.end()) return it->second;
    it = table.find({b, a});
    if (it != table.end()) return it->second;
    return 0.1;
  };
}

}  // namespace

TEST_CASE("build_prompt follows the photo template") {
  SUBCASE("no attributes") {
    auto p = build_prompt(3, "dog", {});
    CHECK(p.text == "a photo of a dog");
    CHECK(p.category_id == 3);
  }
  SUBCASE("attributes are appended after 'which has'") {
    auto p = build_prompt(0, "mountain bike", {attr("wheels"), attr("handle")});
    CHECK(p.text == "a photo of a mountain bike, which has wheels, handle");
  }
}

TEST_CASE("build_prompts drops spurious attributes when filtering") {
  AttributePool pool;
  pool.categories = {"dog", "boat"};
  pool.attrs = {{attr("fur", AttrKind::core), attr("grass", AttrKind::spurious)},
                {attr("hull", AttrKind::core), attr("water", AttrKind::non_core)}};
  auto full = build_prompts(pool, false);
  auto filt = build_prompts(pool, true);
  REQUIRE(full.size() == 2);
  REQUIRE(filt.size() == 2);
  CHECK(full[0].text == "a photo of a dog, which has fur, grass");
  CHECK(filt[0].text == "a photo of a dog, which has fur");
  CHECK(filt[1].text == full[1].text);  // non-spurious attrs retained
  CHECK(filt[0].text.find("grass") == std::string::npos);
}

TEST_CASE("dedup keeps everything when nothing reaches the threshold") {
  auto sim = fixture_similarity({});
  std::vector<Attribute> in = {attr("a"), attr("b"), attr("c")};
  auto out = dedup_attributes(in, sim, 1.0);
  REQUIRE(out.size() == 3);
  for (size_t i = 0; i < in.size(); ++i) CHECK(out[i].text == in[i].text);
}

TEST_CASE("dedup greedy scan drops near-duplicates, first occurrence wins") {
  auto sim = fixture_similarity({{{"ice surface", "glacier"}, 0.95}});
  std::vector<Attribute> in = {attr("ice surface"), attr("glacier"),
                               attr("wheel")};
  auto out = dedup_attributes(in, sim, 0.9);
  REQUIRE(out.size() == 2);
  CHECK(out[0].text == "ice surface");
  CHECK(out[1].text == "wheel");
}

TEST_CASE("exact duplicate text is dropped at any threshold") {
  auto sim = fixture_similarity({});
  std::vector<Attribute> in = {attr("wheel"), attr("wheel"), attr("seat")};
  auto out = dedup_attributes(in, sim, 1.0);
  REQUIRE(out.size() == 2);
  CHECK(out[0].text == "wheel");
  CHECK(out[1].text == "seat");
}

TEST_CASE("dedup is idempotent, order-stable and kind-preserving") {
  auto sim = fixture_similarity({{{"ice surface", "glacier"}, 0.95},
                                 {{"seat", "saddle"}, 0.93}});
  std::vector<Attribute> in = {attr("ice surface", AttrKind::core),
                               attr("glacier", AttrKind::non_core),
                               attr("seat", AttrKind::spurious),
                               attr("saddle", AttrKind::non_core),
                               attr("wheel", AttrKind::core)};
  auto once = dedup_attributes(in, sim, 0.9);
  auto twice = dedup_attributes(once, sim, 0.9);
  REQUIRE(once.size() == twice.size());
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(once[i].text == twice[i].text);
    CHECK(once[i].kind == twice[i].kind);
  }
  // order stability: retained attributes keep their original relative order
  size_t cursor = 0;
  for (const auto& a : once) {
    while (cursor < in.size() && in[cursor].text != a.text) ++cursor;
    REQUIRE(cursor < in.size());
    CHECK(in[cursor].kind == a.kind);  // kind untouched
  }
}

TEST_CASE("dedup threshold outside [0,1] is a configuration error") {
  auto sim = fixture_similarity({});
  std::vector<Attribute> in = {attr("a")};
  CHECK_THROWS_AS(dedup_attributes(in, sim, 1.5), ConfigError);
  CHECK_THROWS_AS(dedup_attributes(in, sim, -0.1), ConfigError);
}

TEST_CASE("attribute kind names round-trip") {
  for (AttrKind k : {AttrKind::core, AttrKind::non_core, AttrKind::spurious})
    CHECK(attr_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(attr_kind_from_string("mystery"), InputError);
}

TEST_CASE("pool JSON serialization round-trips losslessly") {
  namespace fs = std::filesystem;
  AttributePool pool;
  pool.categories = {"dog", "boat"};
  Attribute weighted{"grass", AttrKind::spurious, 0.375, "oracle"};
  pool.attrs = {{attr("fur", AttrKind::core), weighted},
                {}};  // empty category entry allowed
  auto dir = fs::temp_directory_path() / "spur_test_pool";
  fs::create_directories(dir);
  auto path = (dir / "pool.json").string();
  save_pool(pool, path);
  auto loaded = load_pool(path);
  REQUIRE(loaded.categories == pool.categories);
  REQUIRE(loaded.attrs.size() == pool.attrs.size());
  for (size_t c = 0; c < pool.attrs.size(); ++c) {
    REQUIRE(loaded.attrs[c].size() == pool.attrs[c].size());
    for (size_t j = 0; j < pool.attrs[c].size(); ++j) {
      CHECK(loaded.attrs[c][j].text == pool.attrs[c][j].text);
      CHECK(loaded.attrs[c][j].kind == pool.attrs[c][j].kind);
      CHECK(loaded.attrs[c][j].weight == pool.attrs[c][j].weight);
      CHECK(loaded.attrs[c][j].source == pool.attrs[c][j].source);
    }
  }
  CHECK_THROWS_AS(load_pool((dir / "absent.json").string()), InputError);
  fs::remove_all(dir);
}
