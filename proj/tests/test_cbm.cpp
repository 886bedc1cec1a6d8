#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "spur/cbm.hpp"
#include "spur/datagen.hpp"

using namespace spur;

namespace {

DualEncoderModel tiny_model(uint64_t seed = 13) {
  auto vocab = build_vocab("colored_mnist", 10);
  auto ds = generate_colored_mnist(4, 1, 1, 0.95, 3);
  std::vector<std::string> names;
  for (const auto& c : ds.categories) names.push_back(c.name);
  return DualEncoderModel::create(ModelConfig{}, vocab, names, seed);
}

// Probe skeleton over explicit per-category attribute counts; bottleneck rows
// are unit basis vectors (their content is irrelevant to fit_cbm_scores).
CbmProbe skeleton(const std::vector<int>& attrs_per_cat, int dim = 8) {
  CbmProbe p;
  p.num_categories = static_cast<int>(attrs_per_cat.size());
  p.row_of.resize(attrs_per_cat.size());
  for (size_t c = 0; c < attrs_per_cat.size(); ++c) {
    for (int j = 0; j < attrs_per_cat[c]; ++j) {
      p.row_of[c].push_back(static_cast<int>(p.bottleneck.size()));
      p.rows.push_back({static_cast<int>(c), j});
      Vec row(dim, 0.0);
      row[p.bottleneck.size() % dim] = 1.0;
      p.bottleneck.push_back(row);
    }
  }
  p.head.assign(p.num_categories, Vec(p.bottleneck.size(), 0.0));
  return p;
}

// Independent ridge-regularized multinomial logistic regression, written as a
// plain loop oracle (same objective as the probe fit, different code path).
std::vector<std::vector<double>> oracle_logreg(const std::vector<Vec>& x,
                                               const std::vector<int>& y,
                                               int classes, double l2,
                                               int iters, double lr) {
  size_t n = x.size(), d = x[0].size();
  std::vector<std::vector<double>> w(classes, std::vector<double>(d, 0.0));
  for (int it = 0; it < iters; ++it) {
    std::vector<std::vector<double>> g(classes, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < n; ++i) {
      std::vector<double> z(classes, 0.0);
      double m = -1e300;
      for (int c = 0; c < classes; ++c) {
        for (size_t k = 0; k < d; ++k) z[c] += w[c][k] * x[i][k];
        m = std::max(m, z[c]);
      }
      double s = 0.0;
      for (int c = 0; c < classes; ++c) s += std::exp(z[c] - m);
      for (int c = 0; c < classes; ++c) {
        double p = std::exp(z[c] - m) / s;
        double dl = (p - (c == y[i] ? 1.0 : 0.0)) / static_cast<double>(n);
        for (size_t k = 0; k < d; ++k) g[c][k] += dl * x[i][k];
      }
    }
    for (int c = 0; c < classes; ++c)
      for (size_t k = 0; k < d; ++k)
        w[c][k] -= lr * (g[c][k] + l2 * w[c][k]);
  }
  return w;
}

int argmax_class(const std::vector<std::vector<double>>& w, const Vec& x) {
  int best = 0;
  double bv = -1e300;
  for (size_t c = 0; c < w.size(); ++c) {
    double z = 0.0;
    for (size_t k = 0; k < x.size(); ++k) z += w[c][k] * x[k];
    if (z > bv) {
      bv = z;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("build_bottleneck lays out one unit row per pool attribute") {
  auto model = tiny_model();
  AttributePool pool;
  pool.categories = {model.categories[0], model.categories[1]};
  pool.attrs = {{{"red background", AttrKind::non_core, {}, "oracle"},
                 {"single closed loop", AttrKind::core, {}, "oracle"},
                 {"hollow round center", AttrKind::core, {}, "oracle"}},
                {{"red background", AttrKind::non_core, {}, "oracle"},
                 {"one vertical stroke", AttrKind::core, {}, "oracle"},
                 {"short base stroke", AttrKind::core, {}, "oracle"}}};
  auto probe = build_bottleneck(pool, model);
  CHECK(probe.bottleneck.size() == 6);  // 2 categories x 3 attributes
  CHECK(probe.rows.size() == 6);
  CHECK(probe.num_categories == 2);
  // bijection between (category, position) and rows
  for (size_t c = 0; c < pool.attrs.size(); ++c)
    for (size_t j = 0; j < pool.attrs[c].size(); ++j) {
      int r = probe.row_of[c][j];
      CHECK(probe.rows[r].first == static_cast<int>(c));
      CHECK(probe.rows[r].second == static_cast<int>(j));
    }
  // identical text in two categories: distinct rows, identical embeddings
  CHECK(probe.row_of[0][0] != probe.row_of[1][0]);
  CHECK(probe.bottleneck[probe.row_of[0][0]] ==
        probe.bottleneck[probe.row_of[1][0]]);
  // each row equals encode_text of its attribute, and is unit norm
  for (size_t c = 0; c < pool.attrs.size(); ++c)
    for (size_t j = 0; j < pool.attrs[c].size(); ++j) {
      Vec expect = model.encode_text({-1, pool.attrs[c][j].text});
      CHECK(probe.bottleneck[probe.row_of[c][j]] == expect);
      CHECK(std::abs(norm(expect) - 1.0) < 1e-6);
    }
  AttributePool empty;
  empty.categories = {"a"};
  empty.attrs = {{}};
  CHECK_THROWS_AS(build_bottleneck(empty, model), InputError);
}

TEST_CASE("concept_scores is the per-row dot product") {
  auto model = tiny_model();
  CbmProbe probe = skeleton({3, 3}, 64);
  SUBCASE("orthogonal embedding scores zero everywhere") {
    Vec e(64, 0.0);
    e[63] = 1.0;
    // rows only populate the first 6 basis directions
    auto g = concept_scores(probe, e);
    for (double v : g) CHECK(v == 0.0);
  }
  SUBCASE("embedding equal to a row scores one on that row") {
    auto g = concept_scores(probe, probe.bottleneck[2]);
    CHECK(g[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("matches an independent loop on a random embedding") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    Vec e(64);
    for (double& v : e) v = nd(rng);
    e = normalized(e);
    auto g = concept_scores(probe, e);
    for (size_t r = 0; r < probe.bottleneck.size(); ++r) {
      double s = 0.0;
      for (size_t k = 0; k < e.size(); ++k) s += e[k] * probe.bottleneck[r][k];
      CHECK(g[r] == doctest::Approx(s).epsilon(1e-12));
    }
  }
  SUBCASE("dimension mismatch is an input error") {
    CHECK_THROWS_AS(concept_scores(probe, Vec(5, 0.0)), InputError);
  }
}

TEST_CASE("probe fit separates a one-hot 2x2 instance with dominant diagonal") {
  CbmProbe probe = skeleton({1, 1}, 2);
  std::vector<Vec> scores = {{1.0, 0.0}, {0.0, 1.0}};
  std::vector<int> labels = {0, 1};
  fit_cbm_scores(probe, scores, labels, {});
  for (size_t i = 0; i < scores.size(); ++i) {
    Vec logits(2);
    for (int c = 0; c < 2; ++c) logits[c] = dot(probe.head[c], scores[i]);
    CHECK((logits[labels[i]] > logits[1 - labels[i]]));
  }
  CHECK(probe.head[0][0] > probe.head[0][1]);
  CHECK(probe.head[1][1] > probe.head[1][0]);
  // cross-check against the independent oracle on the same instance
  auto w = oracle_logreg(scores, labels, 2, 0.05, 4000, 0.25);
  for (size_t i = 0; i < scores.size(); ++i) {
    Vec logits(2);
    for (int c = 0; c < 2; ++c) logits[c] = dot(probe.head[c], scores[i]);
    int pred = logits[0] >= logits[1] ? 0 : 1;
    CHECK(pred == argmax_class(w, scores[i]));
  }
}

TEST_CASE("all-zero concept scores leave the head at zero") {
  CbmProbe probe = skeleton({2, 2}, 4);
  std::vector<Vec> scores(6, Vec(4, 0.0));
  std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  fit_cbm_scores(probe, scores, labels, {});
  for (const auto& row : probe.head)
    for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("probe fitting is bitwise deterministic") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  std::vector<Vec> scores;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    Vec s(6);
    for (double& v : s) v = nd(rng);
    scores.push_back(s);
    labels.push_back(i % 3);
  }
  CbmProbe a = skeleton({2, 2, 2}, 6);
  CbmProbe b = skeleton({2, 2, 2}, 6);
  fit_cbm_scores(a, scores, labels, {});
  fit_cbm_scores(b, scores, labels, {});
  CHECK(a.head == b.head);
}

TEST_CASE("probe argmax agrees with brute-force logistic regression") {
  // 4 categories x 2 attributes = 8 concepts, random separable-ish scores
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd(0.0, 0.3);
  std::vector<Vec> scores;
  std::vector<int> labels;
  for (int i = 0; i < 48; ++i) {
    int y = i % 4;
    Vec s(8);
    for (double& v : s) v = nd(rng);
    s[2 * y] += 0.8;  // class-aligned concept fires
    scores.push_back(s);
    labels.push_back(y);
  }
  CbmProbe probe = skeleton({2, 2, 2, 2}, 8);
  fit_cbm_scores(probe, scores, labels, {});
  auto w = oracle_logreg(scores, labels, 4, 0.05, 6000, 0.25);
  int agree = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    Vec logits(4);
    int pred = 0;
    for (int c = 0; c < 4; ++c) {
      logits[c] = dot(probe.head[c], scores[i]);
      if (logits[c] > logits[pred]) pred = c;
    }
    if (pred == argmax_class(w, scores[i])) ++agree;
  }
  CHECK(agree == static_cast<int>(scores.size()));  // 100% agreement
}

TEST_CASE("planted perfect predictor earns the top normalized weight") {
  // category 0 has attrs {planted, noise-a, noise-b}; the planted concept
  // fires exactly on class-0 samples
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd(0.0, 0.2);
  std::vector<Vec> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    int y = i % 2;
    Vec s(6);
    for (double& v : s) v = nd(rng);
    s[0] += (y == 0) ? 0.9 : 0.0;  // planted predictor for category 0
    s[3] += (y == 1) ? 0.9 : 0.0;  // and for category 1
    scores.push_back(s);
    labels.push_back(y);
  }
  CbmProbe probe = skeleton({3, 3}, 6);
  fit_cbm_scores(probe, scores, labels, {});
  Vec w0 = normalize_weights(probe, 0);
  CHECK(w0[0] == doctest::Approx(*std::max_element(w0.begin(), w0.end())));
}

TEST_CASE("normalize_weights clamps, normalizes, and falls back to uniform") {
  CbmProbe probe = skeleton({3}, 3);
  SUBCASE("raw [2,-1,1] becomes [2/3, 0, 1/3]") {
    probe.head[0] = {2.0, -1.0, 1.0};
    Vec w = normalize_weights(probe, 0);
    CHECK(w[0] == doctest::Approx(0.6667).epsilon(1e-3));
    CHECK(w[1] == doctest::Approx(0.0));
    CHECK(w[2] == doctest::Approx(0.3333).epsilon(1e-3));
  }
  SUBCASE("all-negative raw row becomes uniform") {
    probe.head[0] = {-2.0, -0.5, -1.0};
    Vec w = normalize_weights(probe, 0);
    for (double v : w) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("random rows sum to one") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 50; ++trial) {
      for (double& v : probe.head[0]) v = nd(rng);
      Vec w = normalize_weights(probe, 0);
      double s = 0.0;
      for (double v : w) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("select_spurious applies the threshold over non-core attributes") {
  std::vector<Attribute> attrs = {
      {"a1", AttrKind::non_core, {}, "oracle"},
      {"a2", AttrKind::non_core, {}, "oracle"},
      {"c1", AttrKind::core, {}, "oracle"},
      {"c2", AttrKind::core, {}, "oracle"},
  };
  Vec weights = {0.9, 0.4, 0.5, 0.3};
  SUBCASE("adaptive threshold = lowest core weight selects both") {
    ThresholdPolicy p;
    p.mode = ThresholdPolicy::Mode::adaptive;
    auto sel = select_spurious(attrs, weights, p);
    CHECK(sel == std::set<int>{0, 1});
  }
  SUBCASE("fixed gamma 0.6 selects only the heavy one") {
    ThresholdPolicy p;
    p.mode = ThresholdPolicy::Mode::fixed;
    p.gamma = 0.6;
    auto sel = select_spurious(attrs, weights, p);
    CHECK(sel == std::set<int>{0});
  }
  SUBCASE("ties at gamma are included") {
    ThresholdPolicy p;
    p.mode = ThresholdPolicy::Mode::fixed;
    p.gamma = 0.9;
    auto sel = select_spurious(attrs, weights, p);
    CHECK(sel == std::set<int>{0});
  }
  SUBCASE("no non-core attributes yields the empty set") {
    std::vector<Attribute> cores = {{"c1", AttrKind::core, {}, "oracle"}};
    ThresholdPolicy p;
    CHECK(select_spurious(cores, {0.9}, p).empty());
  }
  SUBCASE("no core attributes falls back to the fixed gamma") {
    std::vector<Attribute> nc = {{"a1", AttrKind::non_core, {}, "oracle"},
                                 {"a2", AttrKind::non_core, {}, "oracle"}};
    ThresholdPolicy p;
    p.mode = ThresholdPolicy::Mode::adaptive;
    p.gamma = 0.5;
    auto sel = select_spurious(nc, {0.6, 0.4}, p);
    CHECK(sel == std::set<int>{0});
  }
}

TEST_CASE("raising the fixed threshold never enlarges the spurious set") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Attribute> attrs;
    Vec weights;
    for (int j = 0; j < 6; ++j) {
      attrs.push_back({"x" + std::to_string(j),
                       j % 2 ? AttrKind::core : AttrKind::non_core, {}, "m"});
      weights.push_back(ud(rng));
    }
    std::set<int> prev;
    bool first = true;
    for (double g : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      ThresholdPolicy p;
      p.mode = ThresholdPolicy::Mode::fixed;
      p.gamma = g;
      auto sel = select_spurious(attrs, weights, p);
      if (!first)
        CHECK(std::includes(prev.begin(), prev.end(), sel.begin(), sel.end()));
      prev = sel;
      first = false;
    }
  }
}

TEST_CASE("adaptively selected attributes dominate the minimum core weight") {
  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Attribute> attrs;
    Vec weights;
    for (int j = 0; j < 8; ++j) {
      attrs.push_back({"x" + std::to_string(j),
                       j < 3 ? AttrKind::core : AttrKind::non_core, {}, "m"});
      weights.push_back(ud(rng));
    }
    double min_core = 2.0;
    for (int j = 0; j < 3; ++j)
      if (weights[j] > 0.0) min_core = std::min(min_core, weights[j]);
    ThresholdPolicy p;
    p.mode = ThresholdPolicy::Mode::adaptive;
    for (int j : select_spurious(attrs, weights, p))
      CHECK(weights[j] >= min_core);
  }
}

TEST_CASE("spurious correlation ratio arithmetic") {
  SUBCASE("hand instance 0.7/0.5") {
    Vec w = {0.8, 0.6, 0.2, 0.4};
    CHECK(compute_scr(w, {0, 1}) == doctest::Approx(1.4).epsilon(1e-12));
  }
  SUBCASE("spurious = all attributes gives exactly 1") {
    Vec w = {0.3, 0.5, 0.2};
    CHECK(compute_scr(w, {0, 1, 2}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("empty spurious set gives 0") {
    CHECK(compute_scr({0.5, 0.5}, {}) == 0.0);
  }
  SUBCASE("reference averages 77.34 over 46.73 give roughly 1.655") {
    // one spurious attribute at 77.34 with the overall mean pinned to 46.73
    Vec w = {77.34, 2 * 46.73 - 77.34};
    CHECK(compute_scr(w, {0}) == doctest::Approx(77.34 / 46.73).epsilon(1e-12));
    CHECK(77.34 / 46.73 == doctest::Approx(1.655).epsilon(1e-3));
  }
}

TEST_CASE("apply_probe_to_pool fills weights and flags only non-core attrs") {
  auto model = tiny_model();
  auto ds = generate_colored_mnist(4, 8, 4, 0.95, 19);
  auto pool = truth_pool(ds);
  auto probe = build_bottleneck(pool, model);
  fit_cbm(probe, ds, model, {});
  ThresholdPolicy policy;  // adaptive default
  auto scr = apply_probe_to_pool(pool, probe, policy);
  CHECK(scr.size() == pool.categories.size());
  for (size_t c = 0; c < pool.attrs.size(); ++c) {
    double sum = 0.0;
    for (const auto& a : pool.attrs[c]) {
      REQUIRE(a.weight.has_value());
      CHECK(*a.weight >= 0.0);
      CHECK(*a.weight <= 1.0);
      sum += *a.weight;
      if (a.kind == AttrKind::spurious) {
        // spurious flags arise only from non-core attributes: the generator's
        // core descriptors must never be flagged
        bool is_core_truth = false;
        for (const auto& t : ds.categories[c].core)
          if (t == a.text) is_core_truth = true;
        CHECK(!is_core_truth);
      }
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(scr.at(static_cast<int>(c)) >= 0.0);
  }
}
