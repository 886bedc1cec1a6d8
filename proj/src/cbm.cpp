#include "spur/cbm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace spur {

CbmProbe build_bottleneck(const AttributePool& pool,
                          const DualEncoderModel& model) {
  if (pool.total_attributes() == 0) throw InputError("empty attribute pool");
  CbmProbe probe;
  probe.num_categories = static_cast<int>(pool.categories.size());
  probe.row_of.resize(pool.categories.size());
  for (size_t c = 0; c < pool.categories.size(); ++c) {
    for (size_t j = 0; j < pool.attrs[c].size(); ++j) {
      probe.row_of[c].push_back(static_cast<int>(probe.bottleneck.size()));
      probe.rows.push_back({static_cast<int>(c), static_cast<int>(j)});
      probe.bottleneck.push_back(
          model.encode_text({-1, pool.attrs[c][j].text}));
    }
  }
  probe.head.assign(probe.num_categories, Vec(probe.bottleneck.size(), 0.0));
  return probe;
}

Vec concept_scores(const CbmProbe& probe, const Vec& image_embedding) {
  if (!probe.bottleneck.empty() &&
      probe.bottleneck[0].size() != image_embedding.size())
    throw InputError("embedding dimension mismatch");
  Vec g(probe.bottleneck.size());
  for (size_t i = 0; i < probe.bottleneck.size(); ++i)
    g[i] = dot(image_embedding, probe.bottleneck[i]);
  return g;
}

void fit_cbm_scores(CbmProbe& probe, const std::vector<Vec>& scores,
                    const std::vector<int>& labels, const CbmFitConfig& cfg) {
  size_t n = scores.size();
  size_t nattr = probe.bottleneck.size();
  int nc = probe.num_categories;
  std::vector<char> seen(nc, 0);
  for (int y : labels) seen[y] = 1;
  for (int c = 0; c < nc; ++c) {
    if (!seen[c])
      std::fprintf(stderr,
                   "warning: category %d absent from training data; head row "
                   "stays at zero\n",
                   c);
  }

  std::vector<Vec> grad(nc, Vec(nattr, 0.0));
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    for (auto& g : grad) std::fill(g.begin(), g.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      Vec logits(nc);
      for (int c = 0; c < nc; ++c) logits[c] = dot(probe.head[c], scores[i]);
      Vec p = softmax(logits);
      for (int c = 0; c < nc; ++c) {
        double dl = (p[c] - (c == labels[i] ? 1.0 : 0.0)) /
                    static_cast<double>(n);
        if (dl == 0.0) continue;
        for (size_t k = 0; k < nattr; ++k) grad[c][k] += dl * scores[i][k];
      }
    }
    for (int c = 0; c < nc; ++c)
      for (size_t k = 0; k < nattr; ++k) grad[c][k] += cfg.l2 * probe.head[c][k];
    double gnorm = 0.0;
    for (const auto& g : grad)
      for (double v : g) gnorm += v * v;
    gnorm = std::sqrt(gnorm);
    if (gnorm < cfg.grad_tol) break;
    for (int c = 0; c < nc; ++c)
      for (size_t k = 0; k < nattr; ++k) probe.head[c][k] -= cfg.lr * grad[c][k];
  }
}

void fit_cbm(CbmProbe& probe, const GroupedDataset& dataset,
             const DualEncoderModel& model, const CbmFitConfig& cfg) {
  std::vector<Vec> scores;
  std::vector<int> labels;
  for (int i : dataset.train_idx) {
    scores.push_back(
        concept_scores(probe, model.encode_image(dataset.samples[i].image)));
    labels.push_back(dataset.samples[i].label);
  }
  if (scores.empty()) throw InputError("no training samples for the probe");
  fit_cbm_scores(probe, scores, labels, cfg);
}

Vec normalize_weights(const CbmProbe& probe, int category) {
  const auto& rows = probe.row_of[category];
  Vec w(rows.size());
  double total = 0.0;
  for (size_t j = 0; j < rows.size(); ++j) {
    w[j] = std::max(probe.head[category][rows[j]], 0.0);
    total += w[j];
  }
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

std::set<int> select_spurious(const std::vector<Attribute>& attrs,
                              const Vec& weights,
                              const ThresholdPolicy& policy) {
  double gamma = policy.gamma;
  if (policy.mode == ThresholdPolicy::Mode::adaptive) {
    // lowest positive core weight; zero-weight core attributes carry no
    // signal and would degenerate the threshold to "flag everything"
    bool has_core = false;
    double min_core = 0.0;
    for (size_t j = 0; j < attrs.size(); ++j) {
      if (attrs[j].kind == AttrKind::core && weights[j] > 0.0) {
        min_core = has_core ? std::min(min_core, weights[j]) : weights[j];
        has_core = true;
      }
    }
    if (has_core) gamma = min_core;
  }
  std::set<int> out;
  for (size_t j = 0; j < attrs.size(); ++j) {
    if (attrs[j].kind == AttrKind::core) continue;
    if (weights[j] >= gamma) out.insert(static_cast<int>(j));
  }
  return out;
}

double compute_scr(const Vec& weights, const std::set<int>& spurious) {
  if (spurious.empty()) return 0.0;
  double sp = 0.0;
  for (int j : spurious) sp += weights[j];
  sp /= static_cast<double>(spurious.size());
  double all = 0.0;
  for (double v : weights) all += v;
  all /= static_cast<double>(weights.size());
  return all > 0.0 ? sp / all : 0.0;
}

std::map<int, double> apply_probe_to_pool(AttributePool& pool,
                                          const CbmProbe& probe,
                                          const ThresholdPolicy& policy) {
  std::map<int, double> scr;
  for (size_t c = 0; c < pool.categories.size(); ++c) {
    if (pool.attrs[c].empty()) {
      scr[static_cast<int>(c)] = 0.0;
      continue;
    }
    Vec w = normalize_weights(probe, static_cast<int>(c));
    for (size_t j = 0; j < pool.attrs[c].size(); ++j)
      pool.attrs[c][j].weight = w[j];
    auto selected = select_spurious(pool.attrs[c], w, policy);
    for (int j : selected) pool.attrs[c][j].kind = AttrKind::spurious;
    scr[static_cast<int>(c)] = compute_scr(w, selected);
  }
  return scr;
}

}  // namespace spur
