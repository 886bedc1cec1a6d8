#pragma once

#include <map>
#include <set>
#include <vector>

#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/pool.hpp"

namespace spur {

struct ThresholdPolicy {
  enum class Mode { fixed, adaptive };
  Mode mode = Mode::adaptive;
  double gamma = 0.4;  // fixed threshold; also the adaptive fallback
};

// Concept bottleneck: a row of E per pool attribute, a linear head on the
// concept scores.
struct CbmProbe {
  std::vector<Vec> bottleneck;             // N rows, each unit norm, dim d
  std::vector<std::pair<int, int>> rows;   // row -> (category, attr position)
  std::vector<std::vector<int>> row_of;    // [category][position] -> row
  std::vector<Vec> head;                   // |C| x N
  int num_categories = 0;
};

struct CbmFitConfig {
  double lr = 0.5;
  int max_iters = 300;
  double l2 = 0.05;  // ridge term keeps correlated attribute weights shared
  double grad_tol = 1e-5;
  uint64_t seed = 0;
};

CbmProbe build_bottleneck(const AttributePool& pool,
                          const DualEncoderModel& model);

// g = image embedding dotted with every bottleneck row.
Vec concept_scores(const CbmProbe& probe, const Vec& image_embedding);

// Full-batch gradient descent on softmax(g W^T) cross-entropy. Image
// embeddings are the model's adapted embeddings of the train split.
void fit_cbm(CbmProbe& probe, const GroupedDataset& dataset,
             const DualEncoderModel& model, const CbmFitConfig& cfg);

// Variant over explicit (score vector, label) pairs; used by fit_cbm and the
// degenerate-input tests.
void fit_cbm_scores(CbmProbe& probe, const std::vector<Vec>& scores,
                    const std::vector<int>& labels, const CbmFitConfig& cfg);

// Clamped-positive normalization of one category's head weights over its own
// attributes; uniform fallback when every clamped weight is zero.
Vec normalize_weights(const CbmProbe& probe, int category);

// Eq.-style threshold selection over non-core attributes. Returns positions
// (indices into the category's attribute list).
std::set<int> select_spurious(const std::vector<Attribute>& attrs,
                              const Vec& weights,
                              const ThresholdPolicy& policy);

double compute_scr(const Vec& weights, const std::set<int>& spurious);

// Fills weights, flags spurious attributes, returns per-category SCR.
std::map<int, double> apply_probe_to_pool(AttributePool& pool,
                                          const CbmProbe& probe,
                                          const ThresholdPolicy& policy);

}  // namespace spur
