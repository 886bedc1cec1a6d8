#pragma once

#include <map>
#include <string>
#include <vector>

#include "spur/cbm.hpp"
#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/pool.hpp"

namespace spur {

// Q1 elicits everything visible, Q2 confirms which of those are parts of the
// category, Q3 elicits detailed core attributes. "___" is replaced by the
// category name.
struct QuestionTemplates {
  std::vector<std::string> q1, q2, q3;
};

QuestionTemplates default_templates();

struct FixtureEntry {
  std::string question;
  std::string category;
  std::vector<std::string> image_ids;
  std::string response;
};

std::vector<FixtureEntry> load_fixtures(const std::string& path);
void save_fixtures(const std::vector<FixtureEntry>& fixtures,
                   const std::string& path);

class AttributeSource {
 public:
  enum class Backend { oracle, fixture, external_client };

  Backend backend = Backend::oracle;
  QuestionTemplates templates = default_templates();

  const GroupedDataset* truth = nullptr;       // oracle
  std::vector<FixtureEntry> fixtures;          // fixture (and recording)
  std::string endpoint;                        // external client
  std::string token_env = "SPUR_MLLM_TOKEN";
  int retry_limit = 2;
  bool record = false;  // append external responses to `fixtures`

  static AttributeSource oracle_for(const GroupedDataset& dataset);
  static AttributeSource fixture_from(std::vector<FixtureEntry> entries);
  static AttributeSource external(const std::string& endpoint);

  // question_kind is 1, 2 or 3.
  std::string query(int question_kind, const std::string& question,
                    const std::string& category,
                    const std::vector<std::string>& image_ids,
                    const std::vector<const Image*>& images);
};

// Bullet-list response filter: keep "-", "*" or "N." lines, trimmed and
// lowercased, at most 6 words.
std::vector<std::string> parse_bulleted(const std::string& response);

struct ProbeResult {
  std::vector<Attribute> core;
  std::vector<Attribute> non_core;
};

ProbeResult probe_attributes(AttributeSource& source,
                             const std::vector<const Image*>& images,
                             const std::vector<std::string>& image_ids,
                             const std::string& category,
                             const SimilarityFn& similarity,
                             double dedup_threshold);

struct SapResult {
  AttributePool pool;  // kinds assigned, weights filled, spurious flagged
  CbmProbe probe;
  std::map<int, double> scr;
};

SapResult run_sap(const GroupedDataset& dataset, AttributeSource& source,
                  const DualEncoderModel& model, const ThresholdPolicy& policy,
                  int query_images_per_category, double dedup_threshold = 0.9,
                  const CbmFitConfig& cbm_cfg = {});

}  // namespace spur
