#pragma once

#include <string>

#include "spur/cbm.hpp"
#include "spur/eval.hpp"
#include "spur/probe.hpp"
#include "spur/shield.hpp"
#include "spur/train.hpp"

namespace spur {

struct RunConfig {
  // dataset
  std::string generator = "colored_mnist";
  int classes = 10;
  int shots = 16;
  int test_per_class = 50;
  double rho = 0.95;
  bool base_new = false;
  uint64_t seed = 0;
  // model / training
  double tau = 0.07;
  std::string adapt_mode = "prompt_adapter";  // or "full"
  int pretrain_per_class = 50;
  int pretrain_epochs = 20;
  double pretrain_lr = 0.05;
  int pretrain_batch = 16;
  double lr = 0.05;
  int epochs = 10;
  int batch = 16;
  // sap
  std::string sap_backend = "oracle";  // oracle | fixture | external_client
  std::string fixture_path;
  std::string endpoint;
  int query_images = 16;
  std::string policy_mode = "adaptive";  // fixed | adaptive
  double gamma = 0.4;
  double dedup_threshold = 0.9;
  // sas
  bool sas_enabled = true;
  std::string provider = "procedural_synthesis";  // or "local_retrieval"
  std::string retrieval_corpus_dir;
  int prompt_count = 5;
  int candidates_per_prompt = 8;
  int shots_per_pseudo = 16;
  double lambda = 2.0;
  bool selective = false;
  double selective_fraction = 0.10;
  bool filter_prompts = true;
  // eval
  double sim_threshold = 0.4;
  std::string out_dir = "runs/default";
};

std::string canonical_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);
void write_resolved_config(const RunConfig& cfg, const std::string& dir);

AdaptMode adapt_mode_from_string(const std::string& s);
ThresholdPolicy policy_from(const RunConfig& cfg);

// Pipeline stages; each reads only its declared inputs from cfg.out_dir and
// writes only its own outputs, so stages are restartable.
void stage_datagen(const RunConfig& cfg);
void stage_pretrain(const RunConfig& cfg);
void stage_probe(const RunConfig& cfg);
void stage_shield(const RunConfig& cfg);
void stage_train(const RunConfig& cfg, bool shielded);
void stage_eval(const RunConfig& cfg, bool shielded);
void stage_all(const RunConfig& cfg);

// Shared helpers.
std::vector<ClassPrompt> prompts_for(const RunConfig& cfg,
                                     const AttributePool& pool, bool filtered);
std::vector<SubsidiaryEntry> build_sas_entries(const RunConfig& cfg,
                                               const GroupedDataset& dataset,
                                               const AttributePool& pool,
                                               const std::map<int, double>& scr,
                                               const DualEncoderModel& model,
                                               const std::string& pseudo_dir);

}  // namespace spur
