#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/pool.hpp"

namespace spur {

enum class PseudoProvider { procedural_synthesis, local_retrieval };

struct PseudoCategory {
  int id = 0;  // synthetic id, disjoint from real category ids
  Attribute attribute;
  std::vector<Image> images;
  ClassPrompt prompt;  // "a photo of a {attribute}"
  std::vector<double> candidate_scores;
  std::string provider;
};

// Per real category: its shots plus every pseudo shot. labels[i] is 0 for the
// real category and 1..m for pseudo categories (index into pseudo list + 1);
// prompts[0] is the real prompt followed by the pseudo prompts in order.
struct SubsidiaryEntry {
  int category = 0;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<ClassPrompt> prompts;
};

struct RetrievalCorpus {
  std::vector<Image> images;
  std::vector<std::string> captions;
};

RetrievalCorpus load_retrieval_corpus(const std::string& dir);
void save_retrieval_corpus(const RetrievalCorpus& corpus,
                           const std::string& dir);

struct CandidateImage {
  Image image;
  std::string provenance;
};

std::vector<CandidateImage> build_pseudo_candidates(
    const Attribute& attribute, PseudoProvider provider, int prompt_count,
    int candidates_per_prompt, uint64_t seed,
    const RetrievalCorpus* corpus = nullptr,
    const DualEncoderModel* model = nullptr);

// Ranks candidates by image-to-attribute-text cosine; ties break on index.
std::vector<Image> select_topk_pure(const std::vector<CandidateImage>& candidates,
                                    const Vec& attribute_embedding, int k,
                                    const DualEncoderModel& model);

struct ShieldConfig {
  PseudoProvider provider = PseudoProvider::procedural_synthesis;
  int prompt_count = 5;
  int candidates_per_prompt = 8;
  int shots_per_pseudo = 16;
  uint64_t seed = 0;
};

struct SubsidiaryBuild {
  SubsidiaryEntry entry;
  std::vector<PseudoCategory> pseudo;
};

SubsidiaryBuild build_subsidiary_dataset(
    int category, const std::string& category_name,
    const std::vector<Attribute>& spurious,
    const std::vector<const Image*>& real_shots, const ClassPrompt& real_prompt,
    const ShieldConfig& cfg, const DualEncoderModel& model,
    const RetrievalCorpus* corpus = nullptr);

// Eq.-style subsidiary cross-entropy for one category's entry; 0 when the
// category has no pseudo categories.
double subsidiary_loss(const DualEncoderModel& model,
                       const SubsidiaryEntry& entry);
double subsidiary_loss_grad(const DualEncoderModel& model,
                            const SubsidiaryEntry& entry, Vec& grad);
// Variant starting from precomputed base image embeddings (frozen encoders).
double subsidiary_loss_grad_cached(const DualEncoderModel& model,
                                   const SubsidiaryEntry& entry,
                                   const std::vector<Vec>& bases, Vec& grad);

double combine_losses(double l_ce, double l_pse, double lambda);

// Top ceil(fraction*|C|) categories by SCR; ties break on ascending id.
std::set<int> select_categories_by_scr(const std::map<int, double>& scr_map,
                                       double fraction);

void save_pseudo_category(const PseudoCategory& pc, const std::string& dir);

}  // namespace spur
