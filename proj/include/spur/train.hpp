#pragma once

#include <vector>

#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/shield.hpp"

namespace spur {

struct TrainConfig {
  double lr = 0.1;
  int epochs = 20;
  int batch = 16;
  uint64_t seed = 0;
  AdaptMode mode = AdaptMode::prompt_adapter;
};

// Scalar losses (no gradients) used by evaluation and the test oracles.
double main_ce_loss(const DualEncoderModel& model,
                    const std::vector<const Image*>& images,
                    const std::vector<int>& labels,
                    const std::vector<ClassPrompt>& prompts);

// Cross-entropy over a batch; accumulates parameter gradients into grad.
double main_ce_loss_grad(const DualEncoderModel& model,
                         const std::vector<const Image*>& images,
                         const std::vector<int>& labels,
                         const std::vector<ClassPrompt>& prompts, Vec& grad);

// Symmetric InfoNCE over an image/caption batch.
double contrastive_loss_grad(const DualEncoderModel& model,
                             const std::vector<const Image*>& images,
                             const std::vector<const std::string*>& captions,
                             Vec& grad);

// Contrastive warm-up over the unbiased corpus; trains all parameters.
std::vector<double> pretrain_contrastive(DualEncoderModel& model,
                                         const CaptionedCorpus& corpus,
                                         const TrainConfig& cfg);

struct SasOptions {
  const std::vector<SubsidiaryEntry>* entries = nullptr;
  double lambda = 2.0;
};

// Main-task fine-tuning; updates only the parameters selected by cfg.mode.
// When sas is given, subsidiary batches interleave 1:1 with main batches.
// Returns the per-epoch mean main cross-entropy.
std::vector<double> fit_main(DualEncoderModel& model,
                             const GroupedDataset& dataset,
                             const std::vector<ClassPrompt>& prompts,
                             const TrainConfig& cfg,
                             const SasOptions* sas = nullptr);

}  // namespace spur
