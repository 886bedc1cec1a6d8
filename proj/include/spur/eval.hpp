#pragma once

#include <map>
#include <string>
#include <vector>

#include "spur/datagen.hpp"
#include "spur/model.hpp"
#include "spur/pool.hpp"

namespace spur {

struct GroupMetrics {
  double worst = 0.0;
  double avg = 0.0;
  double gap = 0.0;
};

struct EvalReport {
  std::string split;
  double accuracy = 0.0;
  std::map<std::string, double> per_category;
  double counter_accuracy = 0.0;
  size_t counter_size = 0;
  GroupMetrics groups;
  uint64_t seed = 0;
  std::string config_hash;
};

std::vector<int> predict_labels(const DualEncoderModel& model,
                                const GroupedDataset& dataset,
                                const std::vector<int>& indices,
                                const std::vector<ClassPrompt>& prompts);

struct AccuracyBreakdown {
  double accuracy = 0.0;
  std::map<int, double> per_category;
  std::map<int, int> per_category_count;
};

AccuracyBreakdown evaluate_accuracy(const DualEncoderModel& model,
                                    const GroupedDataset& dataset,
                                    const std::vector<int>& indices,
                                    const std::vector<ClassPrompt>& prompts);

// Drops indices whose image is too similar to any of its category's flagged
// spurious attributes.
std::vector<int> extract_counter_group(const GroupedDataset& dataset,
                                       const std::vector<int>& test_indices,
                                       const AttributePool& flagged_pool,
                                       const DualEncoderModel& model,
                                       double sim_threshold);

GroupMetrics group_metrics(const std::vector<int>& predictions,
                           const std::vector<int>& labels,
                           const std::vector<int>& group_ids);

struct ZeroShotResult {
  double full = 0.0;
  double minus_spurious = 0.0;
};

ZeroShotResult zero_shot_eval(const DualEncoderModel& model,
                              const GroupedDataset& dataset,
                              const std::vector<int>& indices,
                              const AttributePool& pool);

// Absolute input-gradient of image-prompt similarity, channel-summed and
// normalized to sum 1 (uniform when the gradient vanishes). Row-major h*w.
Vec saliency_map(const DualEncoderModel& model, const Image& image,
                 const ClassPrompt& prompt);

EvalReport make_report(const DualEncoderModel& model,
                       const GroupedDataset& dataset,
                       const std::vector<ClassPrompt>& prompts,
                       const AttributePool& flagged_pool, double sim_threshold,
                       uint64_t seed, const std::string& config_hash);

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);
std::string format_report_table(const std::vector<std::string>& names,
                                const std::vector<EvalReport>& reports);

}  // namespace spur
