#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spur/model.hpp"

namespace spur {

enum class AttrKind { core, non_core, spurious };

std::string to_string(AttrKind k);
AttrKind attr_kind_from_string(const std::string& s);

struct Attribute {
  std::string text;
  AttrKind kind = AttrKind::non_core;
  std::optional<double> weight;  // normalized, filled by the probe
  std::string source = "manual";
};

// Per-category attribute lists, aligned with dataset category ids.
struct AttributePool {
  std::vector<std::string> categories;
  std::vector<std::vector<Attribute>> attrs;

  size_t total_attributes() const {
    size_t n = 0;
    for (const auto& a : attrs) n += a.size();
    return n;
  }
};

ClassPrompt build_prompt(int category_id, const std::string& name,
                         const std::vector<Attribute>& attributes);

// Prompts for every category; spurious attributes are dropped when
// exclude_spurious is set.
std::vector<ClassPrompt> build_prompts(const AttributePool& pool,
                                       bool exclude_spurious);

using SimilarityFn =
    std::function<double(const std::string&, const std::string&)>;

// Text-encoder cosine similarity, the default dedup metric.
SimilarityFn encoder_similarity(const DualEncoderModel& model);

// Greedy scan in input order: drop an attribute if its similarity to any
// retained one reaches the threshold. Exact duplicate text always drops.
std::vector<Attribute> dedup_attributes(const std::vector<Attribute>& attrs,
                                        const SimilarityFn& similarity,
                                        double threshold);

void save_pool(const AttributePool& pool, const std::string& path);
AttributePool load_pool(const std::string& path);

}  // namespace spur
