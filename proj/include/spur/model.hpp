#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "spur/common.hpp"
#include "spur/image.hpp"

namespace spur {

struct ModelConfig {
  int embed_dim = 64;  // shared embedding dimension
  int token_dim = 32;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int image_size = kImageSize;
  double tau = 0.07;
};

struct Vocab {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;

  int add(const std::string& w) {
    auto it = index.find(w);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(words.size());
    words.push_back(w);
    index.emplace(w, id);
    return id;
  }
  int lookup(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? -1 : it->second;
  }
  int size() const { return static_cast<int>(words.size()); }
};

// Lowercase, strip ",." and split on whitespace.
std::vector<std::string> tokenize(const std::string& text);

struct ClassPrompt {
  int category_id = -1;  // -1: no learned prefix (e.g. pseudo-category prompts)
  std::string text;
};

enum class AdaptMode { prompt_adapter, full };

// Caches for backpropagation. Populated by the forward passes below.
struct ImgCache {
  Vec a1, t1, p1, a2, t2, p2, flat, z, u, v, e;
  double n1 = 0, n2 = 0;
  const Image* input = nullptr;
};

struct TxtCache {
  std::vector<int> tokens;
  int prefix_cat = -1;
  Vec h, z, e;
  double n = 0, denom = 0;
};

class DualEncoderModel {
 public:
  ModelConfig cfg;
  Vocab vocab;
  std::vector<std::string> categories;
  Vec params;

  DualEncoderModel() = default;
  static DualEncoderModel create(const ModelConfig& cfg, Vocab vocab,
                                 std::vector<std::string> categories,
                                 uint64_t seed);

  // Parameter block offsets into `params`.
  size_t conv1_w() const { return off_[0]; }
  size_t conv1_b() const { return off_[1]; }
  size_t conv2_w() const { return off_[2]; }
  size_t conv2_b() const { return off_[3]; }
  size_t proj_w() const { return off_[4]; }
  size_t proj_b() const { return off_[5]; }
  size_t emb() const { return off_[6]; }
  size_t tproj_w() const { return off_[7]; }
  size_t tproj_b() const { return off_[8]; }
  size_t adapt_w() const { return off_[9]; }
  size_t adapt_b() const { return off_[10]; }
  size_t prefix() const { return off_[11]; }
  size_t param_count() const { return off_[12]; }
  int flat_dim() const;

  Vec encode_image(const Image& img) const;       // adapted, unit norm
  Vec encode_image_base(const Image& img) const;  // pre-adapter, unit norm
  Vec apply_adapter(const Vec& base) const;       // adapted, unit norm
  Vec encode_text(const ClassPrompt& prompt) const;
  Vec predict_distribution(const Image& img,
                           const std::vector<ClassPrompt>& prompts) const;
  Vec predict_from_scores(const Vec& similarities) const;

  // Forward passes with caches, and their backward counterparts. Backward
  // accumulates into `grad` (same layout as params); image backward can also
  // produce input-pixel gradients for saliency.
  Vec image_forward(const Image& img, ImgCache& cache) const;
  void image_backward(const ImgCache& cache, const Vec& de, Vec& grad,
                      Image* dinput = nullptr) const;
  Vec adapter_forward(const Vec& base, ImgCache& cache) const;
  void adapter_backward(const ImgCache& cache, const Vec& de, Vec& grad,
                        Vec* dbase = nullptr) const;
  Vec text_forward(const ClassPrompt& prompt, TxtCache& cache) const;
  void text_backward(const TxtCache& cache, const Vec& de, Vec& grad) const;

  std::vector<char> trainable_mask(AdaptMode mode) const;

  void save(const std::string& path) const;
  static DualEncoderModel load(const std::string& path);

 private:
  std::vector<size_t> off_;
  void compute_offsets();
  friend bool operator==(const DualEncoderModel&, const DualEncoderModel&);
};

}  // namespace spur
