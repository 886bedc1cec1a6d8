#pragma once

#include <string>
#include <vector>

#include "spur/image.hpp"
#include "spur/pool.hpp"

namespace spur {

struct CategoryTruth {
  std::string name;
  std::vector<std::string> core;      // descriptors always present
  std::vector<std::string> spurious;  // planted attributes, correlated at rho
};

struct DataSample {
  Image image;
  int label = 0;
  int group = 0;
  // Bit j set iff the label's j-th planted attribute is present in the image.
  int planted_bits = 0;
};

struct GroupedDataset {
  std::string generator;
  double rho = 0.0;
  uint64_t seed = 0;
  std::vector<CategoryTruth> categories;
  std::vector<DataSample> samples;
  std::vector<int> train_idx, test_idx;
  std::vector<int> base_categories, new_categories;  // empty until split

  std::vector<int> train_of_class(int label) const;
};

// Palette of 10 named hues used for backgrounds and borders.
const std::vector<std::string>& color_names();
std::array<double, 3> color_rgb(int idx);

const std::vector<std::string>& texture_names();
const std::vector<std::string>& shape_names();  // 20 glyphs

// Digits on colored backgrounds; train color matches the class with
// probability rho, test colors are uniform regardless of label.
GroupedDataset generate_colored_mnist(int classes, int shots,
                                      int test_per_class, double rho,
                                      uint64_t seed);

// Gray shapes on textured backgrounds with a colored border; two planted
// attributes per class (texture, border color), each applied at rho.
GroupedDataset generate_shapes_on_textures(int classes, int shots,
                                           int test_per_class, double rho,
                                           uint64_t seed);

GroupedDataset generate_dataset(const std::string& generator, int classes,
                                int shots, int test_per_class, double rho,
                                uint64_t seed);

void base_new_split(GroupedDataset& dataset, uint64_t seed);

// Unbiased image/caption corpus for the contrastive warm-up, plus the closed
// vocabulary covering every prompt the run can build.
struct CaptionedCorpus {
  std::vector<Image> images;
  std::vector<std::string> captions;
};

CaptionedCorpus generate_pretrain_corpus(const std::string& generator,
                                         int classes, int per_class,
                                         uint64_t seed);
Vocab build_vocab(const std::string& generator, int classes);

// Ground-truth pool (kinds assigned, no weights) for oracle comparisons.
AttributePool truth_pool(const GroupedDataset& dataset);

void export_dataset(const GroupedDataset& dataset, const std::string& dir);
GroupedDataset load_dataset(const std::string& dir);

// Renders a lone attribute (background color, texture, border) with a style
// variation index; used by pseudo-category synthesis. Returns false if the
// attribute text has no renderer.
bool render_attribute(const std::string& attr_text, int style, uint64_t seed,
                      Image& out);

}  // namespace spur
