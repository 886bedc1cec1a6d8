#include "spur/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace spur {

namespace {

using json = nlohmann::ordered_json;

// 5x7 bitmaps, bit 4 = leftmost column.
constexpr uint8_t kDigitRows[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

const std::vector<std::string> kDigitNames = {
    "zero", "one", "two",   "three", "four",
    "five", "six", "seven", "eight", "nine"};

const std::vector<std::array<std::string, 2>> kDigitCore = {
    {"single closed loop", "hollow round center"},
    {"one vertical stroke", "short base stroke"},
    {"top curved stroke", "flat bottom stroke"},
    {"two right bumps", "open left side"},
    {"crossing horizontal bar", "open top fork"},
    {"flat top stroke", "lower right bowl"},
    {"lower closed loop", "curved upper tail"},
    {"long diagonal stroke", "flat top bar"},
    {"two stacked loops", "narrow middle waist"},
    {"upper closed loop", "straight lower tail"},
};

const std::vector<std::string> kColors = {"red",  "orange", "yellow", "green",
                                          "teal", "cyan",   "blue",   "purple",
                                          "magenta", "pink"};
constexpr double kHues[10] = {0, 36, 72, 108, 144, 180, 216, 252, 288, 324};

const std::vector<std::string> kTextures = {
    "striped",    "patchy", "dotted",   "checker", "grid",
    "crosshatch", "wavy",   "speckled", "ringed",  "plain"};

const std::vector<std::string> kShapes = {
    "triangle", "square", "diamond", "pentagon", "circle",
    "ring", "star", "cross", "frame", "bowtie",
    "hexagon", "heptagon", "octagon", "plus", "bar",
    "pillar", "wedge", "tee", "ell", "arrow"};

const std::vector<std::array<std::string, 2>> kShapeCore = {
    {"three straight edges", "single top point"},
    {"four equal edges", "right angle corners"},
    {"four tilted edges", "pointed top and bottom"},
    {"five straight edges", "wide flat base"},
    {"smooth round outline", "evenly curved outline"},
    {"round hollow band", "circular hollow outline"},
    {"five sharp points", "spiky pointed arms"},
    {"two diagonal strokes", "central crossing point"},
    {"square hollow outline", "empty square center"},
    {"two facing triangles", "pinched narrow middle"},
    {"six straight edges", "flat top and bottom"},
    {"seven straight edges", "nearly round outline"},
    {"eight straight edges", "rounded corner outline"},
    {"upright crossing strokes", "four stubby arms"},
    {"wide horizontal block", "short flat profile"},
    {"tall vertical block", "narrow upright profile"},
    {"sideways pointed triangle", "single right point"},
    {"top horizontal cap", "central vertical stem"},
    {"bottom horizontal foot", "left vertical stem"},
    {"pointed head shape", "straight tail shaft"},
};

double texture_value(int tex, int x, int y, int phase) {
  auto stripe = [](int v) { return (v & 4) ? 1.0 : 0.0; };
  double v = 0.0;
  switch (tex) {
    case 0:  // striped
      v = stripe(y + phase);
      break;
    case 1:  // patchy: coarse random blocks
      v = (splitmix64((static_cast<uint64_t>((x + phase) / 8) << 32) ^
                      static_cast<uint64_t>((y + phase) / 8) ^ 0x9e21) &
           1) ? 1.0 : 0.0;
      break;
    case 2:  // dotted
      v = ((x + phase) % 6 < 2 && (y + phase) % 6 < 2) ? 1.0 : 0.0;
      break;
    case 3:  // checker
      v = (((x + phase) / 4 + (y + phase) / 4) & 1) ? 1.0 : 0.0;
      break;
    case 4:  // grid
      v = ((x + phase) % 6 < 1 || (y + phase) % 6 < 1) ? 1.0 : 0.0;
      break;
    case 5:  // crosshatch
      v = (stripe(x + y + phase) == 0.0 || stripe(x - y + phase) == 0.0) ? 0.0
                                                                         : 1.0;
      break;
    case 6:  // wavy
      v = 0.5 + 0.5 * std::sin(0.8 * x + 2.5 * std::sin(0.4 * y) + phase);
      break;
    case 7:  // speckled
      v = (splitmix64((static_cast<uint64_t>(x / 3) << 32) ^
                      static_cast<uint64_t>(y / 3) ^ (phase * 977)) &
           0xff) / 255.0;
      v = v > 0.55 ? 1.0 : 0.0;
      break;
    case 8: {  // ringed
      double dx = x - 15.5, dy = y - 15.5;
      v = ((static_cast<int>(std::sqrt(dx * dx + dy * dy) + phase) / 3) & 1)
              ? 1.0
              : 0.0;
      break;
    }
    case 9:  // plain: uniform mid-gray
      v = 0.5;
      break;
  }
  return v;
}

using MaskFn = std::function<bool(double, double)>;

bool in_ngon(int n, double rot, double x, double y) {
  double r = std::sqrt(x * x + y * y);
  if (r < 1e-9) return true;
  double theta = std::atan2(y, x) - rot;
  double sector = 2.0 * M_PI / n;
  double a = std::fmod(theta, sector);
  if (a < 0) a += sector;
  double rmax = std::cos(M_PI / n) / std::cos(a - M_PI / n);
  return r <= rmax * 0.95;
}

MaskFn shape_mask(int shape) {
  // visually distinct silhouettes come first so small class counts avoid
  // near-duplicate polygons (hexagon/heptagon/octagon)
  static constexpr int kMaskOrder[20] = {0, 1, 2,  3,  7,  8,  9,  10, 14, 18,
                                         4, 5, 6,  11, 12, 13, 15, 16, 17, 19};
  switch (kMaskOrder[shape]) {
    case 0: return [](double x, double y) { return in_ngon(3, M_PI / 2, x, y); };
    case 1: return [](double x, double y) { return std::max(std::fabs(x), std::fabs(y)) <= 0.8; };
    case 2: return [](double x, double y) { return std::fabs(x) + std::fabs(y) <= 1.0; };
    case 3: return [](double x, double y) { return in_ngon(5, M_PI / 2, x, y); };
    case 4: return [](double x, double y) { return in_ngon(6, 0.0, x, y); };
    case 5: return [](double x, double y) { return in_ngon(7, M_PI / 2, x, y); };
    case 6: return [](double x, double y) { return in_ngon(8, M_PI / 8, x, y); };
    case 7: return [](double x, double y) { return x * x + y * y <= 0.81; };
    case 8: return [](double x, double y) {
      double r2 = x * x + y * y;
      return r2 <= 0.81 && r2 >= 0.25;
    };
    case 9: return [](double x, double y) {  // star
      double r = std::sqrt(x * x + y * y);
      if (r < 1e-9) return true;
      double theta = std::atan2(y, x) - M_PI / 2;
      double sector = 2.0 * M_PI / 5;
      double a = std::fmod(theta, sector);
      if (a < 0) a += sector;
      double f = std::fabs(a - sector / 2) / (sector / 2);
      return r <= 0.4 + 0.6 * f;
    };
    case 10: return [](double x, double y) {
      return std::fabs(x) <= 0.9 && std::fabs(y) <= 0.9 &&
             (std::fabs(x - y) < 0.4 || std::fabs(x + y) < 0.4);
    };
    case 11: return [](double x, double y) {
      return std::fabs(x) <= 0.9 && std::fabs(y) <= 0.9 &&
             (std::fabs(x) < 0.3 || std::fabs(y) < 0.3);
    };
    case 12: return [](double x, double y) { return std::fabs(y) < 0.35 && std::fabs(x) < 0.95; };
    case 13: return [](double x, double y) { return std::fabs(x) < 0.35 && std::fabs(y) < 0.95; };
    case 14: return [](double x, double y) {
      double m = std::max(std::fabs(x), std::fabs(y));
      return m <= 0.95 && m >= 0.55;
    };
    case 15: return [](double x, double y) {
      return x >= -0.8 && std::fabs(y) <= (0.9 - x) * 0.55;
    };
    case 16: return [](double x, double y) {
      return (y >= 0.4 && y <= 0.9 && std::fabs(x) <= 0.9) ||
             (std::fabs(x) <= 0.25 && y >= -0.9 && y < 0.4);
    };
    case 17: return [](double x, double y) {
      return (std::fabs(x + 0.5) <= 0.25 && std::fabs(y) <= 0.9) ||
             (y <= -0.4 && y >= -0.9 && x >= -0.75 && x <= 0.9);
    };
    case 18: return [](double x, double y) {
      return std::fabs(x) <= 0.9 && std::fabs(y) <= std::fabs(x) * 0.75;
    };
    case 19: return [](double x, double y) {
      return (x >= 0.1 && x <= 0.95 && std::fabs(y) <= (0.95 - x)) ||
             (x <= 0.1 && x >= -0.95 && std::fabs(y) <= 0.25);
    };
  }
  return [](double, double) { return false; };
}

void add_noise(Image& img, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> u(-amp, amp);
  for (double& v : img.data) v = std::clamp(v + u(rng), 0.0, 1.0);
}

void fill_color(Image& img, const std::array<double, 3>& rgb) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
}

void apply_style(Image& img, int style) {
  int s = img.width;
  switch (style % 4) {
    case 0:
      break;
    case 1:
      for (int y = 0; y < s; ++y) {
        double f = 0.75 + 0.5 * y / (s - 1);
        for (int x = 0; x < s; ++x)
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = std::clamp(img.at(c, y, x) * f, 0.0, 1.0);
      }
      break;
    case 2:
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double f = 0.75 + 0.5 * x / (s - 1);
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = std::clamp(img.at(c, y, x) * f, 0.0, 1.0);
        }
      break;
    case 3:
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double dx = (x - s / 2.0) / s, dy = (y - s / 2.0) / s;
          double f = 1.1 - 0.8 * (dx * dx + dy * dy);
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = std::clamp(img.at(c, y, x) * f, 0.0, 1.0);
        }
      break;
  }
}

// Anti-aliased 5x7 glyph blit via 2x2 supersampling.
void draw_digit(Image& img, int digit, int cx, int cy, double glyph_w,
                double glyph_h) {
  double x0 = cx - glyph_w / 2, y0 = cy - glyph_h / 2;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double alpha = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          double u = (x + 0.25 + 0.5 * sx - x0) / glyph_w * 5.0;
          double v = (y + 0.25 + 0.5 * sy - y0) / glyph_h * 7.0;
          int cu = static_cast<int>(std::floor(u));
          int cv = static_cast<int>(std::floor(v));
          if (cu < 0 || cu >= 5 || cv < 0 || cv >= 7) continue;
          if (kDigitRows[digit][cv] & (1 << (4 - cu))) alpha += 0.25;
        }
      alpha *= 0.65;  // faint ink: strokes stay visible but never dominate
      if (alpha > 0) {
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = img.at(c, y, x) * (1 - alpha) + 0.95 * alpha;
      }
    }
  }
}

void draw_shape(Image& img, int shape, double cx, double cy, double radius) {
  MaskFn mask = shape_mask(shape);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double alpha = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          double ux = (x + 0.25 + 0.5 * sx - cx) / radius;
          double uy = (cy - (y + 0.25 + 0.5 * sy)) / radius;  // y up
          if (mask(ux, uy)) alpha += 0.25;
        }
      if (alpha > 0) {
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = img.at(c, y, x) * (1 - alpha) + 0.08 * alpha;
      }
    }
  }
}

void fill_texture(Image& img, int tex, int phase) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // compress texture contrast so the shape stays visible on top
      double v = 0.35 + 0.6 * texture_value(tex, x, y, phase);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
}

// borders share the background palette
std::array<double, 3> border_rgb(int idx) {
  return color_rgb(idx);
}

void draw_border(Image& img, const std::array<double, 3>& rgb, int thickness) {
  int s = img.width;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (x < thickness || y < thickness || x >= s - thickness ||
          y >= s - thickness) {
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
      }
    }
}

Image render_cmnist_image(int digit, int color, std::mt19937_64& rng) {
  Image img(kImageSize, kImageSize);
  fill_color(img, color_rgb(color));
  std::uniform_int_distribution<int> jitter(-2, 2);
  int cx = 16 + jitter(rng), cy = 16 + jitter(rng);
  std::uniform_real_distribution<double> scale(0.85, 1.15);
  draw_digit(img, digit, cx, cy, 18.0 * scale(rng), 26.0 * scale(rng));
  add_noise(img, rng, 0.04);
  return img;
}

Image render_shape_image(int shape, int tex, int border, std::mt19937_64& rng) {
  Image img(kImageSize, kImageSize);
  std::uniform_int_distribution<int> ph(0, 7);
  fill_texture(img, tex, ph(rng));
  draw_border(img, border_rgb(border), 3);
  std::uniform_real_distribution<double> jitter(-1.5, 1.5);
  std::uniform_real_distribution<double> rad(9.0, 11.0);
  draw_shape(img, shape, 16 + jitter(rng), 16 + jitter(rng), rad(rng));
  add_noise(img, rng, 0.02);
  return img;
}

int other_index(int match, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, count - 2);
  int v = u(rng);
  return v >= match ? v + 1 : v;
}

}  // namespace

const std::vector<std::string>& color_names() { return kColors; }

std::array<double, 3> color_rgb(int idx) {
  return hsv_to_rgb(kHues[idx % 10], 0.85, 0.8);
}

const std::vector<std::string>& texture_names() { return kTextures; }
const std::vector<std::string>& shape_names() { return kShapes; }

std::vector<int> GroupedDataset::train_of_class(int label) const {
  std::vector<int> out;
  for (int i : train_idx)
    if (samples[i].label == label) out.push_back(i);
  return out;
}

GroupedDataset generate_colored_mnist(int classes, int shots,
                                      int test_per_class, double rho,
                                      uint64_t seed) {
  if (classes < 1 || classes > 10)
    throw ConfigError("colored mnist supports 1..10 classes");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0,1]");
  GroupedDataset ds;
  ds.generator = "colored_mnist";
  ds.rho = rho;
  ds.seed = seed;
  for (int c = 0; c < classes; ++c) {
    CategoryTruth t;
    t.name = kDigitNames[c];
    t.core = {kDigitCore[c][0], kDigitCore[c][1]};
    t.spurious = {kColors[c] + " background"};
    ds.categories.push_back(std::move(t));
  }

  auto rng = make_rng(seed, "cmnist-train");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < shots; ++s) {
      int color =
          coin(rng) < rho
              ? c
              : std::uniform_int_distribution<int>(0, classes - 1)(rng);
      DataSample smp;
      smp.image = render_cmnist_image(c, color, rng);
      smp.label = c;
      smp.planted_bits = color == c ? 1 : 0;
      smp.group = c * 2 + smp.planted_bits;
      ds.train_idx.push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(std::move(smp));
    }
  }
  auto trng = make_rng(seed, "cmnist-test");
  std::uniform_int_distribution<int> anycolor(0, classes - 1);
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < test_per_class; ++s) {
      int color = anycolor(trng);
      DataSample smp;
      smp.image = render_cmnist_image(c, color, trng);
      smp.label = c;
      smp.planted_bits = color == c ? 1 : 0;
      smp.group = c * 2 + smp.planted_bits;
      ds.test_idx.push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(std::move(smp));
    }
  }
  return ds;
}

GroupedDataset generate_shapes_on_textures(int classes, int shots,
                                           int test_per_class, double rho,
                                           uint64_t seed) {
  if (classes < 1 || classes > 20)
    throw ConfigError("shapes generator supports 1..20 classes");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0,1]");
  GroupedDataset ds;
  ds.generator = "shapes_on_textures";
  ds.rho = rho;
  ds.seed = seed;
  auto tex_of = [](int c) { return c % 10; };
  auto border_of = [](int c) { return (3 * c + 1) % 10; };
  for (int c = 0; c < classes; ++c) {
    CategoryTruth t;
    t.name = kShapes[c];
    t.core = {kShapeCore[c][0], kShapeCore[c][1]};
    t.spurious = {kTextures[tex_of(c)] + " texture",
                  kColors[border_of(c)] + " border"};
    ds.categories.push_back(std::move(t));
  }

  auto rng = make_rng(seed, "shapes-train");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < shots; ++s) {
      std::uniform_int_distribution<int> u10(0, 9);
      int tex = coin(rng) < rho ? tex_of(c) : u10(rng);
      int border =
          coin(rng) < rho ? border_of(c) : u10(rng);
      DataSample smp;
      smp.image = render_shape_image(c, tex, border, rng);
      smp.label = c;
      smp.planted_bits =
          (tex == tex_of(c) ? 1 : 0) | (border == border_of(c) ? 2 : 0);
      smp.group = c * 4 + smp.planted_bits;
      ds.train_idx.push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(std::move(smp));
    }
  }
  auto trng = make_rng(seed, "shapes-test");
  std::uniform_int_distribution<int> any10(0, 9);
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < test_per_class; ++s) {
      int tex = any10(trng), border = any10(trng);
      DataSample smp;
      smp.image = render_shape_image(c, tex, border, trng);
      smp.label = c;
      smp.planted_bits =
          (tex == tex_of(c) ? 1 : 0) | (border == border_of(c) ? 2 : 0);
      smp.group = c * 4 + smp.planted_bits;
      ds.test_idx.push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(std::move(smp));
    }
  }
  return ds;
}

GroupedDataset generate_dataset(const std::string& generator, int classes,
                                int shots, int test_per_class, double rho,
                                uint64_t seed) {
  if (generator == "colored_mnist")
    return generate_colored_mnist(classes, shots, test_per_class, rho, seed);
  if (generator == "shapes_on_textures")
    return generate_shapes_on_textures(classes, shots, test_per_class, rho,
                                       seed);
  throw ConfigError("unknown generator: " + generator);
}

void base_new_split(GroupedDataset& dataset, uint64_t seed) {
  int n = static_cast<int>(dataset.categories.size());
  if (n < 2) throw InputError("base/new split needs at least 2 categories");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "base-new-split");
  std::shuffle(order.begin(), order.end(), rng);
  int nbase = (n + 1) / 2;
  dataset.base_categories.assign(order.begin(), order.begin() + nbase);
  dataset.new_categories.assign(order.begin() + nbase, order.end());
  std::sort(dataset.base_categories.begin(), dataset.base_categories.end());
  std::sort(dataset.new_categories.begin(), dataset.new_categories.end());
}

CaptionedCorpus generate_pretrain_corpus(const std::string& generator,
                                         int classes, int per_class,
                                         uint64_t seed) {
  CaptionedCorpus corpus;
  auto rng = make_rng(seed, "pretrain-corpus");
  if (generator == "colored_mnist") {
    for (int c = 0; c < classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        int color = (i + c) % 10;  // balanced color/class co-occurrence
        corpus.images.push_back(render_cmnist_image(c, color, rng));
        if (i % 3 == 0) {
          corpus.captions.push_back(
              "a photo of a " + kDigitNames[c] + ", which has " +
              kDigitCore[c][0] + ", " + kDigitCore[c][1] + ", " +
              kColors[color] + " background");
        } else {
          corpus.captions.push_back("a photo of a " + kDigitNames[c] + " on a " +
                                    kColors[color] + " background");
        }
      }
    }
    for (int col = 0; col < 10; ++col) {
      for (int style = 0; style < 4; ++style) {
        Image img;
        render_attribute(kColors[col] + " background", style, rng(), img);
        corpus.images.push_back(std::move(img));
        corpus.captions.push_back("a photo of a " + kColors[col] +
                                  " background");
      }
    }
  } else if (generator == "shapes_on_textures") {
    for (int c = 0; c < classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        // balanced texture/border co-occurrence with every class
        int tex = (i + c) % 10, border = (3 * i + i / 10 + c) % 10;
        corpus.images.push_back(render_shape_image(c, tex, border, rng));
        if (i % 3 == 0) {
          corpus.captions.push_back(
              "a photo of a " + kShapes[c] + ", which has " + kShapeCore[c][0] +
              ", " + kShapeCore[c][1] + ", " + kTextures[tex] + " texture, " +
              kColors[border] + " border");
        } else {
          corpus.captions.push_back("a photo of a " + kShapes[c] + " on a " +
                                    kTextures[tex] + " texture, " +
                                    kColors[border] + " border");
        }
      }
    }
    for (int t = 0; t < 10; ++t) {
      for (int style = 0; style < 4; ++style) {
        Image img;
        render_attribute(kTextures[t] + " texture", style, rng(), img);
        corpus.images.push_back(std::move(img));
        corpus.captions.push_back("a photo of a " + kTextures[t] + " texture");
      }
      // in-situ examples: the texture as it appears behind a shape
      std::uniform_int_distribution<int> anyshape(0, classes - 1), any10(0, 9);
      for (int k = 0; k < 20; ++k) {
        corpus.images.push_back(
            render_shape_image(anyshape(rng), t, any10(rng), rng));
        corpus.captions.push_back("a photo of a " + kTextures[t] + " texture");
      }
    }
    for (int col = 0; col < 10; ++col) {
      for (int style = 0; style < 4; ++style) {
        Image img;
        render_attribute(kColors[col] + " border", style, rng(), img);
        corpus.images.push_back(std::move(img));
        corpus.captions.push_back("a photo of a " + kColors[col] + " border");
      }
    }
  } else {
    throw ConfigError("unknown generator: " + generator);
  }
  return corpus;
}

Vocab build_vocab(const std::string& generator, int classes) {
  Vocab v;
  auto add_text = [&](const std::string& t) {
    for (const auto& w : tokenize(t)) v.add(w);
  };
  add_text("a photo of a which has on");
  for (const auto& c : kColors) add_text(c);
  add_text("background texture border");
  if (generator == "colored_mnist") {
    for (int c = 0; c < 10; ++c) {
      add_text(kDigitNames[c]);
      add_text(kDigitCore[c][0]);
      add_text(kDigitCore[c][1]);
    }
  } else if (generator == "shapes_on_textures") {
    for (const auto& t : kTextures) add_text(t);
    for (int c = 0; c < 20; ++c) {
      add_text(kShapes[c]);
      add_text(kShapeCore[c][0]);
      add_text(kShapeCore[c][1]);
    }
  } else {
    throw ConfigError("unknown generator: " + generator);
  }
  (void)classes;
  return v;
}

AttributePool truth_pool(const GroupedDataset& dataset) {
  AttributePool pool;
  for (const auto& cat : dataset.categories) {
    pool.categories.push_back(cat.name);
    std::vector<Attribute> attrs;
    for (const auto& t : cat.core)
      attrs.push_back({t, AttrKind::core, std::nullopt, "oracle"});
    for (const auto& t : cat.spurious)
      attrs.push_back({t, AttrKind::non_core, std::nullopt, "oracle"});
    pool.attrs.push_back(std::move(attrs));
  }
  return pool;
}

void export_dataset(const GroupedDataset& dataset, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw InputError("cannot write labels.csv under " + dir);
  csv << "id,label,group,split,planted_bits\n";
  std::vector<std::string> split(dataset.samples.size(), "none");
  for (int i : dataset.train_idx) split[i] = "train";
  for (int i : dataset.test_idx) split[i] = "test";
  char name[32];
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    write_png((fs::path(dir) / "images" / name).string(),
              dataset.samples[i].image);
    csv << i << "," << dataset.samples[i].label << ","
        << dataset.samples[i].group << "," << split[i] << ","
        << dataset.samples[i].planted_bits << "\n";
  }

  json cats = json::array();
  for (const auto& c : dataset.categories)
    cats.push_back({{"name", c.name}, {"core", c.core}, {"spurious", c.spurious}});
  json doc = {{"generator", dataset.generator},
              {"rho", dataset.rho},
              {"seed", dataset.seed},
              {"categories", std::move(cats)},
              {"base_categories", dataset.base_categories},
              {"new_categories", dataset.new_categories}};
  std::ofstream gt(fs::path(dir) / "ground_truth.json");
  gt << doc.dump(2) << "\n";
}

GroupedDataset load_dataset(const std::string& dir) {
  std::ifstream gt(fs::path(dir) / "ground_truth.json");
  if (!gt) throw InputError("missing ground_truth.json under " + dir);
  json doc = json::parse(gt);
  GroupedDataset ds;
  ds.generator = doc.at("generator").get<std::string>();
  ds.rho = doc.at("rho").get<double>();
  ds.seed = doc.at("seed").get<uint64_t>();
  for (const auto& c : doc.at("categories")) {
    CategoryTruth t;
    t.name = c.at("name").get<std::string>();
    t.core = c.at("core").get<std::vector<std::string>>();
    t.spurious = c.at("spurious").get<std::vector<std::string>>();
    ds.categories.push_back(std::move(t));
  }
  ds.base_categories = doc.at("base_categories").get<std::vector<int>>();
  ds.new_categories = doc.at("new_categories").get<std::vector<int>>();

  std::ifstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw InputError("missing labels.csv under " + dir);
  std::string line;
  std::getline(csv, line);  // header
  char name[32];
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    DataSample smp;
    size_t id = std::stoul(fields[0]);
    smp.label = std::stoi(fields[1]);
    smp.group = std::stoi(fields[2]);
    smp.planted_bits = std::stoi(fields[4]);
    std::snprintf(name, sizeof(name), "%05zu.png", id);
    smp.image = read_png((fs::path(dir) / "images" / name).string());
    int idx = static_cast<int>(ds.samples.size());
    if (fields[3] == "train") ds.train_idx.push_back(idx);
    if (fields[3] == "test") ds.test_idx.push_back(idx);
    ds.samples.push_back(std::move(smp));
  }
  return ds;
}

bool render_attribute(const std::string& attr_text, int style, uint64_t seed,
                      Image& out) {
  auto toks = tokenize(attr_text);
  if (toks.size() != 2) return false;
  auto rng = std::mt19937_64(splitmix64(seed ^ (style * 7919)));
  auto color_idx = [&](const std::string& w) {
    auto it = std::find(kColors.begin(), kColors.end(), w);
    return it == kColors.end() ? -1 : static_cast<int>(it - kColors.begin());
  };
  if (toks[1] == "background") {
    int col = color_idx(toks[0]);
    if (col < 0) return false;
    out = Image(kImageSize, kImageSize);
    fill_color(out, color_rgb(col));
    apply_style(out, style);
    add_noise(out, rng, 0.03);
    return true;
  }
  if (toks[1] == "texture") {
    auto it = std::find(kTextures.begin(), kTextures.end(), toks[0]);
    if (it == kTextures.end()) return false;
    out = Image(kImageSize, kImageSize);
    fill_texture(out, static_cast<int>(it - kTextures.begin()), style * 2 + 1);
    apply_style(out, style);
    add_noise(out, rng, 0.03);
    return true;
  }
  if (toks[1] == "border") {
    int col = color_idx(toks[0]);
    if (col < 0) return false;
    out = Image(kImageSize, kImageSize);
    fill_color(out, {0.5, 0.5, 0.5});
    apply_style(out, style);
    draw_border(out, border_rgb(col), 3 + style % 2);
    add_noise(out, rng, 0.03);
    return true;
  }
  return false;
}

}  // namespace spur
