#pragma once

#include <array>
#include <string>
#include <vector>

namespace spur {

// Planar RGB image, values in [0,1]. Fixed desk-scale resolution.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // channel-major: [c][y][x], c in {0,1,2}

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(3 * w * h, 0.0) {}

  double& at(int c, int y, int x) { return data[(c * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(c * height + y) * width + x];
  }
  size_t size() const { return data.size(); }
};

constexpr int kImageSize = 32;

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// h in degrees [0,360), s and v in [0,1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace spur
