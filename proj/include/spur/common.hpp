#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spur {

using Vec = std::vector<double>;

// Error categories mapped to CLI exit codes: input/config -> 1, source -> 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness flows from one root seed via named sub-streams so stages
// can be re-run independently without perturbing each other.
inline uint64_t sub_seed(uint64_t root, std::string_view stream) {
  return splitmix64(root ^ fnv1a64(stream));
}

inline std::mt19937_64 make_rng(uint64_t root, std::string_view stream) {
  return std::mt19937_64(sub_seed(root, stream));
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline Vec normalized(Vec a) {
  double n = norm(a);
  if (n > 0) {
    for (double& v : a) v /= n;
  }
  return a;
}

// Numerically stable softmax.
inline Vec softmax(const Vec& logits) {
  Vec out(logits.size());
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

inline std::string hex64(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace spur
