#include "spur/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace spur {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'U', 'R', 'M', 'D', 'L', '1'};

void conv3x3_forward(const double* in, int cin, int cout, int s,
                     const double* w, const double* b, double* out) {
  for (int oc = 0; oc < cout; ++oc) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double acc = b[oc];
        for (int ic = 0; ic < cin; ++ic) {
          const double* inp = in + (ic * s) * s;
          const double* wp = w + ((oc * cin + ic) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = y + ky - 1;
            if (iy < 0 || iy >= s) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = x + kx - 1;
              if (ix < 0 || ix >= s) continue;
              acc += wp[ky * 3 + kx] * inp[iy * s + ix];
            }
          }
        }
        out[(oc * s + y) * s + x] = acc;
      }
    }
  }
}

void conv3x3_backward(const double* in, int cin, int cout, int s,
                      const double* w, const double* dout, double* dw,
                      double* db, double* din) {
  for (int oc = 0; oc < cout; ++oc) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double g = dout[(oc * s + y) * s + x];
        if (g == 0.0) continue;
        db[oc] += g;
        for (int ic = 0; ic < cin; ++ic) {
          const double* inp = in + (ic * s) * s;
          const double* wp = w + ((oc * cin + ic) * 3) * 3;
          double* dwp = dw + ((oc * cin + ic) * 3) * 3;
          double* dinp = din ? din + (ic * s) * s : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = y + ky - 1;
            if (iy < 0 || iy >= s) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = x + kx - 1;
              if (ix < 0 || ix >= s) continue;
              dwp[ky * 3 + kx] += g * inp[iy * s + ix];
              if (dinp) dinp[iy * s + ix] += g * wp[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

void avgpool2_forward(const double* in, int c, int s, double* out) {
  int so = s / 2;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < so; ++y) {
      for (int x = 0; x < so; ++x) {
        double acc = in[(ch * s + 2 * y) * s + 2 * x] +
                     in[(ch * s + 2 * y) * s + 2 * x + 1] +
                     in[(ch * s + 2 * y + 1) * s + 2 * x] +
                     in[(ch * s + 2 * y + 1) * s + 2 * x + 1];
        out[(ch * so + y) * so + x] = acc * 0.25;
      }
    }
  }
}

void avgpool2_backward(const double* dout, int c, int s, double* din) {
  int so = s / 2;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < so; ++y) {
      for (int x = 0; x < so; ++x) {
        double g = dout[(ch * so + y) * so + x] * 0.25;
        din[(ch * s + 2 * y) * s + 2 * x] += g;
        din[(ch * s + 2 * y) * s + 2 * x + 1] += g;
        din[(ch * s + 2 * y + 1) * s + 2 * x] += g;
        din[(ch * s + 2 * y + 1) * s + 2 * x + 1] += g;
      }
    }
  }
}

// d(v/|v|) applied to upstream gradient.
Vec normalize_backward(const Vec& e, double n, const Vec& de) {
  double proj = dot(de, e);
  double inv = n > 0 ? 1.0 / n : 0.0;  // zero vector: zero subgradient
  Vec dv(e.size());
  for (size_t i = 0; i < e.size(); ++i) dv[i] = (de[i] - e[i] * proj) * inv;
  return dv;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',' || ch == '.') continue;
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void DualEncoderModel::compute_offsets() {
  int s = cfg.image_size;
  int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels;
  int d = cfg.embed_dim, td = cfg.token_dim;
  int flat = c2 * (s / 4) * (s / 4);
  std::vector<size_t> sizes = {
      static_cast<size_t>(c1) * 3 * 9,         // conv1_w
      static_cast<size_t>(c1),                 // conv1_b
      static_cast<size_t>(c2) * c1 * 9,        // conv2_w
      static_cast<size_t>(c2),                 // conv2_b
      static_cast<size_t>(d) * flat,           // proj_w
      static_cast<size_t>(d),                  // proj_b
      static_cast<size_t>(vocab.size()) * td,  // emb
      static_cast<size_t>(d) * td,             // tproj_w
      static_cast<size_t>(d),                  // tproj_b
      static_cast<size_t>(d) * d,              // adapt_w
      static_cast<size_t>(d),                  // adapt_b
      categories.size() * td,                  // prefix
  };
  off_.assign(1, 0);
  for (size_t sz : sizes) off_.push_back(off_.back() + sz);
}

int DualEncoderModel::flat_dim() const {
  int s = cfg.image_size;
  return cfg.conv2_channels * (s / 4) * (s / 4);
}

DualEncoderModel DualEncoderModel::create(const ModelConfig& cfg, Vocab vocab,
                                          std::vector<std::string> categories,
                                          uint64_t seed) {
  if (cfg.tau <= 0) throw ConfigError("temperature must be positive");
  DualEncoderModel m;
  m.cfg = cfg;
  m.vocab = std::move(vocab);
  m.categories = std::move(categories);
  m.compute_offsets();
  m.params.assign(m.param_count(), 0.0);

  auto rng = make_rng(seed, "model-init");
  std::normal_distribution<double> nd(0.0, 1.0);
  auto fill = [&](size_t begin, size_t end, double scale) {
    for (size_t i = begin; i < end; ++i) m.params[i] = nd(rng) * scale;
  };
  fill(m.conv1_w(), m.conv1_b(), std::sqrt(2.0 / 27.0));
  fill(m.conv2_w(), m.conv2_b(),
       std::sqrt(2.0 / (9.0 * cfg.conv1_channels)));
  fill(m.proj_w(), m.proj_b(), std::sqrt(1.0 / m.flat_dim()));
  fill(m.emb(), m.tproj_w(), 0.3);
  fill(m.tproj_w(), m.tproj_b(), std::sqrt(1.0 / cfg.token_dim));
  // Adapter starts at identity so fresh models behave like the bare encoder.
  for (int i = 0; i < cfg.embed_dim; ++i)
    m.params[m.adapt_w() + i * cfg.embed_dim + i] = 1.0;
  return m;
}

Vec DualEncoderModel::image_forward(const Image& img, ImgCache& cache) const {
  int s = cfg.image_size;
  if (img.width != s || img.height != s)
    throw InputError("image shape mismatch");
  int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels, d = cfg.embed_dim;
  cache.input = &img;

  cache.a1.assign(static_cast<size_t>(c1) * s * s, 0.0);
  conv3x3_forward(img.data.data(), 3, c1, s, &params[conv1_w()],
                  &params[conv1_b()], cache.a1.data());
  cache.t1.resize(cache.a1.size());
  for (size_t i = 0; i < cache.a1.size(); ++i)
    cache.t1[i] = std::tanh(cache.a1[i]);
  int s2 = s / 2;
  cache.p1.assign(static_cast<size_t>(c1) * s2 * s2, 0.0);
  avgpool2_forward(cache.t1.data(), c1, s, cache.p1.data());

  cache.a2.assign(static_cast<size_t>(c2) * s2 * s2, 0.0);
  conv3x3_forward(cache.p1.data(), c1, c2, s2, &params[conv2_w()],
                  &params[conv2_b()], cache.a2.data());
  cache.t2.resize(cache.a2.size());
  for (size_t i = 0; i < cache.a2.size(); ++i)
    cache.t2[i] = std::tanh(cache.a2[i]);
  int s4 = s / 4;
  cache.p2.assign(static_cast<size_t>(c2) * s4 * s4, 0.0);
  avgpool2_forward(cache.t2.data(), c2, s2, cache.p2.data());
  cache.flat = cache.p2;

  cache.z.assign(d, 0.0);
  int flat = flat_dim();
  for (int i = 0; i < d; ++i) {
    double acc = params[proj_b() + i];
    const double* wrow = &params[proj_w() + static_cast<size_t>(i) * flat];
    for (int j = 0; j < flat; ++j) acc += wrow[j] * cache.flat[j];
    cache.z[i] = acc;
  }
  cache.n1 = norm(cache.z);
  cache.u = cache.z;
  if (cache.n1 > 0)
    for (double& v : cache.u) v /= cache.n1;

  return adapter_forward(cache.u, cache);
}

Vec DualEncoderModel::adapter_forward(const Vec& base, ImgCache& cache) const {
  int d = cfg.embed_dim;
  if (static_cast<int>(base.size()) != d)
    throw InputError("embedding dimension mismatch");
  cache.u = base;
  cache.v.assign(d, 0.0);
  for (int i = 0; i < d; ++i) {
    double acc = params[adapt_b() + i];
    const double* wrow = &params[adapt_w() + static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) acc += wrow[j] * base[j];
    cache.v[i] = acc;
  }
  cache.n2 = norm(cache.v);
  cache.e = cache.v;
  if (cache.n2 > 0)
    for (double& v : cache.e) v /= cache.n2;
  return cache.e;
}

void DualEncoderModel::adapter_backward(const ImgCache& cache, const Vec& de,
                                        Vec& grad, Vec* dbase) const {
  int d = cfg.embed_dim;
  Vec dv = normalize_backward(cache.e, cache.n2, de);
  for (int i = 0; i < d; ++i) {
    grad[adapt_b() + i] += dv[i];
    double* gw = &grad[adapt_w() + static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) gw[j] += dv[i] * cache.u[j];
  }
  if (dbase) {
    dbase->assign(d, 0.0);
    for (int i = 0; i < d; ++i) {
      const double* wrow = &params[adapt_w() + static_cast<size_t>(i) * d];
      for (int j = 0; j < d; ++j) (*dbase)[j] += wrow[j] * dv[i];
    }
  }
}

void DualEncoderModel::image_backward(const ImgCache& cache, const Vec& de,
                                      Vec& grad, Image* dinput) const {
  int s = cfg.image_size;
  int c1 = cfg.conv1_channels, c2 = cfg.conv2_channels, d = cfg.embed_dim;
  int s2 = s / 2, s4 = s / 4;
  int flat = flat_dim();

  Vec du;
  adapter_backward(cache, de, grad, &du);
  Vec dz = normalize_backward(cache.u, cache.n1, du);

  Vec dflat(flat, 0.0);
  for (int i = 0; i < d; ++i) {
    grad[proj_b() + i] += dz[i];
    const double* wrow = &params[proj_w() + static_cast<size_t>(i) * flat];
    double* gw = &grad[proj_w() + static_cast<size_t>(i) * flat];
    for (int j = 0; j < flat; ++j) {
      gw[j] += dz[i] * cache.flat[j];
      dflat[j] += dz[i] * wrow[j];
    }
  }

  Vec dt2(static_cast<size_t>(c2) * s2 * s2, 0.0);
  avgpool2_backward(dflat.data(), c2, s2, dt2.data());
  Vec da2(dt2.size());
  for (size_t i = 0; i < dt2.size(); ++i)
    da2[i] = dt2[i] * (1.0 - cache.t2[i] * cache.t2[i]);

  Vec dp1(static_cast<size_t>(c1) * s2 * s2, 0.0);
  conv3x3_backward(cache.p1.data(), c1, c2, s2, &params[conv2_w()], da2.data(),
                   &grad[conv2_w()], &grad[conv2_b()], dp1.data());

  Vec dt1(static_cast<size_t>(c1) * s * s, 0.0);
  avgpool2_backward(dp1.data(), c1, s, dt1.data());
  Vec da1(dt1.size());
  for (size_t i = 0; i < dt1.size(); ++i)
    da1[i] = dt1[i] * (1.0 - cache.t1[i] * cache.t1[i]);

  Vec dx;
  double* dxp = nullptr;
  if (dinput) {
    dx.assign(static_cast<size_t>(3) * s * s, 0.0);
    dxp = dx.data();
  }
  conv3x3_backward(cache.input->data.data(), 3, c1, s, &params[conv1_w()],
                   da1.data(), &grad[conv1_w()], &grad[conv1_b()], dxp);
  if (dinput) {
    *dinput = Image(s, s);
    dinput->data = dx;
  }
}

Vec DualEncoderModel::text_forward(const ClassPrompt& prompt,
                                   TxtCache& cache) const {
  auto words = tokenize(prompt.text);
  if (words.empty()) throw InputError("empty prompt text");
  cache.tokens.clear();
  for (const auto& w : words) {
    int id = vocab.lookup(w);
    if (id < 0) throw InputError("unknown token: " + w);
    cache.tokens.push_back(id);
  }
  bool with_prefix = prompt.category_id >= 0 &&
                     prompt.category_id < static_cast<int>(categories.size());
  cache.prefix_cat = with_prefix ? prompt.category_id : -1;

  int td = cfg.token_dim, d = cfg.embed_dim;
  cache.h.assign(td, 0.0);
  for (int tok : cache.tokens) {
    const double* ep = &params[emb() + static_cast<size_t>(tok) * td];
    for (int i = 0; i < td; ++i) cache.h[i] += ep[i];
  }
  cache.denom = static_cast<double>(cache.tokens.size());
  if (with_prefix) {
    const double* pp =
        &params[prefix() + static_cast<size_t>(cache.prefix_cat) * td];
    for (int i = 0; i < td; ++i) cache.h[i] += pp[i];
    cache.denom += 1.0;
  }
  for (double& v : cache.h) v /= cache.denom;

  cache.z.assign(d, 0.0);
  for (int i = 0; i < d; ++i) {
    double acc = params[tproj_b() + i];
    const double* wrow = &params[tproj_w() + static_cast<size_t>(i) * td];
    for (int j = 0; j < td; ++j) acc += wrow[j] * cache.h[j];
    cache.z[i] = acc;
  }
  cache.n = norm(cache.z);
  cache.e = cache.z;
  if (cache.n > 0)
    for (double& v : cache.e) v /= cache.n;
  return cache.e;
}

void DualEncoderModel::text_backward(const TxtCache& cache, const Vec& de,
                                     Vec& grad) const {
  int td = cfg.token_dim, d = cfg.embed_dim;
  Vec dz = normalize_backward(cache.e, cache.n, de);
  Vec dh(td, 0.0);
  for (int i = 0; i < d; ++i) {
    grad[tproj_b() + i] += dz[i];
    const double* wrow = &params[tproj_w() + static_cast<size_t>(i) * td];
    double* gw = &grad[tproj_w() + static_cast<size_t>(i) * td];
    for (int j = 0; j < td; ++j) {
      gw[j] += dz[i] * cache.h[j];
      dh[j] += dz[i] * wrow[j];
    }
  }
  for (double& v : dh) v /= cache.denom;
  for (int tok : cache.tokens) {
    double* ge = &grad[emb() + static_cast<size_t>(tok) * td];
    for (int i = 0; i < td; ++i) ge[i] += dh[i];
  }
  if (cache.prefix_cat >= 0) {
    double* gp = &grad[prefix() + static_cast<size_t>(cache.prefix_cat) * td];
    for (int i = 0; i < td; ++i) gp[i] += dh[i];
  }
}

Vec DualEncoderModel::encode_image(const Image& img) const {
  ImgCache c;
  return image_forward(img, c);
}

Vec DualEncoderModel::encode_image_base(const Image& img) const {
  ImgCache c;
  image_forward(img, c);
  return c.u;
}

Vec DualEncoderModel::apply_adapter(const Vec& base) const {
  ImgCache c;
  return adapter_forward(base, c);
}

Vec DualEncoderModel::encode_text(const ClassPrompt& prompt) const {
  TxtCache c;
  return text_forward(prompt, c);
}

Vec DualEncoderModel::predict_from_scores(const Vec& sims) const {
  if (sims.empty()) throw InputError("empty prompt list");
  Vec logits(sims.size());
  for (size_t i = 0; i < sims.size(); ++i) logits[i] = sims[i] / cfg.tau;
  return softmax(logits);
}

Vec DualEncoderModel::predict_distribution(
    const Image& img, const std::vector<ClassPrompt>& prompts) const {
  if (prompts.empty()) throw InputError("empty prompt list");
  Vec e = encode_image(img);
  Vec sims(prompts.size());
  for (size_t i = 0; i < prompts.size(); ++i)
    sims[i] = dot(e, encode_text(prompts[i]));
  return predict_from_scores(sims);
}

std::vector<char> DualEncoderModel::trainable_mask(AdaptMode mode) const {
  std::vector<char> mask(param_count(), mode == AdaptMode::full ? 1 : 0);
  if (mode == AdaptMode::prompt_adapter) {
    for (size_t i = adapt_w(); i < param_count(); ++i) mask[i] = 1;
  }
  return mask;
}

namespace {

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_str(std::ofstream& f, const std::string& s) {
  write_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::ifstream& f) {
  auto n = read_pod<uint32_t>(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  return s;
}

}  // namespace

void DualEncoderModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  write_pod<uint32_t>(f, 1);  // version
  write_pod<int32_t>(f, cfg.embed_dim);
  write_pod<int32_t>(f, cfg.token_dim);
  write_pod<int32_t>(f, cfg.conv1_channels);
  write_pod<int32_t>(f, cfg.conv2_channels);
  write_pod<int32_t>(f, cfg.image_size);
  write_pod<float>(f, static_cast<float>(cfg.tau));
  write_pod<uint32_t>(f, static_cast<uint32_t>(vocab.size()));
  for (const auto& w : vocab.words) write_str(f, w);
  write_pod<uint32_t>(f, static_cast<uint32_t>(categories.size()));
  for (const auto& c : categories) write_str(f, c);
  write_pod<uint64_t>(f, params.size());
  for (double v : params) write_pod<float>(f, static_cast<float>(v));
}

DualEncoderModel DualEncoderModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw InputError("bad checkpoint magic: " + path);
  if (read_pod<uint32_t>(f) != 1)
    throw InputError("unsupported checkpoint version");
  DualEncoderModel m;
  m.cfg.embed_dim = read_pod<int32_t>(f);
  m.cfg.token_dim = read_pod<int32_t>(f);
  m.cfg.conv1_channels = read_pod<int32_t>(f);
  m.cfg.conv2_channels = read_pod<int32_t>(f);
  m.cfg.image_size = read_pod<int32_t>(f);
  m.cfg.tau = read_pod<float>(f);
  auto nv = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < nv; ++i) m.vocab.add(read_str(f));
  auto nc = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < nc; ++i) m.categories.push_back(read_str(f));
  m.compute_offsets();
  auto np = read_pod<uint64_t>(f);
  if (np != m.param_count()) throw InputError("checkpoint size mismatch");
  m.params.resize(np);
  for (auto& v : m.params) v = read_pod<float>(f);
  if (!f) throw InputError("truncated checkpoint: " + path);
  return m;
}

bool operator==(const DualEncoderModel& a, const DualEncoderModel& b) {
  return a.params == b.params && a.vocab.words == b.vocab.words &&
         a.categories == b.categories;
}

}  // namespace spur
