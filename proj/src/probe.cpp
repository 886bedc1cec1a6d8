#include "spur/probe.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace spur {

namespace {

using json = nlohmann::ordered_json;

std::string render_question(const std::string& tmpl,
                            const std::string& category) {
  std::string out = tmpl;
  auto pos = out.find("___");
  while (pos != std::string::npos) {
    out.replace(pos, 3, category);
    pos = out.find("___", pos + category.size());
  }
  return out;
}

std::string bullets(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& it : items) out += "- " + it + "\n";
  return out;
}

std::string base64_encode(const std::vector<uint8_t>& data) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (size_t i = 0; i < data.size(); i += 3) {
    uint32_t v = data[i] << 16;
    if (i + 1 < data.size()) v |= data[i + 1] << 8;
    if (i + 2 < data.size()) v |= data[i + 2];
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(i + 1 < data.size() ? tbl[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < data.size() ? tbl[v & 63] : '=');
  }
  return out;
}

std::string encode_image_b64(const Image& img) {
  std::vector<uint8_t> raw;
  raw.reserve(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        raw.push_back(static_cast<uint8_t>(
            std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0)));
  return base64_encode(raw);
}

}  // namespace

QuestionTemplates default_templates() {
  QuestionTemplates t;
  t.q1 = {
      "List all the visual cues you see in the photo:",
      "Name every visible element in this image as a bullet list:",
      "What distinct things can you see in the picture? List them:",
  };
  t.q2 = {
      "Are the objects you list a part of ___?",
      "Which of the listed items belong to the ___ itself?",
      "From your list, which items are physical parts of the ___?",
  };
  t.q3 = {
      "Describe ___ in the photo in details:",
      "List the defining visual characteristics of the ___:",
      "What features identify the ___ in this image? List them:",
  };
  return t;
}

std::vector<FixtureEntry> load_fixtures(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read fixture file: " + path);
  json doc = json::parse(f);
  std::vector<FixtureEntry> out;
  for (const auto& e : doc) {
    out.push_back({e.at("question").get<std::string>(),
                   e.at("category").get<std::string>(),
                   e.at("image_ids").get<std::vector<std::string>>(),
                   e.at("response").get<std::string>()});
  }
  return out;
}

void save_fixtures(const std::vector<FixtureEntry>& fixtures,
                   const std::string& path) {
  json doc = json::array();
  for (const auto& e : fixtures)
    doc.push_back({{"question", e.question},
                   {"category", e.category},
                   {"image_ids", e.image_ids},
                   {"response", e.response}});
  std::ofstream f(path);
  if (!f) throw InputError("cannot write fixture file: " + path);
  f << doc.dump(2) << "\n";
}

AttributeSource AttributeSource::oracle_for(const GroupedDataset& dataset) {
  AttributeSource s;
  s.backend = Backend::oracle;
  s.truth = &dataset;
  return s;
}

AttributeSource AttributeSource::fixture_from(
    std::vector<FixtureEntry> entries) {
  AttributeSource s;
  s.backend = Backend::fixture;
  s.fixtures = std::move(entries);
  return s;
}

AttributeSource AttributeSource::external(const std::string& endpoint) {
  AttributeSource s;
  s.backend = Backend::external_client;
  s.endpoint = endpoint;
  return s;
}

std::string AttributeSource::query(int question_kind,
                                   const std::string& question,
                                   const std::string& category,
                                   const std::vector<std::string>& image_ids,
                                   const std::vector<const Image*>& images) {
  if (backend == Backend::oracle) {
    if (!truth) throw ConfigError("oracle source without ground truth");
    const CategoryTruth* cat = nullptr;
    for (const auto& c : truth->categories)
      if (c.name == category) cat = &c;
    if (!cat) throw InputError("oracle has no category: " + category);
    switch (question_kind) {
      case 1: {
        auto items = cat->core;
        items.insert(items.end(), cat->spurious.begin(), cat->spurious.end());
        return bullets(items);
      }
      case 2:
      case 3:
        return bullets(cat->core);
    }
    throw InputError("bad question kind");
  }
  if (backend == Backend::fixture) {
    for (const auto& e : fixtures) {
      if (e.question == question && e.category == category &&
          e.image_ids == image_ids)
        return e.response;
    }
    throw SourceError("no fixture for question '" + question +
                      "' on category '" + category + "'");
  }

  // External client: POST {"prompt", "images": [base64]} with bearer token.
  std::string host, path = "/";
  {
    std::string url = endpoint;
    auto scheme = url.find("://");
    if (scheme != std::string::npos) url = url.substr(scheme + 3);
    auto slash = url.find('/');
    host = url.substr(0, slash);
    if (slash != std::string::npos) path = url.substr(slash);
  }
  json body = {{"prompt", question}, {"images", json::array()}};
  for (const auto* img : images)
    body["images"].push_back(encode_image_b64(*img));
  httplib::Client client("http://" + host);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  httplib::Headers headers;
  if (const char* tok = std::getenv(token_env.c_str()))
    headers.emplace("Authorization", std::string("Bearer ") + tok);

  std::string err;
  for (int attempt = 0; attempt <= retry_limit; ++attempt) {
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (res && res->status == 200) {
      auto doc = json::parse(res->body, nullptr, false);
      if (!doc.is_discarded() && doc.contains("response")) {
        std::string response = doc["response"].get<std::string>();
        if (record) fixtures.push_back({question, category, image_ids, response});
        return response;
      }
      err = "malformed response body";
    } else {
      err = res ? "http status " + std::to_string(res->status)
                : "connection failed";
    }
  }
  throw SourceError("external attribute source failed after retries: " + err);
}

std::vector<std::string> parse_bulleted(const std::string& response) {
  static const std::regex bullet(R"(^\s*(?:[-*]|\d+\.)\s+(.*?)\s*$)");
  std::vector<std::string> out;
  std::istringstream ss(response);
  std::string line;
  while (std::getline(ss, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, bullet)) continue;
    std::string item = m[1].str();
    std::string lowered;
    for (char c : item)
      lowered.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    auto words = tokenize(lowered);
    if (words.empty() || words.size() > 6) continue;
    std::string joined;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) joined += " ";
      joined += words[i];
    }
    out.push_back(joined);
  }
  return out;
}

ProbeResult probe_attributes(AttributeSource& source,
                             const std::vector<const Image*>& images,
                             const std::vector<std::string>& image_ids,
                             const std::string& category,
                             const SimilarityFn& similarity,
                             double dedup_threshold) {
  if (images.empty()) throw InputError("probe needs at least one image");
  std::string backend_name =
      source.backend == AttributeSource::Backend::oracle    ? "oracle"
      : source.backend == AttributeSource::Backend::fixture ? "fixture"
                                                            : "external_client";
  auto ask = [&](int kind, const std::vector<std::string>& tmpls) {
    std::vector<std::string> items;
    for (const auto& t : tmpls) {
      auto q = render_question(t, category);
      for (auto& item :
           parse_bulleted(source.query(kind, q, category, image_ids, images))) {
        if (std::find(items.begin(), items.end(), item) == items.end())
          items.push_back(item);
      }
    }
    return items;
  };

  auto q1 = ask(1, source.templates.q1);
  auto q2 = ask(2, source.templates.q2);
  auto q3 = ask(3, source.templates.q3);

  ProbeResult result;
  for (const auto& t : q3)
    result.core.push_back({t, AttrKind::core, std::nullopt, backend_name});
  auto in_set = [](const std::vector<std::string>& set, const std::string& t) {
    return std::find(set.begin(), set.end(), t) != set.end();
  };
  for (const auto& t : q1) {
    if (in_set(q2, t) || in_set(q3, t)) continue;  // confirmed part of c
    result.non_core.push_back({t, AttrKind::non_core, std::nullopt, backend_name});
  }
  result.core = dedup_attributes(result.core, similarity, dedup_threshold);
  result.non_core = dedup_attributes(result.non_core, similarity, dedup_threshold);
  return result;
}

SapResult run_sap(const GroupedDataset& dataset, AttributeSource& source,
                  const DualEncoderModel& model, const ThresholdPolicy& policy,
                  int query_images_per_category, double dedup_threshold,
                  const CbmFitConfig& cbm_cfg) {
  if (query_images_per_category <= 0)
    throw ConfigError("query_images_per_category must be positive");
  SapResult out;
  auto similarity = encoder_similarity(model);
  for (size_t c = 0; c < dataset.categories.size(); ++c) {
    out.pool.categories.push_back(dataset.categories[c].name);
    std::vector<Attribute> attrs;
    try {
      auto shots = dataset.train_of_class(static_cast<int>(c));
      size_t take = std::min<size_t>(query_images_per_category, shots.size());
      std::vector<const Image*> imgs;
      std::vector<std::string> ids;
      for (size_t k = 0; k < take; ++k) {
        imgs.push_back(&dataset.samples[shots[k]].image);
        ids.push_back("img" + std::to_string(shots[k]));
      }
      auto pr = probe_attributes(source, imgs, ids, dataset.categories[c].name,
                                 similarity, dedup_threshold);
      attrs = pr.core;
      attrs.insert(attrs.end(), pr.non_core.begin(), pr.non_core.end());
    } catch (const std::exception& err) {
      fprintf(stderr, "warning: probing failed for category '%s': %s\n",
              dataset.categories[c].name.c_str(), err.what());
    }
    out.pool.attrs.push_back(std::move(attrs));
  }
  out.probe = build_bottleneck(out.pool, model);
  fit_cbm(out.probe, dataset, model, cbm_cfg);
  out.scr = apply_probe_to_pool(out.pool, out.probe, policy);
  return out;
}

}  // namespace spur
