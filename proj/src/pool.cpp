#include "spur/pool.hpp"

#include <fstream>

#include "json.hpp"

namespace spur {

using json = nlohmann::ordered_json;

std::string to_string(AttrKind k) {
  switch (k) {
    case AttrKind::core:
      return "core";
    case AttrKind::non_core:
      return "non_core";
    case AttrKind::spurious:
      return "spurious";
  }
  return "non_core";
}

AttrKind attr_kind_from_string(const std::string& s) {
  if (s == "core") return AttrKind::core;
  if (s == "non_core") return AttrKind::non_core;
  if (s == "spurious") return AttrKind::spurious;
  throw InputError("unknown attribute kind: " + s);
}

ClassPrompt build_prompt(int category_id, const std::string& name,
                         const std::vector<Attribute>& attributes) {
  std::string text = "a photo of a " + name;
  if (!attributes.empty()) {
    text += ", which has ";
    for (size_t i = 0; i < attributes.size(); ++i) {
      if (i) text += ", ";
      text += attributes[i].text;
    }
  }
  return ClassPrompt{category_id, text};
}

std::vector<ClassPrompt> build_prompts(const AttributePool& pool,
                                       bool exclude_spurious) {
  std::vector<ClassPrompt> prompts;
  for (size_t c = 0; c < pool.categories.size(); ++c) {
    std::vector<Attribute> kept;
    for (const auto& a : pool.attrs[c]) {
      if (exclude_spurious && a.kind == AttrKind::spurious) continue;
      kept.push_back(a);
    }
    prompts.push_back(
        build_prompt(static_cast<int>(c), pool.categories[c], kept));
  }
  return prompts;
}

SimilarityFn encoder_similarity(const DualEncoderModel& model) {
  return [&model](const std::string& a, const std::string& b) {
    return dot(model.encode_text({-1, a}), model.encode_text({-1, b}));
  };
}

std::vector<Attribute> dedup_attributes(const std::vector<Attribute>& attrs,
                                        const SimilarityFn& similarity,
                                        double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw ConfigError("dedup threshold must lie in [0,1]");
  std::vector<Attribute> kept;
  for (const auto& a : attrs) {
    bool drop = false;
    for (const auto& k : kept) {
      if (k.text == a.text || similarity(k.text, a.text) >= threshold) {
        drop = true;
        break;
      }
    }
    if (!drop) kept.push_back(a);
  }
  return kept;
}

void save_pool(const AttributePool& pool, const std::string& path) {
  json cats = json::object();
  for (size_t c = 0; c < pool.categories.size(); ++c) {
    json list = json::array();
    for (const auto& a : pool.attrs[c]) {
      json item = {{"text", a.text},
                   {"kind", to_string(a.kind)},
                   {"weight", nullptr},
                   {"source", a.source}};
      if (a.weight) item["weight"] = *a.weight;
      list.push_back(std::move(item));
    }
    cats[pool.categories[c]] = std::move(list);
  }
  json doc = {{"version", 1}, {"categories", std::move(cats)}};
  std::ofstream f(path);
  if (!f) throw InputError("cannot write pool: " + path);
  f << doc.dump(2) << "\n";
}

AttributePool load_pool(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read pool: " + path);
  json doc = json::parse(f);
  if (doc.at("version").get<int>() != 1)
    throw InputError("unsupported pool version");
  AttributePool pool;
  for (auto& [name, list] : doc.at("categories").items()) {
    pool.categories.push_back(name);
    std::vector<Attribute> attrs;
    for (auto& item : list) {
      Attribute a;
      a.text = item.at("text").get<std::string>();
      a.kind = attr_kind_from_string(item.at("kind").get<std::string>());
      if (!item.at("weight").is_null())
        a.weight = item.at("weight").get<double>();
      a.source = item.at("source").get<std::string>();
      attrs.push_back(std::move(a));
    }
    pool.attrs.push_back(std::move(attrs));
  }
  return pool;
}

}  // namespace spur
