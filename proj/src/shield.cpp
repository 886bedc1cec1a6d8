#include "spur/shield.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace spur {

namespace {

using json = nlohmann::ordered_json;

template <typename EncodeFn>
double subsidiary_ce(const DualEncoderModel& model,
                     const SubsidiaryEntry& entry, EncodeFn&& encode,
                     Vec* grad) {
  size_t np = entry.prompts.size();
  if (np == 0) throw ConfigError("subsidiary entry without prompts");
  if (np == 1) return 0.0;  // softmax over the lone real category
  size_t nb = entry.images.size();
  std::vector<TxtCache> tc(np);
  std::vector<Vec> txt(np);
  for (size_t c = 0; c < np; ++c)
    txt[c] = model.text_forward(entry.prompts[c], tc[c]);

  std::vector<Vec> dtxt;
  if (grad) dtxt.assign(np, Vec(model.cfg.embed_dim, 0.0));
  double loss = 0.0;
  double tau = model.cfg.tau;
  for (size_t i = 0; i < nb; ++i) {
    ImgCache ic;
    Vec e = encode(i, ic);
    Vec sims(np);
    for (size_t c = 0; c < np; ++c) sims[c] = dot(e, txt[c]);
    Vec p = model.predict_from_scores(sims);
    int y = entry.labels[i];
    loss -= std::log(std::max(p[y], 1e-300));
    if (grad) {
      Vec de(model.cfg.embed_dim, 0.0);
      for (size_t c = 0; c < np; ++c) {
        double dl = (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) /
                    (tau * static_cast<double>(nb));
        for (int k = 0; k < model.cfg.embed_dim; ++k) {
          de[k] += dl * txt[c][k];
          dtxt[c][k] += dl * e[k];
        }
      }
      if (ic.input)
        model.image_backward(ic, de, *grad);
      else
        model.adapter_backward(ic, de, *grad);
    }
  }
  if (grad)
    for (size_t c = 0; c < np; ++c) model.text_backward(tc[c], dtxt[c], *grad);
  return loss / static_cast<double>(nb);
}

}  // namespace

RetrievalCorpus load_retrieval_corpus(const std::string& dir) {
  std::ifstream tsv(fs::path(dir) / "captions.tsv");
  if (!tsv) throw ConfigError("retrieval corpus missing captions.tsv: " + dir);
  RetrievalCorpus corpus;
  std::string line;
  while (std::getline(tsv, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw InputError("malformed captions.tsv line: " + line);
    std::string id = line.substr(0, tab);
    corpus.images.push_back(read_png((fs::path(dir) / (id + ".png")).string()));
    corpus.captions.push_back(line.substr(tab + 1));
  }
  return corpus;
}

void save_retrieval_corpus(const RetrievalCorpus& corpus,
                           const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream tsv(fs::path(dir) / "captions.tsv");
  char name[32];
  for (size_t i = 0; i < corpus.images.size(); ++i) {
    std::snprintf(name, sizeof(name), "img%05zu", i);
    write_png((fs::path(dir) / (std::string(name) + ".png")).string(),
              corpus.images[i]);
    tsv << name << "\t" << corpus.captions[i] << "\n";
  }
}

std::vector<CandidateImage> build_pseudo_candidates(
    const Attribute& attribute, PseudoProvider provider, int prompt_count,
    int candidates_per_prompt, uint64_t seed, const RetrievalCorpus* corpus,
    const DualEncoderModel* model) {
  if (prompt_count < 1) throw ConfigError("prompt_count must be >= 1");
  std::vector<CandidateImage> out;
  if (provider == PseudoProvider::procedural_synthesis) {
    bool renderable = true;
    for (int p = 0; p < prompt_count && renderable; ++p) {
      for (int k = 0; k < candidates_per_prompt; ++k) {
        Image img;
        if (!render_attribute(attribute.text, p,
                              sub_seed(seed, attribute.text) + k, img)) {
          renderable = false;
          break;
        }
        out.push_back({std::move(img),
                       "synthesis:style" + std::to_string(p) + ":" +
                           std::to_string(k)});
      }
    }
    if (renderable) return out;
    // No renderer for this attribute: fall back to retrieval when possible.
    if (!corpus)
      throw ConfigError("no renderer for attribute '" + attribute.text +
                        "' and no retrieval corpus configured");
    out.clear();
  }
  if (!corpus) throw ConfigError("retrieval corpus missing");
  if (!model) throw ConfigError("retrieval requires a model for similarity");
  // Captions as a proxy: rank the corpus by caption-to-attribute similarity.
  Vec attr_emb = model->encode_text({-1, attribute.text});
  std::vector<std::pair<double, int>> ranked;
  for (size_t i = 0; i < corpus->images.size(); ++i) {
    double sim = dot(attr_emb, model->encode_text({-1, corpus->captions[i]}));
    ranked.push_back({sim, static_cast<int>(i)});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  int want = std::min<int>(prompt_count * candidates_per_prompt,
                           static_cast<int>(ranked.size()));
  for (int i = 0; i < want; ++i) {
    int idx = ranked[i].second;
    std::ostringstream prov;
    prov << "retrieval:img" << idx << ":sim" << ranked[i].first;
    out.push_back({corpus->images[idx], prov.str()});
  }
  return out;
}

std::vector<Image> select_topk_pure(
    const std::vector<CandidateImage>& candidates, const Vec& attribute_embedding,
    int k, const DualEncoderModel& model) {
  if (k > static_cast<int>(candidates.size()))
    throw InputError("k exceeds candidate count");
  std::vector<std::pair<double, int>> ranked;
  for (size_t i = 0; i < candidates.size(); ++i) {
    double sim =
        dot(model.encode_image(candidates[i].image), attribute_embedding);
    ranked.push_back({sim, static_cast<int>(i)});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  std::vector<Image> out;
  for (int i = 0; i < k; ++i) out.push_back(candidates[ranked[i].second].image);
  return out;
}

SubsidiaryBuild build_subsidiary_dataset(
    int category, const std::string& category_name,
    const std::vector<Attribute>& spurious,
    const std::vector<const Image*>& real_shots, const ClassPrompt& real_prompt,
    const ShieldConfig& cfg, const DualEncoderModel& model,
    const RetrievalCorpus* corpus) {
  if (real_shots.empty()) throw InputError("category has no real shots");
  SubsidiaryBuild build;
  build.entry.category = category;
  build.entry.prompts.push_back(real_prompt);
  for (const auto* img : real_shots) {
    build.entry.images.push_back(*img);
    build.entry.labels.push_back(0);
  }
  int next_id = 0;
  for (const auto& attr : spurious) {
    try {
      auto candidates = build_pseudo_candidates(
          attr, cfg.provider, cfg.prompt_count, cfg.candidates_per_prompt,
          sub_seed(cfg.seed, category_name), corpus, &model);
      Vec attr_emb = model.encode_text({-1, attr.text});
      int k = std::min<int>(cfg.shots_per_pseudo,
                            static_cast<int>(candidates.size()));
      PseudoCategory pc;
      pc.id = -1 - next_id;  // negative: never collides with real category ids
      pc.attribute = attr;
      pc.prompt = {-1, "a photo of a " + attr.text};
      pc.provider = cfg.provider == PseudoProvider::procedural_synthesis
                        ? "procedural_synthesis"
                        : "local_retrieval";
      for (const auto& c : candidates)
        pc.candidate_scores.push_back(
            dot(model.encode_image(c.image), attr_emb));
      pc.images = select_topk_pure(candidates, attr_emb, k, model);

      int label = static_cast<int>(build.entry.prompts.size());
      build.entry.prompts.push_back(pc.prompt);
      for (const auto& img : pc.images) {
        build.entry.images.push_back(img);
        build.entry.labels.push_back(label);
      }
      build.pseudo.push_back(std::move(pc));
      ++next_id;
    } catch (const ConfigError& err) {
      // A failed pseudo category is dropped; shielding continues without it.
      fprintf(stderr, "warning: dropping pseudo category for '%s': %s\n",
              attr.text.c_str(), err.what());
    }
  }
  return build;
}

double subsidiary_loss(const DualEncoderModel& model,
                       const SubsidiaryEntry& entry) {
  return subsidiary_ce(
      model, entry,
      [&](size_t i, ImgCache& ic) {
        return model.image_forward(entry.images[i], ic);
      },
      nullptr);
}

double subsidiary_loss_grad(const DualEncoderModel& model,
                            const SubsidiaryEntry& entry, Vec& grad) {
  return subsidiary_ce(
      model, entry,
      [&](size_t i, ImgCache& ic) {
        return model.image_forward(entry.images[i], ic);
      },
      &grad);
}

double subsidiary_loss_grad_cached(const DualEncoderModel& model,
                                   const SubsidiaryEntry& entry,
                                   const std::vector<Vec>& bases, Vec& grad) {
  return subsidiary_ce(
      model, entry,
      [&](size_t i, ImgCache& ic) {
        return model.adapter_forward(bases[i], ic);
      },
      &grad);
}

double combine_losses(double l_ce, double l_pse, double lambda) {
  if (lambda < 0) throw ConfigError("lambda must be nonnegative");
  return l_ce + lambda * l_pse;
}

std::set<int> select_categories_by_scr(const std::map<int, double>& scr_map,
                                       double fraction) {
  if (scr_map.empty()) throw InputError("empty SCR map");
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("fraction must lie in (0,1]");
  size_t want = static_cast<size_t>(
      std::ceil(fraction * static_cast<double>(scr_map.size())));
  std::vector<std::pair<int, double>> ranked(scr_map.begin(), scr_map.end());
  // Highest SCR first; equal SCRs keep ascending category id.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  std::set<int> out;
  for (size_t i = 0; i < want && i < ranked.size(); ++i)
    out.insert(ranked[i].first);
  return out;
}

void save_pseudo_category(const PseudoCategory& pc, const std::string& dir) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < pc.images.size(); ++i) {
    std::snprintf(name, sizeof(name), "shot%03zu.png", i);
    write_png((fs::path(dir) / name).string(), pc.images[i]);
  }
  json doc = {{"attribute", pc.attribute.text},
              {"provider", pc.provider},
              {"shots", pc.images.size()},
              {"candidate_scores", pc.candidate_scores}};
  std::ofstream f(fs::path(dir) / "manifest.json");
  f << doc.dump(2) << "\n";
}

}  // namespace spur
