#include "spur/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spur {

namespace {
using json = nlohmann::ordered_json;
}

std::vector<int> predict_labels(const DualEncoderModel& model,
                                const GroupedDataset& dataset,
                                const std::vector<int>& indices,
                                const std::vector<ClassPrompt>& prompts) {
  if (indices.empty()) throw InputError("empty evaluation split");
  std::vector<Vec> txt(prompts.size());
  for (size_t c = 0; c < prompts.size(); ++c)
    txt[c] = model.encode_text(prompts[c]);
  std::vector<int> preds;
  preds.reserve(indices.size());
  for (int i : indices) {
    Vec e = model.encode_image(dataset.samples[i].image);
    int best = 0;
    double best_sim = dot(e, txt[0]);
    for (size_t c = 1; c < prompts.size(); ++c) {
      double s = dot(e, txt[c]);
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(c);
      }
    }
    preds.push_back(prompts[best].category_id);
  }
  return preds;
}

AccuracyBreakdown evaluate_accuracy(const DualEncoderModel& model,
                                    const GroupedDataset& dataset,
                                    const std::vector<int>& indices,
                                    const std::vector<ClassPrompt>& prompts) {
  auto preds = predict_labels(model, dataset, indices, prompts);
  AccuracyBreakdown out;
  std::map<int, int> hits;
  for (size_t k = 0; k < indices.size(); ++k) {
    int y = dataset.samples[indices[k]].label;
    out.per_category_count[y]++;
    if (preds[k] == y) {
      hits[y]++;
      out.accuracy += 1.0;
    }
  }
  out.accuracy /= static_cast<double>(indices.size());
  for (const auto& [cat, count] : out.per_category_count)
    out.per_category[cat] = static_cast<double>(hits[cat]) / count;
  return out;
}

std::vector<int> extract_counter_group(const GroupedDataset& dataset,
                                       const std::vector<int>& test_indices,
                                       const AttributePool& flagged_pool,
                                       const DualEncoderModel& model,
                                       double sim_threshold) {
  // Spurious attribute text embeddings per category.
  std::vector<std::vector<Vec>> spurious_emb(flagged_pool.categories.size());
  for (size_t c = 0; c < flagged_pool.categories.size(); ++c) {
    for (const auto& a : flagged_pool.attrs[c]) {
      if (a.kind == AttrKind::spurious)
        spurious_emb[c].push_back(model.encode_text({-1, a.text}));
    }
  }
  std::vector<int> kept;
  for (int i : test_indices) {
    int y = dataset.samples[i].label;
    bool drop = false;
    if (y >= 0 && y < static_cast<int>(spurious_emb.size()) &&
        !spurious_emb[y].empty()) {
      Vec e = model.encode_image(dataset.samples[i].image);
      for (const auto& a : spurious_emb[y]) {
        if (dot(e, a) >= sim_threshold) {
          drop = true;
          break;
        }
      }
    }
    if (!drop) kept.push_back(i);
  }
  return kept;
}

GroupMetrics group_metrics(const std::vector<int>& predictions,
                           const std::vector<int>& labels,
                           const std::vector<int>& group_ids) {
  std::map<int, std::pair<int, int>> per_group;  // group -> (hits, total)
  for (size_t i = 0; i < labels.size(); ++i) {
    auto& [hits, total] = per_group[group_ids[i]];
    ++total;
    if (predictions[i] == labels[i]) ++hits;
  }
  GroupMetrics m;
  bool first = true;
  int groups = 0;
  for (const auto& [g, ht] : per_group) {
    if (ht.second == 0) {
      std::fprintf(stderr, "warning: empty group %d excluded\n", g);
      continue;
    }
    double acc = static_cast<double>(ht.first) / ht.second;
    m.worst = first ? acc : std::min(m.worst, acc);
    m.avg += acc;
    ++groups;
    first = false;
  }
  if (groups) m.avg /= groups;
  m.gap = m.avg - m.worst;
  return m;
}

ZeroShotResult zero_shot_eval(const DualEncoderModel& model,
                              const GroupedDataset& dataset,
                              const std::vector<int>& indices,
                              const AttributePool& pool) {
  ZeroShotResult out;
  out.full =
      evaluate_accuracy(model, dataset, indices, build_prompts(pool, false))
          .accuracy;
  out.minus_spurious =
      evaluate_accuracy(model, dataset, indices, build_prompts(pool, true))
          .accuracy;
  return out;
}

Vec saliency_map(const DualEncoderModel& model, const Image& image,
                 const ClassPrompt& prompt) {
  Vec txt = model.encode_text(prompt);
  ImgCache cache;
  model.image_forward(image, cache);
  Vec grad(model.param_count(), 0.0);
  Image dinput;
  model.image_backward(cache, txt, grad, &dinput);

  int h = image.height, w = image.width;
  Vec map(static_cast<size_t>(h) * w, 0.0);
  double total = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = std::fabs(dinput.at(0, y, x)) + std::fabs(dinput.at(1, y, x)) +
                 std::fabs(dinput.at(2, y, x));
      map[static_cast<size_t>(y) * w + x] = v;
      total += v;
    }
  if (total <= 0.0) {
    std::fill(map.begin(), map.end(), 1.0 / static_cast<double>(map.size()));
  } else {
    for (double& v : map) v /= total;
  }
  return map;
}

EvalReport make_report(const DualEncoderModel& model,
                       const GroupedDataset& dataset,
                       const std::vector<ClassPrompt>& prompts,
                       const AttributePool& flagged_pool, double sim_threshold,
                       uint64_t seed, const std::string& config_hash) {
  EvalReport r;
  r.split = "test";
  r.seed = seed;
  r.config_hash = config_hash;
  auto acc = evaluate_accuracy(model, dataset, dataset.test_idx, prompts);
  r.accuracy = acc.accuracy;
  for (const auto& [cat, a] : acc.per_category)
    r.per_category[dataset.categories[cat].name] = a;

  auto counter = extract_counter_group(dataset, dataset.test_idx, flagged_pool,
                                       model, sim_threshold);
  r.counter_size = counter.size();
  if (!counter.empty())
    r.counter_accuracy =
        evaluate_accuracy(model, dataset, counter, prompts).accuracy;

  auto preds = predict_labels(model, dataset, dataset.test_idx, prompts);
  std::vector<int> labels, groups;
  for (int i : dataset.test_idx) {
    labels.push_back(dataset.samples[i].label);
    groups.push_back(dataset.samples[i].group);
  }
  r.groups = group_metrics(preds, labels, groups);
  return r;
}

void save_report(const EvalReport& report, const std::string& path) {
  json per_cat = json::object();
  for (const auto& [name, acc] : report.per_category) per_cat[name] = acc;
  json doc = {
      {"split", report.split},
      {"accuracy", report.accuracy},
      {"per_category", std::move(per_cat)},
      {"counter",
       {{"accuracy", report.counter_accuracy}, {"size", report.counter_size}}},
      {"groups",
       {{"worst", report.groups.worst},
        {"avg", report.groups.avg},
        {"gap", report.groups.gap}}},
      {"seed", report.seed},
      {"config_hash", report.config_hash}};
  std::ofstream f(path);
  if (!f) throw InputError("cannot write report: " + path);
  f << doc.dump(2) << "\n";
}

EvalReport load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read report: " + path);
  json doc = json::parse(f);
  EvalReport r;
  r.split = doc.at("split").get<std::string>();
  r.accuracy = doc.at("accuracy").get<double>();
  for (auto& [name, acc] : doc.at("per_category").items())
    r.per_category[name] = acc.get<double>();
  r.counter_accuracy = doc.at("counter").at("accuracy").get<double>();
  r.counter_size = doc.at("counter").at("size").get<size_t>();
  r.groups.worst = doc.at("groups").at("worst").get<double>();
  r.groups.avg = doc.at("groups").at("avg").get<double>();
  r.groups.gap = doc.at("groups").at("gap").get<double>();
  r.seed = doc.at("seed").get<uint64_t>();
  r.config_hash = doc.at("config_hash").get<std::string>();
  return r;
}

std::string format_report_table(const std::vector<std::string>& names,
                                const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %10s %10s %10s %10s %10s\n", "run",
                "accuracy", "counter", "worst", "avg", "gap");
  out << line;
  for (size_t i = 0; i < reports.size(); ++i) {
    std::snprintf(line, sizeof(line),
                  "%-20s %10.4f %10.4f %10.4f %10.4f %10.4f\n",
                  names[i].c_str(), reports[i].accuracy,
                  reports[i].counter_accuracy, reports[i].groups.worst,
                  reports[i].groups.avg, reports[i].groups.gap);
    out << line;
  }
  if (reports.size() == 2) {
    std::snprintf(line, sizeof(line), "%-20s %+10.4f %+10.4f\n", "delta",
                  reports[1].accuracy - reports[0].accuracy,
                  reports[1].counter_accuracy - reports[0].counter_accuracy);
    out << line;
  }
  return out.str();
}

}  // namespace spur
