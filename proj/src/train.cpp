#include "spur/train.hpp"

#include <algorithm>
#include <numeric>

namespace spur {

namespace {

void sgd_step(Vec& params, const Vec& grad, const std::vector<char>& mask,
              double lr) {
  for (size_t i = 0; i < params.size(); ++i) {
    if (mask[i]) params[i] -= lr * grad[i];
  }
}

std::vector<ClassPrompt> check_prompt_cover(
    const GroupedDataset& dataset, const std::vector<ClassPrompt>& prompts) {
  std::vector<const ClassPrompt*> by_label(dataset.categories.size(), nullptr);
  for (const auto& p : prompts) {
    if (p.category_id >= 0 &&
        p.category_id < static_cast<int>(by_label.size()))
      by_label[p.category_id] = &p;
  }
  for (int i : dataset.train_idx) {
    int y = dataset.samples[i].label;
    if (y < 0 || y >= static_cast<int>(by_label.size()) || !by_label[y])
      throw ConfigError("training label without a prompt: " +
                        std::to_string(y));
  }
  return prompts;
}

}  // namespace

double main_ce_loss(const DualEncoderModel& model,
                    const std::vector<const Image*>& images,
                    const std::vector<int>& labels,
                    const std::vector<ClassPrompt>& prompts) {
  std::vector<Vec> txt(prompts.size());
  for (size_t c = 0; c < prompts.size(); ++c)
    txt[c] = model.encode_text(prompts[c]);
  double loss = 0.0;
  for (size_t i = 0; i < images.size(); ++i) {
    Vec e = model.encode_image(*images[i]);
    Vec sims(prompts.size());
    for (size_t c = 0; c < prompts.size(); ++c) sims[c] = dot(e, txt[c]);
    Vec p = model.predict_from_scores(sims);
    loss -= std::log(std::max(p[labels[i]], 1e-300));
  }
  return loss / static_cast<double>(images.size());
}

double main_ce_loss_grad(const DualEncoderModel& model,
                         const std::vector<const Image*>& images,
                         const std::vector<int>& labels,
                         const std::vector<ClassPrompt>& prompts, Vec& grad) {
  size_t nc = prompts.size(), nb = images.size();
  std::vector<TxtCache> tc(nc);
  std::vector<Vec> txt(nc);
  for (size_t c = 0; c < nc; ++c) txt[c] = model.text_forward(prompts[c], tc[c]);

  std::vector<Vec> dtxt(nc, Vec(model.cfg.embed_dim, 0.0));
  double loss = 0.0;
  double tau = model.cfg.tau;
  for (size_t i = 0; i < nb; ++i) {
    ImgCache ic;
    Vec e = model.image_forward(*images[i], ic);
    Vec sims(nc);
    for (size_t c = 0; c < nc; ++c) sims[c] = dot(e, txt[c]);
    Vec p = model.predict_from_scores(sims);
    loss -= std::log(std::max(p[labels[i]], 1e-300));
    Vec de(model.cfg.embed_dim, 0.0);
    for (size_t c = 0; c < nc; ++c) {
      double dl = (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) /
                  (tau * static_cast<double>(nb));
      for (int k = 0; k < model.cfg.embed_dim; ++k) {
        de[k] += dl * txt[c][k];
        dtxt[c][k] += dl * e[k];
      }
    }
    model.image_backward(ic, de, grad);
  }
  for (size_t c = 0; c < nc; ++c) model.text_backward(tc[c], dtxt[c], grad);
  return loss / static_cast<double>(nb);
}

// Same cross-entropy but image towers start from cached base embeddings, so
// only the adapter and text side are traversed. Valid in prompt_adapter mode
// where the encoders are frozen.
static double main_ce_loss_grad_cached(const DualEncoderModel& model,
                                       const std::vector<const Vec*>& bases,
                                       const std::vector<int>& labels,
                                       const std::vector<ClassPrompt>& prompts,
                                       Vec& grad) {
  size_t nc = prompts.size(), nb = bases.size();
  std::vector<TxtCache> tc(nc);
  std::vector<Vec> txt(nc);
  for (size_t c = 0; c < nc; ++c) txt[c] = model.text_forward(prompts[c], tc[c]);

  std::vector<Vec> dtxt(nc, Vec(model.cfg.embed_dim, 0.0));
  double loss = 0.0;
  double tau = model.cfg.tau;
  for (size_t i = 0; i < nb; ++i) {
    ImgCache ic;
    Vec e = model.adapter_forward(*bases[i], ic);
    Vec sims(nc);
    for (size_t c = 0; c < nc; ++c) sims[c] = dot(e, txt[c]);
    Vec p = model.predict_from_scores(sims);
    loss -= std::log(std::max(p[labels[i]], 1e-300));
    Vec de(model.cfg.embed_dim, 0.0);
    for (size_t c = 0; c < nc; ++c) {
      double dl = (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) /
                  (tau * static_cast<double>(nb));
      for (int k = 0; k < model.cfg.embed_dim; ++k) {
        de[k] += dl * txt[c][k];
        dtxt[c][k] += dl * e[k];
      }
    }
    model.adapter_backward(ic, de, grad);
  }
  for (size_t c = 0; c < nc; ++c) model.text_backward(tc[c], dtxt[c], grad);
  return loss / static_cast<double>(nb);
}

double contrastive_loss_grad(const DualEncoderModel& model,
                             const std::vector<const Image*>& images,
                             const std::vector<const std::string*>& captions,
                             Vec& grad) {
  size_t n = images.size();
  double tau = model.cfg.tau;
  int d = model.cfg.embed_dim;
  std::vector<ImgCache> ic(n);
  std::vector<TxtCache> tc(n);
  std::vector<Vec> ie(n), te(n);
  for (size_t i = 0; i < n; ++i) {
    ie[i] = model.image_forward(*images[i], ic[i]);
    te[i] = model.text_forward({-1, *captions[i]}, tc[i]);
  }
  // logits[i][j] = sim(image i, caption j) / tau
  std::vector<Vec> logits(n, Vec(n));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) logits[i][j] = dot(ie[i], te[j]) / tau;

  std::vector<Vec> dlogit(n, Vec(n, 0.0));
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {  // image -> caption direction
    Vec p = softmax(logits[i]);
    loss -= 0.5 * std::log(std::max(p[i], 1e-300));
    for (size_t j = 0; j < n; ++j)
      dlogit[i][j] += 0.5 * (p[j] - (i == j ? 1.0 : 0.0)) /
                      static_cast<double>(n);
  }
  for (size_t j = 0; j < n; ++j) {  // caption -> image direction
    Vec col(n);
    for (size_t i = 0; i < n; ++i) col[i] = logits[i][j];
    Vec p = softmax(col);
    loss -= 0.5 * std::log(std::max(p[j], 1e-300));
    for (size_t i = 0; i < n; ++i)
      dlogit[i][j] += 0.5 * (p[i] - (i == j ? 1.0 : 0.0)) /
                      static_cast<double>(n);
  }
  for (size_t i = 0; i < n; ++i) {
    Vec de(d, 0.0), dt(d, 0.0);
    for (size_t j = 0; j < n; ++j)
      for (int k = 0; k < d; ++k) de[k] += dlogit[i][j] / tau * te[j][k];
    for (size_t j = 0; j < n; ++j)
      for (int k = 0; k < d; ++k) dt[k] += dlogit[j][i] / tau * ie[j][k];
    model.image_backward(ic[i], de, grad);
    model.text_backward(tc[i], dt, grad);
  }
  return loss / static_cast<double>(n);
}

std::vector<double> pretrain_contrastive(DualEncoderModel& model,
                                         const CaptionedCorpus& corpus,
                                         const TrainConfig& cfg) {
  size_t n = corpus.images.size();
  if (n == 0) throw InputError("empty pretraining corpus");
  auto mask = model.trainable_mask(AdaptMode::full);
  // The adapter stays at identity during the warm-up; zero-shot use and
  // fine-tuning both start from the bare encoder embedding.
  for (size_t i = model.adapt_w(); i < model.prefix(); ++i) mask[i] = 0;
  auto rng = make_rng(cfg.seed, "pretrain-shuffle");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> trace;
  Vec grad(model.param_count());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t b = 0; b < n; b += cfg.batch) {
      size_t e = std::min(n, b + cfg.batch);
      if (e - b < 2) continue;  // InfoNCE needs at least one negative
      std::vector<const Image*> imgs;
      std::vector<const std::string*> caps;
      for (size_t k = b; k < e; ++k) {
        imgs.push_back(&corpus.images[order[k]]);
        caps.push_back(&corpus.captions[order[k]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += contrastive_loss_grad(model, imgs, caps, grad);
      sgd_step(model.params, grad, mask, cfg.lr);
      ++batches;
    }
    trace.push_back(epoch_loss / std::max(1, batches));
  }
  return trace;
}

std::vector<double> fit_main(DualEncoderModel& model,
                             const GroupedDataset& dataset,
                             const std::vector<ClassPrompt>& prompts,
                             const TrainConfig& cfg, const SasOptions* sas) {
  check_prompt_cover(dataset, prompts);
  auto mask = model.trainable_mask(cfg.mode);
  bool cached = cfg.mode == AdaptMode::prompt_adapter;

  // Frozen encoders: image embeddings up to the adapter never change, so
  // compute them once.
  std::vector<Vec> bases(dataset.samples.size());
  std::vector<std::vector<Vec>> sas_bases;
  if (cached) {
    for (int i : dataset.train_idx)
      bases[i] = model.encode_image_base(dataset.samples[i].image);
    if (sas && sas->entries) {
      sas_bases.resize(sas->entries->size());
      for (size_t e = 0; e < sas->entries->size(); ++e) {
        for (const auto& img : (*sas->entries)[e].images)
          sas_bases[e].push_back(model.encode_image_base(img));
      }
    }
  }

  auto rng = make_rng(cfg.seed, "fit-shuffle");
  std::vector<int> order(dataset.train_idx);
  std::vector<double> trace;
  Vec grad(model.param_count());
  size_t sas_cursor = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch) {
      size_t e = std::min(order.size(), b + cfg.batch);
      std::vector<int> labels;
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss;
      if (cached) {
        std::vector<const Vec*> bs;
        for (size_t k = b; k < e; ++k) {
          bs.push_back(&bases[order[k]]);
          labels.push_back(dataset.samples[order[k]].label);
        }
        loss = main_ce_loss_grad_cached(model, bs, labels, prompts, grad);
      } else {
        std::vector<const Image*> imgs;
        for (size_t k = b; k < e; ++k) {
          imgs.push_back(&dataset.samples[order[k]].image);
          labels.push_back(dataset.samples[order[k]].label);
        }
        loss = main_ce_loss_grad(model, imgs, labels, prompts, grad);
      }
      sgd_step(model.params, grad, mask, cfg.lr);
      epoch_loss += loss;
      ++batches;

      // Subsidiary batches interleave 1:1 with main batches.
      if (sas && sas->entries && !sas->entries->empty()) {
        size_t idx = sas_cursor++ % sas->entries->size();
        const auto& entry = (*sas->entries)[idx];
        if (!entry.prompts.empty() && entry.prompts.size() > 1) {
          std::fill(grad.begin(), grad.end(), 0.0);
          if (cached) {
            subsidiary_loss_grad_cached(model, entry, sas_bases[idx], grad);
          } else {
            subsidiary_loss_grad(model, entry, grad);
          }
          sgd_step(model.params, grad, mask, cfg.lr * sas->lambda);
        }
      }
    }
    trace.push_back(batches ? epoch_loss / batches : 0.0);
  }
  return trace;
}

}  // namespace spur
