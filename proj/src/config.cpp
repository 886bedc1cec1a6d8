#include "spur/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace spur {

namespace {

using json = nlohmann::ordered_json;

std::string slugify(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(c == ' ' ? '_' : c);
  return out;
}

GroupedDataset load_stage_dataset(const RunConfig& cfg) {
  fs::path dir = fs::path(cfg.out_dir) / "dataset";
  if (!fs::exists(dir / "ground_truth.json"))
    throw InputError("missing dataset artifact " + (dir / "ground_truth.json").string() +
                     "; run the datagen stage first");
  return load_dataset(dir.string());
}

DualEncoderModel load_base_model(const RunConfig& cfg) {
  fs::path path = fs::path(cfg.out_dir) / "base.ckpt";
  if (!fs::exists(path))
    throw InputError("missing pretrained checkpoint " + path.string() +
                     "; run the pretrain stage first");
  return DualEncoderModel::load(path.string());
}

AttributePool load_stage_pool(const RunConfig& cfg) {
  fs::path path = fs::path(cfg.out_dir) / "pool.json";
  if (!fs::exists(path))
    throw InputError("missing attribute pool " + path.string() +
                     "; run the probe stage first");
  return load_pool(path.string());
}

std::map<int, double> load_stage_scr(const RunConfig& cfg) {
  fs::path path = fs::path(cfg.out_dir) / "scr.json";
  if (!fs::exists(path))
    throw InputError("missing SCR map " + path.string() +
                     "; run the probe stage first");
  std::ifstream f(path);
  json doc = json::parse(f);
  std::map<int, double> out;
  for (auto& [k, v] : doc.items()) out[std::stoi(k)] = v.get<double>();
  return out;
}

}  // namespace

std::string canonical_config(const RunConfig& c) {
  std::ostringstream s;
  s << "generator=" << c.generator << "\nclasses=" << c.classes
    << "\nshots=" << c.shots << "\ntest_per_class=" << c.test_per_class
    << "\nrho=" << c.rho << "\nbase_new=" << c.base_new << "\nseed=" << c.seed
    << "\ntau=" << c.tau << "\nadapt_mode=" << c.adapt_mode
    << "\npretrain_per_class=" << c.pretrain_per_class
    << "\npretrain_epochs=" << c.pretrain_epochs
    << "\npretrain_lr=" << c.pretrain_lr
    << "\npretrain_batch=" << c.pretrain_batch << "\nlr=" << c.lr
    << "\nepochs=" << c.epochs << "\nbatch=" << c.batch
    << "\nsap_backend=" << c.sap_backend << "\nfixture_path=" << c.fixture_path
    << "\nendpoint=" << c.endpoint << "\nquery_images=" << c.query_images
    << "\npolicy_mode=" << c.policy_mode << "\ngamma=" << c.gamma
    << "\ndedup_threshold=" << c.dedup_threshold
    << "\nsas_enabled=" << c.sas_enabled << "\nprovider=" << c.provider
    << "\nretrieval_corpus_dir=" << c.retrieval_corpus_dir
    << "\nprompt_count=" << c.prompt_count
    << "\ncandidates_per_prompt=" << c.candidates_per_prompt
    << "\nshots_per_pseudo=" << c.shots_per_pseudo << "\nlambda=" << c.lambda
    << "\nselective=" << c.selective
    << "\nselective_fraction=" << c.selective_fraction
    << "\nfilter_prompts=" << c.filter_prompts
    << "\nsim_threshold=" << c.sim_threshold << "\n";
  return s.str();
}

std::string config_hash(const RunConfig& cfg) {
  return hex64(fnv1a64(canonical_config(cfg)));
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "config_resolved.txt");
  f << canonical_config(cfg) << "hash=" << config_hash(cfg) << "\n";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "prompt_adapter") return AdaptMode::prompt_adapter;
  if (s == "full") return AdaptMode::full;
  throw ConfigError("unknown adapt mode: " + s);
}

ThresholdPolicy policy_from(const RunConfig& cfg) {
  ThresholdPolicy p;
  if (cfg.policy_mode == "fixed")
    p.mode = ThresholdPolicy::Mode::fixed;
  else if (cfg.policy_mode == "adaptive")
    p.mode = ThresholdPolicy::Mode::adaptive;
  else
    throw ConfigError("unknown policy mode: " + cfg.policy_mode);
  p.gamma = cfg.gamma;
  return p;
}

std::vector<ClassPrompt> prompts_for(const RunConfig& cfg,
                                     const AttributePool& pool, bool filtered) {
  (void)cfg;
  return build_prompts(pool, filtered);
}

std::vector<SubsidiaryEntry> build_sas_entries(const RunConfig& cfg,
                                               const GroupedDataset& dataset,
                                               const AttributePool& pool,
                                               const std::map<int, double>& scr,
                                               const DualEncoderModel& model,
                                               const std::string& pseudo_dir) {
  std::set<int> selected;
  if (cfg.selective) {
    selected = select_categories_by_scr(scr, cfg.selective_fraction);
  } else {
    for (size_t c = 0; c < pool.categories.size(); ++c)
      selected.insert(static_cast<int>(c));
  }

  ShieldConfig scfg;
  scfg.provider = cfg.provider == "local_retrieval"
                      ? PseudoProvider::local_retrieval
                      : PseudoProvider::procedural_synthesis;
  scfg.prompt_count = cfg.prompt_count;
  scfg.candidates_per_prompt = cfg.candidates_per_prompt;
  scfg.shots_per_pseudo = cfg.shots_per_pseudo;
  scfg.seed = sub_seed(cfg.seed, "shield");

  RetrievalCorpus corpus;
  bool have_corpus = false;
  if (!cfg.retrieval_corpus_dir.empty()) {
    corpus = load_retrieval_corpus(cfg.retrieval_corpus_dir);
    have_corpus = true;
  }

  auto filtered_prompts = build_prompts(pool, cfg.filter_prompts);
  std::vector<SubsidiaryEntry> entries;
  for (int c : selected) {
    std::vector<Attribute> spurious;
    for (const auto& a : pool.attrs[c])
      if (a.kind == AttrKind::spurious) spurious.push_back(a);
    if (spurious.empty()) continue;
    std::vector<const Image*> shots;
    for (int i : dataset.train_of_class(c))
      shots.push_back(&dataset.samples[i].image);
    auto build = build_subsidiary_dataset(
        c, pool.categories[c], spurious, shots, filtered_prompts[c], scfg,
        model, have_corpus ? &corpus : nullptr);
    if (!pseudo_dir.empty()) {
      for (const auto& pc : build.pseudo) {
        fs::path dir = fs::path(pseudo_dir) /
                       ("cat" + std::to_string(c) + "_" +
                        slugify(pc.attribute.text));
        save_pseudo_category(pc, dir.string());
      }
    }
    entries.push_back(std::move(build.entry));
  }
  return entries;
}

void stage_datagen(const RunConfig& cfg) {
  auto ds = generate_dataset(cfg.generator, cfg.classes, cfg.shots,
                             cfg.test_per_class, cfg.rho,
                             sub_seed(cfg.seed, "dataset"));
  if (cfg.base_new) base_new_split(ds, sub_seed(cfg.seed, "split"));
  fs::create_directories(cfg.out_dir);
  export_dataset(ds, (fs::path(cfg.out_dir) / "dataset").string());
  write_resolved_config(cfg, cfg.out_dir);
}

void stage_pretrain(const RunConfig& cfg) {
  ModelConfig mcfg;
  mcfg.tau = cfg.tau;
  auto vocab = build_vocab(cfg.generator, cfg.classes);
  auto ds = load_stage_dataset(cfg);
  std::vector<std::string> names;
  for (const auto& c : ds.categories) names.push_back(c.name);
  auto model = DualEncoderModel::create(mcfg, vocab, names,
                                        sub_seed(cfg.seed, "init"));
  auto corpus = generate_pretrain_corpus(cfg.generator, cfg.classes,
                                         cfg.pretrain_per_class,
                                         sub_seed(cfg.seed, "corpus"));
  TrainConfig tcfg;
  tcfg.lr = cfg.pretrain_lr;
  tcfg.epochs = cfg.pretrain_epochs;
  tcfg.batch = cfg.pretrain_batch;
  tcfg.seed = sub_seed(cfg.seed, "pretrain");
  pretrain_contrastive(model, corpus, tcfg);
  model.save((fs::path(cfg.out_dir) / "base.ckpt").string());
  write_resolved_config(cfg, cfg.out_dir);
}

void stage_probe(const RunConfig& cfg) {
  auto ds = load_stage_dataset(cfg);
  auto model = load_base_model(cfg);
  AttributeSource source;
  if (cfg.sap_backend == "oracle") {
    source = AttributeSource::oracle_for(ds);
  } else if (cfg.sap_backend == "fixture") {
    source = AttributeSource::fixture_from(load_fixtures(cfg.fixture_path));
  } else if (cfg.sap_backend == "external_client") {
    source = AttributeSource::external(cfg.endpoint);
  } else {
    throw ConfigError("unknown sap backend: " + cfg.sap_backend);
  }
  auto result = run_sap(ds, source, model, policy_from(cfg), cfg.query_images,
                        cfg.dedup_threshold);
  save_pool(result.pool, (fs::path(cfg.out_dir) / "pool.json").string());
  json scr = json::object();
  for (const auto& [c, v] : result.scr) scr[std::to_string(c)] = v;
  std::ofstream f(fs::path(cfg.out_dir) / "scr.json");
  f << scr.dump(2) << "\n";
  write_resolved_config(cfg, cfg.out_dir);
}

void stage_shield(const RunConfig& cfg) {
  auto ds = load_stage_dataset(cfg);
  auto model = load_base_model(cfg);
  auto pool = load_stage_pool(cfg);
  auto scr = load_stage_scr(cfg);
  build_sas_entries(cfg, ds, pool, scr, model,
                    (fs::path(cfg.out_dir) / "pseudo").string());
  write_resolved_config(cfg, cfg.out_dir);
}

void stage_train(const RunConfig& cfg, bool shielded) {
  auto ds = load_stage_dataset(cfg);
  auto model = load_base_model(cfg);
  auto pool = load_stage_pool(cfg);

  bool filtered = shielded && cfg.filter_prompts;
  auto prompts = build_prompts(pool, filtered);
  TrainConfig tcfg;
  tcfg.lr = cfg.lr;
  tcfg.epochs = cfg.epochs;
  tcfg.batch = cfg.batch;
  tcfg.seed = sub_seed(cfg.seed, "fit");
  tcfg.mode = adapt_mode_from_string(cfg.adapt_mode);

  std::vector<double> trace;
  if (shielded && cfg.sas_enabled) {
    auto scr = load_stage_scr(cfg);
    auto entries = build_sas_entries(cfg, ds, pool, scr, model, "");
    SasOptions sas{&entries, cfg.lambda};
    trace = fit_main(model, ds, prompts, tcfg, &sas);
  } else {
    trace = fit_main(model, ds, prompts, tcfg, nullptr);
  }
  std::string name = shielded ? "shielded" : "baseline";
  model.save((fs::path(cfg.out_dir) / (name + ".ckpt")).string());
  json jtrace = trace;
  std::ofstream f(fs::path(cfg.out_dir) / ("trace_" + name + ".json"));
  f << jtrace.dump() << "\n";
}

void stage_eval(const RunConfig& cfg, bool shielded) {
  auto ds = load_stage_dataset(cfg);
  std::string name = shielded ? "shielded" : "baseline";
  fs::path ckpt = fs::path(cfg.out_dir) / (name + ".ckpt");
  if (!fs::exists(ckpt))
    throw InputError("missing trained checkpoint " + ckpt.string() +
                     "; run the train stage first");
  auto model = DualEncoderModel::load(ckpt.string());
  auto pool = load_stage_pool(cfg);
  bool filtered = shielded && cfg.filter_prompts;
  auto prompts = build_prompts(pool, filtered);
  auto report = make_report(model, ds, prompts, pool, cfg.sim_threshold,
                            cfg.seed, config_hash(cfg));
  save_report(report, (fs::path(cfg.out_dir) / ("report_" + name + ".json"))
                          .string());
  std::ofstream csv(fs::path(cfg.out_dir) / ("report_" + name + ".csv"));
  csv << "method,metric,value\n";
  csv << name << ",accuracy," << report.accuracy << "\n";
  csv << name << ",counter_accuracy," << report.counter_accuracy << "\n";
  csv << name << ",worst_group," << report.groups.worst << "\n";
  csv << name << ",avg_group," << report.groups.avg << "\n";
  csv << name << ",gap," << report.groups.gap << "\n";
}

void stage_all(const RunConfig& cfg) {
  stage_datagen(cfg);
  stage_pretrain(cfg);
  stage_probe(cfg);
  stage_shield(cfg);
  stage_train(cfg, false);
  stage_train(cfg, true);
  stage_eval(cfg, false);
  stage_eval(cfg, true);
}

}  // namespace spur
