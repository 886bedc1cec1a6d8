#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spur/config.hpp"

namespace {

void add_config_options(CLI::App& app, spur::RunConfig& cfg) {
  app.set_config("--config", "", "Config file (INI/TOML sections)");
  app.add_option("--generator", cfg.generator,
                 "colored_mnist | shapes_on_textures")
      ->group("dataset");
  app.add_option("--classes", cfg.classes)->group("dataset");
  app.add_option("--shots", cfg.shots)->group("dataset");
  app.add_option("--test-per-class", cfg.test_per_class)->group("dataset");
  app.add_option("--rho", cfg.rho, "planted correlation strength")
      ->group("dataset");
  app.add_flag("--base-new", cfg.base_new, "apply a base/new category split")
      ->group("dataset");
  app.add_option("--seed", cfg.seed)->group("dataset");

  app.add_option("--tau", cfg.tau)->group("model");
  app.add_option("--adapt-mode", cfg.adapt_mode, "prompt_adapter | full")
      ->group("model");
  app.add_option("--pretrain-per-class", cfg.pretrain_per_class)->group("model");
  app.add_option("--pretrain-epochs", cfg.pretrain_epochs)->group("model");
  app.add_option("--pretrain-lr", cfg.pretrain_lr)->group("model");
  app.add_option("--pretrain-batch", cfg.pretrain_batch)->group("model");
  app.add_option("--lr", cfg.lr)->group("model");
  app.add_option("--epochs", cfg.epochs)->group("model");
  app.add_option("--batch", cfg.batch)->group("model");

  app.add_option("--sap-backend", cfg.sap_backend,
                 "oracle | fixture | external_client")
      ->group("sap");
  app.add_option("--fixture", cfg.fixture_path)->group("sap");
  app.add_option("--endpoint", cfg.endpoint)->group("sap");
  app.add_option("--query-images", cfg.query_images)->group("sap");
  app.add_option("--policy", cfg.policy_mode, "fixed | adaptive")->group("sap");
  app.add_option("--gamma", cfg.gamma)->group("sap");
  app.add_option("--dedup-threshold", cfg.dedup_threshold)->group("sap");

  app.add_flag("--sas,!--no-sas", cfg.sas_enabled)->group("sas");
  app.add_option("--provider", cfg.provider,
                 "procedural_synthesis | local_retrieval")
      ->group("sas");
  app.add_option("--retrieval-corpus", cfg.retrieval_corpus_dir)->group("sas");
  app.add_option("--prompt-count", cfg.prompt_count)->group("sas");
  app.add_option("--candidates-per-prompt", cfg.candidates_per_prompt)
      ->group("sas");
  app.add_option("--shots-per-pseudo", cfg.shots_per_pseudo)->group("sas");
  app.add_option("--lambda", cfg.lambda)->group("sas");
  app.add_flag("--selective", cfg.selective)->group("sas");
  app.add_option("--selective-fraction", cfg.selective_fraction)->group("sas");
  app.add_flag("--filter-prompts,!--no-filter-prompts", cfg.filter_prompts)
      ->group("sas");

  app.add_option("--sim-threshold", cfg.sim_threshold)->group("eval");
  app.add_option("--out", cfg.out_dir, "run output directory")->group("eval");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spurious-attribute probing and shielding on synthetic "
               "vision-language benchmarks"};
  app.require_subcommand(1);
  spur::RunConfig cfg;
  add_config_options(app, cfg);

  auto* cmd_datagen = app.add_subcommand("datagen", "generate the dataset");
  auto* cmd_pretrain =
      app.add_subcommand("pretrain", "contrastive warm-up checkpoint");
  auto* cmd_probe =
      app.add_subcommand("probe", "identify spurious attributes");
  auto* cmd_shield =
      app.add_subcommand("shield", "build pseudo categories");
  auto* cmd_train = app.add_subcommand("train", "fine-tune the model");
  bool train_shielded = false;
  cmd_train->add_flag("--shielded", train_shielded,
                      "train with the subsidiary objective");
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a trained model");
  bool eval_shielded = false;
  cmd_eval->add_flag("--shielded", eval_shielded,
                     "evaluate the shielded checkpoint");
  auto* cmd_report =
      app.add_subcommand("report", "compare EvalReports across run dirs");
  std::vector<std::string> report_dirs;
  cmd_report->add_option("dirs", report_dirs, "run directories")
      ->required()
      ->expected(-1);
  auto* cmd_all = app.add_subcommand("all", "run the whole pipeline");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_datagen->parsed()) {
      spur::stage_datagen(cfg);
    } else if (cmd_pretrain->parsed()) {
      spur::stage_pretrain(cfg);
    } else if (cmd_probe->parsed()) {
      spur::stage_probe(cfg);
    } else if (cmd_shield->parsed()) {
      spur::stage_shield(cfg);
    } else if (cmd_train->parsed()) {
      spur::stage_train(cfg, train_shielded);
    } else if (cmd_eval->parsed()) {
      spur::stage_eval(cfg, eval_shielded);
    } else if (cmd_report->parsed()) {
      std::vector<spur::EvalReport> reports;
      std::vector<std::string> names;
      for (const auto& dir : report_dirs) {
        for (const char* which : {"baseline", "shielded"}) {
          std::string path = dir + "/report_" + which + ".json";
          if (std::ifstream probe{path}; probe.good()) {
            reports.push_back(spur::load_report(path));
            names.push_back(dir + ":" + which);
          }
        }
      }
      if (reports.empty())
        throw spur::InputError("no EvalReport JSON found in given run dirs");
      std::fputs(spur::format_report_table(names, reports).c_str(), stdout);
    } else if (cmd_all->parsed()) {
      spur::stage_all(cfg);
    }
  } catch (const spur::SourceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
