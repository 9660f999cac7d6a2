// pilot: command-line front end over the C API.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pilot/pilot.h"

namespace {

struct ConfigDeleter {
  void operator()(pilot_config* c) const { pilot_config_destroy(c); }
};
struct ModelDeleter {
  void operator()(pilot_model* m) const { pilot_model_destroy(m); }
};
struct ReportDeleter {
  void operator()(pilot_report* r) const { pilot_report_destroy(r); }
};
using ConfigPtr = std::unique_ptr<pilot_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<pilot_model, ModelDeleter>;
using ReportPtr = std::unique_ptr<pilot_report, ReportDeleter>;

// Thrown to unwind with a status once the message has been printed.
struct Exit {
  int code;
};

void check(pilot_status s) {
  if (s == PILOT_OK) return;
  std::fprintf(stderr, "pilot: error: %s\n", pilot_last_error());
  throw Exit{static_cast<int>(s)};
}

std::string get(const pilot_config* cfg, const char* key) {
  size_t need = 0;
  check(pilot_config_get(cfg, key, nullptr, 0, &need));
  std::string s(need, '\0');
  check(pilot_config_get(cfg, key, s.data(), s.size(), &need));
  s.resize(need - 1);
  return s;
}

void apply_sets(pilot_config* cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "pilot: error: --set expects key=value, got '%s'\n", kv.c_str());
      throw Exit{PILOT_ERR_USAGE};
    }
    check(pilot_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
}

struct Common {
  std::string config;
  std::string out;
  std::string method;
  std::vector<std::string> sets;
  long long seed = -1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  cmd->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
  cmd->add_flag("--deterministic", c.deterministic, "Single-threaded kernels");
}

void apply_common(pilot_config* cfg, const Common& c) {
  apply_sets(cfg, c.sets);
  if (!c.method.empty()) check(pilot_config_set(cfg, "train.method", c.method.c_str()));
  if (c.seed >= 0) check(pilot_config_set(cfg, "seed", std::to_string(c.seed).c_str()));
  if (!c.out.empty()) check(pilot_config_set(cfg, "out", c.out.c_str()));
  if (c.deterministic) check(pilot_set_num_threads(1));
}

void print_report(const pilot_report* r) {
  std::printf("accuracy %.4f  nll %.4f  ece %.4f\n", pilot_report_accuracy(r), pilot_report_nll(r), pilot_report_ece(r));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pilot: classifier training with activation imputation, plus calibration evaluation"};
  app.require_subcommand(1);
  app.footer(std::string("\nEnvironment: PILOT_NUM_THREADS caps kernel threads.\n\n") + pilot_config_help());

  Common train_opts;
  CLI::App* train = app.add_subcommand("train", "Train a model; writes config.snapshot, train_log.csv, checkpoints/");
  train->add_option("--config", train_opts.config, "Config file (key = value lines)");
  train->add_option("--method", train_opts.method, "Training method (overrides the config)");
  add_common(train, train_opts);

  Common eval_opts;
  std::string checkpoint, name, mode;
  long long mc_samples = -1;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json, bins.csv, entropy.csv");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--config", eval_opts.config, "Config file (default: the one stored in the checkpoint)");
  ev->add_option("--mc-samples", mc_samples,
                 "MC samples; selects pilot_mc (DGM models) or mc_dropout when eval.mode is deterministic");
  ev->add_option("--mode", mode, "deterministic | pilot_mc | mc_dropout");
  ev->add_option("--name", name, "Model name in the report");
  add_common(ev, eval_opts);

  std::vector<std::string> reports;
  std::string compare_out = "compare.csv";
  bool reference = false;
  CLI::App* cmp = app.add_subcommand("compare", "Side-by-side CSV of report.json files");
  cmp->add_option("reports", reports, "report.json files");
  cmp->add_option("--out", compare_out, "Output CSV");
  cmp->add_flag("--reference", reference, "Append the published reference rows");

  std::vector<std::string> preds;
  std::string ens_out = "ensemble";
  CLI::App* ens = app.add_subcommand("ensemble", "Uniformly average predictions.ptns files");
  ens->add_option("predictions", preds, "predictions.ptns files")->required();
  ens->add_option("--out", ens_out, "Output directory");

  CLI::App* help_cfg = app.add_subcommand("config", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : PILOT_ERR_USAGE;
  }

  try {
    if (*help_cfg) {
      std::fputs(pilot_config_help(), stdout);
    } else if (*train) {
      pilot_config* raw = nullptr;
      check(train_opts.config.empty() ? pilot_config_create(&raw) : pilot_config_load(train_opts.config.c_str(), &raw));
      ConfigPtr cfg(raw);
      apply_common(cfg.get(), train_opts);
      pilot_model* m = nullptr;
      check(pilot_train(cfg.get(), &m));
      ModelPtr model(m);
      std::printf("trained; artifacts in %s\n", get(cfg.get(), "out").c_str());
    } else if (*ev) {
      pilot_model* m = nullptr;
      check(pilot_model_load(checkpoint.c_str(), &m));
      ModelPtr model(m);
      pilot_config* raw = nullptr;
      check(eval_opts.config.empty() ? pilot_model_config(model.get(), &raw)
                                     : pilot_config_load(eval_opts.config.c_str(), &raw));
      ConfigPtr cfg(raw);
      apply_common(cfg.get(), eval_opts);
      if (!mode.empty()) check(pilot_config_set(cfg.get(), "eval.mode", mode.c_str()));
      if (mc_samples >= 0) {
        check(pilot_config_set(cfg.get(), "eval.mc_samples", std::to_string(mc_samples).c_str()));
        if (get(cfg.get(), "eval.mode") == "deterministic") {
          check(pilot_config_set(cfg.get(), "eval.mode", pilot_model_has_dgm(model.get()) ? "pilot_mc" : "mc_dropout"));
        }
      }
      pilot_report* r = nullptr;
      check(pilot_evaluate(model.get(), cfg.get(), name.empty() ? nullptr : name.c_str(), &r));
      ReportPtr report(r);
      print_report(report.get());
      std::printf("report in %s\n", get(cfg.get(), "out").c_str());
    } else if (*cmp) {
      std::vector<const char*> paths;
      for (const auto& p : reports) paths.push_back(p.c_str());
      check(pilot_compare(paths.data(), paths.size(), reference ? 1 : 0, compare_out.c_str()));
      std::printf("wrote %s\n", compare_out.c_str());
    } else if (*ens) {
      std::vector<const char*> paths;
      for (const auto& p : preds) paths.push_back(p.c_str());
      pilot_report* r = nullptr;
      check(pilot_ensemble(paths.data(), paths.size(), ens_out.c_str(), &r));
      ReportPtr report(r);
      print_report(report.get());
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return 0;
}
