#include "pilot/pilot.h"

#include <cstring>
#include <fstream>
#include <filesystem>
#include <new>
#include <string>

#include "json.hpp"
#include "pilot/autodiff/ops.hpp"
#include "pilot/core/error.hpp"
#include "pilot/harness/commands.hpp"

struct pilot_config {
  pilot::harness::ExperimentConfig cfg;
};

struct pilot_model {
  pilot::train::ModelBundle bundle;
};

struct pilot_report {
  pilot::eval::CalibrationReport report;
};

namespace {

thread_local std::string g_last_error;

pilot_status fail(pilot_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

// Runs f, translating exceptions into status codes.
template <class F>
pilot_status guard(F&& f) {
  try {
    f();
    return PILOT_OK;
  } catch (const pilot::Error& e) {
    switch (e.kind()) {
      case pilot::ErrorKind::usage: return fail(PILOT_ERR_USAGE, e.what());
      case pilot::ErrorKind::data: return fail(PILOT_ERR_DATA, e.what());
      case pilot::ErrorKind::numerical: return fail(PILOT_ERR_NUMERIC, e.what());
      default: return fail(PILOT_ERR_INTERNAL, e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    return fail(PILOT_ERR_DATA, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(PILOT_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PILOT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PILOT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PILOT_ERR_INTERNAL, "unknown error");
  }
}

pilot_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf && cap == 0) return PILOT_OK;
  if (!buf || cap < s.size() + 1) return fail(PILOT_ERR_USAGE, "buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return PILOT_OK;
}

#define PILOT_REQUIRE(ptr) \
  if (!(ptr)) return fail(PILOT_ERR_USAGE, #ptr " is null")

}  // namespace

extern "C" {

const char* pilot_version(void) { return "0.1.0"; }

const char* pilot_last_error(void) { return g_last_error.c_str(); }

pilot_status pilot_set_num_threads(size_t n) {
  return guard([&] { pilot::ad::set_num_threads(n == 0 ? 1 : n); });
}

pilot_status pilot_config_create(pilot_config** out) {
  PILOT_REQUIRE(out);
  return guard([&] { *out = new pilot_config{}; });
}

pilot_status pilot_config_load(const char* path, pilot_config** out) {
  PILOT_REQUIRE(path);
  PILOT_REQUIRE(out);
  return guard([&] { *out = new pilot_config{pilot::harness::ExperimentConfig::load(path)}; });
}

pilot_status pilot_config_parse(const char* text, pilot_config** out) {
  PILOT_REQUIRE(text);
  PILOT_REQUIRE(out);
  return guard([&] { *out = new pilot_config{pilot::harness::ExperimentConfig::parse(text)}; });
}

pilot_status pilot_config_set(pilot_config* cfg, const char* key, const char* value) {
  PILOT_REQUIRE(cfg);
  PILOT_REQUIRE(key);
  PILOT_REQUIRE(value);
  return guard([&] { cfg->cfg.set(key, value); });
}

pilot_status pilot_config_get(const pilot_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  PILOT_REQUIRE(cfg);
  PILOT_REQUIRE(key);
  std::string v;
  if (const pilot_status s = guard([&] { v = cfg->cfg.get(key); }); s != PILOT_OK) return s;
  return copy_out(v, buf, cap, needed);
}

pilot_status pilot_config_serialize(const pilot_config* cfg, char* buf, size_t cap, size_t* needed) {
  PILOT_REQUIRE(cfg);
  return copy_out(cfg->cfg.serialize(), buf, cap, needed);
}

pilot_status pilot_config_write(const pilot_config* cfg, const char* path) {
  PILOT_REQUIRE(cfg);
  PILOT_REQUIRE(path);
  return guard([&] {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw pilot::DataError(std::string("cannot write ") + path);
    out << cfg->cfg.serialize();
  });
}

const char* pilot_config_help(void) {
  static const std::string text = pilot::harness::help_text();
  return text.c_str();
}

void pilot_config_destroy(pilot_config* cfg) { delete cfg; }

pilot_status pilot_train(const pilot_config* cfg, pilot_model** out) {
  PILOT_REQUIRE(cfg);
  return guard([&] {
    const auto art = pilot::harness::cmd_train(cfg->cfg);
    if (out) *out = new pilot_model{pilot::train::ModelBundle::load(art.checkpoint)};
  });
}

pilot_status pilot_model_load(const char* checkpoint, pilot_model** out) {
  PILOT_REQUIRE(checkpoint);
  PILOT_REQUIRE(out);
  return guard([&] { *out = new pilot_model{pilot::train::ModelBundle::load(checkpoint)}; });
}

pilot_status pilot_model_save(const pilot_model* model, const char* path) {
  PILOT_REQUIRE(model);
  PILOT_REQUIRE(path);
  return guard([&] { model->bundle.save(path); });
}

pilot_status pilot_model_config(const pilot_model* model, pilot_config** out) {
  PILOT_REQUIRE(model);
  PILOT_REQUIRE(out);
  return guard([&] { *out = new pilot_config{pilot::harness::ExperimentConfig::parse(model->bundle.config_text, "checkpoint")}; });
}

int pilot_model_has_dgm(const pilot_model* model) { return model && model->bundle.dgm ? 1 : 0; }

void pilot_model_destroy(pilot_model* model) { delete model; }

pilot_status pilot_evaluate(const pilot_model* model, const pilot_config* cfg, const char* name, pilot_report** out) {
  PILOT_REQUIRE(model);
  PILOT_REQUIRE(cfg);
  return guard([&] {
    auto r = pilot::harness::cmd_eval(model->bundle, cfg->cfg, name ? name : "");
    if (out) *out = new pilot_report{std::move(r)};
  });
}

double pilot_report_accuracy(const pilot_report* r) { return r ? r->report.accuracy : 0.0; }
double pilot_report_nll(const pilot_report* r) { return r ? r->report.nll : 0.0; }
double pilot_report_ece(const pilot_report* r) { return r ? r->report.ece : 0.0; }

pilot_status pilot_report_json(const pilot_report* r, char* buf, size_t cap, size_t* needed) {
  PILOT_REQUIRE(r);
  return copy_out(r->report.to_json().dump(2), buf, cap, needed);
}

pilot_status pilot_report_write_json(const pilot_report* r, const char* path) {
  PILOT_REQUIRE(r);
  PILOT_REQUIRE(path);
  return guard([&] { r->report.write_json(path); });
}

void pilot_report_destroy(pilot_report* r) { delete r; }

pilot_status pilot_compare(const char* const* report_paths, size_t n, int with_reference, const char* out_csv) {
  if (n > 0) PILOT_REQUIRE(report_paths);
  PILOT_REQUIRE(out_csv);
  return guard([&] {
    std::vector<std::filesystem::path> paths(report_paths, report_paths + n);
    pilot::harness::cmd_compare(paths, out_csv, with_reference != 0);
  });
}

pilot_status pilot_ensemble(const char* const* prediction_paths, size_t n, const char* out_dir, pilot_report** out) {
  if (n > 0) PILOT_REQUIRE(prediction_paths);
  PILOT_REQUIRE(out_dir);
  return guard([&] {
    std::vector<std::filesystem::path> paths(prediction_paths, prediction_paths + n);
    auto r = pilot::harness::cmd_ensemble(paths, out_dir);
    if (out) *out = new pilot_report{std::move(r)};
  });
}

}  // extern "C"
