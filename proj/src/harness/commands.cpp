#include "pilot/harness/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "pilot/core/error.hpp"

namespace pilot::harness {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.ckpt", epoch);
  return buf;
}

void save_bundle(const train::ModelBundle& b, const std::string& snapshot, const fs::path& path) {
  io::Container c = b.to_container();
  c.meta()["config"] = snapshot;
  c.save(path);
}

std::string default_name(const train::ModelBundle& b, const eval::EvalConfig& e) {
  std::string name = train::to_string(b.train.method);
  if (e.mode == eval::EvalMode::pilot_mc) name += "_mc";
  if (e.mode == eval::EvalMode::mc_dropout) name = "mc_dropout";
  if (train::uses_mask(b.train.method)) {
    std::string m = mask::to_string(b.train.mask.mode);
    std::replace(m.begin(), m.end(), '_', '-');
    name += " " + m;
  }
  return name;
}

std::string cell(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool is_svhn(const std::string& dataset) {
  std::string s = dataset;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s.find("svhn") != std::string::npos;
}

}  // namespace

TrainArtifacts cmd_train(ExperimentConfig cfg) {
  cfg.resolve();
  cfg.validate();
  data::DatasetSplit split = load_dataset(cfg.dataset);
  const net::ClassifierSpec spec = resolve_spec(cfg, split.train);
  const fs::path ckpt_dir = cfg.out / "checkpoints";
  fs::create_directories(ckpt_dir);

  TrainArtifacts art;
  const std::string snapshot = cfg.serialize();
  art.snapshot = cfg.out / "config.snapshot";
  write_text(art.snapshot, snapshot);

  const std::size_t every = cfg.train.checkpoint_every;
  const std::size_t last = cfg.train.epochs;
  auto hook = [&](const train::ModelBundle& b, const train::EpochRow& row) {
    if (every && row.epoch % every == 0 && row.epoch != last) save_bundle(b, snapshot, ckpt_dir / checkpoint_name(row.epoch));
  };
  train::TrainResult result = train::train(cfg.train, spec, cfg.dgm, split.train, &split.test, hook);
  result.model.config_text = snapshot;

  art.checkpoint = ckpt_dir / checkpoint_name(last);
  result.model.save(art.checkpoint);
  art.log = cfg.out / "train_log.csv";
  result.log.write_csv(art.log);
  art.train_log = std::move(result.log);
  return art;
}

eval::CalibrationReport cmd_eval(const fs::path& checkpoint, ExperimentConfig cfg, const std::string& model_name) {
  return cmd_eval(train::ModelBundle::load(checkpoint), std::move(cfg), model_name);
}

eval::CalibrationReport cmd_eval(const train::ModelBundle& bundle, ExperimentConfig cfg, const std::string& model_name) {
  cfg.resolve();
  if (cfg.eval.mc_samples == 0) throw ConfigError("eval.mc_samples", "must be at least 1");
  data::DatasetSplit split = load_dataset(cfg.dataset);
  if (split.test.sample_shape != bundle.spec.input_shape) {
    throw DataError("test inputs " + ad::shape_str(split.test.sample_shape) + " do not match the model's " +
                    ad::shape_str(bundle.spec.input_shape));
  }
  const std::string name = model_name.empty() ? default_name(bundle, cfg.eval) : model_name;
  const eval::PredictionMatrix preds = eval::predict(bundle, split.test, cfg.eval, name);
  eval::CalibrationReport r = eval::report(preds, cfg.eval.bins, cfg.eval.entropy_bins);
  r.dataset = split.test.name;
  r.mode = eval::to_string(cfg.eval.mode);
  r.mc_samples = cfg.eval.mode == eval::EvalMode::deterministic ? 1 : cfg.eval.mc_samples;

  fs::create_directories(cfg.out);
  r.write_json(cfg.out / "report.json");
  write_text(cfg.out / "bins.csv", r.bins_csv());
  write_text(cfg.out / "entropy.csv", r.entropy_csv());
  preds.save(cfg.out / "predictions.ptns");
  return r;
}

std::vector<CompareRow> compare_rows(const std::vector<eval::CalibrationReport>& reports) {
  std::vector<CompareRow> rows;
  std::map<std::string, std::size_t> index;
  const double nan = std::nan("");
  for (const auto& r : reports) {
    auto [it, fresh] = index.try_emplace(r.model, rows.size());
    if (fresh) rows.push_back({r.model, {nan, nan}, {nan, nan}, {nan, nan}});
    CompareRow& row = rows[it->second];
    const int slot = is_svhn(r.dataset) ? 1 : 0;
    row.acc[slot] = r.accuracy;
    row.nll[slot] = r.nll;
    row.ece[slot] = r.ece;
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = "model,acc_cifar10,acc_svhn,nll_cifar10,nll_svhn,ece_cifar10,ece_svhn\n";
  for (const auto& r : rows) {
    std::string name = r.model;
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      name = q + "\"";
    }
    out += name + ',' + cell(r.acc[0]) + ',' + cell(r.acc[1]) + ',' + cell(r.nll[0]) + ',' + cell(r.nll[1]) + ',' +
           cell(r.ece[0]) + ',' + cell(r.ece[1]) + '\n';
  }
  return out;
}

std::string cmd_compare(const std::vector<fs::path>& reports, const fs::path& out_csv, bool with_reference) {
  if (reports.empty() && !with_reference) throw UsageError("compare: no reports given");
  std::vector<eval::CalibrationReport> loaded;
  for (const auto& p : reports) loaded.push_back(eval::CalibrationReport::read_json(p));
  std::vector<CompareRow> rows = compare_rows(loaded);
  if (with_reference) rows.insert(rows.end(), reference_rows().begin(), reference_rows().end());
  const std::string csv = compare_csv(rows);
  if (!out_csv.empty()) {
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    write_text(out_csv, csv);
  }
  return csv;
}

const std::vector<CompareRow>& reference_rows() {
  // Means of the published CNN and MLP results: acc, nll, ece as
  // {cifar10, svhn} pairs.
  static const std::vector<CompareRow> rows = {
      {"reference cnn vanilla", {0.630, 0.846}, {3.54, 1.69}, {0.308, 0.122}},
      {"reference cnn pilot a-aug", {0.701, 0.881}, {0.87, 0.44}, {0.012, 0.033}},
      {"reference cnn pilot a-drop", {0.454, 0.200}, {1.59, 2.29}, {0.096, 0.092}},
      {"reference cnn pilot x-aug", {0.648, 0.861}, {1.49, 0.64}, {0.210, 0.066}},
      {"reference cnn pilot x-drop", {0.625, 0.844}, {1.15, 0.55}, {0.116, 0.019}},
      {"reference cnn add a-aug", {0.641, 0.858}, {4.80, 1.05}, {0.199, 0.065}},
      {"reference cnn add a-drop", {0.630, 0.850}, {2.05, 0.89}, {0.249, 0.081}},
      {"reference cnn add x-drop", {0.609, 0.844}, {1.44, 0.56}, {0.184, 0.033}},
      {"reference cnn sub a-drop", {0.403, 0.748}, {1.43, 1.52}, {0.490, 0.155}},
      {"reference cnn sub x-drop", {0.521, 0.742}, {1.97, 0.88}, {0.199, 0.032}},
      {"reference cnn dropout", {0.629, 0.850}, {3.57, 1.68}, {0.308, 0.121}},
      {"reference cnn l2", {0.629, 0.847}, {3.59, 1.69}, {0.308, 0.123}},
      {"reference cnn batch_norm", {0.631, 0.846}, {4.60, 2.12}, {0.230, 0.054}},
      {"reference cnn data_aug", {0.646, 0.750}, {1.027, 0.77}, {0.016, 0.009}},
      {"reference cnn pilot_mc a-aug", {0.700, 0.877}, {0.94, 0.53}, {0.089, 0.120}},
      {"reference cnn pilot_mc a-drop", {0.453, 0.196}, {1.57, 2.25}, {0.065, 0.087}},
      {"reference cnn add_mc a-aug", {0.576, 0.860}, {1.67, 0.56}, {0.063, 0.017}},
      {"reference cnn add_mc a-drop", {0.636, 0.854}, {1.73, 0.73}, {0.199, 0.0528}},
      {"reference cnn mc_dropout", {0.579, 0.795}, {1.69, 0.93}, {0.065, 0.067}},
      {"reference cnn ensemble", {0.683, 0.870}, {0.96, 0.51}, {0.025, 0.060}},
      {"reference mlp vanilla", {0.581, 0.848}, {4.78, 2.17}, {0.470, 0.127}},
      {"reference mlp pilot a-aug", {0.601, 0.858}, {1.22, 0.53}, {0.056, 0.014}},
      {"reference mlp pilot a-drop", {0.517, 0.794}, {1.36, 0.79}, {0.110, 0.029}},
      {"reference mlp pilot x-aug", {0.565, 0.851}, {2.42, 1.16}, {0.288, 0.057}},
      {"reference mlp pilot x-drop", {0.570, 0.837}, {2.14, 0.72}, {0.284, 0.057}},
      {"reference mlp add a-aug", {0.578, 0.843}, {2.76, 0.78}, {0.301, 0.077}},
      {"reference mlp add a-drop", {0.578, 0.849}, {4.26, 1.48}, {0.345, 0.114}},
      {"reference mlp add x-drop", {0.547, 0.841}, {2.99, 0.75}, {0.307, 0.067}},
      {"reference mlp sub a-drop", {0.462, 0.737}, {4.23, 1.92}, {0.403, 0.143}},
      {"reference mlp sub x-drop", {0.499, 0.765}, {2.22, 0.80}, {0.279, 0.029}},
      {"reference mlp dropout", {0.570, 0.837}, {4.88, 1.27}, {0.480, 0.116}},
      {"reference mlp l2", {0.574, 0.847}, {4.74, 2.12}, {0.479, 0.127}},
      {"reference mlp batch_norm", {0.579, 0.848}, {4.55, 2.04}, {0.570, 0.162}},
      {"reference mlp data_aug", {0.566, 0.731}, {1.36, 0.91}, {0.231, 0.055}},
      {"reference mlp pilot_mc a-aug", {0.598, 0.855}, {1.24, 0.56}, {0.036, 0.042}},
      {"reference mlp pilot_mc a-drop", {0.519, 0.761}, {1.37, 0.84}, {0.066, 0.107}},
      {"reference mlp add_mc a-aug", {0.576, 0.839}, {2.65, 0.73}, {0.296, 0.056}},
      {"reference mlp add_mc a-drop", {0.583, 0.847}, {3.70, 1.12}, {0.335, 0.087}},
      {"reference mlp mc_dropout", {0.509, 0.784}, {2.19, 1.07}, {0.085, 0.080}},
      {"reference mlp ensemble", {0.518, 0.850}, {1.58, 1.68}, {0.027, 0.155}},
  };
  return rows;
}

eval::CalibrationReport cmd_ensemble(const std::vector<fs::path>& predictions, const fs::path& out_dir, std::size_t bins,
                                     std::size_t entropy_bins) {
  if (predictions.empty()) throw UsageError("ensemble: no prediction files given");
  std::vector<eval::PredictionMatrix> members;
  for (const auto& p : predictions) members.push_back(eval::PredictionMatrix::load(p));
  const eval::PredictionMatrix joint = eval::ensemble_predict(members);
  eval::CalibrationReport r = eval::report(joint, bins, entropy_bins);
  r.mode = "ensemble";
  r.mc_samples = members.size();
  fs::create_directories(out_dir);
  r.write_json(out_dir / "report.json");
  write_text(out_dir / "bins.csv", r.bins_csv());
  write_text(out_dir / "entropy.csv", r.entropy_csv());
  joint.save(out_dir / "predictions.ptns");
  return r;
}

}  // namespace pilot::harness
