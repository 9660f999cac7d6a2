#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pilot/eval/calibration.hpp"
#include "pilot/harness/config.hpp"

namespace pilot::harness {

struct TrainArtifacts {
  std::filesystem::path snapshot;
  std::filesystem::path log;
  std::filesystem::path checkpoint;  // final epoch
  train::TrainLog train_log;
};

// Writes <out>/config.snapshot, <out>/train_log.csv and
// <out>/checkpoints/epoch_<k>.ckpt.
TrainArtifacts cmd_train(ExperimentConfig cfg);

// Evaluates a checkpoint on the test split of cfg.dataset and writes
// <out>/report.json, bins.csv, entropy.csv and predictions.ptns.
eval::CalibrationReport cmd_eval(const std::filesystem::path& checkpoint, ExperimentConfig cfg,
                                 const std::string& model_name = "");
eval::CalibrationReport cmd_eval(const train::ModelBundle& model, ExperimentConfig cfg,
                                 const std::string& model_name = "");

struct CompareRow {
  std::string model;
  // cifar10 slot first, svhn slot second; NaN where missing.
  double acc[2], nll[2], ece[2];
};

// Side-by-side table with one row per model name. Reports whose dataset
// name contains "svhn" fill the second slot, everything else the first.
std::vector<CompareRow> compare_rows(const std::vector<eval::CalibrationReport>& reports);
std::string compare_csv(const std::vector<CompareRow>& rows);
// Reads the reports and writes the CSV; with_reference appends the published
// reference rows. Returns the CSV text.
std::string cmd_compare(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out_csv,
                        bool with_reference = false);

// Published reference figures (means only), kept as fixtures.
const std::vector<CompareRow>& reference_rows();

// Averages prediction containers and writes the ensemble's report files to out_dir.
eval::CalibrationReport cmd_ensemble(const std::vector<std::filesystem::path>& predictions,
                                     const std::filesystem::path& out_dir, std::size_t bins = 10,
                                     std::size_t entropy_bins = 10);

}  // namespace pilot::harness
