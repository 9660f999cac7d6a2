#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pilot/dgm/activation_dgm.hpp"
#include "pilot/eval/calibration.hpp"
#include "pilot/harness/dataset.hpp"
#include "pilot/networks/classifier.hpp"
#include "pilot/trainer/trainer.hpp"

namespace pilot::harness {

enum class DatasetKind { synthetic_blobs, cifar10_binary, raw_tensor };

struct DatasetDescriptor {
  DatasetKind kind = DatasetKind::synthetic_blobs;
  std::filesystem::path path;       // cifar10 directory, or raw-tensor train file
  std::filesystem::path test_path;  // raw-tensor test file
  std::string test_name;            // overrides the test split's name in reports
  data::BlobsConfig blobs;
  data::Normalization normalization = data::Normalization::unit;
  std::size_t train_limit = 0;  // keep the first k examples (0: all)
  std::size_t test_limit = 0;
};

// Flat key = value configuration with dotted namespaces. Every key has a
// default; see help_text().
struct ExperimentConfig {
  ExperimentConfig();  // 4-class noisy blobs, epochs auto

  DatasetDescriptor dataset;
  net::ClassifierSpec model;  // input_shape and num_classes are taken from the data
  train::TrainConfig train;   // epochs == 0 selects 250 (mlp) or 100 (cnn)
  dgm::DgmConfig dgm;
  eval::EvalConfig eval;
  std::filesystem::path out = "run";
  std::uint64_t seed = 0;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Reads "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& source = "<config>");
  static ExperimentConfig parse(const std::string& text, const std::string& source = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);
  // Every key with its current value, in registry order.
  std::string serialize() const;

  // Copies the seed into the train/eval sections and fills derived defaults.
  void resolve();
  void validate() const;
};

std::string help_text();

// Loads both splits as described and applies normalisation and limits.
data::DatasetSplit load_dataset(const DatasetDescriptor& d);

// Fills input shape and class count from the data.
net::ClassifierSpec resolve_spec(const ExperimentConfig& cfg, const data::Dataset& train_set);

}  // namespace pilot::harness
