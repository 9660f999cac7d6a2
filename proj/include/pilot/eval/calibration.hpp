#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pilot/autodiff/tensor.hpp"
#include "pilot/harness/dataset.hpp"
#include "pilot/trainer/trainer.hpp"

namespace pilot::eval {

struct PredictionMatrix {
  ad::Tensor probs;  // [N, C]
  std::vector<int> labels;
  std::string model;
  std::string dataset;

  std::size_t rows() const { return probs.rank() ? probs.dim(0) : 0; }
  std::size_t classes() const { return probs.rank() > 1 ? probs.dim(1) : 0; }
  // Rows sum to 1 within tol, labels in range.
  void validate(double tol = 1e-9) const;
  double confidence(std::size_t row) const;
  int predicted(std::size_t row) const;

  void save(const std::filesystem::path& path) const;
  static PredictionMatrix load(const std::filesystem::path& path);
};

struct BinStats {
  double lo = 0, hi = 0;
  std::size_t count = 0;
  double acc = 0, conf = 0;  // 0 for empty bins
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

// M equal-width right-closed bins over [0, 1]; bin m is (m/M, (m+1)/M], with
// the first bin also holding 0.
std::vector<BinStats> bin_reliability(const PredictionMatrix& p, std::size_t bins);
double ece(const PredictionMatrix& p, std::size_t bins = 10);
double ece(std::span<const BinStats> bins);
double nll(const PredictionMatrix& p);
double accuracy(const PredictionMatrix& p);
std::vector<double> entropies(const PredictionMatrix& p);
// Over [0, ln C]; values are clamped into range.
Histogram entropy_histogram(const PredictionMatrix& p, std::size_t bins = 10);

enum class EvalMode { deterministic, pilot_mc, mc_dropout };
std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& name);

// Mean softmax output over n_samples stochastic passes. With
// disable_stochastic every pass is the deterministic one.
ad::Tensor mc_predict(const train::ModelBundle& model, const ad::Tensor& x, std::size_t n_samples, EvalMode mode,
                      Rng& rng, bool disable_stochastic = false);

PredictionMatrix ensemble_predict(std::span<const PredictionMatrix> members);

struct EvalConfig {
  EvalMode mode = EvalMode::deterministic;
  std::size_t mc_samples = 10;
  std::size_t bins = 10;
  std::size_t entropy_bins = 10;
  std::size_t batch_size = 500;
  std::uint64_t seed = 0;
};

PredictionMatrix predict(const train::ModelBundle& model, const data::Dataset& d, const EvalConfig& config,
                         const std::string& name = "model");

struct CalibrationReport {
  std::string model;
  std::string dataset;
  std::string mode;
  std::size_t mc_samples = 0;
  std::size_t n = 0;
  double accuracy = 0, nll = 0, ece = 0;
  std::vector<BinStats> bins;
  Histogram entropy;

  nlohmann::json to_json() const;
  static CalibrationReport from_json(const nlohmann::json& j);
  void write_json(const std::filesystem::path& path) const;
  static CalibrationReport read_json(const std::filesystem::path& path);
  std::string bins_csv() const;
  std::string entropy_csv() const;
};

CalibrationReport report(const PredictionMatrix& p, std::size_t bins = 10, std::size_t entropy_bins = 10);
CalibrationReport evaluate(const train::ModelBundle& model, const data::Dataset& test, const EvalConfig& config,
                           const std::string& name = "model");

}  // namespace pilot::eval
