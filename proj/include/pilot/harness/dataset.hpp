#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pilot/autodiff/tensor.hpp"

namespace pilot::data {

// Examples stacked along axis 0; images are channel-major {C, H, W}.
struct Dataset {
  std::string name;
  ad::Tensor x;            // [N, ...sample_shape]
  std::vector<int> y;      // N labels in [0, num_classes)
  ad::Shape sample_shape;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return y.size(); }
  bool is_image() const noexcept { return sample_shape.size() == 3; }
  void validate() const;
  Dataset subset(std::span<const std::size_t> index) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// CIFAR-10 binary distribution: records of 1 label byte + 3072 pixel bytes.
inline constexpr std::size_t kCifarRecordBytes = 3073;

// Parses one CIFAR-10 batch file; pixels scaled to [0, 1].
Dataset load_cifar10_file(const std::filesystem::path& path);
// Directory holding data_batch_1..5.bin and test_batch.bin.
DatasetSplit load_cifar10(const std::filesystem::path& dir);

// Container file with tensors "images" [N, C, H, W] (u8 scaled by 1/255, or
// float kept as is) and "labels" [N]. meta.num_classes is optional.
Dataset load_raw_tensor(const std::filesystem::path& path);
void save_raw_tensor(const Dataset& d, const std::filesystem::path& path, bool as_bytes = false);

struct BlobsConfig {
  std::size_t n_classes = 2;
  std::size_t n_per_class = 100;
  std::size_t n_test_per_class = 100;
  std::size_t dim = 2;
  double separation = 4.0;   // distance between any two class means, in units of the noise sd
  double label_noise = 0.0;  // probability of relabelling to a different class
  std::uint64_t seed = 0;
};

// Isotropic unit-variance Gaussian clusters whose means sit at the vertices of
// a regular simplex (scaled basis vectors), so every pair of means is
// `separation` apart.
DatasetSplit synth_blobs(const BlobsConfig& config);

// Bayes accuracy of the clean (noise-free) blob problem by quadrature of
// P(correct) = int phi(t) Phi(t + separation / sqrt 2)^(C-1) dt.
double blobs_bayes_accuracy(std::size_t n_classes, double separation);

enum class Normalization { none, unit, standard };

// unit: nothing further (loaders already scale bytes to [0,1]).
// standard: per-channel (image) or per-feature (flat) mean/std taken from the
// train split and applied to both splits.
void normalize(DatasetSplit& split, Normalization mode);

}  // namespace pilot::data
