#include "pilot/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "pilot/core/error.hpp"
#include "pilot/core/rng.hpp"
#include "pilot/networks/tensor_container.hpp"

namespace pilot::data {

void Dataset::validate() const {
  const std::size_t n = y.size();
  if (x.rank() == 0 || x.dim(0) != n) {
    throw DataError("dataset '" + name + "': " + std::to_string(n) + " labels for inputs of shape " + ad::shape_str(x.shape()));
  }
  if (n > 0 && x.size() / n != ad::shape_size(sample_shape)) {
    throw DataError("dataset '" + name + "': inputs " + ad::shape_str(x.shape()) + " do not match sample shape " +
                    ad::shape_str(sample_shape));
  }
  if (num_classes == 0) throw DataError("dataset '" + name + "': number of classes is zero");
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= num_classes) {
      throw DataError("dataset '" + name + "': label " + std::to_string(y[i]) + " at index " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  Dataset d{name, x.gather_rows(index), {}, sample_shape, num_classes};
  d.y.reserve(index.size());
  for (std::size_t i : index) d.y.push_back(y.at(i));
  return d;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset concat(std::vector<Dataset> parts, std::string name) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Dataset out{std::move(name), ad::Tensor({n, 3, 32, 32}), {}, {3, 32, 32}, 10};
  out.y.reserve(n);
  double* dst = out.x.storage().data();
  for (const auto& p : parts) {
    dst = std::copy(p.x.storage().data(), p.x.storage().data() + p.x.size(), dst);
    out.y.insert(out.y.end(), p.y.begin(), p.y.end());
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const std::size_t whole = bytes.size() / kCifarRecordBytes;
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(path.string() + ": truncated record at byte offset " + std::to_string(whole * kCifarRecordBytes) +
                    " (file is " + std::to_string(bytes.size()) + " bytes, records are " +
                    std::to_string(kCifarRecordBytes) + ")");
  }
  if (whole == 0) throw DataError(path.string() + ": no records");
  Dataset d{path.filename().string(), ad::Tensor({whole, 3, 32, 32}), std::vector<int>(whole), {3, 32, 32}, 10};
  double* px = d.x.storage().data();
  for (std::size_t r = 0; r < whole; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    const int label = bytes[off];
    if (label > 9) {
      throw DataError(path.string() + ": label " + std::to_string(label) + " at byte offset " + std::to_string(off));
    }
    d.y[r] = label;
    for (std::size_t i = 0; i < kCifarRecordBytes - 1; ++i) px[r * 3072 + i] = bytes[off + 1 + i] / 255.0;
  }
  return d;
}

DatasetSplit load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) train.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  DatasetSplit s{concat(std::move(train), "cifar10-train"), load_cifar10_file(dir / "test_batch.bin")};
  s.test.name = "cifar10-test";
  return s;
}

Dataset load_raw_tensor(const std::filesystem::path& path) {
  const io::Container c = io::Container::load(path);
  for (const char* key : {"images", "labels"}) {
    if (!c.contains(key)) throw DataError(path.string() + ": missing tensor '" + key + "'");
  }
  const io::Entry& img = c.entry("images");
  if (img.shape.size() < 2) throw DataError(path.string() + ": 'images' must be [N, ...], got " + ad::shape_str(img.shape));
  ad::Tensor x = c.tensor("images");
  if (img.dtype == io::DType::u8) {
    for (double& v : x.storage()) v /= 255.0;
  }
  const auto labels = c.integers("labels");
  const std::size_t n = img.shape[0];
  if (labels.size() != n) {
    throw DataError(path.string() + ": " + std::to_string(n) + " images but " + std::to_string(labels.size()) + " labels");
  }
  Dataset d;
  d.name = c.meta().value("name", path.stem().string());
  d.sample_shape.assign(img.shape.begin() + 1, img.shape.end());
  d.x = std::move(x);
  d.y.reserve(n);
  std::int64_t max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) throw DataError(path.string() + ": negative label at index " + std::to_string(i));
    max_label = std::max(max_label, labels[i]);
    d.y.push_back(static_cast<int>(labels[i]));
  }
  d.num_classes = c.meta().contains("num_classes") ? c.meta()["num_classes"].get<std::size_t>()
                                                    : static_cast<std::size_t>(max_label + 1);
  d.validate();
  return d;
}

void save_raw_tensor(const Dataset& d, const std::filesystem::path& path, bool as_bytes) {
  d.validate();
  io::Container c;
  c.meta()["name"] = d.name;
  c.meta()["num_classes"] = d.num_classes;
  ad::Shape shape{d.size()};
  shape.insert(shape.end(), d.sample_shape.begin(), d.sample_shape.end());
  if (as_bytes) {
    std::vector<std::uint8_t> px(d.x.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(d.x[i], 0.0, 1.0) * 255));
    c.put_u8("images", shape, px);
  } else {
    c.put("images", d.x.reshaped(shape));
  }
  c.put_i64("labels", {d.size()}, std::vector<std::int64_t>(d.y.begin(), d.y.end()));
  c.save(path);
}

DatasetSplit synth_blobs(const BlobsConfig& cfg) {
  if (cfg.n_classes < 2) throw ConfigError("dataset.classes", "synthetic blobs need at least 2 classes");
  if (cfg.dim < cfg.n_classes) throw ConfigError("dataset.dim", "must be at least the number of classes");
  if (cfg.n_per_class == 0) throw ConfigError("dataset.n_per_class", "must be at least 1");
  if (!(cfg.separation >= 0)) throw ConfigError("dataset.separation", "must be non-negative");
  if (!(cfg.label_noise >= 0 && cfg.label_noise < 1)) throw ConfigError("dataset.label_noise", "must lie in [0, 1)");
  Rng rng(cfg.seed);
  const double a = cfg.separation / std::numbers::sqrt2;
  auto make = [&](std::size_t per_class, const char* name) {
    const std::size_t n = per_class * cfg.n_classes;
    Dataset d{name, ad::Tensor({n, cfg.dim}), std::vector<int>(n), {cfg.dim}, cfg.n_classes};
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = order[i];
      const auto label = static_cast<int>(i / per_class);
      double* x = d.x.storage().data() + row * cfg.dim;
      for (std::size_t k = 0; k < cfg.dim; ++k) x[k] = rng.normal();
      x[label] += a;
      int observed = label;
      if (cfg.label_noise > 0 && rng.bernoulli(cfg.label_noise)) {
        observed = static_cast<int>(rng.index(cfg.n_classes - 1));
        if (observed >= label) ++observed;
      }
      d.y[row] = observed;
    }
    return d;
  };
  DatasetSplit s;
  s.train = make(cfg.n_per_class, "blobs-train");
  s.test = make(std::max<std::size_t>(cfg.n_test_per_class, 1), "blobs-test");
  return s;
}

double blobs_bayes_accuracy(std::size_t n_classes, double separation) {
  const double a = separation / std::numbers::sqrt2;
  const double lo = -12.0, hi = 12.0;
  const int steps = 8000;  // even, Simpson
  const double h = (hi - lo) / steps;
  double acc = 0;
  for (int i = 0; i <= steps; ++i) {
    const double t = lo + i * h;
    const double f = std::exp(-0.5 * t * t) / std::sqrt(2 * std::numbers::pi) *
                     std::pow(normal_cdf(t + a), double(n_classes) - 1.0);
    acc += f * (i == 0 || i == steps ? 1 : (i % 2 ? 4 : 2));
  }
  return std::min(1.0, acc * h / 3);
}

void normalize(DatasetSplit& split, Normalization mode) {
  if (mode != Normalization::standard) return;
  const Dataset& tr = split.train;
  if (tr.size() == 0) throw DataError("cannot normalise: training split is empty");
  // Groups: channels for images, features otherwise.
  const bool image = tr.is_image();
  const std::size_t groups = image ? tr.sample_shape[0] : ad::shape_size(tr.sample_shape);
  const std::size_t per = ad::shape_size(tr.sample_shape);
  const std::size_t span = per / groups;
  std::vector<double> mean(groups, 0.0), var(groups, 0.0);
  for (std::size_t i = 0; i < tr.size(); ++i)
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t k = 0; k < span; ++k) mean[gi] += tr.x[i * per + gi * span + k];
  const double count = double(tr.size() * span);
  for (double& m : mean) m /= count;
  for (std::size_t i = 0; i < tr.size(); ++i)
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t k = 0; k < span; ++k) {
        const double d = tr.x[i * per + gi * span + k] - mean[gi];
        var[gi] += d * d;
      }
  std::vector<double> inv(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) inv[gi] = 1.0 / std::max(std::sqrt(var[gi] / count), 1e-8);
  for (Dataset* d : {&split.train, &split.test}) {
    if (d->size() && ad::shape_size(d->sample_shape) != per) throw DataError("cannot normalise: splits differ in shape");
    for (std::size_t i = 0; i < d->size(); ++i)
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t k = 0; k < span; ++k) {
          double& v = d->x[i * per + gi * span + k];
          v = (v - mean[gi]) * inv[gi];
        }
  }
}

}  // namespace pilot::data
