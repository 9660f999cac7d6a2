#include "pilot/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pilot/core/error.hpp"

namespace pilot::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
  return out;
}

std::string fmt(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct KeyDef {
  const char* key;
  const char* help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define PILOT_NUM(key, field, help)                                                      \
  KeyDef {                                                                               \
    key, help, [](ExperimentConfig& c, const std::string& v) { c.field = to_double(key, v); }, \
        [](const ExperimentConfig& c) { return fmt(double(c.field)); }                   \
  }
#define PILOT_UINT(key, field, help)                                                        \
  KeyDef {                                                                                  \
    key, help, [](ExperimentConfig& c, const std::string& v) { c.field = to_uint(key, v); }, \
        [](const ExperimentConfig& c) { return fmt(std::uint64_t(c.field)); }               \
  }
#define PILOT_BOOL(key, field, help)                                                        \
  KeyDef {                                                                                  \
    key, help, [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(key, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }  \
  }
#define PILOT_LIST(key, field, help)                                                        \
  KeyDef {                                                                                  \
    key, help, [](ExperimentConfig& c, const std::string& v) { c.field = to_list(key, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.field); }                              \
  }

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = {
      {"seed", "master seed for initialisation, shuffling, masks and evaluation draws",
       [](ExperimentConfig& c, const std::string& v) { c.seed = to_uint("seed", v); },
       [](const ExperimentConfig& c) { return fmt(c.seed); }},
      {"out", "output directory", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
       [](const ExperimentConfig& c) { return c.out.string(); }},

      {"dataset.kind", "synthetic_blobs | cifar10_binary | raw_tensor",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "synthetic_blobs" || v == "blobs") c.dataset.kind = DatasetKind::synthetic_blobs;
         else if (v == "cifar10_binary" || v == "cifar10") c.dataset.kind = DatasetKind::cifar10_binary;
         else if (v == "raw_tensor") c.dataset.kind = DatasetKind::raw_tensor;
         else throw ConfigError("dataset.kind", "unknown dataset kind '" + v + "'");
       },
       [](const ExperimentConfig& c) {
         switch (c.dataset.kind) {
           case DatasetKind::cifar10_binary: return std::string("cifar10_binary");
           case DatasetKind::raw_tensor: return std::string("raw_tensor");
           default: return std::string("synthetic_blobs");
         }
       }},
      {"dataset.path", "cifar10_binary: directory of the binary batches; raw_tensor: training file",
       [](ExperimentConfig& c, const std::string& v) { c.dataset.path = v; },
       [](const ExperimentConfig& c) { return c.dataset.path.string(); }},
      {"dataset.test_path", "raw_tensor: test file", [](ExperimentConfig& c, const std::string& v) { c.dataset.test_path = v; },
       [](const ExperimentConfig& c) { return c.dataset.test_path.string(); }},
      {"dataset.test_name", "name of the test split in reports (empty: derived from the data)",
       [](ExperimentConfig& c, const std::string& v) { c.dataset.test_name = v; },
       [](const ExperimentConfig& c) { return c.dataset.test_name; }},
      {"dataset.normalize", "none | unit ([0,1] pixel scaling only) | standard (per-channel mean/std of the train split)",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "none") c.dataset.normalization = data::Normalization::none;
         else if (v == "unit") c.dataset.normalization = data::Normalization::unit;
         else if (v == "standard") c.dataset.normalization = data::Normalization::standard;
         else throw ConfigError("dataset.normalize", "expected none, unit or standard, got '" + v + "'");
       },
       [](const ExperimentConfig& c) {
         switch (c.dataset.normalization) {
           case data::Normalization::none: return std::string("none");
           case data::Normalization::standard: return std::string("standard");
           default: return std::string("unit");
         }
       }},
      PILOT_UINT("dataset.train_limit", dataset.train_limit, "use only the first k training examples (0: all)"),
      PILOT_UINT("dataset.test_limit", dataset.test_limit, "use only the first k test examples (0: all)"),
      PILOT_UINT("dataset.classes", dataset.blobs.n_classes, "synthetic_blobs: number of classes"),
      PILOT_UINT("dataset.n_per_class", dataset.blobs.n_per_class, "synthetic_blobs: training examples per class"),
      PILOT_UINT("dataset.n_test_per_class", dataset.blobs.n_test_per_class, "synthetic_blobs: test examples per class"),
      PILOT_UINT("dataset.dim", dataset.blobs.dim, "synthetic_blobs: input dimension (at least the class count)"),
      PILOT_NUM("dataset.separation", dataset.blobs.separation, "synthetic_blobs: distance between class means in noise sd"),
      PILOT_NUM("dataset.label_noise", dataset.blobs.label_noise,
                "synthetic_blobs: probability of flipping a label to another class (both splits)"),
      PILOT_UINT("dataset.seed", dataset.blobs.seed, "synthetic_blobs: generator seed"),

      {"model.kind", "mlp | cnn",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "mlp") c.model.kind = net::ClassifierKind::mlp;
         else if (v == "cnn") c.model.kind = net::ClassifierKind::cnn;
         else throw ConfigError("model.kind", "expected mlp or cnn, got '" + v + "'");
       },
       [](const ExperimentConfig& c) { return std::string(c.model.kind == net::ClassifierKind::mlp ? "mlp" : "cnn"); }},
      PILOT_LIST("model.hidden", model.hidden, "dense hidden widths, comma separated"),
      PILOT_LIST("model.conv_channels", model.conv_channels, "cnn: conv output channels, comma separated"),
      PILOT_UINT("model.kernel", model.kernel, "cnn: odd square kernel size"),
      PILOT_UINT("model.pool", model.pool, "cnn: max-pool window after the conv stack"),
      PILOT_BOOL("model.batch_norm", model.batch_norm, "batch normalisation before each relu (forced on by train.method=batch_norm)"),

      {"train.method", "vanilla | pilot | add_noise | sub_noise | dropout | l2 | batch_norm | data_aug",
       [](ExperimentConfig& c, const std::string& v) { c.train.method = train::parse_method(v); },
       [](const ExperimentConfig& c) { return train::to_string(c.train.method); }},
      {"train.epochs", "epochs; auto = 250 for mlp, 100 for cnn",
       [](ExperimentConfig& c, const std::string& v) { c.train.epochs = v == "auto" ? 0 : to_uint("train.epochs", v); },
       [](const ExperimentConfig& c) { return c.train.epochs ? fmt(std::uint64_t(c.train.epochs)) : std::string("auto"); }},
      PILOT_UINT("train.batch_size", train.batch_size, "minibatch size"),
      PILOT_NUM("train.lr", train.lr, "classifier Adam learning rate"),
      PILOT_NUM("train.dgm_lr", train.dgm_lr, "DGM Adam learning rate"),
      PILOT_NUM("train.clip_norm", train.clip_norm, "global gradient-norm clip per parameter group (0: off)"),
      PILOT_NUM("train.l2_lambda", train.l2_lambda, "l2: weight of the squared-weight penalty"),
      PILOT_NUM("train.dropout_rate", train.dropout_rate, "dropout and mc_dropout: drop probability"),
      PILOT_NUM("train.aug_prob", train.augment.probability, "data_aug: per-example transform probability"),
      PILOT_NUM("train.aug_rotation_deg", train.augment.max_rotation_deg, "data_aug: maximum rotation in degrees"),
      PILOT_NUM("train.aug_channel_shift", train.augment.channel_shift, "data_aug: maximum channel offset as a fraction of range"),
      PILOT_NUM("train.noise_variance", train.noise_variance, "add_noise/sub_noise: variance of the inserted noise"),
      PILOT_BOOL("train.propagate_noise_gradients", train.propagate_noise_gradients,
                 "add_noise: let gradients flow through the noisy values"),
      PILOT_UINT("train.n_impute", train.n_impute, "pilot: imputation draws per example per step"),
      PILOT_UINT("train.checkpoint_every", train.checkpoint_every, "write a checkpoint every k epochs (0: final only)"),
      PILOT_BOOL("train.check_separation", train.check_separation, "pilot: verify zero cross-gradients and checksums every step"),

      {"mask.mode", "x_drop | x_aug | a_drop | a_aug",
       [](ExperimentConfig& c, const std::string& v) { c.train.mask.mode = mask::parse_mask_mode(v); },
       [](const ExperimentConfig& c) { return mask::to_string(c.train.mask.mode); }},
      PILOT_NUM("mask.rate", train.mask.rate, "mask prior rate r in (0, 1)"),

      PILOT_UINT("dgm.latent_dim", dgm.latent_dim, "latent dimension"),
      PILOT_LIST("dgm.hidden", dgm.hidden, "hidden widths of encoder, prior and decoder networks"),
      PILOT_NUM("dgm.decoder_variance", dgm.decoder_variance, "fixed decoder variance"),
      PILOT_UINT("dgm.n_z", dgm.n_z, "latent samples per example in the bound"),
      PILOT_BOOL("dgm.standardize", dgm.standardize, "standardise records per position before the DGM"),
      PILOT_NUM("dgm.standardize_warmup", dgm.standardize_warmup,
                "fraction of training steps that accumulate standardisation statistics"),
      PILOT_NUM("dgm.hyperprior.sigma_mu", dgm.hyperprior.sigma_mu, "scale of the prior-mean penalty"),
      PILOT_NUM("dgm.hyperprior.sigma_sigma", dgm.hyperprior.sigma_sigma, "weight of the prior-scale penalty"),
      {"dgm.hyperprior.form", "squared_mean | literal_linear",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "squared_mean") c.dgm.hyperprior.form = dgm::PenaltyForm::squared_mean;
         else if (v == "literal_linear") c.dgm.hyperprior.form = dgm::PenaltyForm::literal_linear;
         else throw ConfigError("dgm.hyperprior.form", "expected squared_mean or literal_linear, got '" + v + "'");
       },
       [](const ExperimentConfig& c) {
         return std::string(c.dgm.hyperprior.form == dgm::PenaltyForm::squared_mean ? "squared_mean" : "literal_linear");
       }},
      PILOT_BOOL("impute.sample", dgm.impute_sample, "impute with decoder samples instead of means"),

      {"eval.mode", "deterministic | pilot_mc | mc_dropout",
       [](ExperimentConfig& c, const std::string& v) { c.eval.mode = eval::parse_eval_mode(v); },
       [](const ExperimentConfig& c) { return eval::to_string(c.eval.mode); }},
      PILOT_UINT("eval.mc_samples", eval.mc_samples, "samples averaged by the MC modes"),
      PILOT_UINT("eval.bins", eval.bins, "reliability bins M"),
      PILOT_UINT("eval.entropy_bins", eval.entropy_bins, "entropy histogram bins"),
      PILOT_UINT("eval.batch_size", eval.batch_size, "evaluation batch size"),
  };
  return defs;
}

#undef PILOT_NUM
#undef PILOT_UINT
#undef PILOT_BOOL
#undef PILOT_LIST

const KeyDef& lookup(const std::string& key) {
  static const auto index = [] {
    std::map<std::string, const KeyDef*> m;
    for (const auto& d : registry()) m[d.key] = &d;
    return m;
  }();
  const auto it = index.find(key);
  if (it == index.end()) throw ConfigError(key, "unknown key");
  return *it->second;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  dataset.blobs.n_classes = 4;
  dataset.blobs.dim = 32;
  dataset.blobs.n_per_class = 100;
  dataset.blobs.n_test_per_class = 250;
  dataset.blobs.separation = 3.0;
  dataset.blobs.label_noise = 0.1;
  train.epochs = 0;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(const std::string& key) const { return lookup(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
  static const auto k = [] {
    std::vector<std::string> out;
    for (const auto& d : registry()) out.emplace_back(d.key);
    return out;
  }();
  return k;
}

void ExperimentConfig::merge_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(trim(line), source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
  ExperimentConfig c;
  c.merge_text(text, source);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& d : registry()) out += std::string(d.key) + " = " + d.get(*this) + "\n";
  return out;
}

void ExperimentConfig::resolve() {
  train.seed = seed;
  eval.seed = seed;
  if (train.epochs == 0) train.epochs = model.kind == net::ClassifierKind::cnn ? 100 : 250;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (train.method == train::Method::pilot) dgm.validate();
  if (eval.mc_samples == 0) throw ConfigError("eval.mc_samples", "must be at least 1");
  if (eval.bins == 0) throw ConfigError("eval.bins", "must be at least 1");
  if (eval.entropy_bins == 0) throw ConfigError("eval.entropy_bins", "must be at least 1");
  if (dataset.kind != DatasetKind::synthetic_blobs && dataset.path.empty()) {
    throw ConfigError("dataset.path", "required for this dataset kind");
  }
  if (dataset.kind == DatasetKind::raw_tensor && dataset.test_path.empty()) {
    throw ConfigError("dataset.test_path", "required for raw_tensor datasets");
  }
}

std::string help_text() {
  const ExperimentConfig d;
  std::ostringstream os;
  os << "Configuration keys (file lines 'key = value'; '#' comments):\n";
  for (const auto& k : registry()) {
    os << "  " << k.key << " = " << k.get(d) << "\n      " << k.help << "\n";
  }
  return os.str();
}

data::DatasetSplit load_dataset(const DatasetDescriptor& d) {
  data::DatasetSplit s;
  switch (d.kind) {
    case DatasetKind::synthetic_blobs: s = data::synth_blobs(d.blobs); break;
    case DatasetKind::cifar10_binary: s = data::load_cifar10(d.path); break;
    case DatasetKind::raw_tensor:
      s.train = data::load_raw_tensor(d.path);
      s.test = data::load_raw_tensor(d.test_path);
      s.train.num_classes = s.test.num_classes = std::max(s.train.num_classes, s.test.num_classes);
      break;
  }
  auto limit = [](data::Dataset& ds, std::size_t k) {
    if (k == 0 || k >= ds.size()) return;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    ds = ds.subset(idx);
  };
  limit(s.train, d.train_limit);
  limit(s.test, d.test_limit);
  if (d.kind == DatasetKind::raw_tensor && s.train.sample_shape != s.test.sample_shape) {
    throw DataError("raw_tensor: train samples " + ad::shape_str(s.train.sample_shape) + " but test samples " +
                    ad::shape_str(s.test.sample_shape));
  }
  data::normalize(s, d.normalization);
  if (!d.test_name.empty()) s.test.name = d.test_name;
  return s;
}

net::ClassifierSpec resolve_spec(const ExperimentConfig& cfg, const data::Dataset& train_set) {
  net::ClassifierSpec spec = cfg.model;
  spec.input_shape = train_set.sample_shape;
  spec.num_classes = train_set.num_classes;
  if (cfg.train.method == train::Method::batch_norm) spec.batch_norm = true;
  if (spec.kind == net::ClassifierKind::cnn && spec.input_shape.size() != 3) {
    throw ConfigError("model.kind", "cnn needs image inputs, data has sample shape " + ad::shape_str(spec.input_shape));
  }
  spec.validate();
  return spec;
}

}  // namespace pilot::harness
