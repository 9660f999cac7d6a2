#include "pilot/eval/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pilot/core/error.hpp"
#include "pilot/networks/tensor_container.hpp"

namespace pilot::eval {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-12;

void require_nonempty(const PredictionMatrix& p, const char* what) {
  if (p.rows() == 0 || p.classes() == 0) throw DataError(std::string(what) + ": empty prediction matrix");
  if (p.labels.size() != p.rows()) {
    throw DataError(std::string(what) + ": " + std::to_string(p.rows()) + " rows but " + std::to_string(p.labels.size()) +
                    " labels");
  }
}

ad::Tensor softmax_rows(const ad::Tensor& logits) {
  ad::Graph g;
  return ad::softmax(g.constant(logits)).value();
}

// m += (p - m) / k, so that averaging identical rows returns them unchanged.
void accumulate_mean(ad::Tensor& mean, const ad::Tensor& p, std::size_t k) {
  if (k == 1) {
    mean = p;
    return;
  }
  const double inv = double(k);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (p[i] - mean[i]) / inv;
}

}  // namespace

void PredictionMatrix::validate(double tol) const {
  if (probs.rank() != 2) throw DataError("prediction matrix '" + model + "': probabilities must be [N, C]");
  require_nonempty(*this, "prediction matrix");
  const std::size_t c = classes();
  for (std::size_t i = 0; i < rows(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = probs[i * c + k];
      if (!(v >= 0)) throw DataError("prediction matrix '" + model + "': negative or NaN entry in row " + std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw DataError("prediction matrix '" + model + "': row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("prediction matrix '" + model + "': label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
  }
}

double PredictionMatrix::confidence(std::size_t row) const {
  const auto* r = probs.storage().data() + row * classes();
  return *std::max_element(r, r + classes());
}

int PredictionMatrix::predicted(std::size_t row) const {
  const auto* r = probs.storage().data() + row * classes();
  return static_cast<int>(std::max_element(r, r + classes()) - r);
}

void PredictionMatrix::save(const std::filesystem::path& path) const {
  io::Container c;
  c.meta()["kind"] = "pilot-predictions";
  c.meta()["model"] = model;
  c.meta()["dataset"] = dataset;
  c.put("probs", probs);
  c.put_i64("labels", {labels.size()}, std::vector<std::int64_t>(labels.begin(), labels.end()));
  c.save(path);
}

PredictionMatrix PredictionMatrix::load(const std::filesystem::path& path) {
  const io::Container c = io::Container::load(path);
  PredictionMatrix p;
  p.model = c.meta().value("model", path.stem().string());
  p.dataset = c.meta().value("dataset", std::string());
  p.probs = c.tensor("probs");
  const auto labels = c.integers("labels");
  p.labels.assign(labels.begin(), labels.end());
  p.validate();
  return p;
}

std::vector<BinStats> bin_reliability(const PredictionMatrix& p, std::size_t bins) {
  if (bins == 0) throw UsageError("reliability bins: M must be at least 1");
  require_nonempty(p, "reliability bins");
  std::vector<BinStats> out(bins);
  std::vector<double> hits(bins, 0.0), conf(bins, 0.0);
  for (std::size_t m = 0; m < bins; ++m) {
    out[m].lo = double(m) / double(bins);
    out[m].hi = double(m + 1) / double(bins);
  }
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double c = p.confidence(i);
    const double scaled = std::ceil(c * double(bins)) - 1.0;
    const auto m = static_cast<std::size_t>(std::clamp(scaled, 0.0, double(bins - 1)));
    ++out[m].count;
    conf[m] += c;
    hits[m] += p.predicted(i) == p.labels[i] ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < bins; ++m) {
    if (out[m].count == 0) continue;
    out[m].acc = hits[m] / double(out[m].count);
    out[m].conf = conf[m] / double(out[m].count);
  }
  return out;
}

double ece(std::span<const BinStats> bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double total = 0;
  // |B_m| * |acc - conf| = |hits - sum of confidences|
  for (const auto& b : bins) {
    if (b.count) total += std::abs(b.acc * double(b.count) - b.conf * double(b.count));
  }
  return total / double(n);
}

double ece(const PredictionMatrix& p, std::size_t bins) {
  if (bins == 0) throw UsageError("ece: M must be at least 1");
  require_nonempty(p, "ece");
  std::vector<double> hits(bins, 0.0), conf(bins, 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double c = p.confidence(i);
    const auto m = static_cast<std::size_t>(std::clamp(std::ceil(c * double(bins)) - 1.0, 0.0, double(bins - 1)));
    conf[m] += c;
    hits[m] += p.predicted(i) == p.labels[i] ? 1.0 : 0.0;
  }
  double total = 0;
  for (std::size_t m = 0; m < bins; ++m) total += std::abs(hits[m] - conf[m]);
  return total / double(p.rows());
}

double nll(const PredictionMatrix& p) {
  require_nonempty(p, "nll");
  const std::size_t c = p.classes();
  double total = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) total -= std::log(std::max(p.probs[i * c + p.labels[i]], kProbFloor));
  return total / double(p.rows());
}

double accuracy(const PredictionMatrix& p) {
  require_nonempty(p, "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) hits += p.predicted(i) == p.labels[i];
  return double(hits) / double(p.rows());
}

std::vector<double> entropies(const PredictionMatrix& p) {
  const std::size_t c = p.classes();
  std::vector<double> h(p.rows(), 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p.probs[i * c + k];
      if (v > 0) h[i] -= v * std::log(v);
    }
  return h;
}

Histogram entropy_histogram(const PredictionMatrix& p, std::size_t bins) {
  if (bins == 0) throw UsageError("entropy histogram: at least one bin required");
  require_nonempty(p, "entropy histogram");
  const double top = std::log(double(p.classes()));
  Histogram hist;
  hist.counts.assign(bins, 0);
  for (std::size_t m = 0; m <= bins; ++m) hist.edges.push_back(top * double(m) / double(bins));
  for (double h : entropies(p)) {
    const double t = top > 0 ? std::clamp(h / top, 0.0, 1.0) : 0.0;
    ++hist.counts[std::min(bins - 1, static_cast<std::size_t>(t * double(bins)))];
  }
  return hist;
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::deterministic: return "deterministic";
    case EvalMode::pilot_mc: return "pilot_mc";
    case EvalMode::mc_dropout: return "mc_dropout";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  for (EvalMode m : {EvalMode::deterministic, EvalMode::pilot_mc, EvalMode::mc_dropout})
    if (s == to_string(m)) return m;
  throw ConfigError("eval.mode", "unknown mode '" + name + "' (deterministic, pilot_mc, mc_dropout)");
}

ad::Tensor mc_predict(const train::ModelBundle& model, const ad::Tensor& x, std::size_t n_samples, EvalMode mode,
                      Rng& rng, bool disable_stochastic) {
  if (n_samples < 1) throw UsageError("mc_predict: n_samples must be at least 1");
  const net::Classifier& clf = model.classifier;
  if (mode == EvalMode::deterministic) return clf.predict(x);
  if (mode == EvalMode::pilot_mc && !model.dgm) throw UsageError("pilot_mc prediction needs a model trained with a DGM");

  ad::Tensor mean;
  for (std::size_t k = 1; k <= n_samples; ++k) {
    ad::Tensor logits;
    if (mode == EvalMode::pilot_mc) {
      const net::RecordedPass rec = clf.forward_record(x);
      const std::size_t n = rec.record.batch();
      const mask::Mask m = disable_stochastic ? mask::empty_mask(clf.layout(), n)
                                              : mask::sample_mask(model.train.mask, clf.layout(), n, rng);
      const ad::Tensor imputed =
          m.none() ? ad::Tensor(m.bits.shape()) : model.dgm->impute(rec.record.flatten(), m.bits, rng);
      logits = clf.forward_spliced(rec.record, m.bits, imputed).logits;
    } else {
      const double rate = disable_stochastic ? 0.0 : model.train.dropout_rate;
      ad::Graph g;
      const auto psi = clf.params().bind_constant(g);
      net::ForwardOptions opts;
      opts.on_hidden = [&](std::size_t, ad::Var h) { return train::dropout_mask_apply(h, rate, rng, true); };
      logits = clf.forward(g, psi, g.constant(x), opts).logits.value();
    }
    accumulate_mean(mean, softmax_rows(logits), k);
  }
  return mean;
}

PredictionMatrix ensemble_predict(std::span<const PredictionMatrix> members) {
  if (members.empty()) throw UsageError("ensemble: no members");
  for (const auto& m : members) require_nonempty(m, "ensemble");
  const PredictionMatrix& first = members.front();
  PredictionMatrix out{ad::Tensor(), first.labels, "ensemble", first.dataset};
  for (std::size_t k = 0; k < members.size(); ++k) {
    const PredictionMatrix& m = members[k];
    if (m.probs.shape() != first.probs.shape()) {
      throw DataError("ensemble: member '" + m.model + "' has shape " + ad::shape_str(m.probs.shape()) + ", expected " +
                      ad::shape_str(first.probs.shape()));
    }
    if (m.labels != first.labels) throw DataError("ensemble: member '" + m.model + "' was evaluated on different labels");
    accumulate_mean(out.probs, m.probs, k + 1);
  }
  const std::size_t c = out.classes();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += out.probs[i * c + j];
    if (std::abs(s - 1.0) > 1e-12)
      for (std::size_t j = 0; j < c; ++j) out.probs[i * c + j] /= s;
  }
  return out;
}

PredictionMatrix predict(const train::ModelBundle& model, const data::Dataset& d, const EvalConfig& config,
                         const std::string& name) {
  if (d.size() == 0) throw DataError("evaluation set '" + d.name + "' is empty");
  d.validate();
  if (d.num_classes > model.spec.num_classes) {
    throw DataError("evaluation set '" + d.name + "' has " + std::to_string(d.num_classes) + " classes, model predicts " +
                    std::to_string(model.spec.num_classes));
  }
  Rng rng(config.seed);
  const std::size_t n = d.size(), c = model.spec.num_classes, batch = std::max<std::size_t>(config.batch_size, 1);
  PredictionMatrix p{ad::Tensor({n, c}), d.y, name, d.name};
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    const ad::Tensor probs = mc_predict(model, d.x.rows(b, e), config.mc_samples, config.mode, rng);
    std::copy(probs.storage().begin(), probs.storage().end(), p.probs.storage().begin() + long(b * c));
  }
  return p;
}

CalibrationReport report(const PredictionMatrix& p, std::size_t bins, std::size_t entropy_bins) {
  CalibrationReport r;
  r.model = p.model;
  r.dataset = p.dataset;
  r.n = p.rows();
  r.accuracy = accuracy(p);
  r.nll = nll(p);
  r.bins = bin_reliability(p, bins);
  r.ece = ece(p, bins);
  r.entropy = entropy_histogram(p, entropy_bins);
  return r;
}

CalibrationReport evaluate(const train::ModelBundle& model, const data::Dataset& test, const EvalConfig& config,
                           const std::string& name) {
  CalibrationReport r = report(predict(model, test, config, name), config.bins, config.entropy_bins);
  r.dataset = test.name;
  r.mode = to_string(config.mode);
  r.mc_samples = config.mode == EvalMode::deterministic ? 1 : config.mc_samples;
  return r;
}

json CalibrationReport::to_json() const {
  json bins_j = json::array();
  for (const auto& b : bins) bins_j.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.acc}, {"conf", b.conf}});
  return {{"model", model},       {"dataset", dataset}, {"mode", mode}, {"mc_samples", mc_samples},
          {"n", n},               {"accuracy", accuracy}, {"nll", nll},   {"ece", ece},
          {"bins", bins_j},       {"entropy", {{"edges", entropy.edges}, {"counts", entropy.counts}}}};
}

CalibrationReport CalibrationReport::from_json(const json& j) {
  try {
    CalibrationReport r;
    r.model = j.at("model").get<std::string>();
    r.dataset = j.value("dataset", std::string());
    r.mode = j.value("mode", std::string("deterministic"));
    r.mc_samples = j.value("mc_samples", std::size_t{1});
    r.n = j.at("n").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.nll = j.at("nll").get<double>();
    r.ece = j.at("ece").get<double>();
    for (const auto& b : j.value("bins", json::array())) {
      r.bins.push_back({b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("count").get<std::size_t>(),
                        b.at("acc").get<double>(), b.at("conf").get<double>()});
    }
    if (j.contains("entropy")) {
      r.entropy.edges = j["entropy"].at("edges").get<std::vector<double>>();
      r.entropy.counts = j["entropy"].at("counts").get<std::vector<std::size_t>>();
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

void CalibrationReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

CalibrationReport CalibrationReport::read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string CalibrationReport::bins_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count,acc,conf\n";
  for (const auto& b : bins) os << b.lo << ',' << b.hi << ',' << b.count << ',' << b.acc << ',' << b.conf << '\n';
  return os.str();
}

std::string CalibrationReport::entropy_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t m = 0; m < entropy.counts.size(); ++m) {
    os << entropy.edges[m] << ',' << entropy.edges[m + 1] << ',' << entropy.counts[m] << '\n';
  }
  return os.str();
}

}  // namespace pilot::eval
