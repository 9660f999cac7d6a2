#include <fstream>

#include "json.hpp"
#include "pilot/core/error.hpp"
#include "pilot/trainer/trainer.hpp"

namespace pilot::train {

using nlohmann::json;

namespace {

json spec_json(const net::ClassifierSpec& s) {
  return {{"kind", s.kind == net::ClassifierKind::mlp ? "mlp" : "cnn"},
          {"input_shape", s.input_shape},
          {"hidden", s.hidden},
          {"conv_channels", s.conv_channels},
          {"kernel", s.kernel},
          {"pool", s.pool},
          {"num_classes", s.num_classes},
          {"batch_norm", s.batch_norm}};
}

net::ClassifierSpec spec_from(const json& j) {
  net::ClassifierSpec s;
  s.kind = j.at("kind").get<std::string>() == "cnn" ? net::ClassifierKind::cnn : net::ClassifierKind::mlp;
  s.input_shape = j.at("input_shape").get<ad::Shape>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.pool = j.at("pool").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.batch_norm = j.at("batch_norm").get<bool>();
  return s;
}

json train_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"mask_mode", mask::to_string(c.mask.mode)},
          {"mask_rate", c.mask.rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"dgm_lr", c.dgm_lr},
          {"clip_norm", c.clip_norm},
          {"l2_lambda", c.l2_lambda},
          {"dropout_rate", c.dropout_rate},
          {"aug_prob", c.augment.probability},
          {"aug_rotation_deg", c.augment.max_rotation_deg},
          {"aug_channel_shift", c.augment.channel_shift},
          {"noise_variance", c.noise_variance},
          {"propagate_noise_gradients", c.propagate_noise_gradients},
          {"n_impute", c.n_impute},
          {"seed", c.seed}};
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.mask.mode = mask::parse_mask_mode(j.at("mask_mode").get<std::string>());
  c.mask.rate = j.at("mask_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.dgm_lr = j.at("dgm_lr").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.l2_lambda = j.at("l2_lambda").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.augment.probability = j.at("aug_prob").get<double>();
  c.augment.max_rotation_deg = j.at("aug_rotation_deg").get<double>();
  c.augment.channel_shift = j.at("aug_channel_shift").get<double>();
  c.noise_variance = j.at("noise_variance").get<double>();
  c.propagate_noise_gradients = j.at("propagate_noise_gradients").get<bool>();
  c.n_impute = j.at("n_impute").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json dgm_json(const dgm::DgmConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"hidden", c.hidden},
          {"decoder_variance", c.decoder_variance},
          {"sigma_mu", c.hyperprior.sigma_mu},
          {"sigma_sigma", c.hyperprior.sigma_sigma},
          {"penalty", c.hyperprior.form == dgm::PenaltyForm::squared_mean ? "squared_mean" : "literal_linear"},
          {"n_z", c.n_z},
          {"standardize", c.standardize},
          {"standardize_warmup", c.standardize_warmup},
          {"impute_sample", c.impute_sample}};
}

dgm::DgmConfig dgm_from(const json& j) {
  dgm::DgmConfig c;
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.decoder_variance = j.at("decoder_variance").get<double>();
  c.hyperprior.sigma_mu = j.at("sigma_mu").get<double>();
  c.hyperprior.sigma_sigma = j.at("sigma_sigma").get<double>();
  c.hyperprior.form =
      j.at("penalty").get<std::string>() == "literal_linear" ? dgm::PenaltyForm::literal_linear : dgm::PenaltyForm::squared_mean;
  c.n_z = j.at("n_z").get<std::size_t>();
  c.standardize = j.at("standardize").get<bool>();
  c.standardize_warmup = j.at("standardize_warmup").get<double>();
  c.impute_sample = j.at("impute_sample").get<bool>();
  return c;
}

}  // namespace

io::Container ModelBundle::to_container() const {
  io::Container c;
  json& m = c.meta();
  m["kind"] = "pilot-model";
  m["classifier"] = spec_json(spec);
  m["train"] = train_json(train);
  m["dgm"] = dgm ? dgm_json(dgm_config) : json(nullptr);
  m["config"] = config_text;
  classifier.save(c, "psi.");
  if (dgm) dgm->save(c);
  return c;
}

ModelBundle ModelBundle::from_container(const io::Container& c) {
  const json& m = c.meta();
  if (m.value("kind", std::string()) != "pilot-model") throw DataError("checkpoint: not a model bundle");
  try {
    net::ClassifierSpec spec = spec_from(m.at("classifier"));
    ModelBundle b{spec, train_from(m.at("train")), net::Classifier::load(c, spec, "psi."), std::nullopt, {},
                  m.value("config", std::string())};
    if (!m.at("dgm").is_null()) {
      b.dgm_config = dgm_from(m.at("dgm"));
      Rng unused(0);
      b.dgm.emplace(b.dgm_config, b.classifier.layout().total(), unused);
      b.dgm->load(c);
    }
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
}

void ModelBundle::save(const std::filesystem::path& path) const { to_container().save(path); }

ModelBundle ModelBundle::load(const std::filesystem::path& path) { return from_container(io::Container::load(path)); }

}  // namespace pilot::train
