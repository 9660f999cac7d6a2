#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pilot/autodiff/optim.hpp"
#include "pilot/dgm/activation_dgm.hpp"
#include "pilot/harness/dataset.hpp"
#include "pilot/masking/mask.hpp"
#include "pilot/networks/classifier.hpp"

namespace pilot::train {

enum class Method { vanilla, pilot, add_noise, sub_noise, dropout, l2, batch_norm, data_aug };

std::string to_string(Method m);
Method parse_method(const std::string& name);
// Methods that need a mask prior.
bool uses_mask(Method m);

struct AugmentConfig {
  double probability = 0.1;
  double max_rotation_deg = 15.0;
  double channel_shift = 0.1;  // fraction of the image's dynamic range
};

struct TrainConfig {
  Method method = Method::vanilla;
  mask::MaskPrior mask;
  std::size_t epochs = 250;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double dgm_lr = 1e-4;
  double clip_norm = 5.0;
  double l2_lambda = 0.1;
  double dropout_rate = 0.5;
  AugmentConfig augment;
  double noise_variance = 0.1;
  bool propagate_noise_gradients = true;
  std::size_t n_impute = 1;
  // Zero-gradient and checksum checks on every pilot step (always on in debug builds).
  bool check_separation = false;
  // Write checkpoints/epoch_<k>.ckpt every this many epochs (0: final only).
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRow {
  std::size_t epoch = 0;
  double loss_act = 0, loss_dgm = 0, kl = 0, recon = 0, penalty = 0;
  double grad_norm_psi = 0, grad_norm_dgm = 0;
  double train_acc = 0, val_acc = 0;
};

struct TrainLog {
  std::vector<EpochRow> rows;

  void append(const EpochRow& row);  // epochs must increase
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Everything needed to evaluate or resume a trained model.
struct ModelBundle {
  net::ClassifierSpec spec;
  TrainConfig train;
  net::Classifier classifier;
  std::optional<dgm::ActivationDgm> dgm;
  dgm::DgmConfig dgm_config;

  // Stored in the bundle meta, for example the resolved experiment config.
  std::string config_text;

  io::Container to_container() const;
  static ModelBundle from_container(const io::Container& c);
  void save(const std::filesystem::path& path) const;
  static ModelBundle load(const std::filesystem::path& path);
};

// -mean log softmax(logits)[y]
ad::Var classifier_loss(ad::Var logits, std::span<const int> labels);

// Inverted dropout; identity when !train or rate == 0.
ad::Var dropout_mask_apply(ad::Var h, double rate, Rng& rng, bool train);

// lambda * sum of squared weights (biases and batch-norm affine excluded).
ad::Var l2_penalty(const net::Classifier& model, const std::vector<ad::Var>& psi, double lambda);

// Value placed at masked positions by the Add/Sub baselines. sub: fresh N(0,
// variance) draws; add: fresh + noise, behind a stop-gradient when !propagate.
ad::Var insert_noise(ad::Var fresh, Method method, double variance, bool propagate, Rng& rng);

enum class Transform { none = -1, channel_shift = 0, rotation = 1, flip = 2 };

struct Augmented {
  ad::Tensor x;
  std::vector<Transform> applied;
};

// x is [N, C, H, W] (or flat [N, C*H*W] with image_shape {C, H, W}).
Augmented augment_data(const ad::Tensor& x, const ad::Shape& image_shape, const AugmentConfig& config, Rng& rng);
// Single-image transforms on a channel-major {C, H, W} buffer.
void flip_horizontal(std::span<double> image, const ad::Shape& image_shape);
void rotate_nearest(std::span<double> image, const ad::Shape& image_shape, double degrees);
void shift_channels(std::span<double> image, const ad::Shape& image_shape, std::span<const double> offsets);

struct StepStats {
  double loss_act = 0, loss_dgm = 0, kl = 0, recon = 0, penalty = 0;
  double grad_norm_psi = 0, grad_norm_dgm = 0;
  std::size_t correct = 0;  // on the clean forward pass
  std::size_t masked = 0;
  // Largest absolute entry of the cross gradients (pilot only).
  double cross_psi = 0;  // d(-Lambda)/d Psi
  double cross_dgm = 0;  // d(loss_act)/d(theta, phi)
};

// The per-step optimiser. Holds Adam state for the classifier and DGM groups.
class Trainer {
 public:
  Trainer(const TrainConfig& config, net::Classifier& classifier, dgm::ActivationDgm* dgm);

  StepStats step(const ad::Tensor& x, std::span<const int> y, Rng& rng);

  StepStats vanilla_step(const ad::Tensor& x, std::span<const int> y, Rng& rng);
  StepStats pilot_step(const ad::Tensor& x, std::span<const int> y, Rng& rng);
  StepStats pilot_step(const ad::Tensor& x, std::span<const int> y, const mask::Mask& mask, Rng& rng);
  StepStats noise_step(const ad::Tensor& x, std::span<const int> y, Rng& rng);
  StepStats noise_step(const ad::Tensor& x, std::span<const int> y, const mask::Mask& mask, Rng& rng);

  // Loss values without updating anything.
  double vanilla_loss(const ad::Tensor& x, std::span<const int> y) const;

  std::size_t steps() const noexcept { return steps_; }
  const TrainConfig& config() const noexcept { return config_; }

 private:
  void update_psi(std::vector<ad::Tensor> grads, StepStats& stats);
  StepStats plain_step(const ad::Tensor& x, std::span<const int> y, Rng& rng);

  TrainConfig config_;
  net::Classifier& classifier_;
  dgm::ActivationDgm* dgm_;
  ad::AdamState psi_state_, theta_state_, phi_state_;
  std::size_t steps_ = 0;
};

struct TrainResult {
  ModelBundle model;
  TrainLog log;
};

using EpochHook = std::function<void(const ModelBundle&, const EpochRow&)>;

// Initialises a fresh model from the seed and runs config.epochs epochs of
// shuffled minibatches. val is only used for logging.
TrainResult train(const TrainConfig& config, const net::ClassifierSpec& spec, const dgm::DgmConfig& dgm_config,
                  const data::Dataset& train_set, const data::Dataset* val = nullptr, const EpochHook& hook = {});

// Fraction of argmax hits of the deterministic classifier.
double accuracy(const net::Classifier& model, const data::Dataset& d, std::size_t batch = 512);

}  // namespace pilot::train
