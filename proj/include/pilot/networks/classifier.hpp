#pragma once

#include <functional>
#include <vector>

#include "pilot/autodiff/ops.hpp"
#include "pilot/autodiff/params.hpp"
#include "pilot/core/rng.hpp"
#include "pilot/networks/record.hpp"
#include "pilot/networks/tensor_container.hpp"

namespace pilot::net {

enum class ClassifierKind { mlp, cnn };

// MLP: input -> [dense -> (bn) -> relu] x hidden -> dense(num_classes).
// CNN: input -> [conv k x k -> (bn) -> relu] x conv_channels -> maxpool(pool)
//      -> [dense -> (bn) -> relu] x hidden -> dense(num_classes).
struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::mlp;
  ad::Shape input_shape;  // per example: {D} or {C, H, W}
  std::vector<std::size_t> hidden{1024, 1024};
  std::vector<std::size_t> conv_channels{32, 64};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t num_classes = 10;
  bool batch_norm = false;

  void validate() const;
  std::size_t input_size() const { return ad::shape_size(input_shape); }
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

// Replaces masked positions of recorded layers during a forward pass.
struct Splice {
  // One entry per record layer: a [N, width] 0/1 tensor, or empty when the
  // layer carries no mask. The logits layer is never spliced.
  const std::vector<ad::Tensor>* masks = nullptr;
  // Value placed at masked positions of `layer`, given the freshly computed
  // [N, width] pre-activation.
  std::function<ad::Var(std::size_t layer, ad::Var fresh)> insert;
};

struct ForwardOptions {
  bool train = false;  // batch-norm uses batch statistics
  const Splice* splice = nullptr;
  // Applied to each hidden post-activation (dropout hooks in here).
  std::function<ad::Var(std::size_t layer, ad::Var h)> on_hidden;
};

struct GraphPass {
  ad::Var logits;                 // [N, num_classes]
  std::vector<ad::Var> pre;       // per record layer, [N, width], after splicing
  std::vector<ad::Tensor> bn_mean;  // batch statistics per normalised layer (train mode)
  std::vector<ad::Tensor> bn_var;
};

struct RecordedPass {
  ad::Tensor logits;
  ActivationRecord record;
};

class Classifier {
 public:
  Classifier(ClassifierSpec spec, Rng& rng);

  const ClassifierSpec& spec() const noexcept { return spec_; }
  ad::ParameterGroup& params() noexcept { return params_; }
  const ad::ParameterGroup& params() const noexcept { return params_; }
  const RecordLayout& layout() const noexcept { return layout_; }
  // Indices into params() of weight matrices / kernels (no biases, no bn affine).
  const std::vector<std::size_t>& weight_indices() const noexcept { return weight_indices_; }

  // x is [N, ...input_shape]. psi must come from params().bind / bind_constant.
  GraphPass forward(ad::Graph& g, const std::vector<ad::Var>& psi, ad::Var x, const ForwardOptions& opts) const;

  // Folds a training pass' batch statistics into the running statistics.
  void update_running_stats(const GraphPass& pass);
  const std::vector<ad::Tensor>& running_mean() const noexcept { return running_mean_; }
  const std::vector<ad::Tensor>& running_var() const noexcept { return running_var_; }

  // Evaluation-mode helpers that own their graph.
  RecordedPass forward_record(const ad::Tensor& x) const;
  ad::Tensor logits(const ad::Tensor& x) const;
  ad::Tensor predict(const ad::Tensor& x) const;
  // Recomputes the pass from the record's input, placing `imputed` at positions
  // where `mask` (both [N, layout.total()]) is set. The inserted values sit
  // behind a stop-gradient barrier.
  RecordedPass forward_spliced(const ActivationRecord& record, const ad::Tensor& mask,
                               const ad::Tensor& imputed) const;

  void save(io::Container& c, const std::string& prefix = "psi.") const;
  static Classifier load(const io::Container& c, const ClassifierSpec& spec, const std::string& prefix = "psi.");

 private:
  explicit Classifier(ClassifierSpec spec);
  void build(Rng* rng);

  struct Layer {
    bool conv = false;
    bool output = false;
    std::size_t weight = 0, bias = 0;
    std::size_t gamma = kNone, beta = kNone, bn_slot = kNone;
    std::size_t record_layer = 0;
    std::size_t channels = 0, height = 0, width = 0;  // conv output geometry
    bool pool_after = false;
  };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  ClassifierSpec spec_;
  std::vector<Layer> plan_;
  ad::ParameterGroup params_{"psi"};
  RecordLayout layout_;
  std::vector<std::size_t> weight_indices_;
  std::vector<ad::Tensor> running_mean_;
  std::vector<ad::Tensor> running_var_;
};

// Splits a flat [N, total] mask into per-layer tensors (empty for unmasked layers).
std::vector<ad::Tensor> split_mask(const ad::Tensor& flat_mask, const RecordLayout& layout);

}  // namespace pilot::net
