#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bnn/batchnorm.hpp"
#include "bnn/error_channel.hpp"
#include "bnn/ops.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// Weight-bearing layers keep both the real latent weights (the trainable
// parameters, always in [-1,1]) and their current binarization. `bits` is
// refreshed explicitly after parameter changes; evaluation and persistent
// fault injection operate on `bits`, never on the latents.
struct DenseLayer {
  std::size_t in = 0, out = 0;
  bool first = false;  // integer pixel inputs in [0,z]
  RealTensor latent;   // [out, in]
  BinaryTensor bits;   // binarize(latent)
};

struct ConvLayer {
  std::size_t filters = 0, channels = 0, kh = 0, kw = 0;
  bool first = false;
  RealTensor latent;  // [filters, channels, kh, kw]
  BinaryTensor bits;
};

struct PoolLayer {};

struct NormLayer {
  BatchNormState bn;
};

struct SignLayer {};

using Layer =
    std::variant<DenseLayer, ConvLayer, PoolLayer, NormLayer, SignLayer>;

enum class FlipGradMode { straight_through, native };

// ----- training-path traces -----

struct LinearTrace {
  RealTensor input;          // [batch, in_features]
  BinaryTensor bits_used;    // possibly flip-corrupted binarized weights
  std::optional<FlipMask> mask;
  RealTensor h;              // [batch, out_features], integer-valued
  Shape in_sample, out_sample;
};

struct PoolTrace {
  std::vector<PoolResult> per_sample;
  Shape in_sample, out_sample;
};

struct NormTrace {
  BnCache cache;
};

using LayerTrace =
    std::variant<std::monostate, LinearTrace, PoolTrace, NormTrace>;

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  RealTensor logits;  // [batch, classes]
  std::size_t batch = 0;
  std::uint64_t stamp = 0;  // must match the graph at backward time
};

struct Gradients {
  std::vector<std::optional<RealTensor>> latent;  // per layer
  std::vector<std::optional<BnGrad>> bn;          // per layer
};

// Extra gradient source for the hinge regularizer; see training module.
struct RegHook {
  double b = 0.0;
  double lambda = 0.0;
  double inv_count = 0.0;  // 1 / (total neuron-position-sample tuples)
  std::vector<double> layer_weight;  // per graph layer, 0 = excluded
  std::vector<double> zdiv;          // per graph layer tolerance divisor
  double* penalty_out = nullptr;     // accumulates the raw mean penalty
};

// ----- evaluation-path traces -----

struct EvalSignLayer {
  std::size_t weight_layer;  // graph index of the layer that produced h
  bool first = false;
  std::size_t channels = 0, u = 1, v = 1;
  IntTensor h;  // integer pre-activations feeding the sign threshold
  const NeuronShift* shift = nullptr;
};

struct EvalTrace {
  std::vector<EvalSignLayer> sign_layers;
};

// Precomputed evaluation state: folded thresholds per hidden norm layer.
// Build once, evaluate many samples.
class EvalContext {
 public:
  explicit EvalContext(const LayerGraph& g);
  const LayerGraph& graph() const { return *graph_; }
  const std::optional<NeuronShift>& shift(std::size_t layer) const {
    return shifts_[layer];
  }
  std::uint64_t samples_seen() const { return samples_seen_.load(); }
  void count_sample() const { samples_seen_.fetch_add(1); }

 private:
  const LayerGraph* graph_;
  std::vector<std::optional<NeuronShift>> shifts_;
  mutable std::atomic<std::uint64_t> samples_seen_{0};
};

class LayerGraph {
 public:
  Shape input_shape;
  int z = 255;               // maximum input pixel value
  std::size_t classes = 0;
  std::string preset;
  double width_scale = 1.0;
  std::vector<Layer> layers;

  // Table II style architectures plus two desk-scale fixtures.
  static LayerGraph build_preset(const std::string& name, double width_scale,
                                 std::uint64_t init_seed);

  LayerGraph clone() const { return *this; }

  // Re-binarize every latent weight tensor. Must be called after any
  // parameter update before evaluating or saving.
  void refresh_binary();

  std::uint64_t stamp() const { return stamp_; }
  void bump_stamp() { ++stamp_; }

  std::size_t parameter_count() const;
  std::size_t binary_weight_count() const;

  // Indices of weight-bearing layers, in order.
  std::vector<std::size_t> weight_layers() const;

  // Training-mode forward over a batch. x: [batch, pixels] with values in
  // [0,z]. When `channel` is set, every binary weight tensor is corrupted
  // with a fresh mask drawn from stream (mask_stream_base + layer index).
  // Returns logits [batch, classes]; fills `trace` for backward.
  RealTensor forward_train(const RealTensor& x, const BitErrorChannel* channel,
                           std::uint64_t mask_stream_base, ForwardTrace& trace);

  // Backpropagation with the straight-through convention: sign activations
  // and the binarize/flip operators pass gradients through unchanged. In
  // native mode weight gradients are additionally multiplied by the flip
  // mask. `reg`, when set, injects the hinge regularizer's contribution at
  // every hidden norm layer.
  Gradients backward(const ForwardTrace& trace, const RealTensor& dlogits,
                     FlipGradMode mode, const RegHook* reg = nullptr) const;

  // Evaluation-mode forward for one sample: integer arithmetic with folded
  // thresholds for hidden layers, real normalization only for the logits.
  std::vector<double> forward_eval(const EvalContext& ctx, const IntTensor& x,
                                   EvalTrace* trace = nullptr) const;

  // Flattened per-sample input feature count.
  std::size_t input_features() const { return input_shape.elems(); }

 private:
  std::uint64_t stamp_ = 0;
};

// Argmax with lowest-index tie break.
std::size_t argmax_label(std::span<const double> logits);

// Fraction of correctly classified samples, evaluation path.
double evaluate_accuracy(const LayerGraph& g, const IntTensor& images,
                         std::span<const int> labels);

}  // namespace bnn
