#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bnn/data.hpp"
#include "bnn/graph.hpp"

namespace bnn {

enum class FlipMode { none, native, straight_through };

const char* flip_mode_name(FlipMode m);
FlipMode flip_mode_from_name(const std::string& s);

struct DirectRegConfig {
  double b = 32.0;
  double lambda = 1e-3;
  // Optional per-hidden-layer weighting of the penalty (uniform when
  // empty). Indexed by sign-layer ordinal.
  std::vector<double> layer_weights;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t lr_decay_every = 25;
  double lr_decay = 0.5;
  FlipMode flip_mode = FlipMode::none;
  double flip_p = 0.1;
  std::optional<DirectRegConfig> direct_reg;
  std::uint64_t seed = 1;
  std::optional<double> tb_snapshot_level;  // log T^b on the eval set

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

struct LossValue {
  double cross_entropy = 0.0;
  double reg_penalty = 0.0;
  double lambda = 0.0;
  double total() const { return cross_entropy + lambda * reg_penalty; }
};

struct CrossEntropyResult {
  double loss = 0.0;
  RealTensor dlogits;
};

// Mean over the batch of -log softmax at the true label; gradient is
// (softmax - onehot) / batch. Stabilized by row-max subtraction.
CrossEntropyResult cross_entropy_loss(const RealTensor& logits,
                                      std::span<const int> labels);

// Adam with bias correction. Latent weights are clamped to [-1,1] after
// every update; normalization parameters are not. The graph's binary
// weights are refreshed at the end of each step.
class AdamOptimizer {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(LayerGraph& g, const Gradients& grads, double lr);
  std::uint64_t t() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  void update(Slot& slot, std::span<double> param, std::span<const double> g,
              double lr, bool clamp);

  std::vector<Slot> latent_slots_, gamma_slots_, beta_slots_;
  std::uint64_t t_ = 0;
};

// One optimization step on one mini-batch. When cfg.flip_mode is not
// `none`, fresh flip masks are drawn for every binary weight tensor from
// streams derived from (cfg.seed, step_index). The two flip modes share
// the corrupted forward pass and differ only in the weight gradient:
// straight_through uses it unchanged, native multiplies it by the mask.
LossValue train_step(LayerGraph& g, AdamOptimizer& opt, const RealTensor& x,
                     std::span<const int> labels, const TrainConfig& cfg,
                     double lr, std::uint64_t step_index);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_acc = 0.0;
  double penalty = 0.0;
  std::optional<double> tb_snapshot;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  LayerGraph best;  // highest eval accuracy (earliest on ties)
  double best_acc = 0.0;
};

// Full training protocol: per-epoch seeded shuffling, the lr schedule,
// per-epoch evaluation-mode accuracy. Mutates `g` into the final model.
TrainResult train(LayerGraph& g, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& cfg);

// Assemble a [batch, features] pixel matrix from dataset rows.
RealTensor gather_batch(const Dataset& ds, std::span<const std::size_t> idx);

}  // namespace bnn
