#include "bnn/training.hpp"

#include <algorithm>
#include <cmath>

#include "bnn/rng.hpp"
#include "bnn/tolerance.hpp"

namespace bnn {

namespace {
constexpr std::uint64_t kMaskPurpose = 0x4D41534Bu;
constexpr std::uint64_t kShufflePurpose = 0x53485546u;
}  // namespace

const char* flip_mode_name(FlipMode m) {
  switch (m) {
    case FlipMode::none: return "none";
    case FlipMode::native: return "native";
    case FlipMode::straight_through: return "straight_through";
  }
  return "?";
}

FlipMode flip_mode_from_name(const std::string& s) {
  if (s == "none") return FlipMode::none;
  if (s == "native") return FlipMode::native;
  if (s == "straight_through") return FlipMode::straight_through;
  throw ConfigError("unknown flip mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (lr_decay_every == 0) throw ConfigError("train: lr_decay_every >= 1");
  if (!(flip_p >= 0.0 && flip_p <= 1.0))
    throw ConfigError("train: flip_p must be in [0,1]");
  if (flip_mode != FlipMode::none && direct_reg)
    throw ConfigError(
        "train: flip regularization and direct regularization are exclusive");
  if (direct_reg) {
    if (!(direct_reg->lambda > 0.0))
      throw ConfigError("train: direct_reg lambda must be positive");
    if (!(direct_reg->b >= 0.0))
      throw ConfigError("train: direct_reg b must be non-negative");
  }
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr * std::pow(lr_decay, double(epoch / lr_decay_every));
}

CrossEntropyResult cross_entropy_loss(const RealTensor& logits,
                                      std::span<const int> labels) {
  if (logits.shape().rank() != 2)
    throw ShapeError("cross_entropy_loss: logits must be [batch, classes]");
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (labels.size() != batch)
    throw ShapeError("cross_entropy_loss: label count mismatch");
  logits.check_finite("cross_entropy_loss");

  CrossEntropyResult out;
  out.dlogits = RealTensor(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || std::size_t(y) >= classes)
      throw ValueError("cross_entropy_loss: label out of range");
    const double* row = logits.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    loss += -(row[y] - mx - std::log(sum));
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - mx) / sum;
      out.dlogits[i * classes + c] =
          (p - (std::size_t(y) == c ? 1.0 : 0.0)) / double(batch);
    }
  }
  out.loss = loss / double(batch);
  return out;
}

void AdamOptimizer::update(Slot& slot, std::span<double> param,
                           std::span<const double> g, double lr, bool clamp) {
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(beta1, double(t_));
  const double bc2 = 1.0 - std::pow(beta2, double(t_));
  for (std::size_t i = 0; i < param.size(); ++i) {
    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = slot.m[i] / bc1;
    const double vhat = slot.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    if (clamp) param[i] = std::clamp(param[i], -1.0, 1.0);
  }
}

void AdamOptimizer::step(LayerGraph& g, const Gradients& grads, double lr) {
  const std::size_t n = g.layers.size();
  latent_slots_.resize(n);
  gamma_slots_.resize(n);
  beta_slots_.resize(n);
  ++t_;
  for (std::size_t i = 0; i < n; ++i) {
    if (grads.latent[i]) {
      RealTensor* latent = nullptr;
      if (auto* d = std::get_if<DenseLayer>(&g.layers[i])) latent = &d->latent;
      else if (auto* c = std::get_if<ConvLayer>(&g.layers[i])) latent = &c->latent;
      if (!latent || latent->size() != grads.latent[i]->size())
        throw ShapeError("adam: gradient does not match layer parameters");
      update(latent_slots_[i], {latent->data(), latent->size()},
             {grads.latent[i]->data(), grads.latent[i]->size()}, lr, true);
    }
    if (grads.bn[i]) {
      auto* nl = std::get_if<NormLayer>(&g.layers[i]);
      if (!nl || nl->bn.channels() != grads.bn[i]->dgamma.size())
        throw ShapeError("adam: norm gradient does not match layer");
      update(gamma_slots_[i], nl->bn.gamma, grads.bn[i]->dgamma, lr, false);
      update(beta_slots_[i], nl->bn.beta, grads.bn[i]->dbeta, lr, false);
    }
  }
  g.refresh_binary();
}

namespace {

// Fill the regularizer hook for hidden (sign-feeding) norm layers.
RegHook make_reg_hook(const LayerGraph& g, const DirectRegConfig& cfg,
                      std::size_t batch, double* penalty_out) {
  RegHook hook;
  hook.b = cfg.b;
  hook.lambda = cfg.lambda;
  hook.layer_weight.assign(g.layers.size(), 0.0);
  hook.zdiv.assign(g.layers.size(), 1.0);
  hook.penalty_out = penalty_out;

  // Walk the graph to find each norm layer's channel/spatial extents and
  // whether the first weight layer feeds it.
  Shape cur = g.input_shape;
  bool from_first = false;
  double count = 0.0;
  std::size_t sign_ordinal = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&g.layers[i])) {
      cur = Shape{d->out};
      from_first = d->first;
    } else if (const auto* c = std::get_if<ConvLayer>(&g.layers[i])) {
      cur = Shape{c->filters, cur[1] - c->kh + 1, cur[2] - c->kw + 1};
      from_first = c->first;
    } else if (std::holds_alternative<PoolLayer>(g.layers[i])) {
      cur = Shape{cur[0], cur[1] / 2, cur[2] / 2};
    } else if (std::holds_alternative<NormLayer>(g.layers[i])) {
      const bool hidden = i + 1 < g.layers.size() &&
                          std::holds_alternative<SignLayer>(g.layers[i + 1]);
      if (hidden) {
        double w = 1.0;
        if (!cfg.layer_weights.empty())
          w = sign_ordinal < cfg.layer_weights.size()
                  ? cfg.layer_weights[sign_ordinal]
                  : 0.0;
        hook.layer_weight[i] = w;
        hook.zdiv[i] = from_first ? double(g.z) : 1.0;
        count += double(cur.elems() * batch);
        ++sign_ordinal;
      }
    }
  }
  if (count == 0.0)
    throw ConfigError("direct regularizer: graph has no hidden sign layers");
  hook.inv_count = 1.0 / count;
  return hook;
}

}  // namespace

LossValue train_step(LayerGraph& g, AdamOptimizer& opt, const RealTensor& x,
                     std::span<const int> labels, const TrainConfig& cfg,
                     double lr, std::uint64_t step_index) {
  const std::size_t weight_tensors = g.weight_layers().size();
  BitErrorChannel channel{cfg.flip_p,
                          rng::derive_seed(cfg.seed, kMaskPurpose), 0};
  const bool flips = cfg.flip_mode != FlipMode::none;

  ForwardTrace trace;
  const RealTensor logits = g.forward_train(
      x, flips ? &channel : nullptr, step_index * weight_tensors, trace);
  CrossEntropyResult ce = cross_entropy_loss(logits, labels);

  LossValue loss;
  loss.cross_entropy = ce.loss;

  const FlipGradMode mode = cfg.flip_mode == FlipMode::native
                                ? FlipGradMode::native
                                : FlipGradMode::straight_through;
  Gradients grads;
  if (cfg.direct_reg) {
    loss.lambda = cfg.direct_reg->lambda;
    RegHook hook =
        make_reg_hook(g, *cfg.direct_reg, x.shape()[0], &loss.reg_penalty);
    grads = g.backward(trace, ce.dlogits, mode, &hook);
  } else {
    grads = g.backward(trace, ce.dlogits, mode);
  }
  opt.step(g, grads, lr);
  return loss;
}

RealTensor gather_batch(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t feat = ds.features();
  RealTensor x(Shape{idx.size(), feat});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < feat; ++j)
      x[i * feat + j] = double(ds.images[idx[i] * feat + j]);
  return x;
}

TrainResult train(LayerGraph& g, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& cfg) {
  cfg.validate();
  train_set.validate();
  if (train_set.features() != g.input_features() ||
      eval_set.features() != g.input_features())
    throw ShapeError("train: dataset sample shape does not match graph");
  if (train_set.classes != g.classes)
    throw ShapeError("train: dataset class count does not match graph");
  if (train_set.z != eval_set.z)
    throw ConfigError("train: train/eval pixel scales differ");
  g.z = train_set.z;

  AdamOptimizer opt;
  TrainResult result;
  result.best = g.clone();
  result.best_acc = -1.0;

  std::vector<std::size_t> order(train_set.count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::uint64_t step_index = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    rng::Stream shuffler(rng::derive_seed(cfg.seed, kShufflePurpose), epoch);
    shuffler.shuffle(order);

    double loss_sum = 0.0, penalty_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t sz = std::min(cfg.batch_size, order.size() - at);
      std::span<const std::size_t> idx(order.data() + at, sz);
      RealTensor x = gather_batch(train_set, idx);
      std::vector<int> y(sz);
      for (std::size_t i = 0; i < sz; ++i) y[i] = train_set.labels[idx[i]];
      const LossValue loss = train_step(g, opt, x, y, cfg, lr, step_index++);
      loss_sum += loss.total();
      penalty_sum += loss.reg_penalty;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = loss_sum / double(batches);
    log.penalty = penalty_sum / double(batches);
    log.eval_acc =
        evaluate_accuracy(g, eval_set.images,
                          {eval_set.labels.data(), eval_set.labels.size()});
    if (cfg.tb_snapshot_level) {
      ToleranceConfig tc;
      tc.b_levels = {*cfg.tb_snapshot_level};
      log.tb_snapshot =
          network_tolerance(g, eval_set.images, eval_set.count(), tc)
              .network_tb[0];
    }
    result.logs.push_back(log);

    if (log.eval_acc > result.best_acc) {
      result.best_acc = log.eval_acc;
      result.best = g.clone();
    }
  }
  if (cfg.epochs == 0) {
    result.best = g.clone();
    result.best_acc = 0.0;
  }
  return result;
}

}  // namespace bnn
