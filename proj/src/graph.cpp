#include "bnn/graph.hpp"

#include <cmath>

#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"

namespace bnn {

namespace {

constexpr std::uint64_t kInitPurpose = 0x57454947u;  // weight init seeds

std::size_t scaled_width(std::size_t w, double scale) {
  const long long v = std::llround(double(w) * scale);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

void init_uniform(RealTensor& t, std::uint64_t seed, std::uint64_t stream) {
  rng::Stream s(seed, stream);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.next_signed_unit();
}

}  // namespace

// ----- construction -----

LayerGraph LayerGraph::build_preset(const std::string& name,
                                    double width_scale,
                                    std::uint64_t init_seed) {
  if (!(width_scale > 0.0))
    throw ConfigError("build_preset: width_scale must be positive");

  LayerGraph g;
  g.preset = name;
  g.width_scale = width_scale;
  g.z = 255;

  const std::uint64_t seed = rng::derive_seed(init_seed, kInitPurpose);
  std::size_t widx = 0;
  Shape cur;  // per-sample activation shape while assembling

  auto add_dense = [&](std::size_t out, bool first) {
    DenseLayer d;
    d.in = cur.elems();
    d.out = out;
    d.first = first;
    d.latent = RealTensor(Shape{d.out, d.in});
    init_uniform(d.latent, seed, widx++);
    g.layers.emplace_back(std::move(d));
    cur = Shape{out};
  };
  auto add_conv = [&](std::size_t filters, std::size_t k, bool first) {
    ConvLayer c;
    c.channels = cur[0];
    c.filters = filters;
    c.kh = c.kw = k;
    c.first = first;
    if (cur[1] < k || cur[2] < k)
      throw ConfigError("build_preset: feature map smaller than kernel");
    c.latent = RealTensor(Shape{filters, c.channels, k, k});
    init_uniform(c.latent, seed, widx++);
    g.layers.emplace_back(std::move(c));
    cur = Shape{filters, cur[1] - k + 1, cur[2] - k + 1};
  };
  auto add_pool = [&]() {
    // Valid padding can shrink maps to 1x1 before a scheduled pool; such
    // pools would produce empty maps and are dropped.
    if (cur[1] < 2 || cur[2] < 2) return;
    g.layers.emplace_back(PoolLayer{});
    cur = Shape{cur[0], cur[1] / 2, cur[2] / 2};
  };
  auto add_norm_sign = [&]() {
    const std::size_t ch = cur.rank() == 3 ? cur[0] : cur.elems();
    g.layers.emplace_back(NormLayer{BatchNormState::identity(ch)});
    g.layers.emplace_back(SignLayer{});
  };
  auto add_head_norm = [&]() {
    g.layers.emplace_back(NormLayer{BatchNormState::identity(cur.elems())});
  };

  if (name == "fashion-fcnn") {
    g.input_shape = Shape{1, 28, 28};
    g.classes = 10;
    cur = g.input_shape;
    const std::size_t h = scaled_width(2048, width_scale);
    add_dense(h, true);
    add_norm_sign();
    add_dense(h, false);
    add_norm_sign();
    add_dense(10, false);
    add_head_norm();
  } else if (name == "fashion-cnn") {
    g.input_shape = Shape{1, 28, 28};
    g.classes = 10;
    cur = g.input_shape;
    const std::size_t c = scaled_width(64, width_scale);
    const std::size_t h = scaled_width(2048, width_scale);
    add_conv(c, 3, true);
    add_pool();
    add_norm_sign();
    add_conv(c, 3, false);
    add_pool();
    add_norm_sign();
    add_dense(h, false);
    add_norm_sign();
    add_dense(h, false);
    add_norm_sign();
    add_dense(10, false);
    add_head_norm();
  } else if (name == "cifar10-cnn") {
    g.input_shape = Shape{3, 32, 32};
    g.classes = 10;
    cur = g.input_shape;
    const std::size_t c1 = scaled_width(128, width_scale);
    const std::size_t c2 = scaled_width(256, width_scale);
    const std::size_t h = scaled_width(2048, width_scale);
    add_conv(c1, 3, true);
    add_norm_sign();
    add_conv(c1, 3, false);
    add_pool();
    add_norm_sign();
    add_conv(c2, 3, false);
    add_norm_sign();
    add_conv(c2, 3, false);
    add_pool();
    add_norm_sign();
    add_conv(c2, 3, false);
    add_norm_sign();
    add_conv(c2, 3, false);
    add_pool();
    add_norm_sign();
    add_dense(h, false);
    add_norm_sign();
    add_dense(h, false);
    add_norm_sign();
    add_dense(10, false);
    add_head_norm();
  } else if (name == "tiny-fcnn") {
    g.input_shape = Shape{1, 4, 4};
    g.classes = 2;
    cur = g.input_shape;
    add_dense(scaled_width(8, width_scale), true);
    add_norm_sign();
    add_dense(2, false);
    add_head_norm();
  } else if (name == "tiny-cnn") {
    g.input_shape = Shape{1, 6, 6};
    g.classes = 2;
    cur = g.input_shape;
    add_conv(scaled_width(4, width_scale), 3, true);
    add_pool();
    add_norm_sign();
    add_dense(2, false);
    add_head_norm();
  } else {
    throw ConfigError("build_preset: unknown preset '" + name + "'");
  }

  g.refresh_binary();
  return g;
}

void LayerGraph::refresh_binary() {
  for (auto& layer : layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer))
      d->bits = binarize(d->latent);
    else if (auto* c = std::get_if<ConvLayer>(&layer))
      c->bits = binarize(c->latent);
  }
  ++stamp_;
}

std::size_t LayerGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer))
      n += d->latent.size();
    else if (const auto* c = std::get_if<ConvLayer>(&layer))
      n += c->latent.size();
    else if (const auto* nl = std::get_if<NormLayer>(&layer))
      n += 2 * nl->bn.channels();
  }
  return n;
}

std::size_t LayerGraph::binary_weight_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) n += d->bits.size();
    else if (const auto* c = std::get_if<ConvLayer>(&layer)) n += c->bits.size();
  }
  return n;
}

std::vector<std::size_t> LayerGraph::weight_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (std::holds_alternative<DenseLayer>(layers[i]) ||
        std::holds_alternative<ConvLayer>(layers[i]))
      out.push_back(i);
  return out;
}

// ----- training-mode forward -----

RealTensor LayerGraph::forward_train(const RealTensor& x,
                                     const BitErrorChannel* channel,
                                     std::uint64_t mask_stream_base,
                                     ForwardTrace& trace) {
  if (x.shape().rank() != 2 || x.shape()[1] != input_features())
    throw ShapeError("forward_train: input must be [batch, " +
                     std::to_string(input_features()) + "]");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!(v >= 0.0 && v <= double(z)) || v != std::floor(v))
      throw ValueError("forward_train: pixel values must be integers in [0," +
                       std::to_string(z) + "]");
  }

  const std::size_t batch = x.shape()[0];
  trace.layers.assign(layers.size(), std::monostate{});
  trace.batch = batch;
  trace.stamp = stamp_;

  RealTensor act = x;
  Shape sample = input_shape;
  bool binary_act = false;
  std::size_t widx = 0;

  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (auto* d = std::get_if<DenseLayer>(&layers[li])) {
      if (sample.elems() != d->in)
        throw ShapeError("forward_train: dense input size mismatch");
      LinearTrace lt;
      lt.in_sample = sample;
      lt.out_sample = Shape{d->out};
      lt.bits_used = d->bits;
      if (channel) {
        lt.mask = sample_mask(channel->with_stream(mask_stream_base + widx),
                              d->latent.shape());
        lt.bits_used = apply_flips(lt.bits_used, *lt.mask);
      }
      const RealTensor w = decode_signs(lt.bits_used);
      RealTensor h = gemm_nt(act.reshaped(Shape{batch, d->in}), w);
      lt.input = std::move(act);
      lt.h = h;
      trace.layers[li] = std::move(lt);
      act = std::move(h);
      sample = Shape{d->out};
      binary_act = false;
      ++widx;
    } else if (auto* cl = std::get_if<ConvLayer>(&layers[li])) {
      if (sample.rank() != 3 || sample[0] != cl->channels)
        throw ShapeError("forward_train: conv input shape mismatch");
      LinearTrace lt;
      lt.in_sample = sample;
      lt.bits_used = cl->bits;
      if (channel) {
        lt.mask = sample_mask(channel->with_stream(mask_stream_base + widx),
                              cl->latent.shape());
        lt.bits_used = apply_flips(lt.bits_used, *lt.mask);
      }
      const std::size_t u = sample[1] - cl->kh + 1;
      const std::size_t v = sample[2] - cl->kw + 1;
      lt.out_sample = Shape{cl->filters, u, v};
      RealTensor h(Shape{batch, cl->filters * u * v});
      for (std::size_t b = 0; b < batch; ++b) {
        IntTensor hs;
        if (binary_act) {
          BinaryTensor xs(sample);
          for (std::size_t j = 0; j < sample.elems(); ++j)
            if (act[b * sample.elems() + j] > 0.0) xs.set(j, +1);
          hs = binary_conv2d(lt.bits_used, xs);
        } else {
          IntTensor xs(sample);
          for (std::size_t j = 0; j < sample.elems(); ++j)
            xs[j] = static_cast<std::int32_t>(
                std::llround(act[b * sample.elems() + j]));
          hs = int_conv2d_first_layer(lt.bits_used, xs, z);
        }
        for (std::size_t j = 0; j < hs.size(); ++j)
          h[b * hs.size() + j] = double(hs[j]);
      }
      lt.input = std::move(act);
      lt.h = h;
      const Shape out_sample = lt.out_sample;
      trace.layers[li] = std::move(lt);
      act = std::move(h);
      sample = out_sample;
      binary_act = false;
      ++widx;
    } else if (std::holds_alternative<PoolLayer>(layers[li])) {
      if (sample.rank() != 3)
        throw ShapeError("forward_train: pool expects a [C,H,W] activation");
      PoolTrace pt;
      pt.in_sample = sample;
      pt.per_sample.resize(batch);
      Shape out_sample;
      RealTensor pooled;
      for (std::size_t b = 0; b < batch; ++b) {
        RealTensor xs(sample);
        for (std::size_t j = 0; j < sample.elems(); ++j)
          xs[j] = act[b * sample.elems() + j];
        pt.per_sample[b] = maxpool2_with_argmax(xs);
        if (b == 0) {
          out_sample = pt.per_sample[0].pooled.shape();
          pooled = RealTensor(Shape{batch, out_sample.elems()});
        }
        for (std::size_t j = 0; j < out_sample.elems(); ++j)
          pooled[b * out_sample.elems() + j] = pt.per_sample[b].pooled[j];
      }
      pt.out_sample = out_sample;
      trace.layers[li] = std::move(pt);
      act = std::move(pooled);
      sample = out_sample;
    } else if (auto* nl = std::get_if<NormLayer>(&layers[li])) {
      const std::size_t ch =
          sample.rank() == 3 ? sample[0] : sample.elems();
      const std::size_t spatial = sample.elems() / ch;
      NormTrace nt;
      act = bn_forward_train(act, ch, spatial, nl->bn, nt.cache);
      trace.layers[li] = std::move(nt);
    } else {  // SignLayer
      for (std::size_t j = 0; j < act.size(); ++j)
        act[j] = act[j] > 0.0 ? 1.0 : -1.0;
      binary_act = true;
    }
  }

  if (sample.elems() != classes)
    throw ShapeError("forward_train: head width does not match class count");
  trace.logits = act;
  return act;
}

// ----- backward -----

namespace {

// Hinge regularizer contribution at one hidden norm layer. Adds the exact
// gradient of lambda * mean-hinge to dx/dgamma/dbeta, including the paths
// through the batch statistics, and accumulates the raw penalty value.
void apply_reg_hook(const RegHook& reg, std::size_t layer_index,
                    const BnCache& cache, const BatchNormState& bn,
                    double zdiv, RealTensor& dx, BnGrad& bg) {
  const double w = reg.layer_weight[layer_index];
  if (w == 0.0) return;
  const std::size_t batch = cache.batch, channels = cache.channels,
                    spatial = cache.spatial;
  const double m = double(batch * spatial);
  const double gscale = reg.lambda * w * reg.inv_count / zdiv;

  double penalty = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double sigma = std::sqrt(cache.var[c] + bn.eps);
    const double gamma = bn.gamma[c];
    const double tau = cache.mu[c] - bn.beta[c] * sigma / gamma;

    double gsum = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        const double d = (cache.input[i] - tau) / zdiv;
        const double t = std::abs(d);
        if (t < reg.b) {
          penalty += (reg.b - t) * w;
          if (t > 0.0) {
            const double g = (d > 0.0 ? -1.0 : 1.0) * gscale;
            dx[i] += g;
            gsum += g;
          }
        }
      }

    // tau depends on mu, sigma, beta, gamma; push the summed gradient
    // through each path.
    const double dtau = -gsum;
    bg.dbeta[c] += dtau * (-sigma / gamma);
    bg.dgamma[c] += dtau * (bn.beta[c] * sigma / (gamma * gamma));
    const double dmu = dtau;
    const double dsigma = dtau * (-bn.beta[c] / gamma);
    const double dvar = dsigma / (2.0 * sigma);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        dx[i] += dmu / m + dvar * 2.0 * (cache.input[i] - cache.mu[c]) / m;
      }
  }
  if (reg.penalty_out) *reg.penalty_out += penalty * reg.inv_count;
}

}  // namespace

Gradients LayerGraph::backward(const ForwardTrace& trace,
                               const RealTensor& dlogits, FlipGradMode mode,
                               const RegHook* reg) const {
  if (trace.stamp != stamp_)
    throw ValueError("backward: stale trace (graph changed since forward)");
  const std::size_t batch = trace.batch;
  Gradients grads;
  grads.latent.resize(layers.size());
  grads.bn.resize(layers.size());

  RealTensor cur = dlogits;
  for (std::size_t ri = layers.size(); ri-- > 0;) {
    if (const auto* nl = std::get_if<NormLayer>(&layers[ri])) {
      const auto& nt = std::get<NormTrace>(trace.layers[ri]);
      BnGrad bg;
      RealTensor dx = bn_backward(cur, nt.cache, nl->bn, bg);
      if (reg && reg->layer_weight[ri] != 0.0) {
        const double zdiv = reg->zdiv.empty() ? 1.0 : reg->zdiv[ri];
        apply_reg_hook(*reg, ri, nt.cache, nl->bn, zdiv, dx, bg);
      }
      grads.bn[ri] = std::move(bg);
      cur = std::move(dx);
    } else if (std::holds_alternative<SignLayer>(layers[ri])) {
      // straight-through: gradient of the sign activation is the identity
    } else if (std::holds_alternative<PoolLayer>(layers[ri])) {
      const auto& pt = std::get<PoolTrace>(trace.layers[ri]);
      RealTensor dx(Shape{batch, pt.in_sample.elems()});
      const std::size_t oe = pt.out_sample.elems();
      for (std::size_t b = 0; b < batch; ++b) {
        RealTensor dp(pt.out_sample);
        for (std::size_t j = 0; j < oe; ++j) dp[j] = cur[b * oe + j];
        RealTensor dxs = maxpool2_backward(pt.per_sample[b], dp);
        for (std::size_t j = 0; j < dxs.size(); ++j)
          dx[b * dxs.size() + j] = dxs[j];
      }
      cur = std::move(dx);
    } else if (const auto* d = std::get_if<DenseLayer>(&layers[ri])) {
      const auto& lt = std::get<LinearTrace>(trace.layers[ri]);
      RealTensor dw(Shape{d->out, d->in});
      gemm_tn_acc(cur, lt.input.reshaped(Shape{batch, d->in}), dw);
      if (mode == FlipGradMode::native && lt.mask)
        for (std::size_t i = 0; i < dw.size(); ++i)
          dw[i] *= double(lt.mask->mask.get(i));
      grads.latent[ri] = std::move(dw);
      if (!d->first) {
        const RealTensor w = decode_signs(lt.bits_used);
        cur = gemm_nn(cur, w);
      }
    } else if (const auto* cl = std::get_if<ConvLayer>(&layers[ri])) {
      const auto& lt = std::get<LinearTrace>(trace.layers[ri]);
      const std::size_t C = cl->channels, KH = cl->kh, KW = cl->kw,
                        F = cl->filters;
      const std::size_t H = lt.in_sample[1], W = lt.in_sample[2];
      const std::size_t U = lt.out_sample[1], V = lt.out_sample[2];
      const std::vector<int> wsigns = lt.bits_used.unpack();

      RealTensor dw(Shape{F, C, KH, KW});
      RealTensor dx(Shape{batch, C * H * W});
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xin = lt.input.data() + b * C * H * W;
        const double* dh = cur.data() + b * F * U * V;
        double* dxb = dx.data() + b * C * H * W;
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t u = 0; u < U; ++u)
            for (std::size_t v = 0; v < V; ++v) {
              const double g = dh[(f * U + u) * V + v];
              if (g == 0.0) continue;
              for (std::size_t c = 0; c < C; ++c)
                for (std::size_t kh = 0; kh < KH; ++kh)
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    const std::size_t xi = (c * H + u + kh) * W + (v + kw);
                    const std::size_t wi =
                        ((f * C + c) * KH + kh) * KW + kw;
                    dw[wi] += g * xin[xi];
                    if (!cl->first) dxb[xi] += g * double(wsigns[wi]);
                  }
            }
      }
      if (mode == FlipGradMode::native && lt.mask)
        for (std::size_t i = 0; i < dw.size(); ++i)
          dw[i] *= double(lt.mask->mask.get(i));
      grads.latent[ri] = std::move(dw);
      if (!cl->first) cur = std::move(dx);
    }
  }
  return grads;
}

// ----- evaluation path -----

EvalContext::EvalContext(const LayerGraph& g) : graph_(&g) {
  shifts_.resize(g.layers.size());
  for (std::size_t i = 0; i + 1 < g.layers.size(); ++i)
    if (const auto* nl = std::get_if<NormLayer>(&g.layers[i]))
      if (std::holds_alternative<SignLayer>(g.layers[i + 1]))
        shifts_[i] = fold_batchnorm_threshold(nl->bn);
}

std::vector<double> LayerGraph::forward_eval(const EvalContext& ctx,
                                             const IntTensor& x,
                                             EvalTrace* trace) const {
  if (x.shape().elems() != input_features())
    throw ShapeError("forward_eval: input element count mismatch");
  ctx.count_sample();

  IntTensor ints = x.shape() == input_shape ? x : x.reshaped(input_shape);
  BinaryTensor bits;
  bool have_bits = false;
  std::size_t last_weight_layer = 0;
  bool last_first = false;

  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (const auto* d = std::get_if<DenseLayer>(&layers[li])) {
      if (have_bits)
        ints = binary_matmul(d->bits, bits.reshaped(Shape{d->in}));
      else
        ints = int_matmul(d->bits, ints.reshaped(Shape{d->in}), z);
      have_bits = false;
      last_weight_layer = li;
      last_first = d->first;
    } else if (const auto* cl = std::get_if<ConvLayer>(&layers[li])) {
      if (have_bits)
        ints = binary_conv2d(cl->bits, bits);
      else
        ints = int_conv2d_first_layer(cl->bits, ints, z);
      have_bits = false;
      last_weight_layer = li;
      last_first = cl->first;
    } else if (std::holds_alternative<PoolLayer>(layers[li])) {
      if (have_bits)
        throw ValueError("forward_eval: pooling binary activations is not supported");
      ints = maxpool2(ints);
    } else if (const auto* nl = std::get_if<NormLayer>(&layers[li])) {
      if (ctx.shift(li)) {
        const NeuronShift& ns = *ctx.shift(li);
        const Shape& hs = ints.shape();
        const std::size_t ch = hs.rank() == 3 ? hs[0] : hs.elems();
        const std::size_t spatial = hs.elems() / ch;
        if (trace) {
          EvalSignLayer sl;
          sl.weight_layer = last_weight_layer;
          sl.first = last_first;
          sl.channels = ch;
          sl.u = hs.rank() == 3 ? hs[1] : 1;
          sl.v = hs.rank() == 3 ? hs[2] : 1;
          sl.h = ints;
          sl.shift = &ns;
          trace->sign_layers.push_back(std::move(sl));
        }
        bits = BinaryTensor(hs);
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t sp = 0; sp < spatial; ++sp) {
            const std::size_t i = c * spatial + sp;
            if (ns.activate(ints[i], c) > 0) bits.set(i, +1);
          }
        have_bits = true;
        ++li;  // the paired sign layer is realized by the threshold
      } else {
        // head normalization produces the real logits
        std::vector<double> logits(ints.size());
        for (std::size_t c = 0; c < ints.size(); ++c)
          logits[c] = nl->bn.gamma[c] * (double(ints[c]) -
                                         nl->bn.running_mean[c]) /
                          std::sqrt(nl->bn.running_var[c] + nl->bn.eps) +
                      nl->bn.beta[c];
        return logits;
      }
    } else {
      throw ValueError("forward_eval: unexpected bare sign layer");
    }
  }
  throw ValueError("forward_eval: graph has no output normalization");
}

std::size_t argmax_label(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

double evaluate_accuracy(const LayerGraph& g, const IntTensor& images,
                         std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (n == 0) throw ValueError("evaluate_accuracy: empty dataset");
  const std::size_t feat = images.shape().elems() / n;
  if (feat != g.input_features())
    throw ShapeError("evaluate_accuracy: image size mismatch");
  EvalContext ctx(g);
  std::vector<std::uint8_t> correct(n, 0);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      IntTensor sample(g.input_shape);
      for (std::size_t j = 0; j < feat; ++j) sample[j] = images[i * feat + j];
      const auto logits = g.forward_eval(ctx, sample);
      correct[i] = argmax_label(logits) == std::size_t(labels[i]) ? 1 : 0;
    }
  });
  std::size_t ok = 0;
  for (auto c : correct) ok += c;
  return double(ok) / double(n);
}

}  // namespace bnn
