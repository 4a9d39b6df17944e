#include "bnn/batchnorm.hpp"

#include <cmath>

namespace bnn {

namespace {

void check_layout(const RealTensor& x, std::size_t channels,
                  std::size_t spatial) {
  if (x.shape().rank() != 2 || x.shape()[1] != channels * spatial)
    throw ShapeError("batchnorm: input layout mismatch");
}

}  // namespace

RealTensor bn_forward_train(const RealTensor& x, std::size_t channels,
                            std::size_t spatial, BatchNormState& bn,
                            BnCache& cache) {
  check_layout(x, channels, spatial);
  if (bn.channels() != channels)
    throw ShapeError("batchnorm: channel count mismatch");
  const std::size_t batch = x.shape()[0];
  const std::size_t m = batch * spatial;

  cache.input = x;
  cache.batch = batch;
  cache.channels = channels;
  cache.spatial = spatial;
  cache.mu.assign(channels, 0.0);
  cache.var.assign(channels, 0.0);

  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const double v = x[(b * channels + c) * spatial + sp];
        sum += v;
        sumsq += v * v;
      }
    const double mu = sum / double(m);
    double var = sumsq / double(m) - mu * mu;
    if (var < 0.0) var = 0.0;  // guard tiny negative from cancellation
    cache.mu[c] = mu;
    cache.var[c] = var;

    const double unbiased = m > 1 ? var * double(m) / double(m - 1) : var;
    bn.running_mean[c] =
        (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mu;
    bn.running_var[c] =
        (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased;
  }

  RealTensor y(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv = 1.0 / std::sqrt(cache.var[c] + bn.eps);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        y[i] = bn.gamma[c] * (x[i] - cache.mu[c]) * inv + bn.beta[c];
      }
  }
  return y;
}

RealTensor bn_forward_eval(const RealTensor& x, std::size_t channels,
                           std::size_t spatial, const BatchNormState& bn) {
  check_layout(x, channels, spatial);
  const std::size_t batch = x.shape()[0];
  RealTensor y(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        y[i] = bn.gamma[c] * (x[i] - bn.running_mean[c]) * inv + bn.beta[c];
      }
  }
  return y;
}

RealTensor bn_backward(const RealTensor& dy, const BnCache& cache,
                       const BatchNormState& bn, BnGrad& grad) {
  const std::size_t batch = cache.batch;
  const std::size_t channels = cache.channels;
  const std::size_t spatial = cache.spatial;
  check_layout(dy, channels, spatial);
  if (dy.shape()[0] != batch) throw ValueError("bn_backward: stale cache");
  const double m = double(batch * spatial);

  grad.dgamma.assign(channels, 0.0);
  grad.dbeta.assign(channels, 0.0);
  RealTensor dx(dy.shape());

  for (std::size_t c = 0; c < channels; ++c) {
    const double mu = cache.mu[c];
    const double sigma = std::sqrt(cache.var[c] + bn.eps);
    const double inv = 1.0 / sigma;

    double dgamma = 0.0, dbeta = 0.0, dvar = 0.0, dmu_a = 0.0, xm_sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        const double xm = cache.input[i] - mu;
        const double g = dy[i];
        dgamma += g * xm * inv;
        dbeta += g;
        const double dxhat = g * bn.gamma[c];
        dvar += dxhat * xm;
        dmu_a += dxhat;
        xm_sum += xm;
      }
    dvar *= -0.5 * inv * inv * inv;
    const double dmu = -dmu_a * inv + dvar * (-2.0 / m) * xm_sum;

    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = (b * channels + c) * spatial + sp;
        const double xm = cache.input[i] - mu;
        dx[i] = dy[i] * bn.gamma[c] * inv + dvar * 2.0 * xm / m + dmu / m;
      }
    grad.dgamma[c] = dgamma;
    grad.dbeta[c] = dbeta;
  }
  return dx;
}

NeuronShift fold_batchnorm_threshold(const BatchNormState& bn) {
  NeuronShift out;
  const std::size_t channels = bn.channels();
  out.s.resize(channels);
  out.orientation.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double gamma = bn.gamma[c];
    if (gamma == 0.0)
      throw ValueError("fold_batchnorm_threshold: gamma is zero");
    const double denom = bn.running_var[c] + bn.eps;
    if (!(denom > 0.0))
      throw ValueError("fold_batchnorm_threshold: running_var + eps <= 0");
    const double tau =
        bn.running_mean[c] - bn.beta[c] * std::sqrt(denom) / gamma;
    if (!(std::abs(tau) < 9.0e18))
      throw ValueError("fold_batchnorm_threshold: threshold out of range");
    if (gamma > 0.0) {
      out.s[c] = static_cast<std::int64_t>(std::floor(tau));
      out.orientation[c] = +1;
    } else {
      out.s[c] = static_cast<std::int64_t>(std::ceil(tau)) - 1;
      out.orientation[c] = -1;
    }
  }
  return out;
}

}  // namespace bnn
