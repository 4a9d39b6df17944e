#pragma once

#include <cstdint>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

// Per-channel batch normalization parameters and running statistics.
// Training normalizes with batch statistics and updates the running pair;
// evaluation always uses the running pair.
struct BatchNormState {
  std::vector<double> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  std::size_t channels() const { return gamma.size(); }

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.gamma.assign(channels, 1.0);
    s.beta.assign(channels, 0.0);
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    return s;
  }
};

struct BnCache {
  RealTensor input;  // [batch, channels*spatial]
  std::vector<double> mu, var;  // biased batch statistics
  std::size_t batch = 0, channels = 0, spatial = 0;
};

struct BnGrad {
  std::vector<double> dgamma, dbeta;
};

// x layout: [batch, channels*spatial], channel-major within a sample.
RealTensor bn_forward_train(const RealTensor& x, std::size_t channels,
                            std::size_t spatial, BatchNormState& bn,
                            BnCache& cache);
RealTensor bn_forward_eval(const RealTensor& x, std::size_t channels,
                           std::size_t spatial, const BatchNormState& bn);
RealTensor bn_backward(const RealTensor& dy, const BnCache& cache,
                       const BatchNormState& bn, BnGrad& grad);

// Integer threshold fold. For every integer pre-activation h the sign of
// the normalized output equals orientation * sign(h - s - 1/2): positive
// gamma keeps the comparison direction (s = floor(tau)), negative gamma
// reverses it (s = ceil(tau) - 1). tau = mean - beta*sigma/gamma is the
// real-valued activation threshold.
struct NeuronShift {
  std::vector<std::int64_t> s;
  std::vector<std::int8_t> orientation;  // +1 or -1

  std::size_t channels() const { return s.size(); }

  // Sign output for integer pre-activation h on channel c.
  int activate(std::int64_t h, std::size_t c) const {
    const bool above = h > s[c];
    return (orientation[c] > 0) == above ? +1 : -1;
  }
};

// Throws ValueError when some gamma is zero (degenerate normalization).
NeuronShift fold_batchnorm_threshold(const BatchNormState& bn);

}  // namespace bnn
