#include "bnn/error_channel.hpp"

#include "bnn/graph.hpp"
#include "bnn/rng.hpp"

namespace bnn {

FlipMask sample_mask(const BitErrorChannel& ch, const Shape& shape) {
  if (!(ch.p >= 0.0 && ch.p <= 1.0))
    throw ValueError("sample_mask: p must be in [0,1]");
  FlipMask m{BinaryTensor(shape)};
  // Element index doubles as the counter, so the mask is independent of
  // how many masks were drawn before and of any threading.
  for (std::size_t i = 0; i < shape.elems(); ++i) {
    const double u = rng::unit_double(rng::word_at(ch.seed, ch.stream_id, i));
    if (!(u < ch.p)) m.mask.set(i, +1);  // keep
  }
  return m;
}

BinaryTensor apply_flips(const BinaryTensor& w, const FlipMask& m) {
  require_same_shape(w.shape(), m.mask.shape(), "apply_flips");
  BinaryTensor out = w;
  auto& ow = out.words();
  const auto& mw = m.mask.words();
  // Elementwise +-1 product is XNOR on the packed words.
  for (std::size_t i = 0; i < ow.size(); ++i) ow[i] = ~(ow[i] ^ mw[i]);
  out.canonicalize();
  return out;
}

LayerGraph inject_persistent(const LayerGraph& graph, double rate,
                             std::uint64_t trial_seed) {
  LayerGraph out = graph.clone();
  std::uint64_t stream = 0;
  for (auto& layer : out.layers) {
    BinaryTensor* bits = nullptr;
    if (auto* d = std::get_if<DenseLayer>(&layer)) bits = &d->bits;
    else if (auto* c = std::get_if<ConvLayer>(&layer)) bits = &c->bits;
    if (!bits) continue;
    const FlipMask m =
        sample_mask(BitErrorChannel{rate, trial_seed, stream++}, bits->shape());
    *bits = apply_flips(*bits, m);
  }
  return out;
}

}  // namespace bnn
