#pragma once

#include <cstdint>

#include "bnn/tensor.hpp"

namespace bnn {

class LayerGraph;

// Descriptor of an i.i.d. bit error source. Immutable; mask sampling is a
// pure function of (p, seed, stream_id, shape), so channels can be shared
// across threads and trials freely. Distinct stream_ids give statistically
// independent masks.
struct BitErrorChannel {
  double p = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  BitErrorChannel with_stream(std::uint64_t s) const {
    return {p, seed, s};
  }
};

// +-1 mask over a weight tensor: -1 means flip that weight, +1 keep.
struct FlipMask {
  BinaryTensor mask;

  double flip_fraction() const {
    return 1.0 -
           static_cast<double>(mask.count_plus()) / double(mask.size());
  }
};

// Draw an i.i.d. mask with P(flip) = p for every element.
FlipMask sample_mask(const BitErrorChannel& ch, const Shape& shape);

// Elementwise product of weights and mask: an XNOR on the packed words.
// Applying the same mask twice restores the input.
BinaryTensor apply_flips(const BinaryTensor& w, const FlipMask& m);

// Corrupted clone of a finalized graph: every binary weight tensor gets an
// independent persistent mask at the given rate. The original is untouched.
LayerGraph inject_persistent(const LayerGraph& graph, double rate,
                             std::uint64_t trial_seed);

}  // namespace bnn
