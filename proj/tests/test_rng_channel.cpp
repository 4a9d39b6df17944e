#include <doctest.h>

#include <cmath>

#include "bnn/checkpoint.hpp"
#include "bnn/error_channel.hpp"
#include "bnn/graph.hpp"
#include "bnn/rng.hpp"
#include "helpers.hpp"

using namespace bnn;
using namespace testutil;

TEST_CASE("counter rng is a pure function of (seed, stream, index)") {
  CHECK(rng::word_at(1, 2, 3) == rng::word_at(1, 2, 3));
  CHECK(rng::word_at(1, 2, 3) != rng::word_at(1, 2, 4));
  CHECK(rng::word_at(1, 2, 3) != rng::word_at(1, 3, 3));
  CHECK(rng::word_at(2, 2, 3) != rng::word_at(1, 2, 3));

  rng::Stream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("unit doubles stay in [0,1)") {
  rng::Stream s(5, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("sample_mask extremes") {
  const Shape shape{17, 9};
  const FlipMask keep = sample_mask({0.0, 9, 1}, shape);
  CHECK(keep.mask.count_plus() == shape.elems());
  CHECK(keep.flip_fraction() == 0.0);

  const FlipMask flip = sample_mask({1.0, 9, 1}, shape);
  CHECK(flip.mask.count_plus() == 0);
  CHECK(flip.flip_fraction() == 1.0);
}

TEST_CASE("mask flip fraction sits inside the binomial 5-sigma band") {
  const std::size_t n = 1'000'000;
  for (double p : {0.01, 0.05, 0.1, 0.2}) {
    const FlipMask m = sample_mask({p, 1234, 0}, Shape{n});
    const double got = m.flip_fraction();
    const double sigma = std::sqrt(p * (1 - p) / double(n));
    CHECK(std::abs(got - p) <= 5.0 * sigma);
  }
}

TEST_CASE("mask is deterministic in (p, seed, stream, shape)") {
  const Shape shape{333};
  const FlipMask a = sample_mask({0.3, 77, 5}, shape);
  const FlipMask b = sample_mask({0.3, 77, 5}, shape);
  CHECK(a.mask == b.mask);
  const FlipMask c = sample_mask({0.3, 77, 6}, shape);
  CHECK(a.mask != c.mask);
}

TEST_CASE("masks from different streams are independent (chi-square)") {
  // 2x2 contingency table of flip bits across two streams; with p=0.5 all
  // four cells should be near n/4. Chi-square with 1 dof, generous cut.
  const std::size_t n = 200'000;
  const FlipMask a = sample_mask({0.5, 99, 0}, Shape{n});
  const FlipMask b = sample_mask({0.5, 99, 1}, Shape{n});
  double cell[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < n; ++i)
    cell[a.mask.get(i) < 0][b.mask.get(i) < 0] += 1;
  const double e = double(n) / 4.0;
  double chi2 = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      chi2 += (cell[i][j] - e) * (cell[i][j] - e) / e;
  CHECK(chi2 < 25.0);  // 1-dof 5-sigma-ish threshold
}

TEST_CASE("apply_flips is the elementwise product and an involution") {
  rng::Stream rs(6, 0);
  const BinaryTensor w = random_binary(Shape{5, 70}, rs);
  const FlipMask keep = sample_mask({0.0, 1, 0}, w.shape());
  CHECK(apply_flips(w, keep) == w);

  const FlipMask all = sample_mask({1.0, 1, 0}, w.shape());
  const BinaryTensor neg = apply_flips(w, all);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(neg.get(i) == -w.get(i));

  const FlipMask m = sample_mask({0.37, 2, 3}, w.shape());
  const BinaryTensor once = apply_flips(w, m);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(once.get(i) == w.get(i) * m.mask.get(i));
  CHECK(apply_flips(once, m) == w);
}

TEST_CASE("inject_persistent leaves the original graph untouched") {
  LayerGraph g = LayerGraph::build_preset("tiny-fcnn", 1.0, 3);
  const std::string before = serialize_checkpoint(g);

  const LayerGraph same = inject_persistent(g, 0.0, 55);
  CHECK(serialize_checkpoint(same) == before);

  const LayerGraph negated = inject_persistent(g, 1.0, 55);
  for (std::size_t li : g.weight_layers()) {
    const auto& orig = std::get<DenseLayer>(g.layers[li]).bits;
    const auto& got = std::get<DenseLayer>(negated.layers[li]).bits;
    for (std::size_t i = 0; i < orig.size(); ++i)
      CHECK(got.get(i) == -orig.get(i));
  }
  CHECK(serialize_checkpoint(g) == before);
}

TEST_CASE("inject_persistent corruption fraction within the binomial band") {
  LayerGraph g = LayerGraph::build_preset("fashion-fcnn", 1.0 / 16.0, 4);
  const double rate = 0.1;
  const LayerGraph c = inject_persistent(g, rate, 900);
  std::size_t flipped = 0, total = 0;
  for (std::size_t li : g.weight_layers()) {
    const auto& a = std::get<DenseLayer>(g.layers[li]).bits;
    const auto& b = std::get<DenseLayer>(c.layers[li]).bits;
    for (std::size_t i = 0; i < a.size(); ++i)
      flipped += a.get(i) != b.get(i);
    total += a.size();
  }
  const double got = double(flipped) / double(total);
  const double sigma = std::sqrt(rate * (1 - rate) / double(total));
  CHECK(std::abs(got - rate) <= 5.0 * sigma);
}

TEST_CASE("inject_persistent is reproducible per trial seed") {
  LayerGraph g = LayerGraph::build_preset("tiny-fcnn", 1.0, 8);
  const LayerGraph a = inject_persistent(g, 0.25, 123);
  const LayerGraph b = inject_persistent(g, 0.25, 123);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  const LayerGraph c = inject_persistent(g, 0.25, 124);
  CHECK(serialize_checkpoint(a) != serialize_checkpoint(c));
}
