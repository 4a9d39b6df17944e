#pragma once

// Shared test utilities: naive reference oracles kept deliberately
// independent of the library's packed/popcount implementations, plus
// random fixture generators.

#include <cmath>
#include <vector>

#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace testutil {

using bnn::BinaryTensor;
using bnn::IntTensor;
using bnn::RealTensor;
using bnn::Shape;

inline BinaryTensor random_binary(const Shape& s, bnn::rng::Stream& rs) {
  BinaryTensor t(s);
  for (std::size_t i = 0; i < s.elems(); ++i)
    if (rs.next() & 1) t.set(i, +1);
  return t;
}

inline RealTensor random_real(const Shape& s, bnn::rng::Stream& rs,
                              double scale = 1.0) {
  RealTensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = scale * rs.next_signed_unit();
  return t;
}

// Elementwise multiply-accumulate over +-1 vectors.
inline long naive_pm1_dot(const std::vector<int>& a,
                          const std::vector<int>& b) {
  long acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += long(a[i]) * long(b[i]);
  return acc;
}

// Quadruple-loop valid cross-correlation over integer elements.
inline std::vector<long> naive_conv2d(const std::vector<int>& w,
                                      std::size_t f, std::size_t c,
                                      std::size_t kh, std::size_t kw,
                                      const std::vector<int>& x,
                                      std::size_t h, std::size_t wd) {
  const std::size_t u = h - kh + 1, v = wd - kw + 1;
  std::vector<long> out(f * u * v, 0);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t ui = 0; ui < u; ++ui)
      for (std::size_t vi = 0; vi < v; ++vi) {
        long acc = 0;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b)
              acc += long(w[((fi * c + ci) * kh + a) * kw + b]) *
                     long(x[(ci * h + ui + a) * wd + (vi + b)]);
        out[(fi * u + ui) * v + vi] = acc;
      }
  return out;
}

template <typename T>
inline std::vector<T> naive_maxpool2(const std::vector<T>& x, std::size_t c,
                                     std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(c * oh * ow);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T best = x[(ci * h + 2 * i) * w + 2 * j];
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            best = std::max(best, x[(ci * h + 2 * i + a) * w + 2 * j + b]);
        out[(ci * oh + i) * ow + j] = best;
      }
  return out;
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

}  // namespace testutil
