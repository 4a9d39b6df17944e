#include "bnn/ops.hpp"

#include <bit>
#include <cmath>

#include "bnn/parallel.hpp"

namespace bnn {

std::size_t BinaryTensor::count_plus() const {
  std::size_t n = 0;
  for (std::uint64_t w : words()) n += std::popcount(w);
  return n;
}

BinaryTensor binarize(const RealTensor& x) {
  x.check_finite("binarize");
  BinaryTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) out.set(i, +1);
  return out;
}

std::int32_t packed_dot(std::span<const std::uint64_t> a,
                        std::span<const std::uint64_t> b, std::size_t len) {
  std::int32_t disagree = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    disagree += std::popcount(a[i] ^ b[i]);
  return static_cast<std::int32_t>(len) - 2 * disagree;
}

IntTensor binary_matmul(const BinaryTensor& w, const BinaryTensor& x) {
  if (w.shape().rank() != 2 || x.shape().rank() != 1)
    throw ShapeError("binary_matmul: expected w rank 2, x rank 1");
  if (w.shape()[1] != x.shape()[0])
    throw ShapeError("binary_matmul: inner extent mismatch " +
                     w.shape().str() + " vs " + x.shape().str());
  const std::size_t out = w.shape()[0];
  const std::size_t in = w.shape()[1];
  IntTensor h(Shape{out});
  for (std::size_t n = 0; n < out; ++n)
    h[n] = packed_dot(w.row_words(n), x.row_words(0), in);
  return h;
}

IntTensor binary_matmul_batch(const BinaryTensor& w, const BinaryTensor& x) {
  if (w.shape().rank() != 2 || x.shape().rank() != 2)
    throw ShapeError("binary_matmul_batch: expected rank-2 operands");
  if (w.shape()[1] != x.shape()[1])
    throw ShapeError("binary_matmul_batch: inner extent mismatch");
  const std::size_t batch = x.shape()[0];
  const std::size_t out = w.shape()[0];
  const std::size_t in = w.shape()[1];
  IntTensor h(Shape{batch, out});
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      auto xi = x.row_words(i);
      std::int32_t* hrow = h.data() + i * out;
      for (std::size_t n = 0; n < out; ++n)
        hrow[n] = packed_dot(w.row_words(n), xi, in);
    }
  });
  return h;
}

namespace {

void check_pixel_range(const IntTensor& x, int z, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0 || x[i] > z)
      throw ValueError(std::string(what) + ": input value " +
                       std::to_string(x[i]) + " outside [0," +
                       std::to_string(z) + "]");
}

}  // namespace

IntTensor int_matmul(const BinaryTensor& w, const IntTensor& x, int z) {
  if (w.shape().rank() != 2 || x.shape().rank() != 1)
    throw ShapeError("int_matmul: expected w rank 2, x rank 1");
  if (w.shape()[1] != x.shape()[0])
    throw ShapeError("int_matmul: inner extent mismatch");
  check_pixel_range(x, z, "int_matmul");
  const std::size_t out = w.shape()[0];
  const std::size_t in = w.shape()[1];
  IntTensor h(Shape{out});
  for (std::size_t n = 0; n < out; ++n) {
    auto wn = w.row_words(n);
    std::int32_t acc = 0;
    for (std::size_t k = 0; k < in; ++k) {
      const std::int32_t sign =
          (wn[k / 64] >> (k % 64)) & 1 ? 1 : -1;
      acc += sign * x[k];
    }
    h[n] = acc;
  }
  return h;
}

namespace {

struct ConvDims {
  std::size_t f, c, kh, kw, h, w, u, v;
};

ConvDims conv_dims(const Shape& ws, const Shape& xs, const char* what) {
  if (ws.rank() != 4 || xs.rank() != 3)
    throw ShapeError(std::string(what) + ": expected w rank 4, x rank 3");
  ConvDims d{ws[0], ws[1], ws[2], ws[3], xs[1], xs[2], 0, 0};
  if (ws[1] != xs[0])
    throw ShapeError(std::string(what) + ": channel mismatch");
  if (d.kh > d.h || d.kw > d.w)
    throw ShapeError(std::string(what) + ": kernel larger than input");
  d.u = d.h - d.kh + 1;
  d.v = d.w - d.kw + 1;
  return d;
}

}  // namespace

IntTensor binary_conv2d(const BinaryTensor& w, const BinaryTensor& x) {
  const ConvDims d = conv_dims(w.shape(), x.shape(), "binary_conv2d");
  const std::size_t k = d.c * d.kh * d.kw;

  // Flatten kernels to packed rows [F,K] and gather each receptive field
  // into packed rows [U*V,K]; the XOR/popcount dot then does the work.
  BinaryTensor wflat(Shape{d.f, k});
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.get(i) > 0) wflat.set(i, +1);

  BinaryTensor patches(Shape{d.u * d.v, k});
  std::size_t p = 0;
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v, ++p) {
      std::size_t col = 0;
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t kh = 0; kh < d.kh; ++kh)
          for (std::size_t kw = 0; kw < d.kw; ++kw, ++col) {
            const std::size_t src =
                (c * d.h + (u + kh)) * d.w + (v + kw);
            if (x.get(src) > 0) patches.set(p * k + col, +1);
          }
    }

  IntTensor out(Shape{d.f, d.u, d.v});
  for (std::size_t f = 0; f < d.f; ++f)
    for (std::size_t q = 0; q < d.u * d.v; ++q)
      out[f * d.u * d.v + q] =
          packed_dot(wflat.row_words(f), patches.row_words(q), k);
  return out;
}

IntTensor int_conv2d_first_layer(const BinaryTensor& w, const IntTensor& x,
                                 int z) {
  const ConvDims d = conv_dims(w.shape(), x.shape(), "int_conv2d_first_layer");
  check_pixel_range(x, z, "int_conv2d_first_layer");
  const std::vector<int> ws = w.unpack();
  IntTensor out(Shape{d.f, d.u, d.v});
  for (std::size_t f = 0; f < d.f; ++f)
    for (std::size_t u = 0; u < d.u; ++u)
      for (std::size_t v = 0; v < d.v; ++v) {
        std::int32_t acc = 0;
        for (std::size_t c = 0; c < d.c; ++c)
          for (std::size_t kh = 0; kh < d.kh; ++kh)
            for (std::size_t kw = 0; kw < d.kw; ++kw)
              acc += ws[((f * d.c + c) * d.kh + kh) * d.kw + kw] *
                     x[(c * d.h + (u + kh)) * d.w + (v + kw)];
        out[(f * d.u + u) * d.v + v] = acc;
      }
  return out;
}

namespace {

struct PoolDims {
  std::size_t c, h, w, oh, ow;
};

PoolDims pool_dims(const Shape& s, bool strict) {
  if (s.rank() != 2 && s.rank() != 3)
    throw ShapeError("maxpool2: expected rank 2 or 3");
  PoolDims d;
  d.c = s.rank() == 3 ? s[0] : 1;
  d.h = s.rank() == 3 ? s[1] : s[0];
  d.w = s.rank() == 3 ? s[2] : s[1];
  if (strict && (d.h % 2 != 0 || d.w % 2 != 0))
    throw ShapeError("maxpool2: odd spatial extent in strict mode");
  d.oh = d.h / 2;
  d.ow = d.w / 2;
  if (d.oh == 0 || d.ow == 0)
    throw ShapeError("maxpool2: spatial extent too small to pool");
  return d;
}

Shape pool_out_shape(const Shape& s, const PoolDims& d) {
  if (s.rank() == 3) return Shape{d.c, d.oh, d.ow};
  return Shape{d.oh, d.ow};
}

template <typename Tensor>
Tensor pool_impl(const Tensor& x, bool strict,
                 std::vector<std::size_t>* argmax) {
  const PoolDims d = pool_dims(x.shape(), strict);
  Tensor out(pool_out_shape(x.shape(), d));
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < d.oh; ++i)
      for (std::size_t j = 0; j < d.ow; ++j, ++o) {
        const std::size_t base = (c * d.h + 2 * i) * d.w + 2 * j;
        std::size_t best = base;
        auto bv = x[base];
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + di * d.w + dj;
            if (x[idx] > bv) {
              bv = x[idx];
              best = idx;
            }
          }
        out[o] = bv;
        if (argmax) (*argmax)[o] = best;
      }
  return out;
}

}  // namespace

IntTensor maxpool2(const IntTensor& x, bool strict) {
  return pool_impl(x, strict, nullptr);
}

RealTensor maxpool2(const RealTensor& x, bool strict) {
  return pool_impl(x, strict, nullptr);
}

PoolResult maxpool2_with_argmax(const RealTensor& x, bool strict) {
  PoolResult r;
  r.input_shape = x.shape();
  r.pooled = pool_impl(x, strict, &r.argmax);
  return r;
}

RealTensor maxpool2_backward(const PoolResult& fwd, const RealTensor& dpooled) {
  require_same_shape(fwd.pooled.shape(), dpooled.shape(), "maxpool2_backward");
  RealTensor dx(fwd.input_shape);
  for (std::size_t o = 0; o < dpooled.size(); ++o)
    dx[fwd.argmax[o]] += dpooled[o];
  return dx;
}

RealTensor gemm_nt(const RealTensor& a, const RealTensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 ||
      a.shape()[1] != b.shape()[1])
    throw ShapeError("gemm_nt: incompatible shapes");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  RealTensor c(Shape{m, n});
  parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* ai = a.data() + i * k;
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b.data() + j * k;
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += ai[t] * bj[t];
        ci[j] = acc;
      }
    }
  });
  return c;
}

RealTensor gemm_nn(const RealTensor& a, const RealTensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeError("gemm_nn: incompatible shapes");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  RealTensor c(Shape{m, n});
  parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c.data() + i * n;
      for (std::size_t t = 0; t < k; ++t) {
        const double av = a[i * k + t];
        if (av == 0.0) continue;
        const double* bt = b.data() + t * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
      }
    }
  });
  return c;
}

void gemm_tn_acc(const RealTensor& a, const RealTensor& b, RealTensor& c) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 ||
      a.shape()[0] != b.shape()[0])
    throw ShapeError("gemm_tn_acc: incompatible shapes");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (c.shape() != Shape{k, n})
    throw ShapeError("gemm_tn_acc: bad output shape");
  // Parallel over output rows (one row of c per column of a); each row is
  // accumulated in ascending sample order so results never depend on the
  // worker count.
  parallel_for(k, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* bi = b.data() + i * n;
      for (std::size_t t = lo; t < hi; ++t) {
        const double av = a[i * k + t];
        if (av == 0.0) continue;
        double* ct = c.data() + t * n;
        for (std::size_t j = 0; j < n; ++j) ct[j] += av * bi[j];
      }
    }
  });
}

RealTensor decode_signs(const BinaryTensor& w) {
  RealTensor out(Shape{w.rows(), w.row_len()});
  for (std::size_t i = 0; i < w.size(); ++i)
    out[i] = static_cast<double>(w.get(i));
  return out;
}

}  // namespace bnn
