#include <doctest.h>

#include "bnn/ops.hpp"
#include "helpers.hpp"

using namespace bnn;
using namespace testutil;

TEST_CASE("binarize maps positives to +1 and everything else to -1") {
  RealTensor x(Shape{3}, {0.7, -0.2, 0.0});
  const BinaryTensor b = binarize(x);
  CHECK(b.get(0) == +1);
  CHECK(b.get(1) == -1);
  CHECK(b.get(2) == -1);  // zero takes the else branch

  RealTensor pos(Shape{2, 3});
  pos.fill(5.0);
  const BinaryTensor allp = binarize(pos);
  for (std::size_t i = 0; i < allp.size(); ++i) CHECK(allp.get(i) == +1);
}

TEST_CASE("binarize of an unpacked binary tensor is the identity") {
  rng::Stream rs(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const BinaryTensor t = random_binary(Shape{5, 9}, rs);
    RealTensor asreal(t.shape());
    const auto signs = t.unpack();
    for (std::size_t i = 0; i < signs.size(); ++i) asreal[i] = signs[i];
    CHECK(binarize(asreal) == t);
  }
}

TEST_CASE("binarize rejects non-finite input") {
  RealTensor x(Shape{2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(binarize(x), ValueError);
}

TEST_CASE("pack/unpack round-trip and canonical word equality") {
  rng::Stream rs(12, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{1 + rs.next_below(4), 1 + rs.next_below(130)};
    const BinaryTensor t = random_binary(s, rs);
    CHECK(BinaryTensor::from_signs(t.unpack(), s) == t);
  }
  // same logical content built two different ways compares word-equal
  BinaryTensor a(Shape{70});
  BinaryTensor b(Shape{70});
  for (std::size_t i = 0; i < 70; i += 3) {
    a.set(i, +1);
    b.set(i, -1);
  }
  for (std::size_t i = 0; i < 70; i += 3) b.set(i, +1);
  CHECK(a == b);
  CHECK(a.words() == b.words());
}

TEST_CASE("binary_matmul trivial rows") {
  const auto w1 = BinaryTensor::from_signs({+1, +1, +1}, Shape{1, 3});
  const auto x1 = BinaryTensor::from_signs({+1, +1, +1}, Shape{3});
  CHECK(binary_matmul(w1, x1)[0] == 3);

  const auto w2 = BinaryTensor::from_signs({+1, -1}, Shape{1, 2});
  const auto x2 = BinaryTensor::from_signs({+1, +1}, Shape{2});
  CHECK(binary_matmul(w2, x2)[0] == 0);
}

TEST_CASE("binary_matmul equals the naive +-1 dot product exhaustively") {
  // every weight/input pair for widths 1..8
  for (std::size_t width = 1; width <= 8; ++width) {
    const std::size_t lim = std::size_t{1} << width;
    for (std::size_t wb = 0; wb < lim; ++wb)
      for (std::size_t xb = 0; xb < lim; ++xb) {
        std::vector<int> ws(width), xs(width);
        for (std::size_t k = 0; k < width; ++k) {
          ws[k] = (wb >> k) & 1 ? +1 : -1;
          xs[k] = (xb >> k) & 1 ? +1 : -1;
        }
        const auto w = BinaryTensor::from_signs(ws, Shape{1, width});
        const auto x = BinaryTensor::from_signs(xs, Shape{width});
        CHECK(binary_matmul(w, x)[0] == naive_pm1_dot(ws, xs));
      }
  }
}

TEST_CASE("binary_matmul random 16-wide rows match the oracle") {
  rng::Stream rs(13, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> ws(16), xs(16);
    for (auto& v : ws) v = rs.next() & 1 ? +1 : -1;
    for (auto& v : xs) v = rs.next() & 1 ? +1 : -1;
    const auto w = BinaryTensor::from_signs(ws, Shape{1, 16});
    const auto x = BinaryTensor::from_signs(xs, Shape{16});
    CHECK(binary_matmul(w, x)[0] == naive_pm1_dot(ws, xs));
  }
}

TEST_CASE("binary_matmul output parity equals the fan-in parity") {
  rng::Stream rs(14, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t width = 1 + rs.next_below(130);
    const auto w = random_binary(Shape{3, width}, rs);
    const auto x = random_binary(Shape{width}, rs);
    const IntTensor h = binary_matmul(w, x);
    for (std::size_t n = 0; n < 3; ++n)
      CHECK((std::abs(h[n]) % 2) == (width % 2));
  }
}

TEST_CASE("binary_matmul shape errors") {
  const auto w = BinaryTensor::from_signs({+1, -1}, Shape{1, 2});
  const auto x = BinaryTensor::from_signs({+1, +1, -1}, Shape{3});
  CHECK_THROWS_AS(binary_matmul(w, x), ShapeError);
}

TEST_CASE("binary_matmul_batch equals row-by-row matmul") {
  rng::Stream rs(15, 0);
  const auto w = random_binary(Shape{7, 75}, rs);
  const auto xb = random_binary(Shape{5, 75}, rs);
  const IntTensor hb = binary_matmul_batch(w, xb);
  for (std::size_t i = 0; i < 5; ++i) {
    BinaryTensor xi(Shape{75});
    for (std::size_t k = 0; k < 75; ++k)
      if (xb.get(i * 75 + k) > 0) xi.set(k, +1);
    const IntTensor hi = binary_matmul(w, xi);
    for (std::size_t n = 0; n < 7; ++n) CHECK(hb[i * 7 + n] == hi[n]);
  }
}

TEST_CASE("binary_conv2d trivial kernels") {
  const auto k1 = BinaryTensor::from_signs({+1}, Shape{1, 1, 1, 1});
  const auto x1 = BinaryTensor::from_signs({+1}, Shape{1, 1, 1});
  const IntTensor o1 = binary_conv2d(k1, x1);
  CHECK(o1.shape() == Shape{1, 1, 1});
  CHECK(o1[0] == 1);

  const auto k9 =
      BinaryTensor::from_signs(std::vector<int>(9, +1), Shape{1, 1, 3, 3});
  const auto x9 =
      BinaryTensor::from_signs(std::vector<int>(9, +1), Shape{1, 3, 3});
  const IntTensor o9 = binary_conv2d(k9, x9);
  CHECK(o9.shape() == Shape{1, 1, 1});
  CHECK(o9[0] == 9);
}

TEST_CASE("binary_conv2d random 8x8 inputs match the quadruple-loop oracle") {
  rng::Stream rs(16, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t f = 1 + rs.next_below(3);
    const std::size_t c = 1 + rs.next_below(2);
    const std::size_t k = 1 + rs.next_below(3);
    const auto w = random_binary(Shape{f, c, k, k}, rs);
    const auto x = random_binary(Shape{c, 8, 8}, rs);
    const IntTensor got = binary_conv2d(w, x);
    const auto want =
        naive_conv2d(w.unpack(), f, c, k, k, x.unpack(), 8, 8);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("int_conv2d_first_layer handles pixel inputs") {
  const auto wp = BinaryTensor::from_signs({+1}, Shape{1, 1, 1, 1});
  IntTensor px(Shape{1, 1, 1}, {255});
  CHECK(int_conv2d_first_layer(wp, px, 255)[0] == 255);

  const auto wm = BinaryTensor::from_signs({-1}, Shape{1, 1, 1, 1});
  IntTensor p10(Shape{1, 1, 1}, {10});
  CHECK(int_conv2d_first_layer(wm, p10, 255)[0] == -10);

  IntTensor bad(Shape{1, 1, 1}, {300});
  CHECK_THROWS_AS(int_conv2d_first_layer(wp, bad, 255), ValueError);
}

TEST_CASE("int_conv2d_first_layer random 5x5 patches match the oracle") {
  rng::Stream rs(17, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t f = 1 + rs.next_below(2);
    const std::size_t k = 1 + rs.next_below(3);
    const auto w = random_binary(Shape{f, 1, k, k}, rs);
    IntTensor x(Shape{1, 5, 5});
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::int32_t(rs.next_below(256));
    const IntTensor got = int_conv2d_first_layer(w, x, 255);
    const auto want = naive_conv2d(
        w.unpack(), f, 1, k, k,
        std::vector<int>(x.values().begin(), x.values().end()), 5, 5);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("int_matmul matches a scalar loop and checks ranges") {
  rng::Stream rs(18, 0);
  const auto w = random_binary(Shape{6, 40}, rs);
  IntTensor x(Shape{40});
  for (std::size_t i = 0; i < 40; ++i) x[i] = std::int32_t(rs.next_below(256));
  const IntTensor h = int_matmul(w, x, 255);
  const auto ws = w.unpack();
  for (std::size_t n = 0; n < 6; ++n) {
    long acc = 0;
    for (std::size_t k = 0; k < 40; ++k) acc += long(ws[n * 40 + k]) * x[k];
    CHECK(h[n] == acc);
  }
  IntTensor neg(Shape{40});
  neg[3] = -1;
  CHECK_THROWS_AS(int_matmul(w, neg, 255), ValueError);
}

TEST_CASE("maxpool2 basics") {
  IntTensor x(Shape{2, 2}, {1, 2, 3, 4});
  const IntTensor p = maxpool2(x);
  CHECK(p.shape() == Shape{1, 1});
  CHECK(p[0] == 4);

  IntTensor c(Shape{3, 4, 4});
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 7;
  const IntTensor pc = maxpool2(c);
  CHECK(pc.shape() == Shape{3, 2, 2});
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK(pc[i] == 7);
}

TEST_CASE("maxpool2 random 4x4 matches the naive oracle") {
  rng::Stream rs(19, 0);
  for (int trial = 0; trial < 100; ++trial) {
    IntTensor x(Shape{2, 4, 4});
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::int32_t(rs.next_below(1000)) - 500;
    const IntTensor got = maxpool2(x);
    const auto want = naive_maxpool2(
        std::vector<std::int32_t>(x.values()), 2, 4, 4);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("maxpool2 odd extents: strict rejects, default drops the tail") {
  IntTensor x(Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_THROWS_AS(maxpool2(x, true), ShapeError);
  const IntTensor p = maxpool2(x, false);
  CHECK(p.shape() == Shape{1, 1, 1});
  CHECK(p[0] == 5);  // max of the top-left 2x2 window
  IntTensor tiny(Shape{1, 1, 1}, {3});
  CHECK_THROWS_AS(maxpool2(tiny), ShapeError);
}

TEST_CASE("maxpool2 backward routes the gradient to the first-found argmax") {
  RealTensor x(Shape{1, 2, 2}, {5.0, 5.0, 1.0, 5.0});
  const PoolResult fwd = maxpool2_with_argmax(x);
  CHECK(fwd.pooled[0] == 5.0);
  CHECK(fwd.argmax[0] == 0);  // lowest linear index wins on ties
  RealTensor dp(Shape{1, 1, 1}, {2.5});
  const RealTensor dx = maxpool2_backward(fwd, dp);
  CHECK(dx[0] == 2.5);
  CHECK(dx[1] == 0.0);
  CHECK(dx[3] == 0.0);
}

TEST_CASE("gemm kernels agree with naive triple loops") {
  rng::Stream rs(20, 0);
  const RealTensor a = random_real(Shape{4, 6}, rs);
  const RealTensor b = random_real(Shape{5, 6}, rs);
  const RealTensor c = gemm_nt(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double want = 0;
      for (std::size_t k = 0; k < 6; ++k) want += a[i * 6 + k] * b[j * 6 + k];
      CHECK(c[i * 5 + j] == doctest::Approx(want).epsilon(1e-12));
    }

  const RealTensor d = random_real(Shape{6, 3}, rs);
  const RealTensor e = gemm_nn(a, d);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double want = 0;
      for (std::size_t k = 0; k < 6; ++k) want += a[i * 6 + k] * d[k * 3 + j];
      CHECK(e[i * 3 + j] == doctest::Approx(want).epsilon(1e-12));
    }

  RealTensor f(Shape{6, 5});
  gemm_tn_acc(a, random_real(Shape{4, 5}, rs), f);  // just shape/run sanity
  const RealTensor g1 = random_real(Shape{4, 5}, rs);
  RealTensor acc(Shape{6, 5});
  gemm_tn_acc(a, g1, acc);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j < 5; ++j) {
      double want = 0;
      for (std::size_t i = 0; i < 4; ++i) want += a[i * 6 + k] * g1[i * 5 + j];
      CHECK(acc[k * 5 + j] == doctest::Approx(want).epsilon(1e-12));
    }
}
