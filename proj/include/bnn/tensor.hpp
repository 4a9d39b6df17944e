#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bnn/shape.hpp"

namespace bnn {

// Dense tensor of doubles. 64-bit precision throughout: gradient checks
// need it and desk-scale training is cheap enough.
class RealTensor {
 public:
  RealTensor() = default;
  explicit RealTensor(Shape shape)
      : shape_(std::move(shape)), values_(shape_.elems(), 0.0) {}
  RealTensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.elems())
      throw ShapeError("RealTensor: value count does not match shape");
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  // Matrix accessors for rank-2 use.
  double& at(std::size_t r, std::size_t c) {
    return values_[r * shape_.row_len() + c];
  }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * shape_.row_len() + c];
  }
  std::span<double> row(std::size_t r) {
    return {values_.data() + r * shape_.row_len(), shape_.row_len()};
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * shape_.row_len(), shape_.row_len()};
  }

  void fill(double v) { values_.assign(values_.size(), v); }

  // Reinterpret with a new shape of equal element count.
  RealTensor reshaped(Shape s) const {
    if (s.elems() != shape_.elems())
      throw ShapeError("reshape: element count mismatch");
    RealTensor t;
    t.shape_ = std::move(s);
    t.values_ = values_;
    return t;
  }

  void check_finite(const char* what = "RealTensor") const {
    for (double v : values_)
      if (!std::isfinite(v))
        throw ValueError(std::string(what) + ": non-finite value");
  }

  bool operator==(const RealTensor& o) const {
    return shape_ == o.shape_ && values_ == o.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Dense tensor of 32-bit signed integers. Holds exact pre-activation sums;
// supported layer widths keep every sum well inside the int32 range.
class IntTensor {
 public:
  IntTensor() = default;
  explicit IntTensor(Shape shape)
      : shape_(std::move(shape)), values_(shape_.elems(), 0) {}
  IntTensor(Shape shape, std::vector<std::int32_t> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.elems())
      throw ShapeError("IntTensor: value count does not match shape");
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::int32_t* data() { return values_.data(); }
  const std::int32_t* data() const { return values_.data(); }
  std::int32_t& operator[](std::size_t i) { return values_[i]; }
  std::int32_t operator[](std::size_t i) const { return values_[i]; }
  std::vector<std::int32_t>& values() { return values_; }
  const std::vector<std::int32_t>& values() const { return values_; }

  IntTensor reshaped(Shape s) const {
    if (s.elems() != shape_.elems())
      throw ShapeError("reshape: element count mismatch");
    IntTensor t;
    t.shape_ = std::move(s);
    t.values_ = values_;
    return t;
  }

  bool operator==(const IntTensor& o) const {
    return shape_ == o.shape_ && values_ == o.values_;
  }

 private:
  Shape shape_;
  std::vector<std::int32_t> values_;
};

// Bit-packed tensor with logical elements in {-1,+1}. Bit 1 encodes +1,
// bit 0 encodes -1. Packing unit is the innermost dimension: each logical
// row starts on a fresh 64-bit word so row spans can feed XOR/popcount
// kernels directly. Padding bits past each row's length are kept at zero
// (canonical packing), so equal tensors are word-for-word equal.
class BinaryTensor {
 public:
  BinaryTensor() = default;
  explicit BinaryTensor(Shape shape)
      : shape_(std::move(shape)),
        wpr_((shape_.row_len() + 63) / 64),
        words_(shape_.rows() * wpr_, 0) {}

  static BinaryTensor from_signs(const std::vector<int>& signs, Shape shape) {
    BinaryTensor t(std::move(shape));
    if (signs.size() != t.shape_.elems())
      throw ShapeError("from_signs: value count does not match shape");
    for (std::size_t i = 0; i < signs.size(); ++i) t.set(i, signs[i]);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return shape_.elems(); }
  std::size_t rows() const { return shape_.rows(); }
  std::size_t row_len() const { return shape_.row_len(); }
  std::size_t words_per_row() const { return wpr_; }

  std::span<std::uint64_t> row_words(std::size_t r) {
    return {words_.data() + r * wpr_, wpr_};
  }
  std::span<const std::uint64_t> row_words(std::size_t r) const {
    return {words_.data() + r * wpr_, wpr_};
  }
  std::vector<std::uint64_t>& words() { return words_; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  int get(std::size_t flat) const {
    const std::size_t r = flat / shape_.row_len();
    const std::size_t c = flat % shape_.row_len();
    const std::uint64_t w = words_[r * wpr_ + c / 64];
    return (w >> (c % 64)) & 1 ? +1 : -1;
  }

  void set(std::size_t flat, int sign) {
    const std::size_t r = flat / shape_.row_len();
    const std::size_t c = flat % shape_.row_len();
    std::uint64_t& w = words_[r * wpr_ + c / 64];
    const std::uint64_t bit = std::uint64_t{1} << (c % 64);
    if (sign > 0)
      w |= bit;
    else
      w &= ~bit;
  }

  std::vector<int> unpack() const {
    std::vector<int> out(shape_.elems());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get(i);
    return out;
  }

  // Zero all padding bits. Word-level operations (XNOR flips etc.) may
  // smear ones into the pad region; this restores the canonical form.
  void canonicalize() {
    const std::size_t len = shape_.row_len();
    const std::size_t tail = len % 64;
    if (tail == 0) return;
    const std::uint64_t keep = (std::uint64_t{1} << tail) - 1;
    for (std::size_t r = 0; r < rows(); ++r)
      words_[r * wpr_ + (wpr_ - 1)] &= keep;
  }

  // Count of +1 elements.
  std::size_t count_plus() const;

  // Repack into a new shape of equal element count. Row boundaries move,
  // so this is a bit-by-bit copy.
  BinaryTensor reshaped(Shape s) const {
    if (s.elems() != shape_.elems())
      throw ShapeError("reshape: element count mismatch");
    BinaryTensor t(std::move(s));
    for (std::size_t i = 0; i < shape_.elems(); ++i) t.set(i, get(i));
    return t;
  }

  bool operator==(const BinaryTensor& o) const {
    return shape_ == o.shape_ && words_ == o.words_;
  }
  bool operator!=(const BinaryTensor& o) const { return !(*this == o); }

 private:
  Shape shape_;
  std::size_t wpr_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace bnn
