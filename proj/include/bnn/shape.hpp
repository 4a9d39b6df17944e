#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bnn {

// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ValueError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Tensor extents. All extents are >= 1 and the element count fits
// comfortably in a machine word (checked on construction).
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<std::size_t> dims)
      : Shape(std::vector<std::size_t>(dims)) {}

  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    elems_ = 1;
    for (std::size_t d : dims_) {
      if (d == 0) throw ShapeError("shape extent must be >= 1");
      if (elems_ > (std::size_t{1} << 40) / d)
        throw ShapeError("shape element count too large");
      elems_ *= d;
    }
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t elems() const { return elems_; }
  const std::vector<std::size_t>& dims() const { return dims_; }

  // Extent of the innermost dimension; the packing unit for BinaryTensor.
  std::size_t row_len() const {
    return dims_.empty() ? 1 : dims_.back();
  }
  // Product of all leading extents.
  std::size_t rows() const {
    return dims_.empty() ? 1 : elems_ / dims_.back();
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::size_t> dims_;
  std::size_t elems_ = 1;
};

inline void require_same_shape(const Shape& a, const Shape& b,
                               const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
}

}  // namespace bnn
