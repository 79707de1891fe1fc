#pragma once

// Dense row-major tensors of 64-bit reals.

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nacap {

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Value-semantic tensor. The last axis is the "column" axis; every leading
/// axis folds into rows, so a rank-1 tensor of width d is a 1 x d matrix.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor of shape " + to_string(shape) + " needs " +
                           std::to_string(shape_size(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
  }

  static Tensor zeros(Shape s) {
    std::vector<double> v(shape_size(s), 0.0);
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor filled(Shape s, double x) {
    std::vector<double> v(shape_size(s), x);
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

  bool operator==(const Tensor&) const = default;
};

}  // namespace nacap
