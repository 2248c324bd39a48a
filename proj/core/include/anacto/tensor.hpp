#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace anacto {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

// Dense row-major tensor of 64-bit floats. Rank 0 (shape {}) is a scalar
// with one element. Plain value type; differentiation lives on the Tape.
class Tensor {
 public:
  Tensor() = default;  // empty: rank 0, but no data — distinct from scalar(0)

  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Bounds-checked multi-index access for ranks 1..3.
  double at(std::initializer_list<std::size_t> idx) const;
  double& at(std::initializer_list<std::size_t> idx);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Value of a single-element tensor; throws otherwise.
  double item() const;

  std::size_t extent(std::size_t axis) const;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace anacto
