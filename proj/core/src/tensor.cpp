#include "anacto/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace anacto {

namespace {

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

}  // namespace

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_to_string(shape_));
  }
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_to_string(shape_));
  }
  if (data_.size() != product(shape_)) {
    throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw std::invalid_argument("Tensor::at: rank mismatch");
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(data_.size()) + " elements");
  }
  return data_[0];
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::invalid_argument("Tensor::extent: axis out of range");
  return shape_[axis];
}

}  // namespace anacto
